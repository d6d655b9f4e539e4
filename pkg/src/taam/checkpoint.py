"""Binary run checkpoints.

Layout (all integers little-endian):

    bytes 0..7    magic "TAAMCKPT"
    bytes 8..11   u32 format version (currently 1)
    bytes 12..19  u64 header length H
    next H bytes  header, UTF-8 JSON (sorted keys)
    payload       parameter blocks, raw float64 little-endian, C order
    last 4 bytes  u32 CRC-32 of header bytes + payload bytes

Block order: backbone w1, w2; then per stored task, per site, w_base,
b_base, w_attn, b_attn, then the task embedding; then the classifier weight
matrix; then the prototype vectors in task order.  The header's "blocks"
list records every block's shape, so the payload is self-describing.

Float32 runs upcast to float64 on save and cast back on load (exact).
Checkpoints are written at stage boundaries, so no optimizer state is
stored; resuming re-derives all randomness from the seed and purpose tags.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .backbone import Backbone
from .classifier import ClassifierHead, ClassSlot
from .errors import ContractError, IntegrityError, VersionError
from .modulator import Modulator, SiteParams
from .prototypes import Prototype, PrototypeBank
from .tensor import Tensor
from .training import FinetuneModel

MAGIC = b"TAAMCKPT"
VERSION = 1

# Resuming in a different place is fine; resuming different run semantics is not.
_CONFIG_KEYS_IGNORED_ON_RESUME = ("out_dir",)


@dataclass
class RunState:
    """Everything needed to continue or re-evaluate a run at a stage boundary."""

    config: dict
    stage: int
    tasks_total: int
    backbone_w1: np.ndarray
    backbone_w2: np.ndarray
    bank: PrototypeBank
    head: ClassifierHead
    matrix_rows: list[list[float]]
    retrieval_log: list[dict]
    donors: list[int | None]

    def check_config(self, cfg) -> None:
        stored = {k: v for k, v in self.config.items() if k not in _CONFIG_KEYS_IGNORED_ON_RESUME}
        current = {k: v for k, v in cfg.echo().items() if k not in _CONFIG_KEYS_IGNORED_ON_RESUME}
        if stored != current:
            diff = sorted(
                k for k in set(stored) | set(current) if stored.get(k) != current.get(k)
            )
            raise ContractError(f"checkpoint config does not match current config; differs in {diff}")

    def rebuild(self, cfg):
        """Materialize (backbone, finetune_model, bank, head) in cfg's dtype."""
        dtype = cfg.np_dtype
        if cfg.method == "finetune":
            backbone = None
            model = FinetuneModel(
                self.backbone_w1.astype(dtype), self.backbone_w2.astype(dtype)
            )
        else:
            backbone = Backbone(
                w1=self.backbone_w1.astype(dtype),
                w2=self.backbone_w2.astype(dtype),
                hops=cfg.hops,
            )
            model = None
        return backbone, model, self.bank, self.head


def _state_blocks(state: RunState) -> list[tuple[str, np.ndarray]]:
    blocks = [("backbone.w1", state.backbone_w1), ("backbone.w2", state.backbone_w2)]
    for t in range(1, len(state.bank) + 1):
        mod = state.bank.modulator(t)
        for s, site in enumerate(mod.sites):
            blocks.append((f"task{t}.site{s}.w_base", site.w_base.data))
            blocks.append((f"task{t}.site{s}.b_base", site.b_base.data))
            blocks.append((f"task{t}.site{s}.w_attn", site.w_attn.data))
            blocks.append((f"task{t}.site{s}.b_attn", site.b_attn.data))
        blocks.append((f"task{t}.embedding", mod.embedding.data))
    blocks.append(("classifier.weight", state.head.weight))
    for t in range(1, len(state.bank) + 1):
        blocks.append((f"task{t}.prototype", state.bank.prototype(t).vector))
    return blocks


def save_checkpoint(path, state: RunState) -> None:
    blocks = _state_blocks(state)
    header = {
        "version": VERSION,
        "config": state.config,
        "stage": int(state.stage),
        "tasks_total": int(state.tasks_total),
        "dtype": str(state.backbone_w1.dtype),
        "backbone": {
            "in_dim": int(state.backbone_w1.shape[0]),
            "hidden_dim": int(state.backbone_w1.shape[1]),
        },
        "modulators": [
            {
                "site_widths": list(state.bank.modulator(t).site_widths),
                "embed_dim": state.bank.modulator(t).embed_dim,
                "heads": state.bank.modulator(t).sites[0].heads,
            }
            for t in range(1, len(state.bank) + 1)
        ],
        "prototypes": [
            {"node_count": state.bank.prototype(t).node_count}
            for t in range(1, len(state.bank) + 1)
        ],
        "classifier": {
            "hidden_dim": state.head.hidden_dim,
            "tasks": state.head.tasks,
            "frozen": [bool(b) for b in state.head.frozen],
        },
        "matrix_rows": state.matrix_rows,
        "retrieval_log": state.retrieval_log,
        "donors": state.donors,
        "blocks": [{"name": n, "shape": list(a.shape)} for n, a in blocks],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in blocks)
    crc = zlib.crc32(header_bytes + payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def load_checkpoint(path) -> RunState:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24 or raw[:8] != MAGIC:
        raise IntegrityError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", raw[8:12])
    if version != VERSION:
        raise VersionError(f"checkpoint format {version} unsupported (expected {VERSION})")
    (hlen,) = struct.unpack("<Q", raw[12:20])
    header_end = 20 + hlen
    if header_end + 4 > len(raw):
        raise IntegrityError(f"{path} is truncated (header)")
    header_bytes = raw[20:header_end]
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IntegrityError(f"{path} header is corrupt: {e}") from None

    counts = [int(np.prod(b["shape"])) for b in header["blocks"]]
    payload_len = 8 * sum(counts)
    if header_end + payload_len + 4 != len(raw):
        raise IntegrityError(f"{path} is truncated (payload)")
    payload = raw[header_end : header_end + payload_len]
    (crc_stored,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(header_bytes + payload) & 0xFFFFFFFF != crc_stored:
        raise IntegrityError(f"{path} failed its checksum")

    arrays: dict[str, np.ndarray] = {}
    at = 0
    for meta, count in zip(header["blocks"], counts):
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=8 * at)
        arrays[meta["name"]] = arr.reshape(meta["shape"]).copy()
        at += count
    dtype = np.dtype(header["dtype"])

    bank = PrototypeBank()
    for t, (mmeta, pmeta) in enumerate(zip(header["modulators"], header["prototypes"]), start=1):
        sites = []
        for s in range(len(mmeta["site_widths"])):
            sites.append(
                SiteParams(
                    Tensor(arrays[f"task{t}.site{s}.w_base"].astype(dtype), requires_grad=True),
                    Tensor(arrays[f"task{t}.site{s}.b_base"].astype(dtype), requires_grad=True),
                    Tensor(arrays[f"task{t}.site{s}.w_attn"].astype(dtype), requires_grad=True),
                    Tensor(arrays[f"task{t}.site{s}.b_attn"].astype(dtype), requires_grad=True),
                )
            )
        mod = Modulator(Tensor(arrays[f"task{t}.embedding"].astype(dtype), requires_grad=True), sites)
        proto = Prototype(arrays[f"task{t}.prototype"], node_count=pmeta["node_count"])
        bank.commit(proto, mod)

    cmeta = header["classifier"]
    head = ClassifierHead(cmeta["hidden_dim"], dtype=dtype)
    head.weight = arrays["classifier.weight"].astype(dtype)
    head.frozen = np.array(cmeta["frozen"], dtype=bool)
    head.tasks = [[int(c) for c in group] for group in cmeta["tasks"]]
    col = 0
    for task_no, group in enumerate(head.tasks, start=1):
        for local, c in enumerate(group):
            head.slots[c] = ClassSlot(task=task_no, local=local, column=col)
            col += 1

    return RunState(
        config=header["config"],
        stage=int(header["stage"]),
        tasks_total=int(header["tasks_total"]),
        backbone_w1=arrays["backbone.w1"].astype(dtype),
        backbone_w2=arrays["backbone.w2"].astype(dtype),
        bank=bank,
        head=head,
        matrix_rows=header["matrix_rows"],
        retrieval_log=header["retrieval_log"],
        donors=header["donors"],
    )
