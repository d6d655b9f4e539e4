import os
from pathlib import Path

import pytest


def dataset_prefix(name: str):
    """Path prefix of a citation dataset if its files are present, else None.

    Looks under $TAAM_DATA_DIR (default: <repo>/data) for
    <name>/<name>.content and <name>/<name>.cites.
    """
    root = Path(os.environ.get("TAAM_DATA_DIR", Path(__file__).resolve().parent.parent / "data"))
    prefix = root / name / name
    if prefix.with_name(name + ".content").exists() and prefix.with_name(name + ".cites").exists():
        return str(prefix)
    return None


def require_dataset(name: str) -> str:
    prefix = dataset_prefix(name)
    if prefix is None:
        root = os.environ.get("TAAM_DATA_DIR", str(Path(__file__).resolve().parent.parent / "data"))
        pytest.skip(
            f"{name} dataset not available: expected {root}/{name}/{name}.content and "
            f"{name}.cites (set TAAM_DATA_DIR to point at a directory that has them)"
        )
    return prefix
