"""Bundled example data."""

from pathlib import Path

TOY_DIR = Path(__file__).parent / "toy"


def toy_path(name: str) -> Path:
    """Path of a file in the toy dataset (embeddings.csv, pairs.csv, ...)."""
    return TOY_DIR / name
