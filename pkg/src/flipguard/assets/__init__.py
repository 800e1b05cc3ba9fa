"""Frozen toy fixtures: a trained 10-class MLP and its evaluation set."""

from importlib import resources
from pathlib import Path


def _asset(name: str) -> Path:
    return Path(resources.files(__package__) / name)


def toy_model_path() -> Path:
    """Manifest of the shipped toy classifier (weights in the sibling .bin)."""
    return _asset("toy_mlp.json")


def toy_dataset_path() -> Path:
    """Evaluation split of the 10-class synthetic task."""
    return _asset("toy_task.ds")
