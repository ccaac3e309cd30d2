"""Desk-scale fixtures: synthetic data, trained checkpoints, analytic stubs."""

from __future__ import annotations

from pathlib import Path

CHECKPOINT_DIR = Path(__file__).parent / "checkpoints"

DEFAULT_CHECKPOINTS = {
    "toy-mlp": CHECKPOINT_DIR / "toy-mlp.npz",
    "toy-convnet": CHECKPOINT_DIR / "toy-convnet.npz",
    "toy-mlp-pgd": CHECKPOINT_DIR / "toy-mlp-pgd.npz",
    "surrogate": CHECKPOINT_DIR / "surrogate-oracle.npz",
    "reference-ae": CHECKPOINT_DIR / "reference-ae.npz",
}
