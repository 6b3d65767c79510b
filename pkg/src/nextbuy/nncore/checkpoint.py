"""Checkpoint files: flat parameter arrays plus model description and validation loss."""

from ..store import load_columns, save_columns
from .models import model_from_description

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, val_loss, extra=None):
    header = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "model": model.describe(),
        "schema_hash": model.spec.schema_hash,
        # repr keeps the float bit-exact through JSON
        "val_loss": repr(float(val_loss)),
        "extra": extra or {},
    }
    save_columns(path, model.params, header, kind="checkpoint")


def load_checkpoint(path):
    """Return ``(model, val_loss, header)``."""
    params, header = load_columns(path, kind="checkpoint")
    if header.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version")
    model = model_from_description(header["model"])
    model.set_params(params)
    return model, float(header["val_loss"]), header
