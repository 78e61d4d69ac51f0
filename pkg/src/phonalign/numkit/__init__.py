"""Numeric substrate: reverse-mode tape, GRU layers, Adam, PCA and TSV matrix I/O."""
from .gru import GRUParams, gru_forward, init_gru, zero_gru
from .optim import AdamState, adam_step
from .pca import PCAModel, pca_fit, pca_project, pca_reconstruct
from .tape import ContractError, ShapeError, Tape, Var
from .tsv import load_tsv, read_blocks, save_tsv, write_blocks


def check_finite(name, a):
    import numpy as np

    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{name} contains non-finite values")
    return a


__all__ = [
    "AdamState", "ContractError", "GRUParams", "PCAModel", "ShapeError", "Tape", "Var",
    "adam_step", "check_finite", "gru_forward", "init_gru", "load_tsv", "pca_fit",
    "pca_project", "pca_reconstruct", "read_blocks", "save_tsv", "write_blocks", "zero_gru",
]
