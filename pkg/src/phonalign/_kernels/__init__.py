"""GRU recurrence kernels.

The compiled extension is used when it was built and importable; otherwise the
numpy implementation is selected.  Set ``PHONALIGN_PURE_PYTHON=1`` to force the
fallback.
"""
import os

from . import _gru_py

BACKEND = "python"
gru_seq_forward = _gru_py.gru_seq_forward
gru_seq_backward = _gru_py.gru_seq_backward

if os.environ.get("PHONALIGN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _gru_cy
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        gru_seq_forward = _gru_cy.gru_seq_forward
        gru_seq_backward = _gru_cy.gru_seq_backward

__all__ = ["BACKEND", "gru_seq_forward", "gru_seq_backward", "_gru_py"]
