"""Kernel backend selection.

The compiled backend (``_fastk``, Cython) is used when available; the
pure-Python backend (``_purepy``) is the always-available fallback with
identical numerical semantics. Set ``CILBENCH_KERNELS=pure`` to force the
fallback, ``CILBENCH_KERNELS=fast`` to require the extension.
"""

from __future__ import annotations

import os

_choice = os.environ.get("CILBENCH_KERNELS", "auto").lower()

if _choice in ("pure", "purepy", "py"):
    from . import _purepy as impl

    BACKEND = "pure"
elif _choice == "fast":
    from . import _fastk as impl  # type: ignore[no-redef]

    BACKEND = "fast"
elif _choice == "auto":
    try:
        from . import _fastk as impl  # type: ignore[no-redef]

        BACKEND = "fast"
    except ImportError:
        from . import _purepy as impl

        BACKEND = "pure"
else:
    raise RuntimeError(f"CILBENCH_KERNELS must be auto|fast|pure, got {_choice!r}")

matmul = impl.matmul
matmul_at_b = impl.matmul_at_b
matmul_a_bt = impl.matmul_a_bt
add_row = impl.add_row
col_sum_acc = impl.col_sum_acc
relu = impl.relu
relu_bwd = impl.relu_bwd
softmax_rows = impl.softmax_rows
sgd_update = impl.sgd_update
copy_submatrix = impl.copy_submatrix
add_submatrix = impl.add_submatrix
acc = impl.acc
