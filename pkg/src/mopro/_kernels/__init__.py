"""Kernel backend selection.

Two interchangeable implementations of the hot numeric kernels exist:
``_fast`` (Cython) and ``_numpy`` (pure NumPy).  The compiled one is
preferred when importable; MOPRO_BACKEND overrides the choice:

    MOPRO_BACKEND=auto     compiled if available, else NumPy (default)
    MOPRO_BACKEND=cython   compiled, ImportError if not built
    MOPRO_BACKEND=python   NumPy, even when the extension exists

Results are deterministic within a backend; across backends they agree
to rounding (reduction order differs), so runs that must be compared
bitwise have to use the same backend.
"""

import os

from ..errors import ConfigError

_requested = os.environ.get("MOPRO_BACKEND", "auto")
if _requested not in ("auto", "cython", "python"):
    raise ConfigError(
        f"MOPRO_BACKEND={_requested!r} is not one of 'auto', 'cython', 'python'"
    )

if _requested == "python":
    from . import _numpy as _impl
elif _requested == "cython":
    from . import _fast as _impl
else:
    try:
        from . import _fast as _impl
    except ImportError:
        from . import _numpy as _impl

backend_name = _impl.name

matmul_fwd = _impl.matmul_fwd
matmul_bwd_a = _impl.matmul_bwd_a
matmul_bwd_b = _impl.matmul_bwd_b
relu_fwd = _impl.relu_fwd
relu_bwd = _impl.relu_bwd
l2norm_fwd = _impl.l2norm_fwd
l2norm_bwd = _impl.l2norm_bwd
softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
xent_fwd = _impl.xent_fwd
xent_bwd = _impl.xent_bwd
ema_update = _impl.ema_update
proto_ema_update = _impl.proto_ema_update
