"""Momentum-prototype training on noisy synthetic data.

Submodules are imported explicitly (``from mopro import trainer``); the
package root stays import-light so the CLI can pin BLAS thread counts
before any numeric library loads.
"""

__version__ = "0.1.0"


def __getattr__(name):
    if name == "backend_name":
        from ._kernels import backend_name
        return backend_name
    raise AttributeError(f"module 'mopro' has no attribute {name!r}")
