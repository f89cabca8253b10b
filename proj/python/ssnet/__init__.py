"""SSNet sleep-stage classification toolkit.

Thin re-export of the compiled core: EDF parsing, the epoch dataset
pipeline, the dual-branch CNN+LSTM model, training and evaluation metrics.
"""

try:
    from ._core import *  # noqa: F401,F403  (installed package layout)
    from . import _core as core
except ImportError:  # in-tree build: _core sits on PYTHONPATH next to the package
    from _core import *  # noqa: F401,F403
    import _core as core

__all__ = [name for name in dir(core) if not name.startswith("_")]
