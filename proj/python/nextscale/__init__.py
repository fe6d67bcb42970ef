"""Multi-scale text-to-image pipeline (native module wrapper)."""

try:
    from ._nextscale import *  # noqa: F401,F403  (installed package layout)
except ImportError:
    from _nextscale import *  # noqa: F401,F403  (in-tree build on PYTHONPATH)
