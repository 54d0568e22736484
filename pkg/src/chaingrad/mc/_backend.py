"""Selection between the compiled and pure-Python Monte Carlo cores.

The compiled extension is preferred when importable; set
CHAINGRAD_BACKEND=python (or =compiled) to force one.  Both cores follow
the same uniform-consumption protocol and arithmetic, so a given
(seed, stream) produces bit-identical estimates under either.
"""

from __future__ import annotations

import os

from . import _loops_py as _python

try:
    from . import _loops as _compiled
except ImportError:  # extension not built; pure-Python core serves
    _compiled = None

HAVE_COMPILED = _compiled is not None

__all__ = ["HAVE_COMPILED", "get_backend", "backend_name", "default_backend_name"]


def default_backend_name() -> str:
    forced = os.environ.get("CHAINGRAD_BACKEND")
    if forced:
        return forced
    return "compiled" if HAVE_COMPILED else "python"


def get_backend(name=None):
    name = name or default_backend_name()
    if name == "compiled":
        if _compiled is None:
            raise ImportError(
                "compiled backend requested but chaingrad.mc._loops is not built; "
                "reinstall with a C compiler or set CHAINGRAD_BACKEND=python"
            )
        return _compiled
    if name == "python":
        return _python
    raise ValueError(f"unknown backend {name!r}; expected 'compiled' or 'python'")


def backend_name(module) -> str:
    return "compiled" if module is _compiled else "python"
