"""Kernel backend selection.

The quadratic-family sweeps exist twice: compiled (``fsmfg._fastcore``,
Cython) and pure numpy (``fsmfg._purekernels``).  The compiled module is
preferred when importable; set ``FSMFG_BACKEND=python`` or
``FSMFG_BACKEND=compiled`` to force a choice (forcing ``compiled`` raises
if the extension is missing).  Both expose identical signatures, so all
solvers go through ``kernels()``.
"""

from __future__ import annotations

import os

from . import _purekernels

_FORCED = os.environ.get("FSMFG_BACKEND", "").strip().lower()

try:
    from . import _fastcore
    _HAVE_COMPILED = True
except ImportError:
    _fastcore = None
    _HAVE_COMPILED = False

if _FORCED == "python":
    _ACTIVE = _purekernels
elif _FORCED == "compiled":
    if not _HAVE_COMPILED:
        raise ImportError(
            "FSMFG_BACKEND=compiled but the fsmfg._fastcore extension is not built; "
            "run `pip install -e . --no-build-isolation` or drop the override")
    _ACTIVE = _fastcore
elif _FORCED:
    raise ValueError(f"FSMFG_BACKEND must be 'python' or 'compiled', got {_FORCED!r}")
else:
    _ACTIVE = _fastcore if _HAVE_COMPILED else _purekernels


def kernels():
    """The active kernel module."""
    return _ACTIVE


def backend_name():
    return _ACTIVE.NAME


def compiled_available():
    return _HAVE_COMPILED


def all_backends():
    """(name, module) pairs for every importable backend, compiled first."""
    out = []
    if _HAVE_COMPILED:
        out.append((_fastcore.NAME, _fastcore))
    out.append((_purekernels.NAME, _purekernels))
    return out
