"""Execution backend selection.

Tape programs run on one of two interchangeable executors:

* ``physnet._core`` — Cython + BLAS compiled core (built at install time);
* :class:`physnet._exec_np.NumpyExecutor` — pure numpy fallback.

The compiled core is used when importable.  Set ``PHYSNET_BACKEND`` to
``numpy`` or ``compiled`` to force one side (``compiled`` raises if the
extension is missing); ``auto`` is the default.
"""

import os

from ._exec_np import NumpyExecutor
from .tape import lower

try:
    from . import _core
except ImportError:
    _core = None

HAVE_COMPILED = _core is not None


def backend_name() -> str:
    """Name of the backend new executors will use."""
    choice = os.environ.get("PHYSNET_BACKEND", "auto").lower()
    if choice == "numpy":
        return "numpy"
    if choice == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError(
                "PHYSNET_BACKEND=compiled but the physnet._core extension is not built"
            )
        return "compiled"
    if choice != "auto":
        raise RuntimeError(f"unknown PHYSNET_BACKEND value {choice!r}")
    return "compiled" if HAVE_COMPILED else "numpy"


def make_executor(program, name=None):
    name = name or backend_name()
    if name == "compiled":
        return _core.CoreExecutor(program)
    return NumpyExecutor(program)


def executor_for(tape, name=None):
    """Executor for a tape, cached per (tape, backend)."""
    name = name or backend_name()
    key = ("exec", name)
    cached = tape._programs.get(key)
    if cached is None:
        cached = make_executor(lower(tape), name)
        tape._programs[key] = cached
    return cached
