"""Backend selection for the integration kernel.

The compiled extension is used when importable.  Set ``DPRA_KERNEL=python``
to force the pure-Python fallback (``DPRA_KERNEL=compiled`` makes a missing
extension an import error instead of a silent fallback).
"""

import os

from . import _pykernel

OK = _pykernel.OK
DIV_ZERO = _pykernel.DIV_ZERO
DOMAIN = _pykernel.DOMAIN
NON_FINITE = _pykernel.NON_FINITE
NEGATIVE_RATE = _pykernel.NEGATIVE_RATE

STATUS_MESSAGES = {
    DIV_ZERO: "division by zero",
    DOMAIN: "math domain error",
    NON_FINITE: "non-finite derivative value",
    NEGATIVE_RATE: "negative hazard-rate modifier",
}

_choice = os.environ.get("DPRA_KERNEL", "auto").lower()

if _choice == "python":
    backend = _pykernel
    BACKEND = "python"
else:
    try:
        from . import _ckernel as backend
        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        backend = _pykernel
        BACKEND = "python"

integrate = backend.integrate
run_program = backend.run_program

__all__ = ["BACKEND", "integrate", "run_program", "STATUS_MESSAGES", "backend"]
