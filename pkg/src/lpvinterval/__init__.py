"""Guaranteed interval prediction for linear parameter-varying systems."""

from __future__ import annotations

import os

__version__ = "0.1.0"

# IVP_THREADS caps the BLAS pools; it only takes effect before numpy loads.
_threads = os.environ.get("IVP_THREADS", "")
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .interval import IntervalMatrix, IntervalVector  # noqa: E402
from .lmi import LmiCertificate, check_certificate, search_certificate  # noqa: E402
from .predictor import IntervalTrajectory, Method, PolytopicModel, SignalBounds, integrate  # noqa: E402

__all__ = [
    "IntervalMatrix",
    "IntervalTrajectory",
    "IntervalVector",
    "LmiCertificate",
    "Method",
    "PolytopicModel",
    "SignalBounds",
    "check_certificate",
    "integrate",
    "search_certificate",
]
