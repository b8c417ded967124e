"""Metzler checks and similarity transforms into Metzler coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .interval import DimensionError, norm_max

IMAG_RTOL = 1e-9
COND_MAX = 1e12
SPECTRUM_TOL = 1e-8


class NotRealDiagonalisable(ValueError):
    pass


class IllConditioned(ValueError):
    pass


class MuTooSmall(ValueError):
    pass


class SpectrumMatchFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """Change of basis ``z = S z'``; the center in new coordinates is ``S_inv A S``."""

    S: np.ndarray
    S_inv: np.ndarray
    transformed_center: np.ndarray

    def to_new(self, a) -> np.ndarray:
        """Map a matrix into the new coordinates."""
        return self.S_inv @ np.asarray(a, dtype=float) @ self.S

    def roundtrip_error(self) -> float:
        return norm_max(self.S @ self.S_inv - np.eye(self.S.shape[0]))


def _square(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


def is_metzler(a, tol: float = 0.0) -> bool:
    """True iff every off-diagonal entry of ``a`` is >= -tol."""
    a = _square(a)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    off = a[~np.eye(a.shape[0], dtype=bool)]
    return bool(np.all(off >= -tol))


def _normalise_columns(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v, axis=0)
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def eigendecomposition_transform(a0) -> SimilarityTransform:
    """Diagonalise ``a0`` over the reals.

    Columns of ``S`` are unit right eigenvectors (largest-magnitude entry
    positive), ordered by descending eigenvalue, so the transformed center
    is ``diag(eigenvalues)``.
    """
    a0 = _square(a0, "A0")
    n = a0.shape[0]
    w, v = np.linalg.eig(a0)
    scale = np.linalg.norm(a0, 2)
    if np.any(np.abs(w.imag) > IMAG_RTOL * scale):
        raise NotRealDiagonalisable(f"complex eigenvalues: {np.round(w, 12).tolist()}")
    w = w.real
    v = v.real
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    s = _normalise_columns(v)
    cond = np.linalg.cond(s)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise IllConditioned(f"eigenvector matrix condition number {cond:.3g} exceeds {COND_MAX:g}")
    s_inv = np.linalg.inv(s)
    center = s_inv @ a0 @ s
    # the off-diagonal of S^-1 A0 S is round-off; keep exactly the diagonal
    center = np.diag(np.diag(center)) if n > 1 else center
    return SimilarityTransform(s, s_inv, center)


def _rank_one_spectrum(mu: float, ups: np.ndarray) -> np.ndarray:
    n = ups.shape[0]
    return np.linalg.eigvalsh(mu * np.ones((n, n)) - np.diag(ups))


def lemma3_transform(da, delta, mu: float) -> SimilarityTransform:
    """Orthogonal ``S`` making ``S.T @ D @ S`` Metzler for every ``|D - da| <= delta``.

    Finds a diagonal ``U`` so that ``Y = mu * ones - U`` is isospectral with
    ``da``; then ``S = V_da @ V_Y.T`` maps ``da`` onto ``Y``, whose
    off-diagonal entries ``mu`` dominate the worst-case perturbation.
    """
    da = _square(da, "Da")
    delta = np.asarray(delta, dtype=float)
    n = da.shape[0]
    if delta.shape != da.shape:
        raise DimensionError(f"Delta shape {delta.shape} differs from Da shape {da.shape}")
    if not np.allclose(da, da.T, rtol=0, atol=1e-12 * max(1.0, norm_max(da))):
        raise ValueError("Da must be symmetric")
    if np.any(delta < 0):
        raise ValueError("Delta must be nonnegative")
    bound = n * norm_max(delta)
    if not mu > bound:
        raise MuTooSmall(f"mu={mu!r} must exceed n*||Delta||_max={bound!r}")

    if bound == 0.0 and is_metzler(da):
        eye = np.eye(n)
        return SimilarityTransform(eye, eye.copy(), da.copy())

    lam, vd = np.linalg.eigh(da)
    scale = max(1.0, float(np.max(np.abs(lam))), mu)

    def resid(ups):
        return _rank_one_spectrum(mu, ups) - lam

    best = None
    for start in (mu * n - lam, mu - lam, mu - lam[::-1]):
        sol = least_squares(resid, start, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000 * n)
        err = float(np.max(np.abs(resid(sol.x))))
        if best is None or err < best[0]:
            best = (err, sol.x)
        if err <= SPECTRUM_TOL * scale:
            break
    err, ups = best
    if err > SPECTRUM_TOL * scale:
        raise SpectrumMatchFailure(f"could not match the spectrum of Da (residual {err:.3g}); try a smaller mu")

    y = mu * np.ones((n, n)) - np.diag(ups)
    _, vy = np.linalg.eigh(y)
    s = vd @ vy.T
    return SimilarityTransform(s, s.T.copy(), s.T @ da @ s)
