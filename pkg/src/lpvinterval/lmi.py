"""Stability certificates for the polytopic predictor.

A certificate is ten diagonal matrices of size 2n, stored as their
diagonals. :func:`check_certificate` is the sound part; the search in
:func:`search_certificate` is a heuristic whose output is always re-checked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .interval import DimensionError, neg, pos
from .predictor import PolytopicModel, extended_system_matrices

FIELDS = ("p", "q", "q_plus", "q_minus", "z_plus", "z_minus", "psi_plus", "psi_minus", "psi", "gamma")
DEFAULT_TOL = 1e-8


class Infeasible(Exception):
    """The search gave up. This is not a proof that no certificate exists."""


@dataclass(frozen=True, eq=False)
class LmiCertificate:
    p: np.ndarray
    q: np.ndarray
    q_plus: np.ndarray
    q_minus: np.ndarray
    z_plus: np.ndarray
    z_minus: np.ndarray
    psi_plus: np.ndarray
    psi_minus: np.ndarray
    psi: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        sizes = set()
        for f in FIELDS:
            arr = np.atleast_1d(np.array(getattr(self, f), dtype=float))
            if arr.ndim != 1:
                raise DimensionError(f"{f} must be a vector of diagonal entries")
            arr.setflags(write=False)
            object.__setattr__(self, f, arr)
            sizes.add(arr.shape[0])
        if len(sizes) != 1:
            raise DimensionError(f"certificate diagonals have differing lengths {sorted(sizes)}")

    @property
    def size(self) -> int:
        """Length of each diagonal (twice the state dimension)."""
        return self.p.shape[0]

    @classmethod
    def zeros(cls, size: int) -> LmiCertificate:
        return cls(*(np.zeros(size) for _ in FIELDS))

    @classmethod
    def from_flat(cls, flat) -> LmiCertificate:
        flat = np.asarray(flat, dtype=float)
        return cls(*np.split(flat, len(FIELDS)))

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, f) for f in FIELDS])

    def scaled(self, alpha: float) -> LmiCertificate:
        return LmiCertificate.from_flat(alpha * self.flat())

    def replace(self, **changes) -> LmiCertificate:
        values = {f: getattr(self, f) for f in FIELDS}
        values.update(changes)
        return LmiCertificate(**values)

    def __add__(self, other: LmiCertificate) -> LmiCertificate:
        return LmiCertificate.from_flat(self.flat() + other.flat())

    def to_dict(self) -> dict:
        return {f: [float(x) for x in getattr(self, f)] for f in FIELDS}

    @classmethod
    def from_dict(cls, data: dict) -> LmiCertificate:
        unknown = set(data) - set(FIELDS)
        missing = set(FIELDS) - set(data)
        if unknown or missing:
            raise ValueError(f"certificate fields: missing {sorted(missing)}, unknown {sorted(unknown)}")
        return cls(**{f: data[f] for f in FIELDS})

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> LmiCertificate:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CertificateReport:
    positivity1_margin: float
    positivity2_margin: float
    gamma_margin: float
    upsilon_max_eig: float
    feasible: bool

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def min_diag(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    return np.minimum(a, b)


def build_upsilon(model: PolytopicModel, cert: LmiCertificate) -> np.ndarray:
    """Assemble the symmetric 8n x 8n block matrix that must be negative semidefinite."""
    if cert.size != 2 * model.n:
        raise DimensionError(f"certificate size {cert.size} does not match 2n={2 * model.n}")
    a, rp, rm = extended_system_matrices(model)
    P, Q, Qp, Qm, Zp, Zm, Sp, Sm, S, G = (np.diag(getattr(cert, f)) for f in FIELDS)
    u11 = a.T @ P + P @ a + Q
    u12 = a.T @ Zp + P @ rp + Sp
    u13 = a.T @ Zm + P @ rm + Sm
    u22 = Zp @ rp + rp.T @ Zp + Qp
    u23 = Zp @ rm + rp.T @ Zm + S
    u33 = Zm @ rm + rm.T @ Zm + Qm
    return np.block([
        [u11, u12, u13, P],
        [u12.T, u22, u23, Zp],
        [u13.T, u23.T, u33, Zm],
        [P, Zp, Zm, -G],
    ])


def _margins(c: LmiCertificate) -> tuple[float, float, float]:
    m1 = float(np.min(c.p + min_diag(c.z_plus, c.z_minus)))
    omega = c.q + min_diag(c.q_plus, c.q_minus) + 2.0 * min_diag(c.psi_plus, c.psi_minus)
    return m1, float(np.min(omega)), float(np.min(c.gamma))


def max_eig(sym: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (sym + sym.T))[-1])


def check_certificate(model: PolytopicModel, cert: LmiCertificate, tol: float = DEFAULT_TOL) -> CertificateReport:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    m1, m2, m3 = _margins(cert)
    lam = max_eig(build_upsilon(model, cert))
    feasible = m1 > 0 and m2 > 0 and m3 > 0 and lam <= tol
    return CertificateReport(m1, m2, m3, lam, bool(feasible))


def lyapunov_value(cert: LmiCertificate, x) -> float:
    """``V(X) = XᵀPX + XᵀZ₊X⁺ − XᵀZ₋X⁻`` for the extended state ``X = (x_lo, x_hi)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (cert.size,):
        raise DimensionError(f"X must have length {cert.size}")
    return float(x @ (cert.p * x) + x @ (cert.z_plus * pos(x)) - x @ (cert.z_minus * neg(x)))


def iss_bound(cert: LmiCertificate, v0: float, deltas) -> float:
    """Ultimate bound on ``V`` along the predictor for inputs with the given δ samples.

    From ``Υ ⪯ 0``: ``V̇ <= -Σ ω_i X_i² + δᵀΓδ`` and ``V <= c_max |X|²`` with
    ``c_max = max(p + max(z₊, z₋))``, so ``V`` never exceeds
    ``max(V(0), c_max sup δᵀΓδ / ω_min)``. Requires a feasible certificate.
    """
    deltas = np.atleast_2d(np.asarray(deltas, dtype=float))
    if deltas.shape[1] != cert.size:
        raise DimensionError(f"δ must have length {cert.size}")
    _, omega_min, _ = _margins(cert)
    if not omega_min > 0:
        raise ValueError("the certificate has no positive dissipation margin")
    c_max = float(np.max(cert.p + np.maximum(cert.z_plus, cert.z_minus)))
    supply = float(np.max(deltas**2 @ cert.gamma))
    return max(float(v0), c_max * supply / omega_min)


class _Penalty:
    """``max(λmax(Υ), -margins)`` and a subgradient, over the flat variable vector."""

    def __init__(self, model: PolytopicModel):
        size = 2 * model.n
        self.size = size
        nvar = len(FIELDS) * size
        # Υ is linear in the certificate; cache its image of each unit vector
        self.basis = np.stack([build_upsilon(model, LmiCertificate.from_flat(e)) for e in np.eye(nvar)])
        self.basis = 0.5 * (self.basis + self.basis.transpose(0, 2, 1))
        self.idx = {f: np.arange(k * size, (k + 1) * size) for k, f in enumerate(FIELDS)}

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        ix = self.idx
        ups = np.tensordot(x, self.basis, axes=1)
        w, v = np.linalg.eigh(ups)
        top = v[:, -1]
        terms = [(w[-1], lambda: np.einsum("i,kij,j->k", top, self.basis, top))]

        zp, zm = x[ix["z_plus"]], x[ix["z_minus"]]
        m1 = x[ix["p"]] + np.minimum(zp, zm)
        j1 = int(np.argmin(m1))

        def g1():
            g = np.zeros_like(x)
            g[ix["p"][j1]] = -1.0
            g[(ix["z_plus"] if zp[j1] <= zm[j1] else ix["z_minus"])[j1]] = -1.0
            return g
        terms.append((-m1[j1], g1))

        qp, qm = x[ix["q_plus"]], x[ix["q_minus"]]
        sp, sm = x[ix["psi_plus"]], x[ix["psi_minus"]]
        m2 = x[ix["q"]] + np.minimum(qp, qm) + 2.0 * np.minimum(sp, sm)
        j2 = int(np.argmin(m2))

        def g2():
            g = np.zeros_like(x)
            g[ix["q"][j2]] = -1.0
            g[(ix["q_plus"] if qp[j2] <= qm[j2] else ix["q_minus"])[j2]] = -1.0
            g[(ix["psi_plus"] if sp[j2] <= sm[j2] else ix["psi_minus"])[j2]] = -2.0
            return g
        terms.append((-m2[j2], g2))

        gam = x[ix["gamma"]]
        j3 = int(np.argmin(gam))

        def g3():
            g = np.zeros_like(x)
            g[ix["gamma"][j3]] = -1.0
            return g
        terms.append((-gam[j3], g3))

        val, grad = max(terms, key=lambda t: t[0])
        return float(val), grad()


def search_certificate(model: PolytopicModel, max_iters: int = 4000, seed: int = 0, starts: int = 8,
                       step: float = 0.05, target: float = 0.01) -> LmiCertificate:
    """Projected subgradient descent on the worst constraint violation.

    All conditions are positively homogeneous, so the search runs in the box
    ``|c|_inf <= 1``. A start ends once its worst violation drops below
    ``-target``; otherwise its most negative iterate is kept. Starts are
    independent and tried in index order, the first success wins.

    Raises :class:`Infeasible` when no start produced a checked certificate.
    """
    penalty = _Penalty(model)
    nvar = penalty.basis.shape[0]
    rng = np.random.default_rng(seed)
    inits = rng.uniform(0.1, 1.0, size=(starts, nvar))
    for x in inits:
        best_val, best_x = 0.0, None
        for k in range(1, max_iters + 1):
            val, g = penalty(x)
            if val < best_val:
                best_val, best_x = val, x
                if val <= -target:
                    break
            gn = np.linalg.norm(g)
            if gn == 0:
                break
            x = np.clip(x - step / np.sqrt(k) * g / gn, -1.0, 1.0)
        if best_x is not None:
            cert = LmiCertificate.from_flat(best_x)
            if check_certificate(model, cert, DEFAULT_TOL).feasible:
                return cert
    raise Infeasible(f"no certificate found after {starts} starts x {max_iters} iterations")
