"""Rayleigh channel draws and the zero-forcing linear algebra.

Rows of the composite matrix are the plain (non-conjugated) user channel
vectors; all projections use Hermitian inner products.  The LQ factor
convention forces a real nonnegative diagonal on L so that |l_11|^2 is
the first row's squared norm and |l_22|^2 the second row's squared
residual off the first.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DecompositionError, DimensionError, DomainError
from .mathkit import RngStream, complex_gaussian_from_uniform

_RANK_RTOL = 1e-12


@dataclass(frozen=True)
class ChannelMatrix:
    """K x M matrix whose row k is user k's channel vector."""

    entries: np.ndarray
    k_users: int
    m_antennas: int

    def __post_init__(self):
        e = self.entries
        if e.ndim != 2 or e.shape != (self.k_users, self.m_antennas):
            raise DimensionError(
                f"entries shape {e.shape} does not match "
                f"({self.k_users}, {self.m_antennas})"
            )
        if self.k_users < 2 or self.m_antennas < 2:
            raise DimensionError("need k_users >= 2 and m_antennas >= 2")
        if not np.all(np.isfinite(e.view(float))):
            raise DomainError("channel entries must be finite")

    @classmethod
    def from_entries(cls, entries) -> "ChannelMatrix":
        e = np.asarray(entries, dtype=complex)
        return cls(e, e.shape[0], e.shape[1])


@dataclass(frozen=True)
class LQFactors:
    """H_active = L Q with L lower-triangular (real nonnegative diagonal)
    and Q having orthonormal rows."""

    l: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        n = self.l.shape[0]
        if self.l.shape != (n, n) or self.q.shape[0] != n:
            raise DimensionError("inconsistent L/Q shapes")
        d = np.diagonal(self.l)
        if np.any(np.abs(d.imag) > 1e-12 * (1.0 + np.abs(d.real))) or np.any(
            d.real < 0
        ):
            raise DecompositionError("diagonal of L must be real nonnegative")


@dataclass(frozen=True)
class BeamformerSet:
    """Zero-forcing weights W = Q^H L^{-1} D with unit-norm columns.

    ``g_norms_sq[i]`` is ||g_i||^2 for g_i the i-th column of L^{-1};
    its inverse is scheduled user i's squared subchannel gain.
    """

    w: np.ndarray
    g_norms_sq: np.ndarray
    d: np.ndarray


def draw_channel_matrix(k: int, m: int, rng: RngStream) -> ChannelMatrix:
    """K x M matrix of IID CN(0, 1) entries, deterministic in rng."""
    if k < 2 or m < 2:
        raise DimensionError(f"need k >= 2 and m >= 2, got ({k}, {m})")
    u = rng.generator().random((k, m, 2))
    return ChannelMatrix(complex_gaussian_from_uniform(u), k, m)


def lq_decompose(h_active) -> LQFactors:
    """LQ factorization of the active rows by Householder triangularization.

    Raises DecompositionError when a diagonal entry falls below
    1e-12 times the corresponding row norm (rank deficiency).
    """
    a = np.atleast_2d(np.asarray(h_active, dtype=complex))
    n, m = a.shape
    if n > m:
        raise DecompositionError(f"{n} rows cannot be independent in C^{m}")
    qh, r = np.linalg.qr(a.conj().T)
    l = r.conj().T
    q = qh.conj().T
    diag = np.diagonal(l).copy()
    row_norms = np.linalg.norm(a, axis=1)
    if np.any(np.abs(diag) <= _RANK_RTOL * row_norms):
        raise DecompositionError("rank-deficient active channel rows")
    phases = diag / np.abs(diag)
    l = l * phases.conj()[None, :]
    q = q * phases[:, None]
    # scrub the rounding dust so the diagonal is exactly real nonnegative
    l[np.arange(n), np.arange(n)] = np.abs(diag)
    return LQFactors(l=l, q=q)


def build_beamformers(factors: LQFactors) -> BeamformerSet:
    """Unit-norm ZF weights and per-user inverse gains from the LQ factors."""
    l = factors.l
    n = l.shape[0]
    diag = np.diagonal(l).real
    if np.any(diag <= 0):
        raise DecompositionError("singular triangular factor")
    l_inv = np.linalg.solve(l, np.eye(n, dtype=complex))
    g_norms_sq = np.sum(np.abs(l_inv) ** 2, axis=0)
    d = 1.0 / np.sqrt(g_norms_sq)
    w = factors.q.conj().T @ l_inv * d[None, :]
    return BeamformerSet(w=w, g_norms_sq=g_norms_sq, d=d)


def projection_residual_sq(h, basis) -> float:
    """Squared norm of h after projecting out span(basis), Hermitian metric.

    Equals ||h||^2 for an empty basis.  Basis vectors need not be
    orthogonal; they are orthonormalized on the fly.
    """
    hv = np.asarray(h, dtype=complex)
    residual = hv.copy()
    ortho: list[np.ndarray] = []
    for b in basis:
        bv = np.asarray(b, dtype=complex)
        norm_sq = np.vdot(bv, bv).real
        if norm_sq == 0.0:
            raise DomainError("basis vectors must be nonzero")
        r = bv.copy()
        for q in ortho:
            r -= np.vdot(q, r) * q
        rn = np.linalg.norm(r)
        if rn > 1e-12 * np.sqrt(norm_sq):
            ortho.append(r / rn)
    for q in ortho:
        residual -= np.vdot(q, residual) * q
    return float(np.vdot(residual, residual).real)
