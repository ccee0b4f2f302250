"""Kronecker-sum subspace algebra.

A K-way Kronecker sum of square factors Psi_1, ..., Psi_K is

    Omega = sum_k I x ... x Psi_k x ... x I     (p x p, p = prod d_k)

with mode 1 slowest-varying in the linearization.  Everything here works on
the small factors only; the dense p x p matrix is materialized solely by
:func:`kron_sum_dense` for oracle/test use.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from functools import reduce

import numpy as np

__all__ = [
    "Dims",
    "FactorSet",
    "IdentifiableForm",
    "SpectrumSet",
    "DenseLimitError",
    "NotPositiveDefiniteError",
    "dense_limit",
    "kron_sum_dense",
    "ksum_eigensystem",
    "eigsum_grid",
    "ksum_logdet",
    "proj_ksum_dense",
    "proj_inverse_spectrum",
    "identifiable_decompose",
    "ksum_inner",
    "ksum_frobenius",
    "ksum_spectral_norm",
    "offdiag_l1",
]

DEFAULT_DENSE_LIMIT = 4096


class DenseLimitError(ValueError):
    """Raised when a dense p x p code path is requested for too large a p."""


class NotPositiveDefiniteError(ValueError):
    """Raised when a Kronecker sum has a nonpositive eigenvalue.

    Attributes
    ----------
    min_sum : float
        The smallest eigenvalue sum encountered.
    """

    def __init__(self, min_sum: float):
        super().__init__(f"Kronecker sum is not positive definite (min eigenvalue {min_sum:g})")
        self.min_sum = float(min_sum)


def dense_limit(override: int | None = None) -> int:
    if override is not None:
        return int(override)
    env = os.environ.get("TERALASSO_DENSE_LIMIT")
    return int(env) if env else DEFAULT_DENSE_LIMIT


def _check_dense(p: int, limit: int | None = None) -> None:
    lim = dense_limit(limit)
    if p > lim:
        raise DenseLimitError(f"dense path requested for p={p} > limit {lim}")


@dataclass(frozen=True)
class Dims:
    """Mode dimensions (d_1, ..., d_K) of a tensor-valued variable."""

    d: tuple[int, ...]

    def __init__(self, d):
        d = tuple(int(x) for x in d)
        if len(d) < 1 or any(x < 1 for x in d):
            raise ValueError(f"invalid mode dimensions {d}")
        object.__setattr__(self, "d", d)

    @property
    def K(self) -> int:
        return len(self.d)

    @property
    def p(self) -> int:
        return int(np.prod(self.d))

    def m(self, k: int) -> int:
        """Product of all mode dimensions except mode k (0-based)."""
        return self.p // self.d[k]

    @property
    def ms(self) -> tuple[int, ...]:
        return tuple(self.p // dk for dk in self.d)


def _symmetrize(M: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"factor must be square, got shape {M.shape}")
    scale = np.abs(M).max() if M.size else 0.0
    if scale and np.abs(M - M.T).max() > 1e-8 * max(scale, 1.0):
        raise ValueError("factor is not symmetric within tolerance")
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class FactorSet:
    """The K factor matrices of a Kronecker sum, the compressed form of Omega."""

    dims: Dims
    psi: tuple[np.ndarray, ...]

    def __init__(self, dims: Dims, psi):
        psi = tuple(_symmetrize(m) for m in psi)
        if len(psi) != dims.K:
            raise ValueError(f"expected {dims.K} factors, got {len(psi)}")
        for k, m in enumerate(psi):
            if m.shape != (dims.d[k], dims.d[k]):
                raise ValueError(f"factor {k} has shape {m.shape}, expected {(dims.d[k],) * 2}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "psi", psi)

    def map(self, fn) -> "FactorSet":
        return FactorSet(self.dims, [fn(m) for m in self.psi])

    def __add__(self, other: "FactorSet") -> "FactorSet":
        _check_same_dims(self, other)
        return FactorSet(self.dims, [a + b for a, b in zip(self.psi, other.psi)])

    def __sub__(self, other: "FactorSet") -> "FactorSet":
        _check_same_dims(self, other)
        return FactorSet(self.dims, [a - b for a, b in zip(self.psi, other.psi)])

    def scale(self, c: float) -> "FactorSet":
        return FactorSet(self.dims, [c * m for m in self.psi])

    @staticmethod
    def identity(dims: Dims, scale: float = 1.0) -> "FactorSet":
        """Factors (scale/K) I_{d_k}, whose Kronecker sum is scale * I_p."""
        c = scale / dims.K
        return FactorSet(dims, [c * np.eye(dk) for dk in dims.d])

    def to_json(self) -> str:
        return json.dumps(
            {"dims": list(self.dims.d), "factors": [m.ravel().tolist() for m in self.psi]}
        )

    @staticmethod
    def from_json(text: str) -> "FactorSet":
        obj = json.loads(text)
        dims = Dims(obj["dims"])
        psi = [
            np.asarray(flat, dtype=float).reshape(dk, dk)
            for flat, dk in zip(obj["factors"], dims.d)
        ]
        return FactorSet(dims, psi)


def _check_same_dims(a, b) -> None:
    if a.dims.d != b.dims.d:
        raise ValueError(f"dimension mismatch: {a.dims.d} vs {b.dims.d}")


@dataclass(frozen=True)
class IdentifiableForm:
    """Trace-ambiguity-free parameterization: Omega = tau*I + (+)_k tilde_k."""

    dims: Dims
    tau: float
    tilde: tuple[np.ndarray, ...]

    def to_factors(self) -> FactorSet:
        c = self.tau / self.dims.K
        return FactorSet(
            self.dims, [c * np.eye(dk) + t for dk, t in zip(self.dims.d, self.tilde)]
        )


@dataclass(frozen=True)
class SpectrumSet:
    """Per-factor eigenvalues and orthonormal eigenbases of a FactorSet."""

    dims: Dims
    eigvals: tuple[np.ndarray, ...]
    eigvecs: tuple[np.ndarray, ...]

    @property
    def min_sum(self) -> float:
        return float(sum(v.min() for v in self.eigvals))

    @property
    def max_sum(self) -> float:
        return float(sum(v.max() for v in self.eigvals))


def kron_sum_dense(f: FactorSet, limit: int | None = None) -> np.ndarray:
    """Materialize the dense p x p Kronecker sum.  Oracle/test use only."""
    dims = f.dims
    _check_dense(dims.p, limit)
    out = np.zeros((dims.p, dims.p))
    for k, psi in enumerate(f.psi):
        pre = int(np.prod(dims.d[:k], initial=1))
        post = int(np.prod(dims.d[k + 1 :], initial=1))
        out += np.kron(np.kron(np.eye(pre), psi), np.eye(post))
    return out


def ksum_eigensystem(f: FactorSet) -> SpectrumSet:
    """Eigendecompose each factor; the full spectrum is all K-tuple sums."""
    vals, vecs = [], []
    for psi in f.psi:
        w, u = np.linalg.eigh(psi)
        vals.append(w)
        vecs.append(u)
    return SpectrumSet(f.dims, tuple(vals), tuple(vecs))


def eigsum_grid(eigvals) -> np.ndarray:
    """All eigenvalue sums as a tensor of shape (d_1, ..., d_K)."""
    return reduce(np.add.outer, eigvals)


def ksum_logdet(s: SpectrumSet) -> float:
    """log|Omega| from the factor spectra, never forming Omega."""
    grid = eigsum_grid(s.eigvals)
    mn = float(grid.min())
    if mn <= 0.0:
        raise NotPositiveDefiniteError(mn)
    return float(np.sum(np.log(grid)))


def proj_ksum_dense(A: np.ndarray, dims: Dims, limit: int | None = None) -> FactorSet:
    """Frobenius-orthogonal projection of a dense matrix onto the subspace.

    Returns factors A_k - ((K-1)/K) (tr(A)/p) I where A_k averages the m_k
    mode-k diagonal subblocks of A.
    """
    A = np.asarray(A, dtype=float)
    p = dims.p
    if A.shape != (p, p):
        raise ValueError(f"expected {p}x{p} matrix, got {A.shape}")
    _check_dense(p, limit)
    K = dims.K
    shift = (K - 1) / K * (np.trace(A) / p)
    T = A.reshape(dims.d + dims.d)
    factors = []
    for k in range(K):
        # average over matched complement indices of the (d_k, d_k) blocks
        Tk = np.moveaxis(T, (k, K + k), (0, 1))
        mk = dims.m(k)
        Ak = Tk.reshape(dims.d[k], dims.d[k], mk, mk)
        Ak = np.einsum("rsii->rs", Ak) / mk
        factors.append(0.5 * (Ak + Ak.T) - shift * np.eye(dims.d[k]))
    return FactorSet(dims, factors)


def proj_inverse_spectrum(s: SpectrumSet) -> FactorSet:
    """Projection of Omega^{-1} onto the subspace, from factor spectra alone.

    G_k = U_k diag(g_k) U_k' with
    g_k[i] = (1/m_k) sum_{tuples, i_k = i} 1/lambda  -  ((K-1)/K) (sum 1/lambda)/p,
    one O(pK) sweep over the eigenvalue-sum grid.
    """
    grid = eigsum_grid(s.eigvals)
    mn = float(grid.min())
    if mn <= 0.0:
        raise NotPositiveDefiniteError(mn)
    inv = 1.0 / grid
    total = float(inv.sum())
    dims = s.dims
    K = dims.K
    shift = (K - 1) / K * total / dims.p
    factors = []
    for k in range(K):
        axes = tuple(a for a in range(K) if a != k)
        g = inv.sum(axis=axes) / dims.m(k) - shift
        U = s.eigvecs[k]
        factors.append((U * g) @ U.T)
    return FactorSet(dims, factors)


def identifiable_decompose(f: FactorSet) -> IdentifiableForm:
    """Split a FactorSet into common diagonal mass tau and trace-zero parts."""
    taus = [np.trace(psi) / dk for psi, dk in zip(f.psi, f.dims.d)]
    tilde = tuple(psi - t * np.eye(dk) for psi, t, dk in zip(f.psi, taus, f.dims.d))
    return IdentifiableForm(f.dims, float(sum(taus)), tilde)


def ksum_inner(a: FactorSet, b: FactorSet) -> float:
    """Trace inner product <A, B> of the two Kronecker sums, factor-wise."""
    _check_same_dims(a, b)
    ia, ib = identifiable_decompose(a), identifiable_decompose(b)
    dims = a.dims
    out = dims.p * ia.tau * ib.tau
    for k in range(dims.K):
        out += dims.m(k) * float(np.sum(ia.tilde[k] * ib.tilde[k]))
    return out


def ksum_frobenius(f: FactorSet) -> float:
    return math.sqrt(max(ksum_inner(f, f), 0.0))


def ksum_spectral_norm(s: SpectrumSet) -> float:
    hi = sum(float(v.max()) for v in s.eigvals)
    lo = sum(float(v.min()) for v in s.eigvals)
    return max(hi, -lo)


def offdiag_l1(f: FactorSet, rho) -> float:
    """Weighted off-diagonal l1 penalty sum_k rho_k m_k |offd(Psi_k)|_1."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (f.dims.K,):
        raise ValueError(f"rho must have length {f.dims.K}")
    if np.any(rho < 0):
        raise ValueError("rho must be nonnegative")
    out = 0.0
    for k, psi in enumerate(f.psi):
        off = np.abs(psi).sum() - np.abs(np.diag(psi)).sum()
        out += rho[k] * f.dims.m(k) * off
    return float(out)
