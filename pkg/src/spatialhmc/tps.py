"""Low-rank thin plate spline bases.

The radial kernel is ``phi(r) = r^2 log r`` with ``phi(0) = 0``.  A basis
is anchored either at every data point (the kernel matrix is truncated to
its ``k`` largest-magnitude eigenpairs) or at ``k`` knots, in which case
the data rows are a Nyström extension of the knot eigenvectors.  In both
cases the spatial effect is ``f = B c`` with ``B = Phi(data, anchors) U_k``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, RankOutOfBounds
from .mesh import as_points, check_distinct


def tps_kernel(r):
    """``r^2 log r`` elementwise, continuous at zero."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** 2 * np.log(r[pos])
    return out if out.ndim else float(out)


def distances(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def kernel_matrix(a, b):
    return tps_kernel(distances(a, b))


def polynomial_matrix(points):
    pts = as_points(points)
    return np.column_stack([np.ones(len(pts)), pts])


def build_full(points):
    """Kernel matrix ``E`` and linear polynomial block ``P`` for ``points``."""
    pts = as_points(points)
    check_distinct(pts)
    E = kernel_matrix(pts, pts)
    E = 0.5 * (E + E.T)
    np.fill_diagonal(E, 0.0)
    return E, polynomial_matrix(pts)


def truncate(E, k):
    """Top-``k`` eigenpairs of symmetric ``E`` ranked by ``|eigenvalue|``."""
    E = np.asarray(E, dtype=float)
    n = E.shape[0]
    if E.shape != (n, n):
        raise DimensionMismatch("E must be square")
    if not 1 <= k <= n:
        raise RankOutOfBounds(f"rank {k} outside [1, {n}]")
    lam, vec = sla.eigh(E)
    order = np.argsort(-np.abs(lam), kind="stable")[:k]
    return vec[:, order], lam[order]


def select_knots(points, n_knots, seed=0):
    """Farthest-point (maximin) knot selection, deterministic given ``seed``.

    Returns indices into ``points``.
    """
    pts = as_points(points)
    n = len(pts)
    if not 1 <= n_knots <= n:
        raise RankOutOfBounds(f"cannot choose {n_knots} knots from {n} points")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    dmin = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    for _ in range(n_knots - 1):
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(pts - pts[nxt], axis=1))
    return np.array(chosen)


def default_knot_count(n_points):
    """One knot per ten data points, never fewer than four."""
    return max(4, n_points // 10)


@dataclass(frozen=True)
class TpsBasis:
    """Truncated TPS basis.

    Attributes
    ----------
    anchors : (m, 2) points the kernel matrix ``E`` is formed on
    points : (n, 2) data locations the design rows refer to
    E : (m, m) kernel matrix on the anchors
    P : (m, 3) polynomial block ``(1, s1, s2)`` on the anchors
    U : (m, k) retained eigenvectors
    D : (k,) retained eigenvalues, ``|D|`` descending
    design : (n, k) uncentred columns ``Phi(points, anchors) U``
    mode : ``"data"`` or ``"knots"``
    offset : (k,) column means of ``design``; subtracting them imposes the
        sum-to-zero constraint that keeps the intercept identifiable
    """

    anchors: np.ndarray
    points: np.ndarray
    E: np.ndarray
    P: np.ndarray
    U: np.ndarray
    D: np.ndarray
    design: np.ndarray
    mode: str
    offset: np.ndarray = None

    @property
    def k(self):
        return len(self.D)

    @property
    def centered_design(self):
        return self.design - self.offset

    def cross_kernel(self, targets):
        return kernel_matrix(as_points(targets), self.anchors)


def data_basis(points, k):
    """Basis anchored at every data point, truncated to rank ``k``."""
    pts = as_points(points)
    E, P = build_full(pts)
    U, D = truncate(E, k)
    # E U = U diag(D) exactly for eigenvectors; the product form keeps the
    # same expression as the prediction path.
    design = E @ U
    return TpsBasis(anchors=pts, points=pts, E=E, P=P, U=U, D=D, design=design,
                    mode="data", offset=design.mean(axis=0))


def knot_basis(points, knots, k=None):
    """Basis anchored at ``knots`` with Nyström rows for ``points``."""
    pts = as_points(points)
    kn = as_points(knots)
    E, P = build_full(kn)
    U, D = truncate(E, len(kn) if k is None else k)
    design = kernel_matrix(pts, kn) @ U
    return TpsBasis(anchors=kn, points=pts, E=E, P=P, U=U, D=D, design=design,
                    mode="knots", offset=design.mean(axis=0))


def design_columns(basis):
    return basis.design


def predict_at(basis, c, targets, centered=True):
    """Spatial effect at ``targets`` for coefficients ``c`` (or a ``(k, S)`` stack).

    With ``centered`` the data column means are removed, matching the
    columns the model is fitted with.
    """
    c = np.asarray(c, dtype=float)
    if c.shape[0] != basis.k:
        raise DimensionMismatch(f"expected {basis.k} coefficients, got {c.shape[0]}")
    out = basis.cross_kernel(targets) @ (basis.U @ c)
    if centered:
        out = out - basis.offset @ c
    return out


def natural_constraint(basis):
    """Columns ``Z`` spanning coefficients with ``P' U_k Z = 0``.

    The full-space coefficient vector of the truncated spline is ``U_k delta``;
    restricting ``delta = Z gamma`` imposes the natural-spline condition.
    """
    M = basis.P.T @ basis.U  # (3, k)
    return sla.null_space(M)


@dataclass(frozen=True)
class PenaltySpec:
    S: np.ndarray
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("penalty parameter must be positive")
        if np.any(np.asarray(self.S) < 0):
            raise ValueError("penalty diagonal must be non-negative")


def penalty_matrix(basis):
    """Diagonal of the truncated penalty, ``|D_k|``."""
    return np.abs(basis.D)


def penalty_value_grad(c, spec):
    """``(lam/2) c' S c`` and its gradient for diagonal ``S``."""
    c = np.asarray(c, dtype=float)
    S = np.asarray(spec.S, dtype=float)
    if S.ndim == 2:
        S = np.diag(S)
    if c.shape != S.shape:
        raise DimensionMismatch(f"coefficients {c.shape} vs penalty {S.shape}")
    Sc = S * c
    return 0.5 * spec.lam * float(c @ Sc), spec.lam * Sc


def spectral_quadratic(basis, c_full):
    """``c' E_k c`` via the retained eigenpairs."""
    proj = basis.U.T @ np.asarray(c_full, dtype=float)
    return float(np.sum(basis.D * proj**2))


def fit_penalized(X, B, y, lam, S):
    """Minimise ``||y - X b - B c||^2 + lam c' S c``; returns ``(b, c)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    B = np.asarray(B, dtype=float)
    p = X.shape[1]
    Z = np.hstack([X, B])
    pen = np.zeros(Z.shape[1])
    pen[p:] = lam * np.asarray(S, dtype=float)
    lhs = Z.T @ Z + np.diag(pen)
    rhs = Z.T @ np.asarray(y, dtype=float)
    sol = sla.lstsq(lhs, rhs)[0]
    return sol[:p], sol[p:]
