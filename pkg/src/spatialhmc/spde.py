"""SPDE precision matrices for Matérn fields with smoothness one.

With alpha = 2 in two dimensions the precision of the FEM weights is

    Q(tau, kappa) = tau^2 (kappa^4 C + 2 kappa^2 G1 + G2)

and the implied marginal variance is 1 / (4 pi kappa^2 tau^2).
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .errors import DimensionMismatch, NotPositiveDefinite

LOG_2PI = math.log(2.0 * math.pi)
DENSE_LIMIT = 2000


@dataclass(frozen=True)
class SpdeHyperparams:
    log_tau: float
    log_kappa: float

    def __post_init__(self):
        if not (math.isfinite(self.log_tau) and math.isfinite(self.log_kappa)):
            raise ValueError("SPDE hyperparameters must be finite")

    @property
    def tau(self):
        return math.exp(self.log_tau)

    @property
    def kappa(self):
        return math.exp(self.log_kappa)


@dataclass(frozen=True)
class MaternParams:
    sigma2: float
    kappa: float
    nu: float = 1.0

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.kappa > 0 and self.nu > 0):
            raise ValueError("Matérn parameters must be strictly positive")

    @property
    def practical_range(self):
        return math.sqrt(8.0 * self.nu) / self.kappa


@dataclass(frozen=True)
class PrecisionMatrix:
    Q: sp.csc_matrix
    logdet: float
    _factor: object = field(default=None, repr=False, compare=False)

    @property
    def n(self):
        return self.Q.shape[0]

    def solve(self, rhs):
        """Solve ``Q x = rhs`` with the cached factorisation."""
        if isinstance(self._factor, tuple):
            return sla.cho_solve(self._factor, rhs)
        return self._factor.solve(np.asarray(rhs, dtype=float))


def kappa_for_range(practical_range, nu=1.0):
    return math.sqrt(8.0 * nu) / practical_range


def tau_for_variance(sigma2, kappa):
    """The tau giving marginal variance ``sigma2`` at scale ``kappa``."""
    return 1.0 / math.sqrt(4.0 * math.pi * kappa**2 * sigma2)


def marginal_variance(tau, kappa):
    return 1.0 / (4.0 * math.pi * kappa**2 * tau**2)


def spde_operator(fem, kappa):
    """``kappa^4 C + 2 kappa^2 G1 + G2`` as a sparse matrix."""
    k2 = kappa * kappa
    return (fem.C * (k2 * k2) + fem.G1 * (2.0 * k2) + fem.G2).tocsc()


def _factorise(Q):
    n = Q.shape[0]
    if n <= DENSE_LIMIT:
        try:
            cf = sla.cho_factor(Q.toarray(), lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NotPositiveDefinite(str(exc)) from exc
        diag = np.diag(cf[0])
        if np.any(diag <= 0):
            raise NotPositiveDefinite("non-positive pivot in Cholesky factor")
        return cf, 2.0 * float(np.sum(np.log(diag)))
    try:
        lu = spla.splu(Q.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    u = lu.U.diagonal()
    if np.any(u <= 0) or not np.all(np.isfinite(u)):
        raise NotPositiveDefinite("non-positive pivot in sparse factorisation")
    return lu, float(np.sum(np.log(u)))


def assemble_Q(fem, h):
    """Precision matrix and log-determinant for hyperparameters ``h``."""
    try:
        tau, kappa = h.tau, h.kappa
        scale = tau**2 * kappa**4
    except OverflowError:
        raise NotPositiveDefinite("hyperparameters overflow") from None
    if not (math.isfinite(scale) and scale > 0):
        raise NotPositiveDefinite("non-finite hyperparameters")
    Q = (spde_operator(fem, kappa) * (tau**2)).tocsc()
    factor, logdet = _factorise(Q)
    return PrecisionMatrix(Q=Q, logdet=logdet, _factor=factor)


def gmrf_logpdf_grad(u, prec):
    """Log-density of ``N(0, Q^-1)`` at ``u`` and its gradient ``-Q u``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (prec.n,):
        raise DimensionMismatch(f"u has shape {u.shape}, precision is {prec.n}x{prec.n}")
    Qu = prec.Q @ u
    value = -0.5 * prec.n * LOG_2PI + 0.5 * prec.logdet - 0.5 * float(u @ Qu)
    return value, -Qu


def logdet_grad(fem, h):
    """Derivatives of ``log|Q|`` with respect to ``log tau`` and ``log kappa``.

    The kappa derivative is the trace ``tr(Q^-1 dQ/dlog kappa)`` evaluated
    with the Cholesky factor of ``Q``.
    """
    prec = assemble_Q(fem, h)
    k2 = h.kappa**2
    dQ = (fem.C * (4.0 * k2 * k2) + fem.G1 * (4.0 * k2)) * (h.tau**2)
    if prec.n <= DENSE_LIMIT:
        X = prec.solve(dQ.toarray())
        d_logkappa = float(np.trace(X))
    else:
        d_logkappa = 0.0
        dQ = dQ.tocsc()
        for start in range(0, prec.n, 256):
            cols = dQ[:, start:start + 256].toarray()
            X = prec.solve(cols)
            d_logkappa += float(np.trace(X[start:start + 256]))
    return 2.0 * prec.n, d_logkappa


class SpdeSpectrum:
    """Closed-form ``log|Q|`` from one eigendecomposition of the mesh.

    Because ``C`` is diagonal, ``K(kappa) = C^1/2 V (kappa^2 + L)^2 V' C^1/2``
    where ``V L V'`` diagonalises ``C^-1/2 G1 C^-1/2``.  Every subsequent
    log-determinant and its hyperparameter derivatives cost O(n).
    """

    def __init__(self, fem):
        s = 1.0 / np.sqrt(fem.c_diag)
        H = fem.G1.toarray() * s[:, None] * s[None, :]
        lam = sla.eigh((H + H.T) * 0.5, eigvals_only=True)
        # G1 is positive semidefinite; round-off below zero is clipped.
        self.eigenvalues = np.clip(lam, 0.0, None)
        self.log_c = float(np.sum(np.log(fem.c_diag)))
        self.n = fem.n

    def logdet(self, log_tau, log_kappa):
        """Return ``(log|Q|, d/dlog tau, d/dlog kappa)``."""
        k2 = math.exp(2.0 * log_kappa)
        shifted = k2 + self.eigenvalues
        value = 2.0 * self.n * log_tau + self.log_c + 2.0 * float(np.sum(np.log(shifted)))
        d_kappa = 4.0 * k2 * float(np.sum(1.0 / shifted))
        return value, 2.0 * self.n, d_kappa


def matern_cov(r, p):
    """Matérn covariance at distance ``r`` (scalar or array)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be non-negative")
    x = p.kappa * r
    out = np.full(x.shape, p.sigma2)
    pos = x > 0
    xp = x[pos]
    out[pos] = p.sigma2 / (2.0 ** (p.nu - 1.0) * gamma_fn(p.nu)) * xp**p.nu * kv(p.nu, xp)
    return out if out.ndim else float(out)


def matern_matrix(points_a, points_b, p):
    d = np.sqrt(((points_a[:, None, :] - points_b[None, :, :]) ** 2).sum(-1))
    return matern_cov(d, p)
