"""Convergence diagnostics, posterior predictive checks and PSIS-LOO.

R-hat and bulk ESS use rank normalisation of split chains; PSIS-LOO
smooths the largest importance ratios with a generalised Pareto fit and
reports the shape ``k-hat`` against the sample-size dependent threshold
``min(1 - 1/log10(S), 0.7)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtri
from scipy.stats import rankdata

from .errors import MismatchedObservations, NonFiniteLoglik, TooFewTailSamples

ESS_OVERCOUNT = 1.5


# --------------------------------------------------------------------------
# R-hat and ESS


def _as_chains(draws):
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected a (chains, draws) array")
    return x


def _split(x):
    n = x.shape[1]
    half = n // 2
    if n % 2:
        # drop the middle draw so both halves have equal length
        return np.vstack([x[:, :half], x[:, half + 1:]])
    return np.vstack([x[:, :half], x[:, half:]])


def rank_normalize(x):
    """Inverse-normal transform of pooled fractional ranks, same shape as ``x``."""
    flat = x.ravel()
    r = rankdata(flat, method="average")
    z = ndtri((r - 3.0 / 8.0) / (flat.size - 2.0 * 3.0 / 8.0 + 1.0))
    return z.reshape(x.shape)


def _is_constant(x):
    return not np.all(np.isfinite(x)) or np.ptp(x) == 0.0


def _rhat_basic(x):
    m, n = x.shape
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    return math.sqrt(var_plus / w)


def split_rhat(draws):
    """Rank-normalised split R-hat; ``nan`` when the draws are constant."""
    x = _as_chains(draws)
    if x.shape[1] < 4:
        raise ValueError("need at least four draws per chain")
    if _is_constant(x):
        return float("nan")
    return _rhat_basic(rank_normalize(_split(x)))


def _autocovariance(x):
    n = len(x)
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), m)
    acov = np.fft.irfft(f * np.conjugate(f), m)[:n] / n
    return acov


def _ess_raw(x):
    """Geyer initial-monotone-sequence ESS for a ``(chains, draws)`` array."""
    m, n = x.shape
    acov = np.vstack([_autocovariance(c) for c in x])
    chain_mean = x.mean(axis=1)
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    rho = np.zeros(n)
    rho[0] = 1.0
    t = 1
    rho[1] = 1.0 - (w - acov[:, 1].mean()) / var_plus
    while t < n - 4:
        rho[t + 1] = 1.0 - (w - acov[:, t + 1].mean()) / var_plus
        rho[t + 2] = 1.0 - (w - acov[:, t + 2].mean()) / var_plus
        if rho[t + 1] + rho[t + 2] < 0:
            break
        t += 2
    max_t = t
    # initial monotone sequence over consecutive pair sums
    t = 1
    while t <= max_t - 2:
        pair_prev = rho[t - 1] + rho[t]
        pair = rho[t + 1] + rho[t + 2]
        if pair > pair_prev:
            rho[t + 1] = pair_prev / 2.0
            rho[t + 2] = pair_prev / 2.0
        t += 2
    tau = -1.0 + 2.0 * np.sum(rho[:max_t + 1])
    if max_t + 1 < n and rho[max_t + 1] > 0:
        tau += rho[max_t + 1]
    tau = max(tau, 1.0 / ESS_OVERCOUNT)
    return m * n / tau


def ess_bulk(draws):
    """Bulk effective sample size of rank-normalised split chains."""
    x = _as_chains(draws)
    if x.shape[1] < 4:
        raise ValueError("need at least four draws per chain")
    if _is_constant(x):
        return float("nan")
    return _ess_raw(rank_normalize(_split(x)))


def ess_mean(draws):
    """ESS for estimating the mean of the raw draws (no rank transform)."""
    x = _as_chains(draws)
    if _is_constant(x):
        return float("nan")
    return _ess_raw(_split(x))


def mcse_mean(draws):
    x = _as_chains(draws)
    return float(np.std(x, ddof=1) / math.sqrt(ess_mean(x)))


def mcse_var(draws):
    """Monte Carlo standard error of the variance estimate."""
    x = _as_chains(draws)
    sq = (x - x.mean()) ** 2
    return float(np.std(sq, ddof=1) / math.sqrt(ess_mean(sq)))


def efficiency(min_ess, wall_seconds, log_scale=False):
    """Effective draws per second; natural log of it when ``log_scale``."""
    if not wall_seconds > 0:
        raise ValueError("wall time must be positive")
    value = min_ess / wall_seconds
    return math.log(value) if log_scale else value


@dataclass
class ConvergenceReport:
    names: list
    rhat: np.ndarray
    ess_bulk: np.ndarray
    wall_seconds: float
    divergences: int = 0

    @property
    def max_rhat(self):
        return float(np.nanmax(self.rhat))

    @property
    def min_ess(self):
        return float(np.nanmin(self.ess_bulk))

    @property
    def efficiency(self):
        return efficiency(self.min_ess, self.wall_seconds)

    def summary(self):
        return {
            "rhat": self.max_rhat,
            "ess_bulk": self.min_ess,
            "min_ess": self.min_ess,
            "efficiency": self.efficiency,
            "log_efficiency": math.log(self.efficiency),
            "wall_seconds": self.wall_seconds,
            "divergences": int(self.divergences),
            "rhat_aggregation": "max over parameters",
            "ess_aggregation": "min over parameters",
        }

    def rows(self):
        return [{"parameter": n, "rhat": float(r), "ess_bulk": float(e)}
                for n, r, e in zip(self.names, self.rhat, self.ess_bulk)]


def convergence_report(dm, params=None):
    """Per-parameter R-hat / bulk ESS for a :class:`~spatialhmc.nuts.DrawMatrix`."""
    names = list(dm.names) if params is None else list(params)
    idx = [dm.names.index(n) for n in names]
    rhat = np.array([split_rhat(dm.draws[:, :, i]) for i in idx])
    ess = np.array([ess_bulk(dm.draws[:, :, i]) for i in idx])
    return ConvergenceReport(names=names, rhat=rhat, ess_bulk=ess,
                             wall_seconds=dm.total_wall_time,
                             divergences=int(np.sum(dm.divergent)))


# --------------------------------------------------------------------------
# posterior predictive


@dataclass
class PpdSummary:
    replicates: np.ndarray
    mean_data: float
    sd_data: float
    mean_ppd: float
    sd_ppd: float

    def as_dict(self):
        return {"mean_data": self.mean_data, "sd_data": self.sd_data,
                "mean_ppd": self.mean_ppd, "sd_ppd": self.sd_ppd,
                "n_rep": int(self.replicates.shape[0])}


def posterior_predictive(posterior, draws, n_rep=100, seed=0):
    """Replicate responses at ``n_rep`` randomly chosen posterior draws.

    ``mean_ppd``/``sd_ppd`` average the per-replicate mean and standard
    deviation; data summaries refer to the modelled response scale.
    """
    flat = draws.flat() if callable(getattr(draws, "flat", None)) else np.asarray(draws, dtype=float)
    if len(flat) == 0:
        raise ValueError("no draws supplied")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(flat), size=n_rep, replace=len(flat) < n_rep)
    reps = np.vstack([posterior.simulate_response(flat[i], rng) for i in pick])
    y = posterior.response
    return PpdSummary(
        replicates=reps,
        mean_data=float(np.mean(y)),
        sd_data=float(np.std(y, ddof=1)) if len(y) > 1 else 0.0,
        mean_ppd=float(np.mean(reps.mean(axis=1))),
        sd_ppd=float(np.mean(reps.std(axis=1, ddof=1))) if reps.shape[1] > 1 else 0.0,
    )


# --------------------------------------------------------------------------
# generalised Pareto and PSIS


def gpd_fit(x, prior_weight=10.0):
    """Generalised Pareto shape and scale for exceedances ``x > 0``.

    Uses the profile posterior mean over a grid of ``theta = -k / sigma``
    values, then shrinks ``k`` toward 0.5 with ``prior_weight`` pseudo
    observations.  Returns ``(k, sigma)`` in the parameterisation whose
    survival function is ``(1 + k x / sigma)^(-1/k)``.
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    if n < 5:
        raise TooFewTailSamples(f"need at least 5 tail samples, got {n}")
    if x[0] < 0:
        raise ValueError("exceedances must be non-negative")
    prior_bs = 3.0
    m = 30 + int(math.sqrt(n))
    x_star = x[int(n / 4.0 + 0.5) - 1]
    bs = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    bs /= prior_bs * x_star
    bs += 1.0 / x[-1]
    ks = np.mean(np.log1p(-bs[:, None] * x[None, :]), axis=1)
    L = n * (np.log(-bs / ks) - ks - 1.0)
    with np.errstate(over="ignore"):
        w = 1.0 / np.sum(np.exp(L[None, :] - L[:, None]), axis=1)
    keep = w >= 10.0 * np.finfo(float).eps
    bs = bs[keep]
    w = w[keep] / np.sum(w[keep])
    b = float(np.sum(bs * w))
    k = float(np.mean(np.log1p(-b * x)))
    sigma = -k / b
    k = (n * k + prior_weight * 0.5) / (n + prior_weight)
    return k, sigma


def gpd_quantile(p, k, sigma):
    p = np.asarray(p, dtype=float)
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def khat_threshold(S):
    return min(1.0 - 1.0 / math.log10(S), 0.7)


def psis_smooth(log_ratios, smooth=True, truncate=True):
    """Pareto-smoothed log weights (normalised) and ``k-hat``.

    ``k-hat`` is ``nan`` when the tail cannot be fitted (constant ratios
    or too few distinct values); its status is then "not estimable".
    """
    lw = np.asarray(log_ratios, dtype=float).copy()
    S = len(lw)
    lw -= lw.max()
    khat = float("nan")
    if smooth and S > 1:
        M = int(math.ceil(min(0.2 * S, 3.0 * math.sqrt(S))))
        order = np.argsort(lw, kind="stable")
        cutoff = max(lw[order[max(S - M - 1, 0)]], math.log(np.finfo(float).tiny))
        tail_idx = np.flatnonzero(lw > cutoff)
        if len(tail_idx) >= 5:
            tail_idx = tail_idx[np.argsort(lw[tail_idx], kind="stable")]
            exceed = np.exp(lw[tail_idx]) - math.exp(cutoff)
            k, sigma = gpd_fit(exceed)
            if math.isfinite(k):
                khat = k
                m = len(tail_idx)
                probs = (np.arange(m) + 0.5) / m
                smoothed = np.log(gpd_quantile(probs, k, sigma) + math.exp(cutoff))
                lw[tail_idx] = smoothed
                if truncate:
                    # the largest raw ratio was shifted to zero above
                    lw = np.minimum(lw, 0.0)
    lw -= logsumexp(lw)
    return lw, khat


@dataclass
class LooReport:
    elpd_i: np.ndarray
    pareto_k: np.ndarray
    lpd_i: np.ndarray
    S: int
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.elpd_i)

    @property
    def elpd_loo(self):
        return float(np.sum(self.elpd_i))

    @property
    def se_elpd_loo(self):
        return float(math.sqrt(self.n * np.var(self.elpd_i)))

    @property
    def p_loo(self):
        return float(np.sum(self.lpd_i - self.elpd_i))

    @property
    def threshold(self):
        return khat_threshold(self.S)

    @property
    def k_status(self):
        out = []
        for k in self.pareto_k:
            if not math.isfinite(k):
                out.append("not_estimable")
            elif k < self.threshold:
                out.append("ok")
            else:
                out.append("bad")
        return out

    @property
    def pareto_k_max(self):
        finite = self.pareto_k[np.isfinite(self.pareto_k)]
        return float(finite.max()) if len(finite) else float("nan")

    def summary(self):
        return {"elpd_loo": self.elpd_loo, "se_elpd_loo": self.se_elpd_loo,
                "p_loo": self.p_loo, "pareto_k_max": self.pareto_k_max,
                "khat_threshold": self.threshold,
                "n_bad_k": int(sum(s == "bad" for s in self.k_status))}


def psis_loo(loglik, smooth=True, truncate=True, name=""):
    """PSIS-LOO from an ``(S, n)`` matrix of pointwise log-likelihoods."""
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim != 2:
        raise ValueError("loglik must be (draws, observations)")
    if not np.all(np.isfinite(ll)):
        raise NonFiniteLoglik("pointwise log-likelihood contains non-finite values")
    S, n = ll.shape
    elpd = np.empty(n)
    khat = np.empty(n)
    for i in range(n):
        lw, k = psis_smooth(-ll[:, i], smooth=smooth, truncate=truncate)
        elpd[i] = logsumexp(lw + ll[:, i])
        khat[i] = k
    lpd = logsumexp(ll, axis=0) - math.log(S)
    return LooReport(elpd_i=elpd, pareto_k=khat, lpd_i=lpd, S=S, name=name)


def loo_compare(reports):
    """Rank reports by ``elpd_loo``; differences are taken against the best."""
    reports = list(reports)
    if not reports:
        return []
    n = reports[0].n
    if any(r.n != n for r in reports):
        raise MismatchedObservations("all reports must cover the same observations")
    ranked = sorted(reports, key=lambda r: -r.elpd_loo)
    best = ranked[0]
    rows = []
    for r in ranked:
        diff = r.elpd_i - best.elpd_i
        rows.append({
            "model": r.name,
            "elpd_loo": r.elpd_loo,
            "p_loo": r.p_loo,
            "elpd_diff": float(np.sum(diff)),
            "se_diff": float(math.sqrt(n * np.var(diff))),
            "pareto_k_max": r.pareto_k_max,
        })
    return rows
