"""Model family: likelihoods, priors and the assembled log-posterior.

A :class:`Posterior` is the only thing the sampler sees: it maps an
unconstrained parameter vector to ``(log density, gradient)``.  Layout of
the vector is ``[beta | spatial | hyperparameters]`` where the spatial
block holds SPDE vertex weights ``u`` or spline coefficients ``c`` and
positive hyperparameters are stored on the log scale.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import digamma, gammaln, log_ndtr

from . import mesh as mesh_mod
from . import tps
from .errors import NonPositiveResponse, SpecMismatch, UnknownPriorFamily
from .spde import LOG_2PI, SpdeSpectrum

LIKELIHOODS = ("gaussian", "gamma_mean_precision", "skew_normal")
SPATIAL_EFFECTS = ("spde_gmrf", "tps_lowrank", "none")
LOG_2 = math.log(2.0)


# --------------------------------------------------------------------------
# densities


def gaussian_logpdf(y, mu, sigma):
    z = (np.asarray(y, dtype=float) - mu) / sigma
    return -0.5 * LOG_2PI - np.log(sigma) - 0.5 * z * z


def gamma_logpdf(y, mu, phi):
    """Gamma with mean ``mu`` and variance ``mu^2 / phi`` (shape phi, rate phi/mu)."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise NonPositiveResponse("gamma likelihood needs y > 0")
    return phi * np.log(phi / mu) - gammaln(phi) + (phi - 1.0) * np.log(y) - phi * y / mu


def skew_normal_logpdf(y, mu, sigma, omega):
    z = (np.asarray(y, dtype=float) - mu) / sigma
    # log 2 + log Phi(0) is exactly zero, so omega = 0 gives the Gaussian bit for bit
    return (-0.5 * LOG_2PI - np.log(sigma) - 0.5 * z * z) + (LOG_2 + log_ndtr(omega * z))


def _mills(x):
    """``pdf(x) / cdf(x)`` for the standard normal, stable in the lower tail."""
    return np.exp(-0.5 * x * x - 0.5 * LOG_2PI - log_ndtr(x))


def jacobian_sqrt_correction(y_original):
    """``sum log |d sqrt(y) / dy|`` for the square-root response transform."""
    y = np.asarray(y_original, dtype=float)
    if np.any(y <= 0):
        raise NonPositiveResponse("square-root Jacobian needs y > 0")
    return float(np.sum(-LOG_2 - 0.5 * np.log(y)))


def _sqrt_jacobian_pointwise(y):
    return -LOG_2 - 0.5 * np.log(y)


# --------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class Prior:
    """A univariate prior applied elementwise to a parameter block.

    ``family`` is one of ``normal``, ``cauchy``, ``half_normal``,
    ``half_cauchy``, ``lognormal`` or ``flat``.  The density is always
    stated for the constrained value; blocks sampled on the log scale add
    their Jacobian separately.
    """

    family: str
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in _PRIOR_FAMILIES:
            raise UnknownPriorFamily(f"unknown prior family {self.family!r}")
        if self.family != "flat" and not self.scale > 0:
            raise ValueError("prior scale must be positive")

    def __str__(self):
        if self.family == "flat":
            return "flat"
        return f"{self.family}({self.loc:g}, {self.scale:g})"


def _normal(x, m, s):
    z = (x - m) / s
    return -0.5 * LOG_2PI - math.log(s) - 0.5 * z * z, -z / s


def _cauchy(x, m, s):
    z = (x - m) / s
    return -math.log(math.pi * s) - np.log1p(z * z), -2.0 * z / (s * (1.0 + z * z))


def _half(fn):
    def wrapped(x, m, s):
        v, g = fn(x, m, s)
        return v + LOG_2, g
    return wrapped


def _lognormal(x, m, s):
    lx = np.log(x)
    z = (lx - m) / s
    return -0.5 * LOG_2PI - math.log(s) - 0.5 * z * z - lx, (-z / s - 1.0) / x


def _flat(x, m, s):
    return np.zeros_like(x), np.zeros_like(x)


_PRIOR_FAMILIES = {
    "normal": _normal,
    "cauchy": _cauchy,
    "half_normal": _half(_normal),
    "half_cauchy": _half(_cauchy),
    "lognormal": _lognormal,
    "flat": _flat,
}


def prior_logpdf_grad(value, prior):
    """Summed log-density of ``prior`` at ``value`` and its elementwise gradient."""
    try:
        fn = _PRIOR_FAMILIES[prior.family]
    except KeyError:
        raise UnknownPriorFamily(prior.family) from None
    x = np.asarray(value, dtype=float)
    v, g = fn(x, prior.loc, prior.scale)
    return float(np.sum(v)), np.asarray(g, dtype=float)


def prior_logpdf(value, prior):
    return prior_logpdf_grad(value, prior)[0]


def log_scale_prior(log_value, prior, jacobian=True):
    """Prior on a positive parameter evaluated at its logarithm.

    Returns ``(log density, d/d log_value)`` including the ``+log_value``
    change-of-variables term when ``jacobian`` is set.
    """
    x = np.asarray(log_value, dtype=float)
    theta = np.exp(x)
    v, g = prior_logpdf_grad(theta, prior)
    grad = g * theta
    if jacobian:
        v += float(np.sum(x))
        grad = grad + 1.0
    return v, grad


# --------------------------------------------------------------------------
# data and specification


@dataclass(frozen=True)
class Dataset:
    """Response, design matrix (intercept plus covariates) and coordinates."""

    y: np.ndarray
    X: np.ndarray
    coords: np.ndarray
    x_names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        coords = mesh_mod.as_points(self.coords)
        if not (len(y) == len(X) == len(coords)):
            raise SpecMismatch("y, X and coords must have the same number of rows")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise SpecMismatch("missing or non-finite values in data")
        names = tuple(self.x_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise SpecMismatch("x_names must match the design columns")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "x_names", names)

    @property
    def n(self):
        return len(self.y)

    @property
    def p(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class ModelSpec:
    name: str
    likelihood: str
    spatial_effect: str
    priors: dict
    transform_response: str = "identity"
    mesh_extension: float = 0.2
    n_knots: int = None
    knot_mode: str = "knots"
    rank: int = None
    penalty: bool = True
    coef_prior: bool = True
    fixed_lambda: float = None
    fixed_sigma: float = None
    knot_seed: int = 0
    parameterization: str = "centered"
    coord_scale: float = 1.0

    def __post_init__(self):
        if self.likelihood not in LIKELIHOODS:
            raise SpecMismatch(f"unknown likelihood {self.likelihood!r}")
        if self.spatial_effect not in SPATIAL_EFFECTS:
            raise SpecMismatch(f"unknown spatial effect {self.spatial_effect!r}")
        if self.transform_response not in ("identity", "sqrt"):
            raise SpecMismatch(f"unknown transform {self.transform_response!r}")
        if self.transform_response == "sqrt" and self.likelihood != "skew_normal":
            raise SpecMismatch("the sqrt transform is only used with the skew-normal likelihood")
        if not self.coord_scale > 0:
            raise SpecMismatch("coord_scale must be positive")
        if self.parameterization not in ("centered", "noncentered", "hierarchical"):
            raise SpecMismatch(f"unknown parameterization {self.parameterization!r}")
        if self.knot_mode not in ("knots", "data"):
            raise SpecMismatch(f"unknown knot mode {self.knot_mode!r}")
        for block in self.required_priors():
            if block not in self.priors:
                raise SpecMismatch(f"no prior given for {block!r}")

    def hyper_names(self):
        names = []
        if self.likelihood in ("gaussian", "skew_normal") and self.fixed_sigma is None:
            names.append("log_sigma")
        if self.likelihood == "gamma_mean_precision":
            names.append("log_phi")
        if self.likelihood == "skew_normal":
            names.append("omega")
        if self.spatial_effect == "spde_gmrf":
            names += ["log_tau", "log_kappa"]
        if self.spatial_effect == "tps_lowrank" and self.penalty and self.fixed_lambda is None:
            names.append("log_lambda")
        return names

    def required_priors(self):
        blocks = ["beta"] + [h.replace("log_", "") for h in self.hyper_names()]
        return blocks

    def with_options(self, **kwargs):
        return replace(self, **kwargs)

    def describe(self):
        out = {k: v for k, v in self.__dict__.items() if k != "priors"}
        out["priors"] = {k: (str(v) if isinstance(v, Prior) else [str(p) for p in v])
                         for k, v in self.priors.items()}
        return out


def _preset_priors(name):
    normal, hc, ln = Prior, Prior, Prior
    if name in ("mgrf", "mtps", "mtps_fixed_knots"):
        base = {"beta": normal("normal", 1.0, 2.0), "sigma": hc("half_cauchy", 0.0, 5.0)}
        if name == "mgrf":
            base.update(tau=ln("lognormal", 0.0, 0.5), kappa=ln("lognormal", 0.0, 0.5))
        else:
            base.update({"lambda": ln("lognormal", 0.0, 1.0)})
        return base
    base = {"beta": normal("normal", 0.0, 5.0)}
    if name in ("m1", "m3"):
        base["phi"] = hc("half_cauchy", 0.0, 5.0)
    else:
        base.update(sigma=hc("half_cauchy", 0.0, 2.0), omega=normal("normal", 0.0, 1.0))
    if name in ("m1", "m2"):
        base.update(tau=ln("lognormal", 0.0, 1.0), kappa=ln("lognormal", 0.0, 1.0))
    else:
        base.update({"lambda": ln("lognormal", 0.0, 1.0)})
    return base


# Distances are multiplied by this before meshing so that the unit-centred
# priors on tau and kappa describe fields whose range is a fraction of a
# unit-square domain; see ModelSpec.coord_scale.
GMRF_COORD_SCALE = 10.0

MODEL_NAMES = ("mgrf", "mtps", "mtps_fixed_knots", "m1", "m2", "m3", "m4", "gaussian")


def model_spec(name, **overrides):
    """Preset specification for a named model."""
    name = name.lower()
    table = {
        "mgrf": ("gaussian", "spde_gmrf", "identity"),
        "mtps": ("gaussian", "tps_lowrank", "identity"),
        "mtps_fixed_knots": ("gaussian", "tps_lowrank", "identity"),
        "m1": ("gamma_mean_precision", "spde_gmrf", "identity"),
        "m2": ("skew_normal", "spde_gmrf", "sqrt"),
        "m3": ("gamma_mean_precision", "tps_lowrank", "identity"),
        "m4": ("skew_normal", "tps_lowrank", "sqrt"),
        "gaussian": ("gaussian", "none", "identity"),
    }
    if name not in table:
        raise SpecMismatch(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    lik, spatial, transform = table[name]
    if name == "gaussian":
        priors = {"beta": Prior("normal", 0.0, 10.0), "sigma": Prior("half_cauchy", 0.0, 5.0)}
    else:
        priors = _preset_priors(name)
    kwargs = dict(name=name, likelihood=lik, spatial_effect=spatial, priors=priors,
                  transform_response=transform)
    if name == "mtps_fixed_knots":
        kwargs["n_knots"] = 30
    if spatial == "spde_gmrf":
        kwargs["coord_scale"] = GMRF_COORD_SCALE
        kwargs["parameterization"] = "hierarchical"
    kwargs.update(overrides)
    return ModelSpec(**kwargs)


def treatment_coding(values, name):
    """Indicator columns for every level but the first (sorted) one."""
    levels = sorted(set(values.tolist()), key=lambda v: (str(type(v)), v))
    cols = [(np.asarray(values) == lev).astype(float) for lev in levels[1:]]
    names = [f"{name}_{lev}" for lev in levels[1:]]
    return (np.column_stack(cols) if cols else np.empty((len(values), 0))), names


# --------------------------------------------------------------------------
# posterior


def _unique_rows(coords):
    """Order-preserving unique rows and the index mapping rows to them."""
    _, first, inverse = np.unique(coords, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return coords[np.sort(first)], rank[inverse.ravel()]


@dataclass
class Structures:
    mesh: object = None
    fem: object = None
    spectrum: object = None
    A: object = None
    basis: object = None
    row_index: np.ndarray = None
    locations: np.ndarray = None
    coord_scale: float = 1.0

    def field_projector(self, targets):
        """Projector from mesh vertices to arbitrary ``targets`` (data units)."""
        pts = mesh_mod.as_points(targets) * self.coord_scale
        return mesh_mod.projector(self.mesh, pts).tocsr()


def build_structures(spec, coords):
    locs, row_index = _unique_rows(coords)
    st = Structures(row_index=row_index, locations=locs, coord_scale=spec.coord_scale)
    if spec.spatial_effect == "spde_gmrf":
        # the mesh lives in scaled units, which fixes the meaning of kappa
        scaled = locs * spec.coord_scale
        st.mesh = mesh_mod.triangulate(scaled, extension=spec.mesh_extension)
        st.fem = mesh_mod.assemble_fem(st.mesh)
        st.spectrum = SpdeSpectrum(st.fem)
        st.A = mesh_mod.projector(st.mesh, coords * spec.coord_scale).tocsr()
    elif spec.spatial_effect == "tps_lowrank":
        if spec.knot_mode == "data":
            k = spec.rank or tps.default_knot_count(len(locs))
            st.basis = tps.data_basis(locs, min(k, len(locs)))
        else:
            nk = min(spec.n_knots or tps.default_knot_count(len(locs)), len(locs))
            idx = tps.select_knots(locs, nk, seed=spec.knot_seed)
            rank = None if spec.rank is None else min(spec.rank, nk)
            st.basis = tps.knot_basis(locs, locs[idx], rank)
    return st


class Posterior:
    """Unconstrained log-posterior of a :class:`ModelSpec` bound to a :class:`Dataset`."""

    def __init__(self, spec, data, structures=None, jacobian=True):
        self.spec = spec
        self.data = data
        self.jacobian = jacobian
        if spec.likelihood == "gamma_mean_precision" and np.any(data.y <= 0):
            raise SpecMismatch("gamma likelihood needs a strictly positive response")
        if spec.transform_response == "sqrt":
            if np.any(data.y <= 0):
                raise SpecMismatch("sqrt transform needs a strictly positive response")
            self.y = np.sqrt(data.y)
            self._pointwise_jac = _sqrt_jacobian_pointwise(data.y)
        else:
            self.y = data.y
            self._pointwise_jac = None
        if spec.likelihood == "gamma_mean_precision":
            self._log_y = np.log(self.y)

        self.structures = structures or build_structures(spec, data.coords)
        st = self.structures
        self.X = data.X
        p = data.p
        self._noncentered = (spec.spatial_effect == "spde_gmrf"
                             and spec.parameterization == "noncentered")
        # hierarchical centring stores v = u + beta0 in place of u
        self._intercept = None
        if spec.spatial_effect == "spde_gmrf" and spec.parameterization == "hierarchical":
            if "intercept" not in data.x_names:
                raise SpecMismatch("hierarchical centring needs an intercept column")
            self._intercept = data.x_names.index("intercept")
        if spec.spatial_effect == "spde_gmrf":
            self.B = st.A
            n_spatial = st.fem.n
            label = {"noncentered": "w", "hierarchical": "v"}.get(spec.parameterization, "u")
            spatial_names = [f"{label}[{i}]" for i in range(n_spatial)]
        elif spec.spatial_effect == "tps_lowrank":
            self.B = np.ascontiguousarray(st.basis.centered_design[st.row_index])
            n_spatial = st.basis.k
            spatial_names = [f"c[{j}]" for j in range(n_spatial)]
            self._S = tps.penalty_matrix(st.basis)
        else:
            self.B = None
            n_spatial = 0
            spatial_names = []
        self.BT = None if self.B is None else (self.B.T.tocsr() if sp.issparse(self.B) else
                                               np.ascontiguousarray(self.B.T))

        hyper = spec.hyper_names()
        self.names = [f"beta[{nm}]" for nm in data.x_names] + spatial_names + hyper
        self.dim = len(self.names)
        self.beta_slice = slice(0, p)
        self.spatial_slice = slice(p, p + n_spatial)
        self.hyper_index = {h: p + n_spatial + i for i, h in enumerate(hyper)}

        beta_prior = spec.priors["beta"]
        if isinstance(beta_prior, Prior):
            self._beta_priors = [beta_prior] * p
        else:
            if len(beta_prior) != p:
                raise SpecMismatch("per-coefficient beta priors must match the design")
            self._beta_priors = list(beta_prior)

    # -- helpers ------------------------------------------------------------

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = {"beta": theta[..., self.beta_slice], "spatial": theta[..., self.spatial_slice]}
        for h, i in self.hyper_index.items():
            out[h] = theta[..., i]
        return out

    def _sigma(self, theta):
        if "log_sigma" in self.hyper_index:
            return np.exp(theta[..., self.hyper_index["log_sigma"]])
        return self.spec.fixed_sigma

    def _lambda(self, theta):
        if "log_lambda" in self.hyper_index:
            return math.exp(theta[self.hyper_index["log_lambda"]])
        return self.spec.fixed_lambda

    def _centred(self, theta):
        """Undo hierarchical centring so the spatial block holds ``u``."""
        theta = np.asarray(theta, dtype=float)
        if self._intercept is None:
            return theta
        out = theta.copy()
        out[..., self.spatial_slice] -= theta[..., self._intercept, None]
        return out

    def _field_scale(self, theta):
        """Multiplier turning the stored spatial block into vertex weights."""
        if not self._noncentered:
            return 1.0
        hi = self.hyper_index
        return np.exp(-theta[..., hi["log_tau"]] - theta[..., hi["log_kappa"]])

    def vertex_weights(self, theta):
        """SPDE weights ``u`` on the mesh for one draw or a stack of draws."""
        theta = self._centred(theta)
        scale = np.asarray(self._field_scale(theta))
        return theta[..., self.spatial_slice] * scale[..., None]

    def linear_predictor(self, theta):
        """``eta = X beta + B s`` for one draw ``(d,)`` or a stack ``(S, d)``."""
        theta = np.asarray(theta, dtype=float)
        beta = theta[..., self.beta_slice]
        return beta @ self.X.T + self.spatial_effect(theta)

    def spatial_effect(self, theta):
        theta = self._centred(theta)
        if self.B is None:
            return np.zeros(theta.shape[:-1] + (self.data.n,))
        s = theta[..., self.spatial_slice]
        scale = np.asarray(self._field_scale(theta))
        return (self.B @ s.T).T * scale[..., None]

    def spatial_effect_at(self, theta, targets):
        """Spatial effect at new ``targets`` for a ``(S, d)`` stack; returns ``(S, m)``."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        st = self.structures
        if self.spec.spatial_effect == "spde_gmrf":
            A = st.field_projector(targets)
            return (A @ self.vertex_weights(theta).T).T
        if self.spec.spatial_effect == "tps_lowrank":
            c = theta[:, self.spatial_slice]
            return tps.predict_at(st.basis, c.T, targets).T
        return np.zeros((len(theta), len(mesh_mod.as_points(targets))))

    # -- likelihood ---------------------------------------------------------

    def _loglik_terms(self, theta, eta):
        """Pointwise log-likelihood on the modelled scale plus derivatives."""
        lik = self.spec.likelihood
        y = self.y
        hi = self.hyper_index
        if lik == "gaussian":
            sigma = self._sigma(theta)
            r = (y - eta) / sigma
            ll = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * r * r
            d_eta = r / sigma
            d_hyper = {"log_sigma": float(np.sum(r * r - 1.0))} if "log_sigma" in hi else {}
            return ll, d_eta, d_hyper
        if lik == "gamma_mean_precision":
            phi = math.exp(theta[hi["log_phi"]])
            ye = y * np.exp(-eta)
            ll = phi * (math.log(phi) - eta) - gammaln(phi) + (phi - 1.0) * self._log_y - phi * ye
            d_eta = phi * (ye - 1.0)
            d_phi = phi * float(np.sum(math.log(phi) + 1.0 - digamma(phi) + self._log_y - eta - ye))
            return ll, d_eta, {"log_phi": d_phi}
        sigma = self._sigma(theta)
        omega = theta[hi["omega"]]
        z = (y - eta) / sigma
        wz = omega * z
        ll = LOG_2 - np.log(sigma) - 0.5 * LOG_2PI - 0.5 * z * z + log_ndtr(wz)
        mills = _mills(wz)
        d_z = -z + omega * mills
        d_eta = -d_z / sigma
        d_hyper = {"omega": float(np.sum(z * mills))}
        if "log_sigma" in hi:
            d_hyper["log_sigma"] = float(np.sum(-1.0 - d_z * z))
        return ll, d_eta, d_hyper

    def pointwise_loglik(self, theta, sqrt_jacobian=True):
        """Per-observation log-likelihood on the original response scale.

        Accepts one draw or a ``(S, d)`` stack; the square-root Jacobian is
        included for transformed-response models unless ``sqrt_jacobian`` is
        false, which leaves the density on the transformed scale.
        """
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 2:
            return np.vstack([self.pointwise_loglik(t, sqrt_jacobian) for t in theta])
        eta = self.linear_predictor(theta)
        ll = self._loglik_terms(theta, eta)[0]
        if sqrt_jacobian and self._pointwise_jac is not None:
            ll = ll + self._pointwise_jac
        return ll

    # -- full posterior -----------------------------------------------------

    def terms(self, theta):
        """Decomposed log-posterior: likelihood, spatial, prior and Jacobian."""
        return self._evaluate(theta, want_grad=False)[2]

    def logp(self, theta):
        return self._evaluate(theta, want_grad=False)[0]

    def logp_grad(self, theta):
        lp, grad, _ = self._evaluate(theta, want_grad=True)
        return lp, grad

    def _evaluate(self, theta, want_grad=True):
        theta = self._centred(theta)
        spec = self.spec
        hi = self.hyper_index
        grad = np.zeros(self.dim)
        beta = theta[self.beta_slice]
        s = theta[self.spatial_slice]
        eta = self.X @ beta
        scale = self._field_scale(theta)
        if self.B is not None:
            field_eta = scale * (self.B @ s)
            eta = eta + field_eta

        ll, d_eta, d_hyper = self._loglik_terms(theta, eta)
        lik_total = float(np.sum(ll))
        if self._pointwise_jac is not None:
            lik_total += float(np.sum(self._pointwise_jac))
        grad[self.beta_slice] = self.X.T @ d_eta
        if self.BT is not None:
            grad[self.spatial_slice] = scale * (self.BT @ d_eta)
        if self._noncentered:
            d_scale = -float(field_eta @ d_eta)
            grad[hi["log_tau"]] += d_scale
            grad[hi["log_kappa"]] += d_scale
        for h, g in d_hyper.items():
            grad[hi[h]] += g

        spatial_total = 0.0
        if spec.spatial_effect == "spde_gmrf":
            spatial_total = self._gmrf_term(theta, s, grad)
        elif spec.spatial_effect == "tps_lowrank":
            spatial_total = self._tps_term(theta, s, grad)

        prior_total = 0.0
        jac_total = 0.0
        for j, pr in enumerate(self._beta_priors):
            v, g = prior_logpdf_grad(beta[j], pr)
            prior_total += v
            grad[j] += float(g)
        for h, i in hi.items():
            block = h.replace("log_", "")
            pr = spec.priors[block]
            if h.startswith("log_"):
                v, g = log_scale_prior(theta[i], pr, jacobian=False)
                prior_total += v
                grad[i] += float(g)
                if self.jacobian:
                    jac_total += float(theta[i])
                    grad[i] += 1.0
            else:
                v, g = prior_logpdf_grad(theta[i], pr)
                prior_total += v
                grad[i] += float(g)

        if self._intercept is not None:
            # u = v - beta0 1 has unit Jacobian
            grad[self._intercept] -= float(np.sum(grad[self.spatial_slice]))
        lp = lik_total + spatial_total + prior_total + jac_total
        parts = {"likelihood": lik_total, "spatial": spatial_total,
                 "prior": prior_total, "jacobian": jac_total}
        return lp, grad, parts

    def _gmrf_term(self, theta, u, grad):
        if self._noncentered:
            return self._gmrf_term_noncentered(theta, u, grad)
        st = self.structures
        fem = st.fem
        hi = self.hyper_index
        log_tau = theta[hi["log_tau"]]
        log_kappa = theta[hi["log_kappa"]]
        tau2 = math.exp(2.0 * log_tau)
        k2 = math.exp(2.0 * log_kappa)
        Cu = fem.c_diag * u
        G1u = fem.G1 @ u
        G2u = fem.G1 @ (G1u / fem.c_diag)
        Ku = k2 * k2 * Cu + 2.0 * k2 * G1u + G2u
        uCu = float(u @ Cu)
        uG1u = float(u @ G1u)
        uKu = float(u @ Ku)
        logdet, d_ltau, d_lkappa = st.spectrum.logdet(log_tau, log_kappa)
        n = fem.n
        value = -0.5 * n * LOG_2PI + 0.5 * logdet - 0.5 * tau2 * uKu
        grad[self.spatial_slice] += -tau2 * Ku
        grad[hi["log_tau"]] += 0.5 * d_ltau - tau2 * uKu
        grad[hi["log_kappa"]] += 0.5 * d_lkappa - 0.5 * tau2 * (4.0 * k2 * k2 * uCu + 4.0 * k2 * uG1u)
        return value

    def _gmrf_term_noncentered(self, theta, w, grad):
        # w ~ N(0, K~^-1) with K~ = kappa^2 C + 2 G1 + G2 / kappa^2, so that
        # u = w / (kappa tau) has precision tau^2 K(kappa).
        st = self.structures
        fem = st.fem
        hi = self.hyper_index
        log_kappa = theta[hi["log_kappa"]]
        k2 = math.exp(2.0 * log_kappa)
        Cw = fem.c_diag * w
        G1w = fem.G1 @ w
        G2w = fem.G1 @ (G1w / fem.c_diag)
        Kw = k2 * Cw + 2.0 * G1w + G2w / k2
        wCw = float(w @ Cw)
        wG2w = float(w @ G2w)
        n = fem.n
        logdet_k, _, d_lkappa = st.spectrum.logdet(0.0, log_kappa)
        logdet = logdet_k - 2.0 * n * log_kappa
        value = -0.5 * n * LOG_2PI + 0.5 * logdet - 0.5 * float(w @ Kw)
        grad[self.spatial_slice] += -Kw
        grad[hi["log_kappa"]] += 0.5 * (d_lkappa - 2.0 * n) - (k2 * wCw - wG2w / k2)
        return value

    def _tps_term(self, theta, c, grad):
        spec = self.spec
        value = 0.0
        if spec.coef_prior:
            value += -0.5 * len(c) * LOG_2PI - 0.5 * float(c @ c)
            grad[self.spatial_slice] -= c
        if spec.penalty:
            lam = self._lambda(theta)
            Sc = self._S * c
            quad = float(c @ Sc)
            value -= 0.5 * lam * quad
            grad[self.spatial_slice] -= lam * Sc
            if "log_lambda" in self.hyper_index:
                grad[self.hyper_index["log_lambda"]] -= 0.5 * lam * quad
        return value

    # -- simulation ---------------------------------------------------------

    def simulate_response(self, theta, rng):
        """Draw a replicate response on the modelled scale."""
        eta = self.linear_predictor(theta)
        lik = self.spec.likelihood
        if lik == "gaussian":
            return eta + self._sigma(theta) * rng.standard_normal(eta.shape)
        if lik == "gamma_mean_precision":
            phi = math.exp(theta[self.hyper_index["log_phi"]])
            return rng.gamma(phi, np.exp(eta) / phi)
        sigma = self._sigma(theta)
        omega = theta[self.hyper_index["omega"]]
        delta = omega / math.sqrt(1.0 + omega * omega)
        z0 = np.abs(rng.standard_normal(eta.shape))
        z1 = rng.standard_normal(eta.shape)
        return eta + sigma * (delta * z0 + math.sqrt(1.0 - delta * delta) * z1)

    @property
    def response(self):
        """The response on the modelled scale."""
        return self.y

    def constrained(self, draws):
        """Natural-scale summaries of the hyperparameters for a ``(..., d)`` array."""
        draws = np.asarray(draws, dtype=float)
        out = {}
        for h, i in self.hyper_index.items():
            if h.startswith("log_"):
                out[h[4:]] = np.exp(draws[..., i])
            else:
                out[h] = draws[..., i]
        return out


def assemble_posterior(spec, data, structures=None, jacobian=True):
    return Posterior(spec, data, structures=structures, jacobian=jacobian)


def pointwise_loglik(posterior, draw):
    return posterior.pointwise_loglik(draw)
