"""Synthetic data: the linear-plus-spatial simulation and a CPUE-like generator."""

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError
from .models import Dataset, treatment_coding
from .spde import MaternParams, kappa_for_range, matern_matrix
from .tps import kernel_matrix, polynomial_matrix

FIELD_KINDS = ("matern_grf", "tps_surface")


@dataclass(frozen=True)
class SimulationConfig:
    """Settings for ``y = b0 + b1 x1 + f(s) + eps`` on the unit square.

    ``field_sigma`` is the marginal (Matérn) or empirical (surface) standard
    deviation of ``f``; ``field_range`` is the Matérn practical range and
    ``n_control`` the number of random control values of a spline surface.
    ``n_holdout`` extra locations are simulated and kept out of the data so
    predictions can be scored against the noiseless truth.
    """

    n_locations: int = 100
    true_beta0: float = 1.0
    true_beta1: float = 2.0
    true_sigma: float = 0.1
    field_kind: str = "matern_grf"
    field_sigma: float = 1.0
    field_range: float = 0.3
    n_control: int = 6
    n_holdout: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_locations < 10:
            raise ConfigError("need at least 10 locations")
        if self.true_sigma < 0 or self.field_sigma < 0:
            raise ConfigError("standard deviations must be non-negative")
        if self.field_kind not in FIELD_KINDS:
            raise ConfigError(f"unknown field kind {self.field_kind!r}")
        if self.field_range <= 0:
            raise ConfigError("field range must be positive")
        if self.n_control < 4:
            raise ConfigError("a spline surface needs at least 4 control points")
        if self.n_holdout < 0:
            raise ConfigError("n_holdout must be non-negative")


@dataclass
class Truth:
    config: dict
    f: np.ndarray
    holdout_coords: np.ndarray
    holdout_x1: np.ndarray
    holdout_f: np.ndarray
    surface: dict = field(default_factory=dict)

    def holdout_mean(self):
        c = self.config
        return c["true_beta0"] + c["true_beta1"] * self.holdout_x1 + self.holdout_f

    def to_json(self):
        out = {"config": self.config, "f": self.f.tolist(),
               "holdout_coords": self.holdout_coords.tolist(),
               "holdout_x1": self.holdout_x1.tolist(),
               "holdout_f": self.holdout_f.tolist()}
        if self.config["field_kind"] == "matern_grf":
            kappa = kappa_for_range(self.config["field_range"])
            out["field_params"] = {"nu": 1.0, "kappa": kappa,
                                   "sigma2": self.config["field_sigma"] ** 2,
                                   "practical_range": self.config["field_range"]}
        if self.surface:
            out["surface"] = {k: np.asarray(v).tolist() if not np.isscalar(v) else v
                              for k, v in self.surface.items()}
        return out

    @classmethod
    def from_json(cls, obj):
        return cls(config=obj["config"], f=np.asarray(obj["f"]),
                   holdout_coords=np.asarray(obj["holdout_coords"]).reshape(-1, 2),
                   holdout_x1=np.asarray(obj["holdout_x1"]),
                   holdout_f=np.asarray(obj["holdout_f"]),
                   surface=obj.get("surface", {}))


class SplineSurface:
    """Radial part of the thin plate interpolant through random control values.

    Centred and scaled on a reference grid so the surface has mean zero and
    standard deviation ``sd`` over the unit square.
    """

    def __init__(self, knots, weights, shift=0.0, scale=1.0):
        self.knots = np.asarray(knots, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.shift = float(shift)
        self.scale = float(scale)

    @classmethod
    def random(cls, n_control, sd, rng, grid=101):
        knots = rng.uniform(0.0, 1.0, size=(n_control, 2))
        values = rng.standard_normal(n_control)
        K = kernel_matrix(knots, knots)
        P = polynomial_matrix(knots)
        lhs = np.block([[K, P], [P.T, np.zeros((3, 3))]])
        sol = sla.solve(lhs, np.concatenate([values, np.zeros(3)]))
        surf = cls(knots, sol[:n_control])
        g = np.linspace(0.0, 1.0, grid)
        gx, gy = np.meshgrid(g, g)
        ref = surf(np.column_stack([gx.ravel(), gy.ravel()]))
        spread = ref.std()
        surf.shift = -ref.mean()
        surf.scale = sd / spread if spread > 0 else 0.0
        return surf

    def __call__(self, points):
        raw = kernel_matrix(np.asarray(points, dtype=float), self.knots) @ self.weights
        return (raw + self.shift) * self.scale

    def as_dict(self):
        return {"knots": self.knots, "weights": self.weights,
                "shift": self.shift, "scale": self.scale}


def matern_field(coords, sigma, practical_range, rng):
    """Exact Matérn (nu = 1) draw at ``coords`` via a dense Cholesky factor."""
    n = len(coords)
    if sigma == 0:
        return np.zeros(n)
    p = MaternParams(sigma2=sigma**2, kappa=kappa_for_range(practical_range))
    cov = matern_matrix(coords, coords, p)
    L = np.linalg.cholesky(cov + 1e-10 * sigma**2 * np.eye(n))
    return L @ rng.standard_normal(n)


def simulate(config):
    """Return ``(Dataset, Truth)`` for ``config``; deterministic given the seed."""
    rng = np.random.default_rng(config.seed)
    n, h = config.n_locations, config.n_holdout
    coords = rng.uniform(0.0, 1.0, size=(n + h, 2))
    x1 = rng.uniform(0.0, 1.0, size=n + h)
    surface = {}
    if config.field_kind == "matern_grf":
        f = matern_field(coords, config.field_sigma, config.field_range, rng)
    else:
        surf = SplineSurface.random(config.n_control, config.field_sigma, rng)
        f = surf(coords)
        surface = surf.as_dict()
    eps = config.true_sigma * rng.standard_normal(n)
    y = config.true_beta0 + config.true_beta1 * x1[:n] + f[:n] + eps
    X = np.column_stack([np.ones(n), x1[:n]])
    data = Dataset(y=y, X=X, coords=coords[:n], x_names=("intercept", "x1"))
    truth = Truth(config=asdict(config), f=f[:n], holdout_coords=coords[n:],
                  holdout_x1=x1[n:], holdout_f=f[n:], surface=surface)
    return data, truth


# --------------------------------------------------------------------------
# CPUE-like data


@dataclass(frozen=True)
class CpueConfig:
    """Shape of the synthetic catch-per-unit-effort data set.

    The response is Gamma with log mean ``intercept + year + season +
    destine + depth_effect * depth + f(site)`` and precision ``phi``.
    """

    n_sites: int = 13
    first_year: int = 1996
    last_year: int = 2016
    obs_per_site_year: int = 2
    intercept: float = 1.0
    year_sd: float = 0.4
    season_effects: tuple = (0.0, 0.2, -0.15)
    destine_effects: tuple = (0.0, 0.3)
    depth_effect: float = -0.02
    field_sigma: float = 0.4
    field_range: float = 0.5
    phi: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.n_sites < 1:
            raise ConfigError("at least one site is required")
        if self.last_year < self.first_year:
            raise ConfigError("last_year precedes first_year")
        if self.obs_per_site_year < 1:
            raise ConfigError("obs_per_site_year must be positive")
        if self.phi <= 0:
            raise ConfigError("phi must be positive")


@dataclass
class CpueData:
    dataset: Dataset
    frame: dict
    year_effects: np.ndarray
    site_coords: np.ndarray
    site_field: np.ndarray


def cpue_design(frame):
    """Design matrix with treatment-coded factors and a centred depth term."""
    n = len(frame["y"])
    cols = [np.ones((n, 1))]
    names = ["intercept"]
    for fac in ("year", "season", "destine"):
        block, nm = treatment_coding(np.asarray(frame[fac]), fac)
        cols.append(block)
        names += nm
    depth = np.asarray(frame["depth"], dtype=float)
    cols.append((depth - depth.mean())[:, None] / max(depth.std(), 1e-12))
    names.append("depth")
    return np.hstack(cols), tuple(names)


def synth_cpue(config=CpueConfig()):
    """Strictly positive CPUE with year effects and a site-level spatial field."""
    rng = np.random.default_rng(config.seed)
    sites = rng.uniform(0.0, 1.0, size=(config.n_sites, 2))
    site_f = matern_field(sites, config.field_sigma, config.field_range, rng)
    years = np.arange(config.first_year, config.last_year + 1)
    year_fx = np.concatenate([[0.0], config.year_sd * rng.standard_normal(len(years) - 1)])
    site_depth = rng.uniform(5.0, 25.0, size=config.n_sites)

    rows = []
    for s in range(config.n_sites):
        for iy in range(len(years)):
            for _ in range(config.obs_per_site_year):
                rows.append((s, iy))
    site_idx = np.array([r[0] for r in rows])
    year_idx = np.array([r[1] for r in rows])
    n = len(rows)
    season = rng.integers(1, len(config.season_effects) + 1, size=n)
    destine = rng.integers(1, len(config.destine_effects) + 1, size=n)
    depth = site_depth[site_idx] + rng.normal(0.0, 1.0, size=n)

    eta = (config.intercept + year_fx[year_idx]
           + np.asarray(config.season_effects)[season - 1]
           + np.asarray(config.destine_effects)[destine - 1]
           + config.depth_effect * (depth - depth.mean())
           + site_f[site_idx])
    mu = np.exp(eta)
    y = rng.gamma(config.phi, mu / config.phi)
    y = np.maximum(y, np.finfo(float).tiny)

    coords = sites[site_idx]
    frame = {"y": y, "s1": coords[:, 0], "s2": coords[:, 1], "year": years[year_idx],
             "season": season, "destine": destine, "depth": depth}
    X, names = cpue_design(frame)
    data = Dataset(y=y, X=X, coords=coords, x_names=names)
    return CpueData(dataset=data, frame=frame, year_effects=year_fx,
                    site_coords=sites, site_field=site_f)


def depth_scale_effect(config, frame):
    """Truth for the standardised depth coefficient of :func:`cpue_design`."""
    return config.depth_effect * float(np.std(frame["depth"]))


def sl_size(tag):
    """Number of locations for an ``SL1`` … ``SL10`` tag."""
    tag = str(tag).upper()
    if not tag.startswith("SL") or not tag[2:].isdigit():
        raise ConfigError(f"unknown SL tag {tag!r}")
    k = int(tag[2:])
    if not 1 <= k <= 10:
        raise ConfigError(f"unknown SL tag {tag!r}; choose SL1 to SL10")
    return 100 * k

