"""No-U-turn Hamiltonian Monte Carlo with windowed warmup adaptation.

The transition uses multinomial sampling over a doubling trajectory with
the generalised no-U-turn criterion (including the checks across merged
subtrees), a diagonal Euclidean metric and dual-averaging step size
adaptation.  A transition whose energy error exceeds ``MAX_DELTA_H`` is
flagged divergent and terminates the trajectory.

Tree depth convention: the ``j``-th doubling adds a subtree of ``2**j``
leapfrog steps, ``j = 0, 1, ...``; ``max_treedepth`` bounds ``j``, so
``max_treedepth = 0`` takes exactly one leapfrog step.  The reported
``treedepth`` is the last ``j`` reached.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AdaptationFailed, ConfigError, NonFiniteInit
from .io import atomic_write_text

MAX_DELTA_H = 1000.0
MIN_WARMUP = 20
TELEMETRY = ("lp__", "divergent__", "treedepth__", "energy__", "accept_stat__")


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 700
    total_iter: int = 1500
    adapt_delta: float = 0.95
    max_treedepth: int = 13
    seed: int = 1
    init_radius: float = 2.0
    n_jobs: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ConfigError("chains must be positive")
        if not 0 < self.warmup < self.total_iter:
            raise ConfigError("need 0 < warmup < total_iter")
        if not 0.0 < self.adapt_delta < 1.0:
            raise ConfigError("adapt_delta must lie in (0, 1)")
        if self.max_treedepth < 0:
            raise ConfigError("max_treedepth must be non-negative")
        if self.init_radius <= 0:
            raise ConfigError("init_radius must be positive")

    @property
    def kept(self):
        return self.total_iter - self.warmup


@dataclass
class ChainState:
    position: np.ndarray
    step_size: float
    inv_mass: np.ndarray
    rng: np.random.Generator
    lp: float = None
    grad: np.ndarray = None


@dataclass
class DrawMatrix:
    """Post-warmup draws, ``(chains, iterations, dim)``, with per-draw telemetry."""

    draws: np.ndarray
    names: list
    lp: np.ndarray
    divergent: np.ndarray
    treedepth: np.ndarray
    energy: np.ndarray
    accept_stat: np.ndarray
    n_leapfrog: np.ndarray = None
    step_size: np.ndarray = None
    inv_mass: np.ndarray = None
    wall_time: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c, n, d = self.draws.shape
        if len(self.names) != d:
            raise ValueError("names must match the draw dimension")
        for name in ("lp", "divergent", "treedepth", "energy", "accept_stat"):
            if getattr(self, name).shape != (c, n):
                raise ValueError(f"telemetry {name} has the wrong shape")

    @property
    def chains(self):
        return self.draws.shape[0]

    @property
    def iterations(self):
        return self.draws.shape[1]

    @property
    def dim(self):
        return self.draws.shape[2]

    @property
    def total_wall_time(self):
        return float(np.sum(self.wall_time)) if self.wall_time is not None else float("nan")

    def flat(self):
        """Draws pooled across chains, shape ``(chains * iterations, dim)``."""
        return self.draws.reshape(-1, self.dim)

    def column(self, name):
        return self.draws[:, :, self.names.index(name)]

    def to_csv(self, path):
        header = ["chain", "iter"] + list(self.names) + list(TELEMETRY)
        c, n, _ = self.draws.shape
        rows = []
        for ci in range(c):
            for it in range(n):
                vals = [str(ci), str(it)]
                vals += [repr(float(v)) for v in self.draws[ci, it]]
                vals += [repr(float(self.lp[ci, it])), str(int(self.divergent[ci, it])),
                         str(int(self.treedepth[ci, it])), repr(float(self.energy[ci, it])),
                         repr(float(self.accept_stat[ci, it]))]
                rows.append(",".join(vals))
        atomic_write_text(path, ",".join(header) + "\n" + "\n".join(rows) + "\n")

    @classmethod
    def from_csv(cls, path, wall_time=None):
        lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
        header = lines[0].split(",")
        body = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
        names = header[2:-len(TELEMETRY)]
        chain = body[:, 0].astype(int)
        c = chain.max() + 1
        n = len(body) // c
        d = len(names)

        def grab(col):
            return body[:, col].reshape(c, n)

        return cls(
            draws=body[:, 2:2 + d].reshape(c, n, d),
            names=names,
            lp=grab(2 + d),
            divergent=grab(3 + d).astype(bool),
            treedepth=grab(4 + d).astype(int),
            energy=grab(5 + d),
            accept_stat=grab(6 + d),
            wall_time=None if wall_time is None else np.asarray(wall_time, dtype=float),
        )


# --------------------------------------------------------------------------
# integrator


def leapfrog(q, p, grad, step, inv_mass, target):
    """One velocity-Verlet step; returns ``(q, p, lp, grad)``.

    Non-finite densities or gradients (including exceptions raised by the
    target) come back as ``lp = -inf`` so the caller records a divergence.
    """
    p_half = p + 0.5 * step * grad
    q_new = q + step * inv_mass * p_half
    try:
        lp, g = target.logp_grad(q_new)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError):
        return q_new, p_half, -math.inf, np.zeros_like(q)
    if not (math.isfinite(lp) and np.all(np.isfinite(g))):
        return q_new, p_half, -math.inf, np.zeros_like(q)
    return q_new, p_half + 0.5 * step * g, lp, g


def _kinetic(p, inv_mass):
    return 0.5 * float(np.dot(p * inv_mass, p))


@dataclass
class _Tree:
    q: np.ndarray  # outermost state, continued from on the next doubling
    p: np.ndarray
    lp: float
    grad: np.ndarray
    p_beg: np.ndarray
    p_end: np.ndarray
    ps_beg: np.ndarray  # inverse-mass-scaled momenta at both ends
    ps_end: np.ndarray
    rho: np.ndarray
    log_w: float
    q_prop: np.ndarray
    lp_prop: float
    grad_prop: np.ndarray
    p_prop: np.ndarray
    valid: bool
    divergent: bool
    n_leapfrog: int
    sum_accept: float


def _no_u_turn(ps_minus, ps_plus, rho):
    return float(np.dot(ps_plus, rho)) > 0.0 and float(np.dot(ps_minus, rho)) > 0.0


def _build(q, p, lp, grad, depth, step, inv_mass, h0, target, rng):
    if depth == 0:
        q1, p1, lp1, g1 = leapfrog(q, p, grad, step, inv_mass, target)
        h = -lp1 + _kinetic(p1, inv_mass) if math.isfinite(lp1) else math.inf
        if not math.isfinite(h):
            h = math.inf
        divergent = (h - h0) > MAX_DELTA_H
        log_w = h0 - h
        accept = 1.0 if log_w > 0 else math.exp(log_w)
        ps = inv_mass * p1
        return _Tree(q1, p1, lp1, g1, p1, p1, ps, ps, p1.copy(), log_w, q1, lp1, g1, p1,
                     not divergent, divergent, 1, accept)

    left = _build(q, p, lp, grad, depth - 1, step, inv_mass, h0, target, rng)
    if not left.valid:
        return left
    right = _build(left.q, left.p, left.lp, left.grad, depth - 1, step, inv_mass, h0, target, rng)
    n_leap = left.n_leapfrog + right.n_leapfrog
    sum_acc = left.sum_accept + right.sum_accept
    if not right.valid:
        right.n_leapfrog = n_leap
        right.sum_accept = sum_acc
        return right

    log_w = np.logaddexp(left.log_w, right.log_w)
    if right.log_w > log_w or rng.uniform() < math.exp(right.log_w - log_w):
        prop = right
    else:
        prop = left
    rho = left.rho + right.rho
    valid = _no_u_turn(left.ps_beg, right.ps_end, rho)
    valid = valid and _no_u_turn(left.ps_beg, right.ps_beg, left.rho + right.p_beg)
    valid = valid and _no_u_turn(left.ps_end, right.ps_end, right.rho + left.p_end)
    return _Tree(right.q, right.p, right.lp, right.grad, left.p_beg, right.p_end,
                 left.ps_beg, right.ps_end, rho, float(log_w), prop.q_prop, prop.lp_prop,
                 prop.grad_prop, prop.p_prop, valid, False, n_leap, sum_acc)


def nuts_transition(q0, lp0, grad0, step, inv_mass, target, rng, max_treedepth):
    """One NUTS transition; returns the new state and its telemetry."""
    d = len(q0)
    p0 = rng.standard_normal(d) / np.sqrt(inv_mass)
    h0 = -lp0 + _kinetic(p0, inv_mass)

    ps0 = inv_mass * p0
    # Trajectory in time order: backward end "bck", forward end "fwd".
    bck = dict(q=q0, p=p0, lp=lp0, grad=grad0, ps=ps0)
    fwd = dict(q=q0, p=p0, lp=lp0, grad=grad0, ps=ps0)
    rho = p0.copy()
    log_w = 0.0
    sample = (q0, lp0, grad0, p0)
    n_leap = 0
    sum_accept = 0.0
    divergent = False
    depth = 0
    while True:
        forward = rng.uniform() > 0.5
        edge = fwd if forward else bck
        sub = _build(edge["q"], edge["p"], edge["lp"], edge["grad"], depth,
                     step if forward else -step, inv_mass, h0, target, rng)
        n_leap += sub.n_leapfrog
        sum_accept += sub.sum_accept
        if sub.divergent:
            divergent = True
        if not sub.valid:
            break

        if sub.log_w > log_w or rng.uniform() < math.exp(sub.log_w - log_w):
            sample = (sub.q_prop, sub.lp_prop, sub.grad_prop, sub.p_prop)
        log_w = float(np.logaddexp(log_w, sub.log_w))

        # Old trajectory's inner end adjacent to the new subtree.
        if forward:
            inner_old_p, inner_old_ps = fwd["p"], fwd["ps"]
            rho_old = rho
            fwd = dict(q=sub.q, p=sub.p, lp=sub.lp, grad=sub.grad, ps=sub.ps_end)
            rho = rho_old + sub.rho
            ok = _no_u_turn(bck["ps"], fwd["ps"], rho)
            ok = ok and _no_u_turn(bck["ps"], sub.ps_beg, rho_old + sub.p_beg)
            ok = ok and _no_u_turn(inner_old_ps, fwd["ps"], sub.rho + inner_old_p)
        else:
            inner_old_p, inner_old_ps = bck["p"], bck["ps"]
            rho_old = rho
            bck = dict(q=sub.q, p=sub.p, lp=sub.lp, grad=sub.grad, ps=sub.ps_end)
            rho = rho_old + sub.rho
            ok = _no_u_turn(bck["ps"], fwd["ps"], rho)
            ok = ok and _no_u_turn(sub.ps_beg, fwd["ps"], rho_old + sub.p_beg)
            ok = ok and _no_u_turn(bck["ps"], inner_old_ps, sub.rho + inner_old_p)
        if not ok:
            break
        if depth >= max_treedepth:
            break
        depth += 1

    q, lp, grad, p = sample
    telemetry = {
        "lp": lp,
        "divergent": divergent,
        "treedepth": depth,
        "energy": -lp + _kinetic(p, inv_mass),
        "accept_stat": sum_accept / max(n_leap, 1),
        "n_leapfrog": n_leap,
    }
    return q, lp, grad, telemetry


# --------------------------------------------------------------------------
# adaptation


class DualAveraging:
    """Step size adaptation toward a target mean acceptance statistic."""

    def __init__(self, step, delta, gamma=0.05, t0=10.0, kappa=0.75):
        self.delta = delta
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step)

    def restart(self, step):
        self.mu = math.log(10.0 * step)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat):
        self.counter += 1
        a = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        w = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - w) * self.x_bar + w * x
        return math.exp(x)

    def final(self):
        return math.exp(self.x_bar)


def adaptation_windows(warmup, init_buffer=75, term_buffer=50, base_window=25):
    """Ends (exclusive iteration indices) of the metric adaptation windows.

    Returns ``(window_ends, adapt_start, adapt_end)``: the metric is
    re-estimated at each end; iterations outside ``[adapt_start, adapt_end)``
    adapt the step size only.
    """
    if warmup < MIN_WARMUP:
        raise AdaptationFailed(f"warmup of {warmup} is below the minimum of {MIN_WARMUP}")
    if init_buffer + base_window + term_buffer > warmup:
        init_buffer = int(0.15 * warmup)
        term_buffer = int(0.1 * warmup)
        base_window = warmup - init_buffer - term_buffer
    adapt_end = warmup - term_buffer
    ends = []
    start = init_buffer
    size = base_window
    while start < adapt_end:
        end = start + size
        # stretch the last window when the next one would not fit
        if end + 2 * size > adapt_end:
            end = adapt_end
        ends.append(end)
        start = end
        size *= 2
    return ends, init_buffer, adapt_end


def _heuristic_step(q, lp, grad, step, inv_mass, target, rng):
    """Double or halve ``step`` until one-step acceptance crosses 0.8."""
    p = rng.standard_normal(len(q)) / np.sqrt(inv_mass)
    h0 = -lp + _kinetic(p, inv_mass)
    _, p1, lp1, _ = leapfrog(q, p, grad, step, inv_mass, target)
    h = -lp1 + _kinetic(p1, inv_mass) if math.isfinite(lp1) else math.inf
    direction = 1 if (h0 - h) > math.log(0.8) else -1
    for _ in range(100):
        p = rng.standard_normal(len(q)) / np.sqrt(inv_mass)
        h0 = -lp + _kinetic(p, inv_mass)
        _, p1, lp1, _ = leapfrog(q, p, grad, step, inv_mass, target)
        h = -lp1 + _kinetic(p1, inv_mass) if math.isfinite(lp1) else math.inf
        delta = h0 - h
        if direction == 1 and not delta > math.log(0.8):
            break
        if direction == -1 and delta > math.log(0.8):
            break
        step = step * 2.0 if direction == 1 else step * 0.5
        if step > 1e7:
            raise AdaptationFailed("step size diverged upward; target may be improper")
        if step < 1e-10:
            raise AdaptationFailed("step size underflowed below 1e-10")
    return step


class _Welford:
    def __init__(self, d):
        self.n = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros(d)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self):
        var = self.m2 / (self.n - 1)
        # Regularise toward a unit metric as in common practice.
        return (self.n / (self.n + 5.0)) * var + 1e-3 * (5.0 / (self.n + 5.0))


# --------------------------------------------------------------------------
# chains


def chain_rng(seed, chain):
    """Independent stream for ``chain``, derived from the master seed only."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(chain,)))


def initial_point(target, rng, radius, tries=100):
    for _ in range(tries):
        q = rng.uniform(-radius, radius, size=target.dim)
        try:
            lp, grad = target.logp_grad(q)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            continue
        if math.isfinite(lp) and np.all(np.isfinite(grad)):
            return q, lp, grad
    raise NonFiniteInit(f"no finite initial log density after {tries} draws")


def run_chain(config, target, chain, init=None):
    """Warm up and sample one chain; returns a dict of arrays.

    Floating-point warnings are silenced while sampling: non-finite values
    from wild early proposals are already recorded as divergences.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        return _sample_chain(config, target, chain, init)


def _sample_chain(config, target, chain, init):
    rng = chain_rng(config.seed, chain)
    t_start = time.perf_counter()
    if init is None:
        q, lp, grad = initial_point(target, rng, config.init_radius)
    else:
        q = np.asarray(init, dtype=float).copy()
        lp, grad = target.logp_grad(q)
        if not (math.isfinite(lp) and np.all(np.isfinite(grad))):
            raise NonFiniteInit("supplied initial value has non-finite log density")
    d = target.dim
    inv_mass = np.ones(d)
    windows, adapt_start, adapt_end = adaptation_windows(config.warmup)
    step = _heuristic_step(q, lp, grad, 1.0, inv_mass, target, rng)
    da = DualAveraging(step, config.adapt_delta)
    welford = _Welford(d)
    window_ends = set(windows)

    kept = config.kept
    draws = np.empty((kept, d))
    tel = {k: np.empty(kept) for k in ("lp", "energy", "accept_stat")}
    tel_div = np.zeros(kept, dtype=bool)
    tel_depth = np.zeros(kept, dtype=int)
    tel_leap = np.zeros(kept, dtype=int)
    warm_div = 0

    for it in range(config.total_iter):
        q, lp, grad, info = nuts_transition(q, lp, grad, step, inv_mass, target, rng,
                                            config.max_treedepth)
        if it < config.warmup:
            warm_div += info["divergent"]
            step = da.update(info["accept_stat"])
            if adapt_start <= it < adapt_end:
                welford.add(q)
            if it + 1 in window_ends:
                inv_mass = welford.variance()
                welford = _Welford(d)
                step = _heuristic_step(q, lp, grad, step, inv_mass, target, rng)
                da.restart(step)
            if it + 1 == config.warmup:
                step = da.final()
            if step < 1e-10 or not math.isfinite(step):
                raise AdaptationFailed(f"step size {step:.3e} out of range at iteration {it}")
            continue
        k = it - config.warmup
        draws[k] = q
        tel["lp"][k] = info["lp"]
        tel["energy"][k] = info["energy"]
        tel["accept_stat"][k] = info["accept_stat"]
        tel_div[k] = info["divergent"]
        tel_depth[k] = info["treedepth"]
        tel_leap[k] = info["n_leapfrog"]

    return {
        "draws": draws,
        "lp": tel["lp"],
        "energy": tel["energy"],
        "accept_stat": tel["accept_stat"],
        "divergent": tel_div,
        "treedepth": tel_depth,
        "n_leapfrog": tel_leap,
        "step_size": step,
        "inv_mass": inv_mass,
        "wall_time": time.perf_counter() - t_start,
        "warmup_divergences": warm_div,
    }


def _run_chain_star(args):
    return run_chain(*args)


def run_chains(config, target, inits=None):
    """Run ``config.chains`` independent chains and collect a :class:`DrawMatrix`.

    Results are identical whatever the execution order, because each chain's
    random stream depends only on ``(seed, chain index)``.
    """
    if getattr(target, "dim", 0) < 1:
        raise ConfigError("target must have at least one dimension")
    inits = [None] * config.chains if inits is None else list(inits)
    if len(inits) != config.chains:
        raise ConfigError("one initial value per chain is required")
    jobs = [(config, target, c, inits[c]) for c in range(config.chains)]
    if config.n_jobs > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_run_chain_star, jobs))
    else:
        results = [run_chain(*job) for job in jobs]

    def stack(key):
        return np.stack([r[key] for r in results])

    return DrawMatrix(
        draws=stack("draws"),
        names=list(getattr(target, "names", [f"q[{i}]" for i in range(target.dim)])),
        lp=stack("lp"),
        divergent=stack("divergent"),
        treedepth=stack("treedepth"),
        energy=stack("energy"),
        accept_stat=stack("accept_stat"),
        n_leapfrog=stack("n_leapfrog"),
        step_size=np.array([r["step_size"] for r in results]),
        inv_mass=stack("inv_mass"),
        wall_time=np.array([r["wall_time"] for r in results]),
        meta={"warmup_divergences": [int(r["warmup_divergences"]) for r in results]},
    )


class Gaussian:
    """Diagonal Gaussian target, handy for tests and calibration."""

    def __init__(self, mean, sd):
        self.mean = np.asarray(mean, dtype=float)
        self.sd = np.broadcast_to(np.asarray(sd, dtype=float), self.mean.shape).copy()
        self.dim = len(self.mean)
        self.names = [f"x[{i}]" for i in range(self.dim)]

    def logp_grad(self, q):
        z = (q - self.mean) / self.sd
        return -0.5 * float(z @ z), -z / self.sd
