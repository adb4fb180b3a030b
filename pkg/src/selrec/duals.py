"""Genealogical dual processes and stochastic representations.

Three equivalent pictures of the ancestry of a sampled individual:

* a vector of per-site line counts, each evolving independently as a
  branching count with initiation and resetting,
* a weighted interval partition of the sites,
* a vector of per-site run times (elapsed time since the count last reset),
  with an undefined marker for counts that never started.

Each picture pairs with the forward dynamics through a duality function;
Monte Carlo averages of these functions reproduce the deterministic
solution.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import quad

from .measure import (
    Measure,
    ProbabilityMeasure,
    boxtimes,
    cond_fit,
    cond_unfit,
    fit_fraction,
    tensor,
)
from .partitions import WeightedPartition, decode, encode
from .rng import spawn_stream
from .sites import SiteConfig
from .solvers import (
    SolverSettings,
    integrate_ode,
    logistic_fit_fraction,
    selection_flow,
)


# -- single-site line count -----------------------------------------------

def _site_rates(cfg: SiteConfig, i: int) -> tuple[float, float, float]:
    return cfg.s, cfg.rho_of(i), cfg.resetting_rate(i)


def ypir_simulate(cfg: SiteConfig, i: int, k0: int, t: float, rng) -> int:
    """Exact event-by-event run of one site's line count up to time t.

    From 0 the count jumps to 1 at the site's crossover rate; a positive
    count k branches to k+1 at rate s*k and resets to 1 at the site's
    resetting rate.
    """
    if k0 < 0:
        raise ValueError("count must be >= 0")
    if t < 0:
        raise ValueError("t must be >= 0")
    s, rho, r = _site_rates(cfg, i)
    k = int(k0)
    clock = 0.0
    while True:
        total = rho if k == 0 else s * k + r
        if total <= 0.0:
            return k
        clock += rng.exponential(1.0 / total)
        if clock > t:
            return k
        if k == 0:
            k = 1
        elif rng.random() * total < s * k:
            k += 1
        else:
            k = 1


def ypir_vector_simulate(cfg: SiteConfig, m0, t: float, rng) -> np.ndarray:
    """Independent line counts at every site, started from m0."""
    m0 = np.asarray(m0, dtype=np.int64)
    if m0.shape != (cfg.n,):
        raise ValueError(f"need one count per site, length {cfg.n}")
    return np.array(
        [ypir_simulate(cfg, i, int(m0[i - 1]), t, rng) for i in cfg.sites],
        dtype=np.int64,
    )


def _geom_pmf(sigma: float, n: int) -> float:
    """Trials up to the first success."""
    if n < 1:
        return 0.0
    if sigma >= 1.0:
        return 1.0 if n == 1 else 0.0
    if sigma <= 0.0:
        return 0.0
    return sigma * math.exp((n - 1) * math.log1p(-sigma))


def _negbin_pmf(m: int, sigma: float, n: int) -> float:
    """Trials up to the m-th success."""
    if n < m:
        return 0.0
    if sigma >= 1.0:
        return 1.0 if n == m else 0.0
    if sigma <= 0.0:
        return 0.0
    return math.exp(
        math.lgamma(n)
        - math.lgamma(m)
        - math.lgamma(n - m + 1)
        + m * math.log(sigma)
        + (n - m) * math.log1p(-sigma)
    )


@dataclass(frozen=True)
class IntDistribution:
    """Distribution on nonnegative integers, truncated with reported tail."""

    probs: np.ndarray
    tail: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def support_end(self) -> int:
        return self.probs.size - 1

    def pgf(self, x: float) -> float:
        return float(np.polyval(self.probs[::-1], x))

    def mean(self) -> float:
        return float(self.probs @ np.arange(self.probs.size))

    def tv_distance(self, other: "IntDistribution") -> float:
        """Upper bound on total variation, counting both truncation tails."""
        k = max(self.probs.size, other.probs.size)
        p = np.zeros(k)
        q = np.zeros(k)
        p[: self.probs.size] = self.probs
        q[: other.probs.size] = other.probs
        return 0.5 * (float(np.abs(p - q).sum()) + self.tail + other.tail)

    @classmethod
    def point_mass(cls, n: int) -> "IntDistribution":
        p = np.zeros(n + 1)
        p[n] = 1.0
        return cls(p)


_QUAD_OPTS = dict(epsabs=1e-14, epsrel=1e-11, limit=200)


def ypir_semigroup(
    cfg: SiteConfig,
    i: int,
    m0: int,
    t: float,
    tail_tol: float = 1e-12,
    n_max: int = 100_000,
) -> IntDistribution:
    """Law of one site's line count at time t, started from m0.

    Conditioning on the last renewal collapses the law to one-dimensional
    integrals: with no renewal the count is a negative binomial of the
    start, after a renewal of age u it is geometric with parameter
    exp(-s*u).  Truncated once the accounted mass reaches 1 - tail_tol.
    """
    if m0 < 0:
        raise ValueError("count must be >= 0")
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0.0:
        return IntDistribution.point_mass(m0)
    s, rho, r = _site_rates(cfg, i)
    sigma_t = math.exp(-s * t)
    probs = [math.exp(-rho * t) if m0 == 0 else 0.0]
    cum = probs[0]
    small = 0
    n = 0
    while n < n_max:
        n += 1
        if m0 == 0:
            if rho == 0.0:
                p = 0.0
            else:
                def f0(u, n=n):
                    g = _geom_pmf(math.exp(-s * u), n)
                    mix = rho * math.exp(-rho * (t - u)) + r * (
                        1.0 - math.exp(-rho * (t - u))
                    )
                    return math.exp(-r * u) * g * mix

                p = quad(f0, 0.0, t, **_QUAD_OPTS)[0]
        else:
            p = math.exp(-r * t) * _negbin_pmf(m0, sigma_t, n)
            if r > 0.0:
                def f1(u, n=n):
                    return r * math.exp(-r * u) * _geom_pmf(math.exp(-s * u), n)

                p += quad(f1, 0.0, t, **_QUAD_OPTS)[0]
        probs.append(p)
        cum += p
        if 1.0 - cum < tail_tol:
            break
        small = small + 1 if p < tail_tol / 100.0 and n > m0 else 0
        if small >= 3:
            break
    return IntDistribution(np.array(probs), tail=max(0.0, 1.0 - cum))


def ypir_pgf(cfg: SiteConfig, i: int, m0: int, t: float, x: float) -> float:
    """E[x^(count at t)] started from m0, for x in [0, 1]."""
    if not (0.0 <= x <= 1.0):
        raise ValueError("x must lie in [0, 1]")
    s, rho, r = _site_rates(cfg, i)
    if t == 0.0:
        return x ** m0

    def g(u):
        sig = math.exp(-s * u)
        return sig * x / (1.0 - (1.0 - sig) * x) if x != 1.0 else 1.0

    if m0 == 0:
        if rho == 0.0:
            return 1.0

        def f0(u):
            mix = rho * math.exp(-rho * (t - u)) + r * (1.0 - math.exp(-rho * (t - u)))
            return math.exp(-r * u) * g(u) * mix

        return math.exp(-rho * t) + quad(f0, 0.0, t, **_QUAD_OPTS)[0]
    out = math.exp(-r * t) * g(t) ** m0
    if r > 0.0:
        out += quad(lambda u: r * math.exp(-r * u) * g(u), 0.0, t, **_QUAD_OPTS)[0]
    return out


def ypir_stationary(
    cfg: SiteConfig,
    i: int,
    m0: int = 1,
    tail_tol: float = 1e-12,
    n_max: int = 1_000_000,
) -> IntDistribution:
    """Long-time law of one site's line count.

    Needs s > 0.  A site that never initiates (zero crossover rate) stays
    at 0 forever when started there; otherwise the limit law does not
    depend on the start and has the classic power tail with shape
    resetting rate / s.
    """
    if cfg.s <= 0.0:
        raise ValueError("the stationary law needs s > 0")
    s, rho, r = _site_rates(cfg, i)
    if rho == 0.0 and m0 == 0:
        return IntDistribution.point_mass(0)
    if r <= 0.0:
        raise ValueError(
            f"site {i} has no resetting; its count grows without a stationary law"
        )
    alpha = r / s
    probs = [0.0, alpha / (alpha + 1.0)]
    cum = probs[1]
    n = 1
    while 1.0 - cum >= tail_tol and n < n_max:
        probs.append(probs[-1] * n / (n + alpha + 1.0))
        n += 1
        cum += probs[-1]
    return IntDistribution(np.array(probs), tail=max(0.0, 1.0 - cum))


# -- weighted partition picture ---------------------------------------------

def wpp_simulate(cfg: SiteConfig, wp: WeightedPartition, t: float, rng) -> WeightedPartition:
    """Run the weighted-partition process by running the equivalent
    independent per-site counts and decoding the result."""
    m = ypir_vector_simulate(cfg, encode(wp, cfg), t, rng)
    return decode(m, cfg)


# -- run-time picture ---------------------------------------------------------

class _DeltaType:
    """Marker for a count that has not started; distinct from every real."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Delta"


DELTA = _DeltaType()


@dataclass(frozen=True)
class InitiationState:
    """Per-site run times; DELTA marks a site whose count never started.

    The selected site always carries a real value.
    """

    entries: tuple

    def __post_init__(self):
        ent = []
        for e in self.entries:
            if e is DELTA:
                ent.append(DELTA)
            else:
                e = float(e)
                if not math.isfinite(e) or e < 0.0:
                    raise ValueError("run times must be finite and >= 0")
                ent.append(e)
        object.__setattr__(self, "entries", tuple(ent))

    def require_selected_real(self, cfg: SiteConfig) -> None:
        if len(self.entries) != cfg.n:
            raise ValueError(f"need one entry per site, length {cfg.n}")
        if self.entries[cfg.i_star - 1] is DELTA:
            raise ValueError("the selected site must carry a real run time")

    @classmethod
    def initial(cls, cfg: SiteConfig) -> "InitiationState":
        return cls(tuple(0.0 if i == cfg.i_star else DELTA for i in cfg.sites))

    def to_list(self) -> list:
        return ["Delta" if e is DELTA else float(e) for e in self.entries]

    @classmethod
    def from_list(cls, items: Iterable) -> "InitiationState":
        return cls(tuple(DELTA if x == "Delta" else float(x) for x in items))


def initiation_simulate(
    cfg: SiteConfig, state: InitiationState, t: float, rng
) -> InitiationState:
    """Advance every site's run time by t.

    An unstarted site starts (value 0) at its crossover rate; a running
    value drifts upward at unit speed and drops to 0 at the site's
    resetting rate.
    """
    state.require_selected_real(cfg)
    if t < 0:
        raise ValueError("t must be >= 0")
    out = []
    for i in cfg.sites:
        e = state.entries[i - 1]
        _, rho, r = _site_rates(cfg, i)
        clock = 0.0
        if e is DELTA:
            if rho == 0.0:
                out.append(DELTA)
                continue
            clock = rng.exponential(1.0 / rho)
            if clock > t:
                out.append(DELTA)
                continue
            e = 0.0
        val = float(e)
        if r > 0.0:
            while True:
                wait = rng.exponential(1.0 / r)
                if clock + wait > t:
                    break
                clock += wait
                val = 0.0
        out.append(val + (t - clock))
    return InitiationState(tuple(out))


# -- duality functions ----------------------------------------------------------

def ancestor_mixture(cfg: SiteConfig, k: int, nu: Measure) -> Measure:
    """Type law of an individual whose ancestry holds k potential lines:
    the unfit conditional survives only if all k lines are unfit."""
    if k < 0:
        raise ValueError("count must be >= 0")
    if k == 0:
        return Measure((), [1.0])
    y = (1.0 - fit_fraction(nu, cfg.i_star)) ** k
    b = cond_fit(nu, cfg.i_star)
    d = cond_unfit(nu, cfg.i_star)
    return Measure(nu.sites, y * d.values + (1.0 - y) * b.values)


def runtime_for_count(cfg: SiteConfig, f0: float, k: int) -> float:
    """Run time whose selection flow thins the unfit mass exactly as k
    independent lines would."""
    if not (0.0 < f0 < 1.0):
        raise ValueError("f0 must lie strictly between 0 and 1")
    if k < 1:
        raise ValueError("count must be >= 1")
    if k == 1:
        return 0.0
    if cfg.s == 0.0:
        raise ValueError("without selection only k = 1 has a matching run time")
    L = math.log1p(-f0)
    a = (1 - k) * L
    return (a + math.log1p(-math.exp(k * L)) - math.log(f0)) / cfg.s


def runtimes_from_counts(cfg: SiteConfig, f0: float, m) -> InitiationState:
    """Translate a count vector into the matching run-time state."""
    m = np.asarray(m, dtype=np.int64)
    entries = tuple(
        DELTA if k == 0 else runtime_for_count(cfg, f0, int(k)) for k in m
    )
    return InitiationState(entries)


def _validate_counts(cfg: SiteConfig, m) -> np.ndarray:
    m = np.asarray(m, dtype=np.int64)
    if m.shape != (cfg.n,):
        raise ValueError(f"need one count per site, length {cfg.n}")
    if np.any(m < 0):
        raise ValueError("counts must be >= 0")
    if m[cfg.i_star - 1] < 1:
        raise ValueError("the selected site must carry a positive count")
    return m


def _resolve_order(cfg: SiteConfig, order) -> tuple[int, ...]:
    if order is None:
        return cfg.canonical_permutation()
    order = tuple(order)
    if not cfg.is_valid_ordering(order):
        raise ValueError(f"{order} is not ordered outward from the selected site")
    return order


def duality_counts(
    cfg: SiteConfig, m, nu: Measure, order: Sequence[int] | None = None
) -> ProbabilityMeasure:
    """Duality function of the line-count picture.

    One ancestor-mixture factor per site with a positive count, restricted
    to the site's tail and multiplied outward from the selected site; the
    value does not depend on which compatible order is used.
    """
    m = _validate_counts(cfg, m)
    order = _resolve_order(cfg, order)
    if nu.sites != cfg.sites:
        raise ValueError("nu must live on the full site set")
    acc = None
    for i in order:
        k = int(m[i - 1])
        if k == 0:
            continue
        factor = ancestor_mixture(cfg, k, nu).project(cfg.tail(i))
        acc = factor if acc is None else boxtimes(acc, factor)
    return ProbabilityMeasure(acc.sites, acc.values)


def duality_partition(cfg: SiteConfig, wp: WeightedPartition, nu: Measure) -> ProbabilityMeasure:
    """Duality function of the weighted-partition picture: independent
    blocks, each drawn from the ancestor mixture of its weight."""
    if wp.n != cfg.n:
        raise ValueError("partition size does not match the configuration")
    if nu.sites != cfg.sites:
        raise ValueError("nu must live on the full site set")
    out = Measure((), [1.0])
    for block, v in zip(wp.partition.blocks, wp.weights):
        out = tensor(out, ancestor_mixture(cfg, v, nu).project(block))
    return ProbabilityMeasure(out.sites, out.values)


def duality_runtimes(
    cfg: SiteConfig, theta: InitiationState, nu: Measure, order: Sequence[int] | None = None
) -> ProbabilityMeasure:
    """Duality function of the run-time picture: one selection-flow factor
    per started site, restricted to the site's tail."""
    theta.require_selected_real(cfg)
    if nu.sites != cfg.sites:
        raise ValueError("nu must live on the full site set")
    order = _resolve_order(cfg, order)
    acc = None
    for i in order:
        e = theta.entries[i - 1]
        if e is DELTA:
            continue
        factor = selection_flow(cfg, nu, float(e)).project(cfg.tail(i))
        acc = factor if acc is None else boxtimes(acc, factor)
    return ProbabilityMeasure(acc.sites, acc.values)


# -- Monte Carlo representation --------------------------------------------------

class _MixtureEvaluator:
    """Fast repeated evaluation of the count/run-time duality functions.

    Every factor is an affine mixture of the fit and unfit conditionals of
    nu restricted to a tail, so for a fixed set of started sites the value
    is multilinear in the per-site unfit weights; the basis products are
    cached per started-set.
    """

    def __init__(self, cfg: SiteConfig, nu: Measure):
        self.cfg = cfg
        self.y = 1.0 - fit_fraction(nu, cfg.i_star)
        b = cond_fit(nu, cfg.i_star)
        d = cond_unfit(nu, cfg.i_star)
        self.perm = cfg.canonical_permutation()
        self._b_tail = {i: b.project(cfg.tail(i)) for i in cfg.sites}
        self._d_tail = {i: d.project(cfg.tail(i)) for i in cfg.sites}
        self._basis: dict[tuple[int, ...], np.ndarray] = {}

    def basis(self, active: tuple[int, ...]) -> np.ndarray:
        cached = self._basis.get(active)
        if cached is not None:
            return cached
        a = len(active)
        rows = np.empty((1 << a, 1 << self.cfg.n))
        for c in range(1 << a):
            acc = None
            for j, i in enumerate(active):
                part = self._d_tail[i] if (c >> j) & 1 else self._b_tail[i]
                acc = part if acc is None else boxtimes(acc, part)
            rows[c] = acc.values
        self._basis[active] = rows
        return rows

    def value(self, active: tuple[int, ...], dweights: Sequence[float]) -> np.ndarray:
        coeff = np.empty(1 << len(active))
        coeff[0] = 1.0
        size = 1
        for g in dweights:
            coeff[size : 2 * size] = coeff[:size] * g
            coeff[:size] *= 1.0 - g
            size *= 2
        return coeff @ self.basis(active)

    def value_for_counts(self, m: np.ndarray) -> np.ndarray:
        active = tuple(i for i in self.perm if m[i - 1] > 0)
        weights = [self.y ** int(m[i - 1]) for i in active]
        return self.value(active, weights)

    def value_for_runtimes(self, state: InitiationState, f0: float) -> np.ndarray:
        active = tuple(i for i in self.perm if state.entries[i - 1] is not DELTA)
        weights = [
            1.0 - logistic_fit_fraction(self.cfg.s, f0, float(state.entries[i - 1]))
            for i in active
        ]
        return self.value(active, weights)


class _PartitionEvaluator:
    """Repeated evaluation of the weighted-partition duality function with
    cached per-interval conditionals."""

    def __init__(self, cfg: SiteConfig, nu: Measure):
        self.cfg = cfg
        self.y = 1.0 - fit_fraction(nu, cfg.i_star)
        self._b = cond_fit(nu, cfg.i_star)
        self._d = cond_unfit(nu, cfg.i_star)
        self._proj: dict[tuple[int, ...], tuple[Measure, Measure]] = {}

    def value(self, wp: WeightedPartition) -> np.ndarray:
        out = Measure((), [1.0])
        for block, v in zip(wp.partition.blocks, wp.weights):
            pair = self._proj.get(block)
            if pair is None:
                pair = (self._b.project(block), self._d.project(block))
                self._proj[block] = pair
            bP, dP = pair
            w = self.y ** int(v)
            out = tensor(out, Measure(block, w * dP.values + (1.0 - w) * bP.values))
        return out.values


_FLAVORS = ("counts", "partition", "runtimes")


def _dual_rows(cfg, omega0, start, t, replicates, seed, flavor, threads):
    """Per-replicate duality values, rows indexed by replicate so the
    reduction does not depend on scheduling."""
    f0 = fit_fraction(omega0, cfg.i_star)
    rows = np.empty((replicates, 1 << cfg.n))
    mixer = _MixtureEvaluator(cfg, omega0)
    parter = _PartitionEvaluator(cfg, omega0) if flavor == "partition" else None

    def run_range(lo: int, hi: int) -> None:
        for rep in range(lo, hi):
            rng = spawn_stream(seed, rep)
            if flavor == "counts":
                m = ypir_vector_simulate(cfg, start, t, rng)
                rows[rep] = mixer.value_for_counts(m)
            elif flavor == "partition":
                wp = wpp_simulate(cfg, start, t, rng)
                rows[rep] = parter.value(wp)
            else:
                th = initiation_simulate(cfg, start, t, rng)
                rows[rep] = mixer.value_for_runtimes(th, f0)

    if threads <= 1:
        run_range(0, replicates)
    else:
        bounds = np.linspace(0, replicates, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(run_range, int(lo), int(hi))
                for lo, hi in zip(bounds, bounds[1:])
                if hi > lo
            ]
            for fut in futures:
                fut.result()
    return rows


def _canonical_start(cfg: SiteConfig, flavor: str):
    if flavor == "counts":
        m = np.zeros(cfg.n, dtype=np.int64)
        m[cfg.i_star - 1] = 1
        return m
    if flavor == "partition":
        return WeightedPartition.initial(cfg.n)
    return InitiationState.initial(cfg)


@dataclass
class MCEstimate:
    """Monte Carlo estimate of the forward solution at one time."""

    mean: Measure
    stderr: np.ndarray
    flavor: str
    replicates: int
    seed: int

    def z_scores(self, reference: Measure) -> np.ndarray:
        # stderr is floored so that cells with (near) zero sample variance
        # compare at absolute precision instead of dividing by rounding dust
        diff = self.mean.values - reference.values
        return diff / np.maximum(self.stderr, 1e-13)


def mc_solution_estimate(
    cfg: SiteConfig,
    omega0: Measure,
    t: float,
    replicates: int,
    seed: int,
    flavor: str = "counts",
    threads: int = 1,
) -> MCEstimate:
    """Estimate the solution at time t by averaging a duality function over
    independent dual runs from the single-individual start."""
    if flavor not in _FLAVORS:
        raise ValueError(f"flavor must be one of {_FLAVORS}")
    if replicates < 1:
        raise ValueError("need at least one replicate")
    if omega0.sites != cfg.sites:
        raise ValueError("initial measure must live on the full site set")
    start = _canonical_start(cfg, flavor)
    rows = _dual_rows(cfg, omega0, start, t, replicates, seed, flavor, threads)
    mean = rows.sum(axis=0) / replicates
    if replicates > 1:
        var = np.square(rows - mean).sum(axis=0) / (replicates - 1)
        stderr = np.sqrt(var / replicates)
    else:
        stderr = np.zeros(rows.shape[1])
    return MCEstimate(
        mean=Measure(cfg.sites, mean),
        stderr=stderr,
        flavor=flavor,
        replicates=replicates,
        seed=seed,
    )


@dataclass
class DualityReport:
    """Comparison of a dual Monte Carlo average with the forward value."""

    flavor: str
    lhs: Measure
    mc_mean: Measure
    stderr: np.ndarray
    z: np.ndarray
    max_abs_z: float
    replicates: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "flavor": self.flavor,
            "forward_value": self.lhs.to_dict(),
            "mc_mean": self.mc_mean.to_dict(),
            "stderr": [float(v) for v in self.stderr],
            "z": [float(v) for v in self.z],
            "max_abs_z": float(self.max_abs_z),
            "replicates": self.replicates,
            "seed": self.seed,
        }


def duality_check(
    cfg: SiteConfig,
    omega0: Measure,
    start,
    t: float,
    replicates: int,
    seed: int,
    threads: int = 1,
    solver_tol: float = 1e-9,
) -> DualityReport:
    """Verify one duality relation by Monte Carlo.

    The forward side evaluates the duality function with the fixed start at
    the solution at time t; the dual side averages the function, applied to
    the time-t dual state, over the initial measure.
    """
    if isinstance(start, WeightedPartition):
        flavor = "partition"
    elif isinstance(start, InitiationState):
        flavor = "runtimes"
    else:
        start = _validate_counts(cfg, start)
        flavor = "counts"
    settings = SolverSettings(
        t_max=t, grid_steps=max(16, int(8 * t) + 8), quad_tol=solver_tol
    )
    omega_t = (
        integrate_ode(cfg, omega0, settings).final_probability()
        if t > 0
        else ProbabilityMeasure(omega0.sites, omega0.values)
    )
    if flavor == "counts":
        lhs = duality_counts(cfg, start, omega_t)
    elif flavor == "partition":
        lhs = duality_partition(cfg, start, omega_t)
    else:
        lhs = duality_runtimes(cfg, start, omega_t)
    rows = _dual_rows(cfg, omega0, start, t, replicates, seed, flavor, threads)
    mean = rows.sum(axis=0) / replicates
    var = np.square(rows - mean).sum(axis=0) / max(1, replicates - 1)
    stderr = np.sqrt(var / replicates)
    diff = mean - lhs.values
    z = diff / np.maximum(stderr, 1e-13)
    return DualityReport(
        flavor=flavor,
        lhs=lhs,
        mc_mean=Measure(cfg.sites, mean),
        stderr=stderr,
        z=z,
        max_abs_z=float(np.max(np.abs(z))) if z.size else 0.0,
        replicates=replicates,
        seed=seed,
    )
