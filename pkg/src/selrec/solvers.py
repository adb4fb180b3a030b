"""Forward solvers for the selection-recombination dynamics.

Three independent routes to the same solution:

* a generic fixed-step Runge-Kutta integrator with step halving,
* a level-by-level recursion that peels off one crossover site at a time
  and only ever integrates scalar exponential weights,
* a closed semigroup formula that assembles the solution from per-site
  line-counting laws (requires positive selection strength).

All of them work on dense measure vectors as defined in ``measure``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

from .measure import (
    Measure,
    ProbabilityMeasure,
    cond_fit,
    cond_unfit,
    fit_fraction,
    fit_mask,
    fitness_projection,
    l1_distance,
    recombinator,
    tensor,
)
from .sites import SiteConfig

MAX_HALVINGS = 20


class SolverError(RuntimeError):
    """Numerical failure inside a solver."""


class GridTooCoarseError(SolverError):
    """Raised when the half-step comparison exceeds its budget."""


@dataclass(frozen=True)
class SolverSettings:
    """Discretisation parameters shared by the grid-based solvers.

    t_max is the end time, grid_steps the number of grid intervals,
    ode_step the initial integrator step (defaults to the grid spacing)
    and quad_tol the convergence target for refinements.
    """

    t_max: float
    grid_steps: int = 512
    ode_step: float | None = None
    quad_tol: float = 1e-8

    def __post_init__(self):
        if self.t_max < 0:
            raise ValueError("t_max must be >= 0")
        if not isinstance(self.grid_steps, int) or self.grid_steps < 2:
            raise ValueError("grid_steps must be an integer >= 2")
        if self.ode_step is not None and not self.ode_step > 0:
            raise ValueError("ode_step must be positive")
        if not (0.0 < self.quad_tol <= 1e-3):
            raise ValueError("quad_tol must lie in (0, 1e-3]")

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.grid_steps + 1)


class Trajectory:
    """Solution values on a fixed time grid."""

    def __init__(self, times, sites, values, mass_drift: float = 0.0):
        self.times = np.asarray(times, dtype=float)
        self.sites = tuple(sites)
        self.values = np.asarray(values, dtype=float)
        self.mass_drift = float(mass_drift)
        if self.values.shape != (self.times.size, 2 ** len(self.sites)):
            raise ValueError("trajectory shape does not match grid and sites")

    def index_of_time(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the solver grid")
        return j

    def measure(self, j: int) -> Measure:
        return Measure(self.sites, self.values[j])

    def at_time(self, t: float) -> Measure:
        return self.measure(self.index_of_time(t))

    def final(self) -> Measure:
        return self.measure(self.times.size - 1)

    def final_probability(self) -> ProbabilityMeasure:
        v = self.values[-1]
        return ProbabilityMeasure(self.sites, v / v.sum())

    def column_labels(self) -> list[str]:
        k = len(self.sites)
        out = []
        for idx in range(2 ** k):
            bits = "".join(str((idx >> j) & 1) for j in range(k))
            out.append(f"p_{bits}" if k else "p_")
        return out

    def write_csv(self, fh) -> None:
        fh.write("t," + ",".join(self.column_labels()) + "\n")
        for t, row in zip(self.times, self.values):
            fh.write(",".join([repr(float(t))] + [repr(float(v)) for v in row]) + "\n")


# -- right-hand side --------------------------------------------------------

def _subset_bits(sites: tuple[int, ...], subset: frozenset[int]) -> np.ndarray:
    """Map each full index to the flat index of its restriction to subset."""
    idx = np.arange(2 ** len(sites))
    g = np.zeros_like(idx)
    pos = 0
    for j, a in enumerate(sites):
        if a in subset:
            g |= ((idx >> j) & 1) << pos
            pos += 1
    return g


def _axes_to_drop(sites: tuple[int, ...], keep: frozenset[int]) -> tuple[int, ...]:
    k = len(sites)
    return tuple(k - 1 - j for j, a in enumerate(sites) if a not in keep)


def _project_rows(W: np.ndarray, sites: tuple[int, ...], keep: frozenset[int]) -> np.ndarray:
    """Marginalise every row of a (rows, 2^k) array onto the kept sites."""
    k = len(sites)
    axes = tuple(a + 1 for a in _axes_to_drop(sites, keep))
    arr = W.reshape((W.shape[0],) + (2,) * k)
    if axes:
        arr = arr.sum(axis=axes)
    return arr.reshape(W.shape[0], -1)


def make_rhs(
    sites: Sequence[int],
    i_star: int,
    s: float,
    splits: Iterable[tuple[float, frozenset[int], frozenset[int]]],
) -> Callable[[np.ndarray], np.ndarray]:
    """Vector field of the dynamics on the given sites.

    splits lists (rate, head, tail) partitions; entries with zero rate may
    be omitted by the caller.  The returned function maps a raw value
    vector to its time derivative.
    """
    sites = tuple(sorted(sites))
    fmask = fit_mask(sites, i_star).astype(float)
    terms = []
    for rate, head, tail in splits:
        if rate == 0.0:
            continue
        gC = _subset_bits(sites, frozenset(head))
        gD = _subset_bits(sites, frozenset(tail))
        axC = _axes_to_drop(sites, frozenset(head))
        axD = _axes_to_drop(sites, frozenset(tail))
        terms.append((float(rate), axC, axD, gC, gD))
    shape = (2,) * len(sites)

    def rhs(v: np.ndarray) -> np.ndarray:
        out = np.zeros_like(v)
        if s:
            f = float(v @ fmask)
            out += s * (v * fmask - f * v)
        if terms:
            arr = v.reshape(shape)
            for rate, axC, axD, gC, gD in terms:
                pc = arr.sum(axis=axC).reshape(-1) if axC else v
                pd = arr.sum(axis=axD).reshape(-1) if axD else v
                out += rate * (pc[gC] * pd[gD] - v)
        return out

    return rhs


def _cfg_splits(cfg: SiteConfig) -> list[tuple[float, frozenset[int], frozenset[int]]]:
    out = []
    for i in cfg.crossover_sites:
        rate = cfg.rho_of(i)
        if rate > 0.0:
            head, tail = cfg.head_tail(i)
            out.append((rate, head, tail))
    return out


def sre_rhs(cfg: SiteConfig, nu: Measure) -> Measure:
    """Time derivative of the dynamics at nu (a signed measure of mass 0)."""
    if nu.sites != cfg.sites:
        raise ValueError("measure must live on the full site set")
    rhs = make_rhs(cfg.sites, cfg.i_star, cfg.s, _cfg_splits(cfg))
    return Measure(nu.sites, rhs(nu.values))


# -- selection-only flow ------------------------------------------------------

def selection_flow(cfg: SiteConfig, omega0: Measure, t: float) -> ProbabilityMeasure:
    """Exact solution when every crossover rate vanishes.

    Reweights the fit and unfit parts; the conditional distributions inside
    each part never move.
    """
    if cfg.i_star not in omega0.sites:
        raise ValueError("initial measure must cover the selected site")
    if t < 0:
        raise ValueError("t must be >= 0")
    st = cfg.s * t
    if st > 500.0:
        return ProbabilityMeasure(omega0.sites, cond_fit(omega0, cfg.i_star).values)
    e = math.exp(st)
    fv = fitness_projection(omega0, cfg.i_star).values
    f0 = float(fv.sum())
    vals = (e * fv + (omega0.values - fv)) / (e * f0 + (1.0 - f0))
    return ProbabilityMeasure(omega0.sites, vals)


def logistic_fit_fraction(s: float, f0: float, t: float) -> float:
    """Fit-sequence mass along the selection-only flow."""
    e = math.exp(min(s * t, 500.0))
    return e * f0 / (e * f0 + (1.0 - f0))


# -- Runge-Kutta integrator ---------------------------------------------------

def _rk4_run(rhs, v0: np.ndarray, grid: np.ndarray, substeps: int):
    out = np.empty((grid.size, v0.size))
    out[0] = v0
    v = v0.copy()
    drift = 0.0
    for j in range(1, grid.size):
        dt = (grid[j] - grid[j - 1]) / substeps
        for _ in range(substeps):
            k1 = rhs(v)
            k2 = rhs(v + 0.5 * dt * k1)
            k3 = rhs(v + 0.5 * dt * k2)
            k4 = rhs(v + dt * k3)
            v = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            m = v.sum()
            if not m > 0.0:
                raise SolverError("total mass collapsed during integration")
            drift = max(drift, abs(m - 1.0))
            v /= m
        out[j] = v
    return out, drift


def integrate_ode(
    cfg: SiteConfig,
    omega0: Measure,
    settings: SolverSettings,
    rhs: Callable[[np.ndarray], np.ndarray] | None = None,
    sites: Sequence[int] | None = None,
) -> Trajectory:
    """Classic fourth-order integration with step halving.

    The step is halved until two successive refinements agree at t_max to
    within quad_tol in l1; the mass is renormalised after every step and
    the largest drift is recorded on the trajectory.
    """
    sites = tuple(sorted(sites)) if sites is not None else cfg.sites
    if omega0.sites != sites:
        raise ValueError("initial measure does not match the requested sites")
    if rhs is None:
        rhs = make_rhs(cfg.sites, cfg.i_star, cfg.s, _cfg_splits(cfg))
    grid = settings.grid()
    if settings.t_max == 0.0:
        vals = np.tile(omega0.values, (grid.size, 1))
        return Trajectory(grid, sites, vals)
    cell = settings.t_max / settings.grid_steps
    step = settings.ode_step if settings.ode_step is not None else cell
    substeps = max(1, math.ceil(cell / step))
    prev_final = None
    for _ in range(MAX_HALVINGS + 1):
        out, drift = _rk4_run(rhs, omega0.values, grid, substeps)
        if prev_final is not None:
            diff = float(np.abs(out[-1] - prev_final).sum())
            if diff < settings.quad_tol:
                return Trajectory(grid, sites, out, drift)
        prev_final = out[-1]
        substeps *= 2
    raise SolverError(
        f"no convergence to {settings.quad_tol} after {MAX_HALVINGS} step halvings"
    )


# -- recursion over crossover sites -------------------------------------------

class TruncatedFamily:
    """Trajectories of the truncated dynamics, one level per site peeled.

    Level 0 is the selection-only flow; level k adds the k-th crossover
    site of the permutation; the last level solves the full dynamics.
    """

    def __init__(self, cfg: SiteConfig, permutation, times, level_values):
        self.cfg = cfg
        self.permutation = tuple(permutation)
        self.times = np.asarray(times, dtype=float)
        self.levels = [
            Trajectory(self.times, cfg.sites, vals) for vals in level_values
        ]

    @property
    def solution(self) -> Trajectory:
        return self.levels[-1]

    def index_of_time(self, t: float) -> int:
        return self.levels[0].index_of_time(t)

    def final_probability(self) -> ProbabilityMeasure:
        return self.solution.final_probability()


def recursive_solve(
    cfg: SiteConfig,
    omega0: Measure,
    settings: SolverSettings,
    permutation: Sequence[int] | None = None,
    check_grid: bool = True,
) -> TruncatedFamily:
    """Solve by adding one crossover site per level.

    Each level couples the previous one through a single exponentially
    weighted time integral, evaluated by trapezoidal prefix sums on the
    grid.  With check_grid, the endpoint is compared against a run on the
    half-step grid and a mismatch beyond 10x quad_tol raises
    GridTooCoarseError.
    """
    if omega0.sites != cfg.sites:
        raise ValueError("initial measure must live on the full site set")
    if permutation is None:
        permutation = cfg.canonical_permutation()
    else:
        permutation = tuple(permutation)
        if not cfg.is_valid_ordering(permutation):
            raise ValueError(f"{permutation} is not ordered outward from the selected site")
    levels = _recursion_levels(cfg, omega0, settings.grid(), permutation)
    fam = TruncatedFamily(cfg, permutation, settings.grid(), levels)
    if check_grid and settings.t_max > 0.0:
        coarse = SolverSettings(
            t_max=settings.t_max,
            grid_steps=max(2, settings.grid_steps // 2),
            quad_tol=settings.quad_tol,
        )
        ref = _recursion_levels(cfg, omega0, coarse.grid(), permutation)
        diff = float(np.abs(levels[-1][-1] - ref[-1][-1]).sum())
        if diff > 10.0 * settings.quad_tol:
            raise GridTooCoarseError(
                f"half-step comparison gives {diff:.3e} > 10 * {settings.quad_tol:.1e}; "
                "increase grid_steps"
            )
    return fam


def _recursion_levels(cfg, omega0, times, permutation):
    s = cfg.s
    v0 = omega0.values
    fv = fitness_projection(omega0, cfg.i_star).values
    f0 = float(fv.sum())
    st = np.minimum(s * times, 500.0)
    e = np.exp(st)
    level = (e[:, None] * fv[None, :] + (v0 - fv)[None, :]) / (
        e * f0 + (1.0 - f0)
    )[:, None]
    levels = [level]
    sites = cfg.sites
    for i in permutation[1:]:
        rate = cfg.rho_of(i)
        if rate == 0.0:
            levels.append(levels[-1])
            continue
        head, tail = cfg.head_tail(i)
        prev = levels[-1]
        decay = np.exp(-rate * times)
        integ = cumulative_trapezoid(
            (rate * decay)[:, None] * prev, x=times, axis=0, initial=0.0
        )
        pc = _project_rows(prev, sites, head)
        pd = _project_rows(integ, sites, tail)
        gC = _subset_bits(sites, head)
        gD = _subset_bits(sites, tail)
        levels.append(decay[:, None] * prev + pc[:, gC] * pd[:, gD])
    return levels


def linkage_disequilibrium(family: TruncatedFamily, level: int, t: float) -> Measure:
    """Deviation of the level-`level` state from its own-site product form."""
    if not (1 <= level < len(family.levels)):
        raise ValueError("level must lie in [1, n-1]")
    cfg = family.cfg
    i = family.permutation[level]
    nu = family.levels[level].at_time(t)
    head, tail = cfg.head_tail(i)
    return nu.sub(recombinator(nu, head, tail))


def ld_decay_residual(family: TruncatedFamily, level: int) -> dict:
    """Compare the product deviation at a level with the exponentially
    damped deviation one level below, across the whole grid."""
    cfg = family.cfg
    i = family.permutation[level]
    rate = cfg.rho_of(i)
    head, tail = cfg.head_tail(i)
    sites = cfg.sites
    gC = _subset_bits(sites, head)
    gD = _subset_bits(sites, tail)

    def deviation(W):
        pc = _project_rows(W, sites, head)
        pd = _project_rows(W, sites, tail)
        return W - pc[:, gC] * pd[:, gD]

    lhs = deviation(family.levels[level].values)
    below = deviation(family.levels[level - 1].values)
    rhs = np.exp(-rate * family.times)[:, None] * below
    norms = np.abs(lhs).sum(axis=1)
    err = np.abs(lhs - rhs).sum(axis=1)
    scale = max(float(norms.max()), 1e-30)
    return {
        "site": i,
        "rate": rate,
        "max_abs_error": float(err.max()),
        "max_relative_error": float(err.max() / scale),
        "lhs_norms": norms,
        "below_norms": np.abs(below).sum(axis=1),
    }


# -- closed semigroup solution ------------------------------------------------

def yule_pgf(s: float, t: float, x: float) -> float:
    """Generating function of the line count started from one line."""
    sig = math.exp(-min(s * t, 500.0))
    return sig * x / (1.0 - (1.0 - sig) * x) if x != 1.0 else 1.0


def _started_mass_pgf(s, rho, r, t, x, quad_tol):
    """E[x^N; N >= 1] for the count started at 0: the site fires once at
    rate rho, afterwards the count runs with resets at rate r; only the age
    since the last renewal matters."""
    def integrand(u):
        sig = math.exp(-s * u)
        g = sig * x / (1.0 - (1.0 - sig) * x) if x != 1.0 else 1.0
        mix = rho * math.exp(-rho * (t - u)) + r * (1.0 - math.exp(-rho * (t - u)))
        return math.exp(-r * u) * g * mix

    val, _ = quad(integrand, 0.0, t, epsabs=quad_tol, epsrel=quad_tol, limit=200)
    return val


def semigroup_solve(
    cfg: SiteConfig, omega0: Measure, t: float, quad_tol: float = 1e-10
) -> ProbabilityMeasure:
    """Assemble the solution directly from per-site renewal laws.

    Needs s > 0; with s = 0 the same state is produced by recursive_solve
    on an automatically chosen grid.
    """
    if omega0.sites != cfg.sites:
        raise ValueError("initial measure must live on the full site set")
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0.0:
        return ProbabilityMeasure(omega0.sites, omega0.values)
    if cfg.s == 0.0:
        total = sum(cfg.rho) + 1.0
        steps = min(40000, max(1000, int(400 * t * total)))
        settings = SolverSettings(t_max=t, grid_steps=steps, quad_tol=1e-5)
        return recursive_solve(cfg, omega0, settings).final_probability()
    x = 1.0 - fit_fraction(omega0, cfg.i_star)
    b = cond_fit(omega0, cfg.i_star)
    d = cond_unfit(omega0, cfg.i_star)
    resets = cfg.resetting_rates()
    g0 = yule_pgf(cfg.s, t, x)
    acc = d.values * g0 + b.values * (1.0 - g0)
    for i in cfg.canonical_permutation()[1:]:
        rho = cfg.rho_of(i)
        if rho == 0.0:
            continue
        r = float(resets[i - 1])
        tail = cfg.tail(i)
        started = 1.0 - math.exp(-rho * t)
        gmass = _started_mass_pgf(cfg.s, rho, r, t, x, quad_tol)
        mix = d.project(tail).values * gmass + b.project(tail).values * (
            started - gmass
        )
        gC = _subset_bits(cfg.sites, cfg.head(i))
        gD = _subset_bits(cfg.sites, tail)
        pc = _project_rows(acc[None, :], cfg.sites, cfg.head(i))[0]
        acc = (1.0 - started) * acc + pc[gC] * mix[gD]
    return ProbabilityMeasure(cfg.sites, acc / acc.sum())


# -- long-time limit ----------------------------------------------------------

def stationary_count_pgf(alpha: float, x: float, term_tol: float = 1e-14) -> float:
    """Generating function of the stationary line-count law with shape
    alpha (reset rate over selection strength), evaluated at x in [0, 1]."""
    if not (0.0 <= x <= 1.0):
        raise ValueError("x must lie in [0, 1]")
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    term = alpha / (alpha + 1.0) * x
    total = term
    m = 1
    while term * x / (1.0 - x) >= term_tol:
        term *= x * m / (m + alpha + 1.0)
        m += 1
        total += term
        if m > 50_000_000:
            raise SolverError("stationary series failed to converge")
    return total


def asymptotic_limit(cfg: SiteConfig, omega0: Measure) -> ProbabilityMeasure:
    """Product-form long-time limit of the dynamics.

    Requires s > 0 and a positive rate at every crossover site, otherwise
    no unique product limit exists.
    """
    if omega0.sites != cfg.sites:
        raise ValueError("initial measure must live on the full site set")
    if cfg.s <= 0.0:
        raise ValueError("the long-time limit needs s > 0")
    zero = [i for i in cfg.crossover_sites if cfg.rho_of(i) == 0.0]
    if zero:
        raise ValueError(
            f"the long-time limit needs a positive crossover rate at every "
            f"site other than the selected one; zero at {zero}"
        )
    x = 1.0 - fit_fraction(omega0, cfg.i_star)
    b = cond_fit(omega0, cfg.i_star)
    d = cond_unfit(omega0, cfg.i_star)
    resets = cfg.resetting_rates()
    out = Measure((), [1.0])
    for i in cfg.sites:
        if i == cfg.i_star:
            gamma = 1.0 if x == 0.0 else 0.0
        else:
            gamma = stationary_count_pgf(float(resets[i - 1]) / cfg.s, x)
        vals = (1.0 - gamma) * b.project([i]).values + gamma * d.project([i]).values
        out = tensor(out, Measure((i,), vals))
    return ProbabilityMeasure(out.sites, out.values)


def equilibration_time(cfg: SiteConfig, omega0: Measure, eps: float = 1e-4) -> float:
    """Horizon after which the state should sit within O(eps) of the
    long-time limit; used to pick the end time of convergence runs."""
    if eps <= 0 or eps >= 1:
        raise ValueError("eps must lie in (0, 1)")
    log_eps = math.log(1.0 / eps)
    rates = [cfg.rho_of(i) for i in cfg.crossover_sites]
    T = max((log_eps / r for r in rates if r > 0), default=0.0)
    f0 = fit_fraction(omega0, cfg.i_star)
    if cfg.s > 0.0 and 0.0 < f0 < 1.0:
        T = max(T, (log_eps + max(0.0, math.log((1.0 - f0) / f0))) / cfg.s)
    return T


# -- marginal dynamics ---------------------------------------------------------

def marginal_sre_solve(
    cfg: SiteConfig,
    omega0: Measure,
    subset: Iterable[int],
    settings: SolverSettings,
) -> Trajectory:
    """Integrate the dynamics of the marginal on a subset of sites.

    The subset must contain the selected site; crossover sites that cut the
    subset in the same place pool their rates.  The result matches the
    projection of the full solution onto the subset.
    """
    A = tuple(sorted(set(subset)))
    if cfg.i_star not in A:
        raise ValueError(
            "the marginal dynamics is closed only for subsets containing "
            f"the selected site {cfg.i_star}"
        )
    for a in A:
        cfg._check_site(a)
    if omega0.sites == cfg.sites:
        start = omega0.project(A)
    elif omega0.sites == A:
        start = omega0
    else:
        raise ValueError("initial measure must live on the full site set or on the subset")
    splits = []
    for i, rate in cfg.marginal_rates(A).items():
        if rate > 0.0:
            head, tail = cfg.head_tail(i)
            splits.append((rate, frozenset(head) & set(A), frozenset(tail) & set(A)))
    rhs = make_rhs(A, cfg.i_star, cfg.s, splits)
    return integrate_ode(cfg, start, settings, rhs=rhs, sites=A)
