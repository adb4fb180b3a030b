"""Finite-population Moran model whose empirical type frequencies converge
to the deterministic dynamics as the population grows.

Types are bit-encoded sequences (bit j-1 holds the letter at site j).
Reproduction arrows are laid down type-blindly: neutral arrows at rate 1/N
per ordered pair, selective arrows at rate s/N per ordered pair that only
fire when the would-be parent is fit, and recombination arrows at rate
rho_i/N^2 per ordered triple, the offspring taking the head letters from
the first parent and the tail letters from the second.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measure import ProbabilityMeasure, l1_distance
from .sites import SiteConfig
from .solvers import SolverSettings, integrate_ode
from .rng import spawn_stream

_EVENT_CHUNK = 1 << 16


@dataclass
class MoranState:
    """Population of N bit-encoded types plus bookkeeping."""

    types: np.ndarray
    clock: float = 0.0
    counters: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(self.types.size)


def sample_population(cfg: SiteConfig, N: int, omega0, rng) -> MoranState:
    """Independent draws from omega0."""
    if N < 1:
        raise ValueError("population size must be >= 1")
    if omega0.sites != cfg.sites:
        raise ValueError("initial measure must live on the full site set")
    p = np.clip(omega0.values, 0.0, None)
    p = p / p.sum()
    types = rng.choice(2 ** cfg.n, size=N, p=p).astype(np.int64)
    return MoranState(types=types)


def moran_simulate(
    cfg: SiteConfig,
    state: MoranState,
    t: float,
    rng,
    event_log: bool = False,
) -> MoranState:
    """Exact simulation over a window of length t.

    The total arrow rate is constant in the type configuration, so the
    event times form a Poisson stream; kinds and participants are drawn
    independently and the arrows applied in order.  Selective arrows are
    filtered on use: they copy only from a fit parent.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    N = state.size
    kinds = ["neutral", "selective"] + [f"recombination_{i}" for i in cfg.crossover_sites]
    rates = np.array(
        [float(N), cfg.s * N] + [cfg.rho_of(i) * N for i in cfg.crossover_sites]
    )
    total = float(rates.sum())
    types = state.types.copy()
    counters = dict(state.counters)
    log: list[tuple] = []
    fit_bit = cfg.i_star - 1
    masks = {
        i: (
            sum(1 << (a - 1) for a in cfg.head(i)),
            sum(1 << (a - 1) for a in cfg.tail(i)),
        )
        for i in cfg.crossover_sites
    }
    n_events = rng.poisson(total * t) if total > 0.0 and t > 0.0 else 0
    times = np.sort(rng.uniform(0.0, t, size=n_events)) if event_log else None
    done = 0
    while done < n_events:
        chunk = min(_EVENT_CHUNK, n_events - done)
        kind_idx = rng.choice(rates.size, size=chunk, p=rates / total)
        alpha = rng.integers(0, N, size=chunk)
        beta = rng.integers(0, N, size=chunk)
        gamma = rng.integers(0, N, size=chunk)
        for j in range(chunk):
            k = int(kind_idx[j])
            a, b, g = int(alpha[j]), int(beta[j]), int(gamma[j])
            kind = kinds[k]
            counters[kind] = counters.get(kind, 0) + 1
            if k == 0:
                types[a] = types[b]
            elif k == 1:
                parent = int(types[b])
                if (parent >> fit_bit) & 1 == 0:
                    types[a] = parent
            else:
                site = cfg.crossover_sites[k - 2]
                head_mask, tail_mask = masks[site]
                types[a] = (int(types[b]) & head_mask) | (int(types[g]) & tail_mask)
            if event_log:
                log.append((float(times[done + j]), kind, a, b, g))
        done += chunk
    out = MoranState(types=types, clock=state.clock + t, counters=counters)
    if event_log:
        out.counters["_event_log"] = log
    return out


def empirical_measure(cfg: SiteConfig, state: MoranState) -> ProbabilityMeasure:
    """Type frequencies as a probability measure on the full site set."""
    counts = np.bincount(state.types, minlength=2 ** cfg.n)
    return ProbabilityMeasure(cfg.sites, counts / state.size)


@dataclass
class LLNReport:
    """Distance to the deterministic solution across population sizes."""

    population_sizes: list[int]
    mean_distance: list[float]
    stderr: list[float]
    slope: float
    replicates: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "population_sizes": self.population_sizes,
            "mean_distance": self.mean_distance,
            "stderr": self.stderr,
            "slope": self.slope,
            "replicates": self.replicates,
            "seed": self.seed,
        }


def lln_convergence(
    cfg: SiteConfig,
    omega0,
    t: float,
    population_sizes,
    replicates: int,
    seed: int,
    solver_tol: float = 1e-9,
) -> LLNReport:
    """Mean l1 distance between the empirical measure at time t and the
    deterministic solution, per population size, with a fitted log-log
    slope."""
    if replicates < 2:
        raise ValueError("need at least two replicates")
    sizes = [int(N) for N in population_sizes]
    if any(N < 1 for N in sizes):
        raise ValueError("population sizes must be >= 1")
    settings = SolverSettings(
        t_max=t, grid_steps=max(16, int(8 * t) + 8), quad_tol=solver_tol
    )
    target = integrate_ode(cfg, omega0, settings).final_probability()
    dist = np.empty((len(sizes), replicates))
    for a, N in enumerate(sizes):
        for rep in range(replicates):
            rng = spawn_stream(seed, a, rep)
            pop = sample_population(cfg, N, omega0, rng)
            pop = moran_simulate(cfg, pop, t, rng)
            dist[a, rep] = l1_distance(empirical_measure(cfg, pop), target)
    mean = dist.mean(axis=1)
    stderr = dist.std(axis=1, ddof=1) / np.sqrt(replicates)
    slope = float(np.polyfit(np.log(sizes), np.log(mean), 1)[0])
    return LLNReport(
        population_sizes=sizes,
        mean_distance=[float(v) for v in mean],
        stderr=[float(v) for v in stderr],
        slope=slope,
        replicates=replicates,
        seed=seed,
    )
