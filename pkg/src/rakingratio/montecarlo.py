"""Monte Carlo checks of the raked empirical process against its Gaussian limit.

Replication ``r`` draws from its own generator seeded by ``(seed, r)``, so
results do not depend on how replications are split between threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .gaussian_limit import GaussianLimitModel, sample_gn
from .measures import CellGrid, MarginalTarget, Partition, PiecewiseFunction, WeightedSample
from .raking import EmptyMarginError, RakingState, rake_step, rake_until_converged


def replication_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))


def _run_parallel(work, reps: int, threads: int) -> list:
    """Apply ``work(r)`` to r = 0..reps-1, returning results in replication order."""
    threads = max(1, int(threads))
    if threads == 1:
        return [work(r) for r in range(reps)]
    bounds = np.linspace(0, reps, threads + 1).astype(int)

    def chunk(i):
        return [work(r) for r in range(bounds[i], bounds[i + 1])]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(chunk, range(threads)))
    return [x for part in parts for x in part]


@dataclass
class DiscreteGenerator:
    """Points drawn from a cell grid; function values add bounded within-cell noise.

    Each noise source contributes ``loading * eps`` with eps = +-1 equally
    likely, which has the declared mean and variance and keeps values bounded.
    """

    grid: CellGrid
    functions: Sequence[PiecewiseFunction]

    def draw(self, rng: np.random.Generator, n: int) -> WeightedSample:
        cells = rng.choice(self.grid.n_cells, size=n, p=self.grid.p)
        sources = sorted({s for f in self.functions for s in f.noise})
        eps = {s: rng.integers(0, 2, size=n) * 2.0 - 1.0 for s in sources}
        values = {}
        for f in self.functions:
            v = f.mean[cells].copy()
            for s, load in f.noise.items():
                v += load[cells] * eps[s]
            values[f.name] = v
        return WeightedSample(self.grid.partitions, self.grid.codes[cells], values=values)


A3_COVARIANCE = ((3.0, -1.0), (-1.0, 1.0))
A3_THRESHOLDS = tuple(np.arange(-2.0, 2.0 + 1e-9, 0.5))


@dataclass
class BivariateNormalGenerator:
    """Centered Gaussian pair with margins known through CDF values at thresholds."""

    cov: tuple = A3_COVARIANCE
    thresholds: tuple = A3_THRESHOLDS

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        self._chol = np.linalg.cholesky(self.cov)
        m = len(self.thresholds) + 1
        self.partitions = (
            Partition("X", tuple(f"X{j}" for j in range(m))),
            Partition("Y", tuple(f"Y{j}" for j in range(m))),
        )

    def cdf(self, axis: int, t) -> np.ndarray:
        return ndtr(np.asarray(t, dtype=float) / np.sqrt(self.cov[axis, axis]))

    def target(self, axis: int) -> MarginalTarget:
        cuts = np.concatenate([[0.0], self.cdf(axis, self.thresholds), [1.0]])
        return MarginalTarget(self.partitions[axis], np.diff(cuts))

    def draw(self, rng: np.random.Generator, n: int) -> WeightedSample:
        xy = rng.standard_normal((n, 2)) @ self._chol.T
        # Cells are ]t_{j-1}, t_j], matching F(t) = P(Z <= t).
        codes = np.searchsorted(self.thresholds, xy, side="left")
        return WeightedSample(self.partitions, codes, values={"X": xy[:, 0], "Y": xy[:, 1]})


@dataclass
class ExperimentConfig:
    """Monte Carlo setup.

    ``schedule`` lists partitions (index or name) raked at steps 1..N; with a
    discrete generator the targets are the grid's true marginals.
    """

    generator: DiscreteGenerator | BivariateNormalGenerator
    n: int
    reps: int
    schedule: Sequence = ()
    functions: Sequence[PiecewiseFunction] = ()
    seed: int = 0
    threads: int = 1
    steps: int = 10

    def __post_init__(self):
        if self.n < 1 or self.reps < 1:
            raise ValueError("n and reps must be at least 1")

    def targets(self) -> list[MarginalTarget]:
        grid = self.generator.grid
        return [grid.target(k) for k in self.schedule]


@dataclass
class ExperimentReport:
    n: int
    reps: int
    dropped: int
    functions: list[str]
    values: np.ndarray          # (kept reps, N+1, m): P_n^(N)(f)
    true_means: np.ndarray      # (m,)
    theory: np.ndarray          # (N+1, m, m): Cov(G^(N))
    max_margin_error: float
    drop_bound: float
    seed: int = 0
    threads: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def kept(self) -> int:
        return self.values.shape[0]

    @property
    def scaled(self) -> np.ndarray:
        """sqrt(n) (P_n^(N)(f) - P(f)) for each kept replication."""
        return np.sqrt(self.n) * (self.values - self.true_means)

    @property
    def bias(self) -> np.ndarray:
        return self.scaled.mean(axis=0)

    @property
    def bias_se(self) -> np.ndarray:
        return self.scaled.std(axis=0, ddof=1) / np.sqrt(self.kept)

    @property
    def ncov(self) -> np.ndarray:
        """n Cov(P_n^(N)(f), P_n^(N)(g)), shape (N+1, m, m)."""
        z = self.scaled
        return np.array([np.cov(z[:, N, :], rowvar=False).reshape(z.shape[2], z.shape[2])
                         for N in range(z.shape[1])])

    @property
    def nvar_se(self) -> np.ndarray:
        """Standard error of the diagonal of ``ncov``."""
        z = self.scaled - self.scaled.mean(axis=0)
        return (z**2).std(axis=0, ddof=1) / np.sqrt(self.kept)

    def relative_deviation(self) -> np.ndarray:
        """Per N, relative Frobenius distance between ``ncov`` and theory."""
        return np.array([
            np.linalg.norm(c - t) / np.linalg.norm(t) for c, t in zip(self.ncov, self.theory)
        ])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "reps": self.reps,
            "kept": self.kept,
            "dropped": self.dropped,
            "drop_bound": self.drop_bound,
            "seed": self.seed,
            "threads": self.threads,
            "functions": self.functions,
            "true_means": self.true_means.tolist(),
            "bias": self.bias.tolist(),
            "bias_se": self.bias_se.tolist(),
            "ncov": self.ncov.tolist(),
            "nvar_se": self.nvar_se.tolist(),
            "theory_cov": self.theory.tolist(),
            "relative_deviation": self.relative_deviation().tolist(),
            "max_margin_error": self.max_margin_error,
            **self.extra,
        }


def _rake_sample(sample: WeightedSample, targets, names):
    """Raked means at N = 0..len(targets) and the final margin error."""
    state = RakingState(sample)
    out = [[sample.mean(f) for f in names]]
    err = 0.0
    for t in targets:
        state = rake_step(state, t)
        out.append([state.measure.mean(f) for f in names])
    if targets:
        err = float(np.abs(state.measure.marginal(targets[-1].partition) - targets[-1].probs).max())
    return np.array(out), err


def drop_probability_bound(targets: Sequence[MarginalTarget], n: int) -> float:
    """S_N (1 - p_min)^n, the bound on the chance that some raked cell is empty."""
    if not targets:
        return 0.0
    s = sum(t.partition.size for t in targets)
    p_min = min(t.p_min for t in targets)
    return float(s * (1 - p_min) ** n)


def run_raking_experiment(config: ExperimentConfig) -> ExperimentReport:
    gen = config.generator
    if not isinstance(gen, DiscreteGenerator):
        raise TypeError("run_raking_experiment needs a discrete generator")
    targets = config.targets()
    names = [f.name for f in config.functions]

    def work(r):
        sample = gen.draw(replication_rng(config.seed, r), config.n)
        try:
            return _rake_sample(sample, targets, names)
        except EmptyMarginError:
            return None

    results = _run_parallel(work, config.reps, config.threads)
    kept = [res for res in results if res is not None]
    if not kept:
        raise RuntimeError("every replication hit an empty margin")
    values = np.array([v for v, _ in kept])
    model = GaussianLimitModel(gen.grid, config.schedule)
    theory = np.array([model.covariance_matrix(config.functions, N)
                       for N in range(len(targets) + 1)])
    return ExperimentReport(
        n=config.n,
        reps=config.reps,
        dropped=len(results) - len(kept),
        functions=names,
        values=values,
        true_means=np.array([gen.grid.p @ f.mean for f in config.functions]),
        theory=theory,
        max_margin_error=max(e for _, e in kept),
        drop_bound=drop_probability_bound(targets, config.n),
        seed=config.seed,
        threads=config.threads,
    )


def berry_esseen_check(config: ExperimentConfig, f, N=None, report: ExperimentReport | None = None) -> float:
    """KS distance between standardised sqrt(n)(P_n^(N)(f) - P(f)) and N(0, 1)."""
    N = len(config.schedule) if N is None else int(N)
    name = f.name if isinstance(f, PiecewiseFunction) else str(f)
    func = next(g for g in config.functions if g.name == name)
    model = GaussianLimitModel(config.generator.grid, config.schedule)
    var = model.covariance(func, func, N)
    if var <= 1e-12:
        raise ValueError(
            f"V(G^({N})({name})) = {var:.3g}: the function is pinned by the margins"
        )
    report = report or run_raking_experiment(config)
    z = report.scaled[:, N, report.functions.index(name)] / np.sqrt(var)
    return float(stats.kstest(z, "norm").statistic)


def _ecdf_errors(z, w, cdf):
    """(d, |F_n - F| at each sample point in original order) for one coordinate."""
    order = np.argsort(z, kind="stable")
    zs = z[order]
    err_sorted = np.abs(np.cumsum(w[order]) - cdf(zs))
    d = float(np.sum(np.diff(zs) * err_sorted[1:]))
    err = np.empty_like(err_sorted)
    err[order] = err_sorted
    return d, err


@dataclass
class EcdfReport:
    n: int
    reps: int
    dropped: int
    steps: int
    D: dict          # {"X": {"0": .., "10": .., "inf": ..}, "Y": {...}}
    p: dict          # {"X": {"10": .., "inf": ..}, "Y": {...}}
    D_se: dict
    raw: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"n": self.n, "reps": self.reps, "dropped": self.dropped, "steps": self.steps,
                "D": self.D, "p": self.p, "D_se": self.D_se}


def ecdf_experiment(config: ExperimentConfig, inf_tol=1e-8, max_iters=10_000) -> EcdfReport:
    """Raked joint estimation of two distribution functions.

    Raking alternates X (odd steps) and Y (even steps). With N = 2m, the X
    estimate is read after step 2m-1 and the Y estimate after step 2m; for
    N = inf the algorithm runs until both margins are within ``inf_tol``.
    For each coordinate Z the report gives the mean of the L1 proxy
    d = sum (Z_(i+1) - Z_(i)) |F_n(Z_(i+1)) - F(Z_(i+1))| and the mean
    share of sample points where the raked ECDF beats the plain one.
    """
    gen = config.generator
    if not isinstance(gen, BivariateNormalGenerator):
        raise TypeError("ecdf_experiment needs a bivariate normal generator")
    steps = int(config.steps)
    if steps < 2 or steps % 2:
        raise ValueError("steps must be a positive even number")
    tx, ty = gen.target(0), gen.target(1)
    cdfs = (lambda t: gen.cdf(0, t), lambda t: gen.cdf(1, t))

    def work(r):
        sample = gen.draw(replication_rng(config.seed, r), config.n)
        x, y = sample.values["X"], sample.values["Y"]
        try:
            state = RakingState(sample)
            hist = [state.measure.mass]
            for N in range(1, steps + 1):
                state = rake_step(state, tx if N % 2 else ty)
                hist.append(state.measure.mass)
            conv = rake_until_converged(state, [tx, ty], tol=inf_tol, max_iters=max_iters)
        except EmptyMarginError:
            return None
        w_inf = conv.state.measure.mass
        row = []
        for axis, z in enumerate((x, y)):
            w_n = hist[steps - 1] if axis == 0 else hist[steps]
            d0, e0 = _ecdf_errors(z, hist[0], cdfs[axis])
            dn, en = _ecdf_errors(z, w_n, cdfs[axis])
            di, ei = _ecdf_errors(z, w_inf, cdfs[axis])
            row += [d0, dn, di, float(np.mean(en < e0)), float(np.mean(ei < e0))]
        return row

    results = _run_parallel(work, config.reps, config.threads)
    kept = np.array([r for r in results if r is not None])
    if kept.size == 0:
        raise RuntimeError("every replication hit an empty margin")
    means = kept.mean(axis=0)
    ses = kept.std(axis=0, ddof=1) / np.sqrt(len(kept))
    D, p, D_se = {}, {}, {}
    for i, z in enumerate(("X", "Y")):
        o = 5 * i
        D[z] = {"0": means[o], str(steps): means[o + 1], "inf": means[o + 2]}
        D_se[z] = {"0": ses[o], str(steps): ses[o + 1], "inf": ses[o + 2]}
        p[z] = {str(steps): means[o + 3], "inf": means[o + 4]}
    return EcdfReport(config.n, config.reps, len(results) - len(kept), steps,
                      {k: {a: float(b) for a, b in v.items()} for k, v in D.items()},
                      {k: {a: float(b) for a, b in v.items()} for k, v in p.items()},
                      {k: {a: float(b) for a, b in v.items()} for k, v in D_se.items()},
                      raw=kept)


def relative_frobenius(estimate, reference) -> float:
    return float(np.linalg.norm(np.asarray(estimate) - reference) / np.linalg.norm(reference))


def sample_vs_theory(config: ExperimentConfig, N=None, draws=100_000,
                     report: ExperimentReport | None = None) -> dict:
    """Compare sample_gn draws and raked replications with the closed-form covariance."""
    N = len(config.schedule) if N is None else int(N)
    grid = config.generator.grid
    theory = GaussianLimitModel(grid, config.schedule).covariance_matrix(config.functions, N)
    g = sample_gn(grid, config.schedule, config.functions, N, draws, seed=config.seed)
    report = report or run_raking_experiment(config)
    return {
        "N": N,
        "theory": theory,
        "sample_gn_cov": np.atleast_2d(np.cov(g, rowvar=False)),
        "raking_ncov": report.ncov[N],
        "deviation_sample_gn": relative_frobenius(np.cov(g, rowvar=False), theory),
        "deviation_raking": relative_frobenius(report.ncov[N], theory),
    }
