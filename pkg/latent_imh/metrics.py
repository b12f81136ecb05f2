"""Sample-quality metrics, ground-truth references and cost-indexed metric series"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist

from latent_imh.constants import CSV_COLUMNS, DEFAULT_WARMUP, MMD_MAX_POINTS, NUTS_TARGET_ACCEPT, REFERENCE_RUNS
from latent_imh.exceptions import DimensionMismatchError, InsufficientSamplesError
from latent_imh.posteriors import gaussian_posterior, mixture_posterior, sample_gaussian_posterior
from latent_imh.priors import GaussianMixturePrior
from latent_imh.problems.base import ProblemInstance
from latent_imh.samplers.base import PosteriorTarget, SampleBatch
from latent_imh.samplers.nuts import run_nuts

logger = logging.getLogger(__name__)


def _as_samples(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] < 1:
        raise InsufficientSamplesError("Need at least one sample")
    return samples


def relative_mean_error(
    samples: np.ndarray, mu_true: np.ndarray, return_flag: bool = False
) -> Union[float, Tuple[float, bool]]:
    """
    ||mean(samples) - mu_true|| / ||mu_true||.

    When mu_true is zero the absolute error is returned and the flag is set.
    """
    samples = _as_samples(samples)
    mu_true = np.asarray(mu_true, dtype=float).ravel()
    if samples.shape[1] != mu_true.size:
        raise DimensionMismatchError("Reference mean", samples.shape[1], mu_true.size)
    err = float(np.linalg.norm(samples.mean(axis=0) - mu_true))
    norm = float(np.linalg.norm(mu_true))
    flagged = norm == 0.0
    if flagged:
        logger.warning("⚠️  Reference mean is zero; reporting the absolute mean error")
    else:
        err /= norm
    return (err, flagged) if return_flag else err


def squared_bias_second_moment(
    samples: np.ndarray, second_moment_true: np.ndarray, return_flag: bool = False
) -> Union[float, Tuple[float, bool]]:
    """
    Mean over coordinates of ((E_hat[x_j^2] - E[x_j^2]) / E[x_j^2])^2.

    Coordinates with zero true second moment are skipped and the flag is set.
    """
    samples = _as_samples(samples)
    truth = np.asarray(second_moment_true, dtype=float).ravel()
    if samples.shape[1] != truth.size:
        raise DimensionMismatchError("Reference second moment", samples.shape[1], truth.size)
    keep = truth != 0.0
    flagged = not np.all(keep)
    if flagged:
        logger.warning(f"⚠️  Skipping {int(np.sum(~keep))} coordinates with zero true second moment")
    if not np.any(keep):
        return (0.0, True) if return_flag else 0.0
    estimate = np.mean(samples**2, axis=0)
    value = float(np.mean(((estimate[keep] - truth[keep]) / truth[keep]) ** 2))
    return (value, flagged) if return_flag else value


def mmd2(X: np.ndarray, Y: np.ndarray, gamma: float, unbiased: bool = True) -> float:
    """Squared MMD with the RBF kernel exp(-gamma ||x - y||^2)"""
    X, Y = _as_samples(X), _as_samples(Y)
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatchError("MMD sample dimension", X.shape[1], Y.shape[1])
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    m, n = X.shape[0], Y.shape[0]
    K_xx = np.exp(-gamma * cdist(X, X, "sqeuclidean"))
    K_yy = np.exp(-gamma * cdist(Y, Y, "sqeuclidean"))
    K_xy = np.exp(-gamma * cdist(X, Y, "sqeuclidean"))
    if not unbiased:
        return float(K_xx.mean() + K_yy.mean() - 2.0 * K_xy.mean())
    if m < 2 or n < 2:
        raise InsufficientSamplesError(f"Unbiased MMD needs at least two samples per set, got {m} and {n}")
    term_x = (K_xx.sum() - np.trace(K_xx)) / (m * (m - 1))
    term_y = (K_yy.sum() - np.trace(K_yy)) / (n * (n - 1))
    return float(term_x + term_y - 2.0 * K_xy.mean())


def median_heuristic(Y: np.ndarray, max_points: int = MMD_MAX_POINTS, seed: int = 0) -> float:
    """gamma = 1 / median pairwise squared distance, on at most max_points seeded rows"""
    Y = _as_samples(Y)
    if Y.shape[0] < 2:
        raise InsufficientSamplesError("Median heuristic needs at least two samples")
    if Y.shape[0] > max_points:
        rows = np.sort(np.random.default_rng(seed).choice(Y.shape[0], size=max_points, replace=False))
        Y = Y[rows]
    median = float(np.median(pdist(Y, "sqeuclidean")))
    if median <= 0.0:
        raise InsufficientSamplesError("Median pairwise distance is zero")
    return 1.0 / median


def error_maps(
    samples: np.ndarray, truth_mean: np.ndarray, truth_var: np.ndarray, shape: Tuple[int, int]
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel |mean - truth| and |variance (ddof=1) - truth| on the image grid"""
    samples = _as_samples(samples)
    if samples.shape[1] != shape[0] * shape[1]:
        raise DimensionMismatchError("Sample dimension vs grid", shape[0] * shape[1], samples.shape[1])
    if samples.shape[0] < 2:
        raise InsufficientSamplesError("Variance map needs at least two samples")
    mean_map = np.abs(samples.mean(axis=0) - np.ravel(truth_mean)).reshape(shape)
    var_map = np.abs(samples.var(axis=0, ddof=1) - np.ravel(truth_var)).reshape(shape)
    return mean_map, var_map


class RunningMoments:
    """Welford accumulator of per-coordinate mean and centred sum of squares"""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    def update(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (x - self.mean)

    def update_batch(self, block: np.ndarray) -> None:
        """Merge a block of rows (Chan et al. pairwise update)"""
        block = _as_samples(block)
        n_b = block.shape[0]
        mean_b = block.mean(axis=0)
        m2_b = np.sum((block - mean_b) ** 2, axis=0)
        total = self.count + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / total)
        self._m2 = self._m2 + m2_b + delta**2 * (self.count * n_b / total)
        self.count = total

    def variance(self, ddof: int = 1) -> np.ndarray:
        if self.count <= ddof:
            raise InsufficientSamplesError(f"Variance with ddof={ddof} needs more than {ddof} samples")
        return self._m2 / (self.count - ddof)

    @property
    def second_moment(self) -> np.ndarray:
        return self._m2 / self.count + self.mean**2


def effective_sample_size(chain: np.ndarray) -> np.ndarray:
    """Per-coordinate ESS from FFT autocorrelations truncated by Geyer's initial positive sequence"""
    chain = _as_samples(chain)
    n = chain.shape[0]
    centred = chain - chain.mean(axis=0)
    spectrum = np.fft.rfft(centred, n=2 * n, axis=0)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), axis=0)[:n] / n
    ess = np.empty(chain.shape[1])
    for j in range(chain.shape[1]):
        if acov[0, j] <= 0.0:
            ess[j] = 1.0
            continue
        rho = acov[:, j] / acov[0, j]
        tau = -1.0
        for k in range(n // 2):
            pair = rho[2 * k] + rho[2 * k + 1]
            if pair <= 0.0:
                break
            tau += 2.0 * pair
        ess[j] = n / max(tau, 1e-12)
    return ess


@dataclass
class GroundTruth:
    """Reference posterior mean, second moment and samples"""
    mean: np.ndarray
    second_moment: np.ndarray
    samples: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return self.second_moment - self.mean**2


@dataclass
class MetricSeries:
    """Metrics of a chain prefix at each checkpoint, indexed by counted solves"""
    checkpoints: np.ndarray
    cost_forward: np.ndarray
    cost_inverse: np.ndarray
    acceptance_rate: np.ndarray
    rel_mean_err: np.ndarray
    sq_bias_2nd: np.ndarray
    mmd: np.ndarray

    def __len__(self) -> int:
        return self.checkpoints.size

    def rows(self) -> List[list]:
        """CSV rows in CSV_COLUMNS order"""
        columns = [
            self.checkpoints, self.cost_forward, self.cost_inverse,
            self.acceptance_rate, self.rel_mean_err, self.sq_bias_2nd, self.mmd,
        ]
        if len(columns) != len(CSV_COLUMNS):
            raise ValueError(f"MetricSeries has {len(columns)} columns, CSV layout has {len(CSV_COLUMNS)}")
        for name, col in zip(CSV_COLUMNS, columns):
            if len(col) != len(self):
                raise DimensionMismatchError(f"MetricSeries column '{name}'", len(self), len(col))
        return [[col[i] for col in columns] for i in range(len(self))]


def _thin(n: int, max_points: int) -> np.ndarray:
    """At most max_points evenly spaced row indices out of n"""
    if n <= max_points:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_points).round().astype(int))


def metric_series(
    batch: SampleBatch,
    checkpoints: Sequence[int],
    truth: GroundTruth,
    gamma: float,
    max_points: int = 1000,
) -> MetricSeries:
    """
    Evaluate every checkpoint t <= batch.n_steps on the prefix samples[:t].

    MMD uses at most max_points evenly spaced rows of the prefix and of the
    reference set; a prefix of one row falls back to the biased estimator.
    """
    cps = [int(t) for t in checkpoints if 1 <= t <= batch.n_steps]
    moments = RunningMoments(batch.dim)
    reference = truth.samples[_thin(truth.samples.shape[0], max_points)]
    accepted_cum = np.cumsum(batch.accepted)
    mean_flagged = bool(np.linalg.norm(truth.mean) == 0.0)
    if mean_flagged:
        logger.warning("⚠️  Reference mean is zero; rel_mean_err holds the absolute mean error")

    keep = truth.second_moment != 0.0
    second_true = truth.second_moment[keep]

    rel, bias, mmd = [], [], []
    done = 0
    for t in cps:
        moments.update_batch(batch.samples[done:t])
        done = t
        err = float(np.linalg.norm(moments.mean - truth.mean))
        rel.append(err if mean_flagged else err / np.linalg.norm(truth.mean))
        if second_true.size:
            bias.append(float(np.mean(((moments.second_moment[keep] - second_true) / second_true) ** 2)))
        else:
            bias.append(0.0)
        prefix = batch.samples[:t][_thin(t, max_points)]
        mmd.append(mmd2(prefix, reference, gamma, unbiased=prefix.shape[0] >= 2))

    idx = np.asarray(cps, dtype=int) - 1
    return MetricSeries(
        checkpoints=np.asarray(cps, dtype=int),
        cost_forward=batch.forward_solves[idx],
        cost_inverse=batch.inverse_solves[idx],
        acceptance_rate=accepted_cum[idx] / (idx + 1),
        rel_mean_err=np.asarray(rel),
        sq_bias_2nd=np.asarray(bias),
        mmd=np.asarray(mmd),
    )


def solves_to_reach(series: MetricSeries, threshold: float) -> Optional[int]:
    """Counted solves at the first checkpoint with rel_mean_err <= threshold, or None"""
    hits = np.flatnonzero(series.rel_mean_err <= threshold)
    if hits.size == 0:
        return None
    i = int(hits[0])
    return int(series.cost_forward[i] + series.cost_inverse[i])


def ground_truth(
    instance: ProblemInstance,
    draws: int,
    seed: int,
    cache_path: Optional[Path] = None,
    n_runs: int = REFERENCE_RUNS,
    n_warmup: int = DEFAULT_WARMUP,
) -> GroundTruth:
    """
    Reference posterior for metric evaluation.

    Gaussian priors use the closed form with conditioned prior draws, mixture
    priors the exact mixture posterior, anything else n_runs NUTS runs on the
    exact posterior whose samples are cached at cache_path. Reference solves go
    to a private counter and are never charged to a sampler.
    """
    problem, y = instance.problem, instance.y
    rng = np.random.default_rng(seed)
    if problem.prior.is_gaussian:
        post = gaussian_posterior(problem, y, "exact")
        samples = sample_gaussian_posterior(problem, y, "exact", rng, draws)
        return GroundTruth(mean=post.mean, second_moment=post.second_moment, samples=samples)
    if isinstance(problem.prior, GaussianMixturePrior):
        mix = mixture_posterior(problem, y, "exact")
        return GroundTruth(mean=mix.mean, second_moment=mix.second_moment, samples=mix.sample(rng, draws))

    if cache_path is not None and Path(cache_path).exists():
        logger.info(f"Loading cached reference samples from {cache_path}")
        with np.load(cache_path) as cached:
            samples = cached["samples"]
    else:
        reference_problem = problem.with_counter()
        target = PosteriorTarget(reference_problem, y, "exact")
        per_run = max(draws // n_runs, 1)
        runs = []
        for run in range(n_runs):
            run_rng = np.random.default_rng(np.random.SeedSequence([seed, run]))
            batch = run_nuts(target, n_warmup, per_run, NUTS_TARGET_ACCEPT, run_rng)
            runs.append(batch.samples)
            logger.debug(f"Reference NUTS run {run + 1}/{n_runs}: {batch.meta.get('divergences', 0)} divergences")
        samples = np.vstack(runs)
        if cache_path is not None:
            Path(cache_path).parent.mkdir(parents=True, exist_ok=True)
            np.savez(cache_path, samples=samples)
            logger.info(f"Cached {samples.shape[0]} reference samples at {cache_path}")
    return GroundTruth(mean=samples.mean(axis=0), second_moment=np.mean(samples**2, axis=0), samples=samples)
