"""Experiment harness: build the problem, run chains under a solve budget, write series and reports"""

import csv
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from latent_imh.analytics import expected_kl_closed_form, expected_kl_diagonal, expected_kl_prior, kl_general_bounds
from latent_imh.config import ExperimentConfig, SamplerConfig, Settings, config_hash
from latent_imh.constants import (
    CSV_COLUMNS,
    FLOAT_FORMAT,
    KL_REPORT_FILE,
    MALA_TARGET_ACCEPT,
    MANIFEST_FILE,
    MMD_MAX_POINTS,
    NUTS_TARGET_ACCEPT,
    SWEEP_COLUMNS,
    SWEEP_FILE,
)
from latent_imh.exceptions import ExperimentError, LatentImhError, UnsupportedVariantError
from latent_imh.metrics import GroundTruth, MetricSeries, ground_truth, median_heuristic, metric_series
from latent_imh.models import KlReport
from latent_imh.operators import spectral_error
from latent_imh.priors import StandardNormalPrior
from latent_imh.problems import ProblemInstance, build_problem
from latent_imh.samplers import PosteriorTarget, ProposalEngine, SampleBatch, run_imh, run_mala, run_nuts, run_two_stage

logger = logging.getLogger(__name__)

# Integer columns of the per-chain CSV
_INT_COLUMNS = {"step", "forward_solves", "inverse_solves"}


def chain_seed(seed: int, chain: int, sampler: str) -> np.random.SeedSequence:
    """Stream of one chain: SeedSequence([seed, chain, crc32(sampler name)])"""
    return np.random.SeedSequence([seed, chain, zlib.crc32(sampler.encode("utf-8"))])


def reference_seed(seed: int) -> int:
    """Seed of the ground-truth draws, disjoint from every chain stream"""
    return int(np.random.SeedSequence([seed, zlib.crc32(b"reference")]).generate_state(1)[0])


def _format(column: str, value: Any) -> str:
    if column in _INT_COLUMNS and float(value).is_integer():
        return str(int(value))
    return format(float(value), FLOAT_FORMAT)


def write_series_csv(path: Path, rows: List[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_format(c, v) for c, v in zip(CSV_COLUMNS, row)])


def average_series(series: List[MetricSeries]) -> List[list]:
    """Column-wise mean over chains on the checkpoints every chain reached"""
    n = min(len(s) for s in series)
    stacked = np.array([s.rows()[:n] for s in series], dtype=float)
    return stacked.mean(axis=0).tolist()


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def dump_samples(path: Path, samples: np.ndarray, seed: int, chain: int, digest: str) -> None:
    """Raw little-endian float64 rows plus a JSON sidecar"""
    np.ascontiguousarray(samples, dtype="<f8").tofile(path)
    sidecar = {"shape": list(samples.shape), "dtype": "<f8", "seed": seed, "chain": chain, "config_hash": digest}
    write_json(path.with_suffix(".json"), sidecar)


def kl_report(instance: ProblemInstance) -> Dict[str, Any]:
    """Expected KL of both proposals, relative to the prior-to-posterior KL, with bounds where they apply"""
    problem = instance.problem
    if not problem.prior.is_gaussian:
        raise UnsupportedVariantError(f"KL report needs a Gaussian prior, got {problem.prior.kind}")
    kl = expected_kl_closed_form(problem)
    prior_kl = expected_kl_prior(problem)
    report: Dict[str, Any] = {
        "D_a": kl.D_a,
        "D_l": kl.D_l,
        "D_prior": prior_kl,
        "relative_D_a": kl.D_a / prior_kl if prior_kl > 0 else None,
        "relative_D_l": kl.D_l / prior_kl if prior_kl > 0 else None,
        "spectral_error": spectral_error(problem.F, problem.F_tilde),
        "diagonal": None,
        "bounds": None,
    }
    if instance.diagonal is not None and isinstance(problem.prior, StandardNormalPrior):
        report["diagonal"] = expected_kl_diagonal(instance.diagonal).model_dump()
    if isinstance(problem.prior, StandardNormalPrior) and problem.is_symmetric():
        report["bounds"] = kl_general_bounds(problem).model_dump()
    return report


def _sweep_kl(instance: ProblemInstance) -> Optional[KlReport]:
    prior = instance.problem.prior
    if isinstance(prior, StandardNormalPrior) and instance.diagonal is not None:
        return expected_kl_diagonal(instance.diagonal)
    if prior.is_gaussian:
        return expected_kl_closed_form(instance.problem)
    return None


@dataclass
class ChainResult:
    sampler: str
    chain: int
    batch: SampleBatch
    seed_entropy: List[int]


class ExperimentRunner:
    """Runs the samplers of one ExperimentConfig and writes its output directory"""

    def __init__(self, config: ExperimentConfig, settings: Optional[Settings] = None):
        self.config = config
        self.settings = settings or Settings()
        self.output_dir = Path(config.output_dir)
        self.digest = config_hash(config)

    def _sampler_batch(
        self, instance: ProblemInstance, spec: SamplerConfig, rng: np.random.Generator
    ) -> SampleBatch:
        """One chain of one sampler on a private solve counter"""
        cfg = self.config
        problem = instance.problem.with_counter()
        n_steps = cfg.horizon
        if spec.name in ("latent-imh", "approx-imh"):
            engine = ProposalEngine(
                kind=spec.name,
                inner=spec.inner,
                latent_mode=spec.latent_mode,
                inner_steps=spec.inner_steps,
                inner_warmup=spec.inner_warmup,
                target_accept=spec.target_accept or NUTS_TARGET_ACCEPT,
            )
            return run_imh(problem, instance.y, engine, n_steps, rng, solve_budget=cfg.solve_budget)
        if spec.name == "mala":
            return run_mala(
                PosteriorTarget(problem, instance.y, "exact"),
                n_steps,
                rng,
                step=spec.step,
                adapt=spec.adapt,
                n_warmup=spec.n_warmup,
                target_accept=spec.target_accept or MALA_TARGET_ACCEPT,
                counter=problem.counter,
                solve_budget=cfg.solve_budget,
            )
        if spec.name == "nuts":
            return run_nuts(
                PosteriorTarget(problem, instance.y, "exact"),
                spec.n_warmup,
                n_steps,
                spec.target_accept or NUTS_TARGET_ACCEPT,
                rng,
                counter=problem.counter,
                solve_budget=cfg.solve_budget,
            )
        first_stage = "approx-posterior" if spec.name == "two-stage-approx" else "latent-posterior"
        return run_two_stage(
            problem,
            instance.y,
            first_stage,
            n_steps,
            rng,
            step=spec.step,
            adapt=spec.adapt,
            n_warmup=spec.n_warmup,
            target_accept=spec.target_accept or MALA_TARGET_ACCEPT,
            solve_budget=cfg.solve_budget,
        )

    def _run_chain(self, instance: ProblemInstance, chain: int) -> List[ChainResult]:
        """Samplers run one after another within a chain"""
        results = []
        for spec in self.config.samplers:
            seq = chain_seed(self.config.seed, chain, spec.name)
            batch = self._sampler_batch(instance, spec, np.random.default_rng(seq))
            if batch.truncated:
                logger.warning(f"⚠️  {spec.name} chain {chain} truncated at {batch.n_steps} steps by the solve budget")
            logger.info(
                f"{spec.name} chain {chain}: {batch.n_steps} steps, acceptance {batch.acceptance_rate:.4f}, "
                f"solves {int(batch.forward_solves[-1]) if batch.n_steps else 0} forward / "
                f"{int(batch.inverse_solves[-1]) if batch.n_steps else 0} inverse"
            )
            results.append(ChainResult(spec.name, chain, batch, [int(v) for v in seq.entropy]))
        return results

    def run_chains(self, instance: ProblemInstance) -> Dict[str, List[ChainResult]]:
        """All chains, in parallel over settings.threads workers; results are ordered by chain"""
        instance.problem.prepare()
        workers = min(self.settings.threads, self.config.n_chains)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_chain = list(pool.map(lambda k: self._run_chain(instance, k), range(self.config.n_chains)))
        by_sampler: Dict[str, List[ChainResult]] = {s.name: [] for s in self.config.samplers}
        for chain_results in per_chain:
            for result in chain_results:
                by_sampler[result.sampler].append(result)
        return by_sampler

    def _reference(self, instance: ProblemInstance) -> GroundTruth:
        cache = self.output_dir / f"reference_{self.digest[:16]}.npz"
        return ground_truth(instance, self.config.reference_draws, reference_seed(self.config.seed), cache_path=cache)

    def run(self) -> Dict[str, Any]:
        """Run the experiment and return the manifest written to the output directory"""
        cfg = self.config
        logger.info(f"🚀 Experiment {self.digest[:12]} started at {datetime.now().isoformat()}")
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            if cfg.sweep is not None:
                manifest = self._run_sweep()
            else:
                manifest = self._run_single()
            write_json(self.output_dir / MANIFEST_FILE, manifest)
        except LatentImhError:
            raise
        except Exception as e:
            logger.error(f"Experiment failed: {e}")
            raise ExperimentError(f"Failed to run experiment: {e}", e) from e
        logger.info(f"✅ Experiment finished; outputs in {self.output_dir}")
        return manifest

    def _run_single(self) -> Dict[str, Any]:
        cfg = self.config
        instance = build_problem(cfg.problem, cfg.seed)
        chains = self.run_chains(instance)
        truth = self._reference(instance)
        gamma = median_heuristic(truth.samples, MMD_MAX_POINTS, seed=cfg.seed)
        checkpoints = cfg.checkpoint_schedule()

        samplers: Dict[str, Any] = {}
        for name, results in chains.items():
            series = []
            for result in results:
                s = metric_series(result.batch, checkpoints, truth, gamma, cfg.mmd_max_points)
                write_series_csv(self.output_dir / f"{name}_chain{result.chain}.csv", s.rows())
                if cfg.dump_samples:
                    dump_samples(
                        self.output_dir / f"{name}_chain{result.chain}.f64",
                        result.batch.samples,
                        cfg.seed,
                        result.chain,
                        self.digest,
                    )
                series.append(s)
            write_series_csv(self.output_dir / f"{name}_mean.csv", average_series(series))
            samplers[name] = {
                "acceptance_rate": float(np.mean([r.batch.acceptance_rate for r in results])),
                "truncated": any(r.batch.truncated for r in results),
                "chains": [self._chain_entry(r) for r in results],
            }

        kl = kl_report(instance) if instance.problem.prior.is_gaussian else None
        return {
            "schema_version": cfg.schema_version,
            "config_hash": self.digest,
            "seed": cfg.seed,
            "problem": instance.info,
            "spectral_error": spectral_error(instance.problem.F, instance.problem.F_tilde),
            "checkpoints": checkpoints,
            "reference": {"draws": int(truth.samples.shape[0]), "gamma": gamma},
            "samplers": samplers,
            "kl": kl,
        }

    @staticmethod
    def _chain_entry(result: ChainResult) -> Dict[str, Any]:
        batch = result.batch
        return {
            "chain": result.chain,
            "seed_entropy": result.seed_entropy,
            "n_steps": batch.n_steps,
            "acceptance_rate": batch.acceptance_rate,
            "forward_solves": int(batch.forward_solves[-1]) if batch.n_steps else 0,
            "inverse_solves": int(batch.inverse_solves[-1]) if batch.n_steps else 0,
            "truncated": batch.truncated,
            "meta": batch.meta,
        }

    def _run_sweep(self) -> Dict[str, Any]:
        """One row per grid value and sampler: mean acceptance over chains and the expected KL"""
        cfg = self.config
        sweep = cfg.sweep
        rows = []
        points = []
        for value in sweep.values:
            problem_cfg = sweep.apply(cfg.problem, value)
            instance = build_problem(problem_cfg, cfg.seed)
            chains = self.run_chains(instance)
            kl = _sweep_kl(instance)
            point = {"value": value, "spectral_error": instance.info.get("spectral_error"), "samplers": {}}
            for name, results in chains.items():
                rate = float(np.mean([r.batch.acceptance_rate for r in results]))
                rows.append([name, sweep.parameter, value, rate, kl.D_a if kl else None, kl.D_l if kl else None])
                point["samplers"][name] = {
                    "acceptance_rate": rate,
                    "truncated": any(r.batch.truncated for r in results),
                }
            points.append(point)
            logger.info(f"Sweep {sweep.parameter}={value:g} done")

        with open(self.output_dir / SWEEP_FILE, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SWEEP_COLUMNS)
            for name, parameter, value, rate, D_a, D_l in rows:
                writer.writerow([
                    name,
                    parameter,
                    format(float(value), FLOAT_FORMAT),
                    format(rate, FLOAT_FORMAT),
                    "" if D_a is None else format(D_a, FLOAT_FORMAT),
                    "" if D_l is None else format(D_l, FLOAT_FORMAT),
                ])
        return {
            "schema_version": cfg.schema_version,
            "config_hash": self.digest,
            "seed": cfg.seed,
            "sweep": {"parameter": sweep.parameter, "points": points},
        }

    def report_kl(self) -> Dict[str, Any]:
        """Write kl_report.json for the configured problem and return it"""
        try:
            instance = build_problem(self.config.problem, self.config.seed)
            report = kl_report(instance)
            self.output_dir.mkdir(parents=True, exist_ok=True)
            write_json(self.output_dir / KL_REPORT_FILE, report)
        except LatentImhError:
            raise
        except Exception as e:
            logger.error(f"KL report failed: {e}")
            raise ExperimentError(f"Failed to compute KL report: {e}", e) from e
        logger.info(f"KL report: D_a={report['D_a']:.6g}, D_l={report['D_l']:.6g}")
        return report


def run_experiment(config: ExperimentConfig, settings: Optional[Settings] = None) -> Dict[str, Any]:
    return ExperimentRunner(config, settings).run()


def report_kl(config: ExperimentConfig) -> Dict[str, Any]:
    return ExperimentRunner(config).report_kl()
