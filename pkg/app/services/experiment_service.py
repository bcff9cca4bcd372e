"""
Servicio de experimentos: configuración, despacho y archivos de resultados
"""
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import yaml
from pydantic import ValidationError
from sqlalchemy.orm import Session

from app.config import settings
from app.schemas.config import ExperimentConfig, ExperimentKind, ModelFamily
from app.schemas.manifest import RunManifest, Verdict, Violation
from app.schemas.stability import StabilityReport, StabilityRequest
from app.services.ekf_service import EkfService, EkfState
from app.services.ensemble_service import EnsembleService
from app.services.mckean_service import McKeanService, McKeanState
from app.services.metrics_service import MetricsService
from app.services.model_service import (
    CubicPotentialSpec, FilteringProblem, ModelService, PairPotential,
    QuadraticPotentialSpec, SensorModel, SitePotential,
)
from app.services.registry_service import RunRegistryService
from app.services.stability_service import StabilityService
from app.utils.calculations import psd_sqrt, upper_triangle, upper_triangle_labels
from app.utils.exceptions import BucyLabError, ConfigError, NumericalBlowUp
from app.utils.exports import matrix_rows, write_csv, write_json
from app.utils.rng import StepNoise, StreamFactory

logger = logging.getLogger(__name__)


@dataclass
class RunContext:
    """Entradas inmutables de una corrida y archivos emitidos"""

    config: ExperimentConfig
    problem: FilteringProblem
    streams: StreamFactory
    output_dir: Path
    workers: int
    files: List[str] = field(default_factory=list)

    @property
    def dt(self) -> float:
        return self.config.numerics.dt

    @property
    def T(self) -> float:
        return self.config.numerics.T

    @property
    def study_times(self) -> List[float]:
        return list(self.config.study.times) or [self.T]

    def index(self, t: float) -> int:
        return int(round(t / self.dt))

    def seeds(self, count: int) -> List[int]:
        return [self.streams.for_run(i).fingerprint() for i in range(count)]

    def csv(self, name: str, header: Sequence[str], rows) -> None:
        write_csv(self.output_dir / name, header, rows)
        self.files.append(name)

    def json(self, name: str, payload: Any) -> None:
        write_json(self.output_dir / name, payload)
        self.files.append(name)

    def text(self, name: str, content: str) -> None:
        path = self.output_dir / name
        path.write_text(content)
        self.files.append(name)


@dataclass
class ExperimentOutcome:
    verdicts: List[Verdict] = field(default_factory=list)
    blow_up: bool = False


def _verdict(name: str, statistic: float, bound: float, passed: bool, seeds: List[int],
             upper: bool = True, **details) -> Verdict:
    """margin > 0 cuando la estadística queda del lado correcto de la cota"""
    margin = bound - statistic if upper else statistic - bound
    return Verdict(name=name, statistic=float(statistic), bound=float(bound),
                   margin=float(margin),
                   passed=bool(passed), seeds=seeds, details=details)


class ExperimentService:
    """Servicio para validar y ejecutar experimentos"""

    # ------------------------------------------------------------------
    # Configuración
    # ------------------------------------------------------------------

    @staticmethod
    def parse_config(raw: Dict[str, Any]) -> ExperimentConfig:
        """Validar un documento ya cargado"""
        if not isinstance(raw, dict):
            raise ConfigError("experiment document must be a mapping")
        try:
            return ExperimentConfig.model_validate(raw)
        except ValidationError as exc:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
            )
            raise ConfigError(problems) from exc

    @staticmethod
    def load_document(path: Union[str, Path]) -> Dict[str, Any]:
        """Leer YAML o JSON"""
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        try:
            if path.suffix.lower() == ".json":
                return json.loads(text)
            return yaml.safe_load(text)
        except (yaml.YAMLError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc

    @staticmethod
    def load_config(path: Union[str, Path]) -> ExperimentConfig:
        return ExperimentService.parse_config(ExperimentService.load_document(path))

    @staticmethod
    def config_hash(config: ExperimentConfig) -> str:
        """SHA-256 del documento canónico (sin output_dir)"""
        payload = config.model_dump(mode="json", exclude={"output_dir"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @staticmethod
    def build_problem(config: ExperimentConfig) -> FilteringProblem:
        """Construir señal, sensor y ley inicial desde el documento"""
        block = config.model
        dim = block.dim
        if block.family == ModelFamily.QUADRATIC:
            Q1 = np.asarray(block.Q1 if block.Q1 is not None else np.eye(dim or 1), dtype=float)
            signal = ModelService.build_quadratic_langevin(QuadraticPotentialSpec(
                Q1=Q1, q=block.q, beta=block.beta, sigma1=block.sigma1))
        elif block.family == ModelFamily.CUBIC:
            r1 = dim or (len(block.Q1) if block.Q1 is not None else 1)
            signal = ModelService.build_cubic_langevin(CubicPotentialSpec(
                Q1=np.asarray(block.Q1 if block.Q1 is not None else np.eye(r1), dtype=float),
                Q2=np.asarray(block.Q2 if block.Q2 is not None else np.eye(r1), dtype=float),
                q=block.q, beta=block.beta, sigma1=block.sigma1))
        elif block.family == ModelFamily.INTERACTING:
            r1 = dim or 2
            signal = ModelService.build_interacting_potential(
                block.u1, block.u2, block.kappa1, block.kappa2, r1,
                SitePotential(u=block.u1, kappa=block.kappa1),
                PairPotential(u=block.u2, kappa=block.kappa2, coupling=block.coupling),
                beta=block.beta, sigma1=block.sigma1)
        else:
            if block.A is None:
                raise ConfigError("model.A is required for the linear family")
            A = np.asarray(block.A, dtype=float)
            R1 = block.R1 if block.R1 is not None else block.sigma1 ** 2 * np.eye(A.shape[0])
            signal = ModelService.build_linear(A, R1)
        if block.lambda_A is not None:
            signal = replace(signal, lambda_A=block.lambda_A)
        r1 = signal.dim

        sensor_block = config.sensor
        if sensor_block.B is not None:
            B = np.atleast_2d(np.asarray(sensor_block.B, dtype=float))
            R2 = np.asarray(sensor_block.R2, dtype=float) if sensor_block.R2 is not None else np.eye(B.shape[0])
            sensor = SensorModel(B=B, R2=R2)
        else:
            sensor = ModelService.fully_observed_sensor(r1, sensor_block.b, sensor_block.sigma2)

        initial = config.initial
        x0 = np.zeros(r1) if initial.x0_mean is None else np.asarray(initial.x0_mean, dtype=float)
        P0 = initial.p0_scale * np.eye(r1) if initial.P0 is None else np.asarray(initial.P0, dtype=float)
        problem = FilteringProblem(signal=signal, sensor=sensor, x0_mean=x0, P0=P0)
        if sensor_block.identity_transform:
            problem = ModelService.identity_sensor_transform(problem)
        return problem

    @staticmethod
    def stability_report(request: StabilityRequest) -> StabilityReport:
        """Reporte directo desde los bloques de modelo, sensor y ley inicial"""
        config = ExperimentConfig(experiment=ExperimentKind.STABILITY_REPORT, model=request.model,
                                  sensor=request.sensor, initial=request.initial, seed=0)
        problem = ExperimentService.build_problem(config)
        return StabilityService.compute_report(problem, chi2_delta=request.chi2_delta)

    @staticmethod
    def try_report(problem: FilteringProblem) -> Optional[StabilityReport]:
        """Reporte de estabilidad, o None si λ_∂A <= 0"""
        if problem.signal.lambda_dA <= 0:
            return None
        return StabilityService.compute_report(problem)

    @staticmethod
    def validate(config: Union[ExperimentConfig, Dict[str, Any]]) -> List[Violation]:
        """
        Diagnósticos estructurales y de condiciones

        Errores: documento o modelo inválido. Advertencias: condición (S),
        condición técnica de estabilidad y premisa de traza.
        """
        violations: List[Violation] = []
        if not isinstance(config, ExperimentConfig):
            try:
                config = ExperimentService.parse_config(config)
            except ConfigError as exc:
                return [Violation(level="error", message=str(exc))]
        try:
            problem = ExperimentService.build_problem(config)
        except BucyLabError as exc:
            return [Violation(level="error", message=str(exc))]

        diag = ModelService.effective_S(problem.sensor)
        if not diag.is_condition_S:
            violations.append(Violation(level="warning",
                                        message=f"condition (S) fails: ρ(S)={diag.rho:g}"))
        report = ExperimentService.try_report(problem)
        if report is None:
            violations.append(Violation(level="warning",
                                        message="lambda_dA <= 0: stability ratios are undefined"))
        else:
            if not report.certified:
                violations.append(Violation(level="warning", message="signal constants are not certified"))
            if report.observable and not report.cond_20:
                violations.append(Violation(level="warning", message="stability condition cond_20 fails"))
            if report.trace_cond_ok is False:
                trP0 = float(np.trace(problem.P0))
                violations.append(Violation(
                    level="warning",
                    message=(f"trace premise fails: tr(P0)^2 = {trP0 ** 2:g} > "
                             f"(λ_S/λ_R)[1/2 + 1/(λ_Rλ_S)] = {report.trace_cond_rhs:g}"),
                ))
        small = [n for n in config.ensemble.N if n < problem.r1]
        if small and config.experiment not in (ExperimentKind.STABILITY_REPORT, ExperimentKind.EKF_RUN):
            violations.append(Violation(level="warning",
                                        message=f"N={small} below r1={problem.r1}: p_t is rank deficient"))
        return violations

    @staticmethod
    def resolve_output_dir(config: ExperimentConfig, override: Optional[str] = None) -> Path:
        """--output-dir > OUTPUT_DIR (env/.env) > documento > ./runs"""
        if override:
            base = override
        elif "OUTPUT_DIR" in settings.model_fields_set:
            base = settings.OUTPUT_DIR
        elif config.output_dir:
            base = config.output_dir
        else:
            base = settings.OUTPUT_DIR
        return Path(base) / f"{config.experiment.value}-{ExperimentService.config_hash(config)[:12]}"

    # ------------------------------------------------------------------
    # Ejecución
    # ------------------------------------------------------------------

    @staticmethod
    def run(config: ExperimentConfig, output_dir: Optional[str] = None, seed: Optional[int] = None,
            check: bool = False, workers: Optional[int] = None,
            db: Optional[Session] = None) -> RunManifest:
        """
        Ejecutar un experimento

        El manifiesto se escribe antes que los resultados y se actualiza al final.
        """
        if seed is not None:
            config = config.model_copy(update={"seed": seed})
        problem = ExperimentService.build_problem(config)
        run_dir = ExperimentService.resolve_output_dir(config, output_dir)
        try:
            run_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise BucyLabError(f"cannot create output directory {run_dir}: {exc}") from exc

        config_hash = ExperimentService.config_hash(config)
        streams = StreamFactory(config.seed)
        ctx = RunContext(config=config, problem=problem, streams=streams, output_dir=run_dir,
                         workers=workers or settings.MAX_WORKERS)
        manifest = RunManifest(
            run_key=f"{config_hash[:16]}-{config.seed}",
            experiment=config.experiment.value,
            seed=config.seed,
            config_hash=config_hash,
            code_version=settings.VERSION,
            per_run_seeds=ctx.seeds(ExperimentService._run_count(config)),
            output_dir=str(run_dir),
            output_files=["manifest.json"],
            created_at=datetime.now(timezone.utc),
        )
        write_json(run_dir / "manifest.json", manifest.model_dump(mode="json"))
        write_json(run_dir / "config.json", config.model_dump(mode="json"))
        ctx.files.append("config.json")

        registry_run = RunRegistryService.register_run(db, manifest) if db is not None else None
        logger.info("Starting %s (hash=%s, seed=%d) in %s",
                    config.experiment.value, config_hash[:12], config.seed, run_dir)
        started = time.perf_counter()
        handler = ExperimentService._handlers()[config.experiment]
        try:
            outcome = handler(ctx)
        except Exception as exc:
            blown = isinstance(exc, NumericalBlowUp)
            manifest.status = "blow_up" if blown else "error"
            manifest.blow_up = blown
            logger.error("Run %s failed: %s", manifest.run_key, exc)
            manifest.output_files = ["manifest.json", *ctx.files]
            manifest.wall_clock_seconds = time.perf_counter() - started
            write_json(run_dir / "manifest.json", manifest.model_dump(mode="json"))
            if registry_run is not None:
                RunRegistryService.finish_run(db, registry_run.id, manifest)
            raise

        ctx.json("verdicts.json", [v.model_dump() for v in outcome.verdicts])
        manifest.blow_up = outcome.blow_up
        manifest.checks_passed = all(v.passed for v in outcome.verdicts)
        if outcome.blow_up:
            manifest.status = "blow_up"
        elif check and not manifest.checks_passed:
            manifest.status = "check_failed"
        else:
            manifest.status = "ok"
        manifest.output_files = ["manifest.json", *ctx.files]
        manifest.wall_clock_seconds = time.perf_counter() - started
        write_json(run_dir / "manifest.json", manifest.model_dump(mode="json"))
        if registry_run is not None:
            RunRegistryService.finish_run(db, registry_run.id, manifest)

        for verdict in outcome.verdicts:
            if not verdict.passed:
                logger.warning("Check %s failed: statistic=%g bound=%g",
                               verdict.name, verdict.statistic, verdict.bound)
        logger.info("Finished %s with status %s in %.2fs (%d files)", config.experiment.value,
                    manifest.status, manifest.wall_clock_seconds, len(manifest.output_files))
        return manifest

    @staticmethod
    def _run_count(config: ExperimentConfig) -> int:
        if config.experiment in (ExperimentKind.STABILITY_REPORT, ExperimentKind.MCKEAN_CONSISTENCY,
                                 ExperimentKind.FLUCTUATION_CHECK):
            return 1
        return config.ensemble.M

    @staticmethod
    def _handlers() -> Dict[ExperimentKind, Callable[[RunContext], ExperimentOutcome]]:
        return {
            ExperimentKind.STABILITY_REPORT: ExperimentService._stability_report,
            ExperimentKind.EKF_RUN: ExperimentService._ekf_run,
            ExperimentKind.ENKF_RUN: ExperimentService._enkf_run,
            ExperimentKind.MCKEAN_CONSISTENCY: ExperimentService._mckean_consistency,
            ExperimentKind.CONTRACTION_STUDY: ExperimentService._contraction_study,
            ExperimentKind.FLUCTUATION_CHECK: ExperimentService._fluctuation_check,
            ExperimentKind.CHAOS_STUDY: ExperimentService._chaos_study,
            ExperimentKind.CONCENTRATION_CHECK: ExperimentService._concentration_check,
            ExperimentKind.DIVERGENCE_PROBE: ExperimentService._divergence_probe,
        }

    @staticmethod
    def _map_runs(ctx: RunContext, fn: Callable[[int], Any], count: int) -> List[Any]:
        """Unidades independientes en el pool; resultados en orden de índice"""
        if ctx.workers <= 1 or count <= 1:
            return [fn(i) for i in range(count)]
        with ThreadPoolExecutor(max_workers=ctx.workers) as pool:
            return list(pool.map(fn, range(count)))

    # ------------------------------------------------------------------
    # Experimentos
    # ------------------------------------------------------------------

    @staticmethod
    def _stability_report(ctx: RunContext) -> ExperimentOutcome:
        report = StabilityService.compute_report(ctx.problem)
        ctx.json("stability_report.json", report.model_dump())
        ctx.text("stability_report.txt", StabilityService.report_table(report))
        return ExperimentOutcome()

    @staticmethod
    def _ekf_run(ctx: RunContext) -> ExperimentOutcome:
        problem = ctx.problem
        signal = problem.signal
        dt, T = ctx.dt, ctx.T
        theta = ctx.config.ensemble.theta
        report = ExperimentService.try_report(problem)
        runs = ctx.config.ensemble.M
        trR = signal.tr_R

        def unit(i: int) -> Dict[str, Any]:
            streams = ctx.streams.for_run(i)
            obs = ModelService.simulate_observations(problem, dt, T, streams.generator("truth"))
            traj = EkfService.run_ekf(problem, obs.dY, dt, theta=theta)
            trP = traj.trace_P
            result = {
                "trajectory": traj if i == 0 else None,
                "error": np.sum((obs.truth - traj.xhat) ** 2, axis=1),
                "trace": trP,
            }
            if signal.lambda_dA > 0:
                bound = (EkfService.trace_bound(traj.times, trP[0], trR, signal.lambda_dA)
                         + 5.0 * dt * (trR + signal.kappa_dA * trP ** 2))
                result["trace_excess"] = float(np.max(trP - bound))
            if report is not None:
                stat = StabilityService.gamma_functional(traj.times, obs.truth, traj.xhat, traj.P, report)
                minus_gamma = -stat.gamma[stat.premise]
                result["gamma_max"] = float(minus_gamma.max()) if minus_gamma.size else -math.inf
                result["gamma_violations"] = stat.violations
                result["premise_failed"] = stat.premise_failed
                result["inverse_exponential"] = 1.0 / stat.exponential
            return result

        results = ExperimentService._map_runs(ctx, unit, runs)
        traj = results[0]["trajectory"]
        r1 = problem.r1
        ctx.csv("ekf_trajectory.csv",
                ["t", *[f"xhat[{k}]" for k in range(r1)], *upper_triangle_labels("P", r1), "trP"],
                traj.csv_rows())

        error = np.mean([r["error"] for r in results], axis=0)
        trace = np.mean([r["trace"] for r in results], axis=0)
        columns = [error, trace]
        header = ["t", "mean_sq_error", "mean_trP"]
        if signal.lambda_dA > 0:
            columns.append(EkfService.trace_bound(traj.times, float(np.trace(problem.P0)), trR, signal.lambda_dA))
            header.append("trace_bound")
        if report is not None:
            inverse = np.mean([r["inverse_exponential"] for r in results], axis=0)
            columns.append(inverse)
            header.append("mean_inverse_exponential")
        ctx.csv("ekf_summary.csv", header, matrix_rows(traj.times, *columns))

        seeds = ctx.seeds(runs)
        verdicts = [_verdict("error_second_moment", float(np.max(error)), math.inf,
                             bool(np.all(np.isfinite(error))), seeds)]
        if signal.lambda_dA > 0:
            excess = max(r["trace_excess"] for r in results)
            verdicts.append(_verdict("trace_bound", excess, 0.0, excess <= 0.0, seeds))
        if report is not None:
            gamma_max = max(r["gamma_max"] for r in results)
            violations = sum(r["gamma_violations"] for r in results)
            verdicts.append(_verdict(
                "gamma_pathwise", gamma_max, report.Lambda_minus_Gamma, violations == 0, seeds,
                violations=violations, premise_failed=sum(r["premise_failed"] for r in results),
            ))
            for t in ctx.study_times:
                k = ctx.index(t)
                bound = 1.05 * math.exp(report.Lambda_minus_Gamma * traj.times[k])
                verdicts.append(_verdict(f"gamma_exponential_t={t:g}", float(inverse[k]), bound,
                                         inverse[k] <= bound, seeds))
        return ExperimentOutcome(verdicts=verdicts)

    @staticmethod
    def _enkf_run(ctx: RunContext) -> ExperimentOutcome:
        problem = ctx.problem
        dt, T = ctx.dt, ctx.T
        theta = ctx.config.ensemble.theta
        runs = ctx.config.ensemble.M
        r1 = problem.r1
        header = ["t", *[f"m[{k}]" for k in range(r1)], *upper_triangle_labels("p", r1),
                  "trp", "lambda_min_p", "xi", "blow_up"]

        def unit(i: int) -> Dict[int, Any]:
            streams = ctx.streams.for_run(i)
            obs = ModelService.simulate_observations(problem, dt, T, streams.generator("truth"))
            return {N: EnsembleService.run_enkf(problem, obs, N, streams.for_run(N), theta=theta)
                    for N in ctx.config.ensemble.N}

        results = ExperimentService._map_runs(ctx, unit, runs)
        seeds = ctx.seeds(runs)
        verdicts = []
        summary = []
        blow_up = False
        for N in ctx.config.ensemble.N:
            ctx.csv(f"enkf_N{N}.csv", header, results[0][N].csv_rows())
            ensemble_runs = [r[N] for r in results]
            blown = sum(run.blow_up for run in ensemble_runs)
            blow_up = blow_up or blown > 0
            scale = max(1.0, max(float(np.nanmax(np.abs(run.p))) for run in ensemble_runs))
            min_eig = min(float(np.nanmin(run.lambda_min_p)) for run in ensemble_runs)
            sup_xi = max(float(np.nanmax(run.xi)) for run in ensemble_runs)
            sup_trp = max(float(np.nanmax(run.trace_p)) for run in ensemble_runs)
            summary.append([N, sup_xi, sup_trp, min_eig, blown])
            verdicts.append(_verdict(f"p_psd_N={N}", min_eig, -1e-12 * scale,
                                     min_eig >= -1e-12 * scale, seeds, upper=False))
        ctx.csv("enkf_summary.csv", ["N", "sup_xi", "sup_trp", "min_lambda_min_p", "blow_ups"], summary)
        return ExperimentOutcome(verdicts=verdicts, blow_up=blow_up)

    @staticmethod
    def _mckean_consistency(ctx: RunContext) -> ExperimentOutcome:
        problem = ctx.problem
        M = ctx.config.ensemble.copies
        obs = ModelService.simulate_observations(problem, ctx.dt, ctx.T, ctx.streams.generator("truth"))
        result = McKeanService.run_copies(problem, obs, M, ctx.streams.generator("copies"),
                                          theta=ctx.config.ensemble.theta)
        r1 = problem.r1
        ekf = result.ekf
        header = ["t", *[f"mean[{k}]" for k in range(r1)], *[f"xhat[{k}]" for k in range(r1)],
                  *upper_triangle_labels("cov", r1), *upper_triangle_labels("P", r1)]
        ctx.csv("mckean_consistency.csv", header, matrix_rows(
            result.times, result.mean, ekf.xhat,
            np.array([upper_triangle(c) for c in result.cov]),
            np.array([upper_triangle(P) for P in ekf.P]),
        ))

        seeds = ctx.seeds(1)
        verdicts = []
        for t in ctx.study_times:
            k = ctx.index(t)
            P = ekf.P[k]
            mean_gap = float(np.linalg.norm(result.mean[k] - ekf.xhat[k]))
            mean_tol = 4.0 * math.sqrt(float(np.trace(P)) / M)
            cov_gap = float(np.linalg.norm(result.cov[k] - P))
            cov_tol = 4.0 * math.sqrt((float(np.sum(P * P)) + float(np.trace(P)) ** 2) / M)
            verdicts.append(_verdict(f"conditional_mean_t={t:g}", mean_gap, mean_tol, mean_gap <= mean_tol, seeds))
            verdicts.append(_verdict(f"conditional_cov_t={t:g}", cov_gap, cov_tol, cov_gap <= cov_tol, seeds))
        return ExperimentOutcome(verdicts=verdicts)

    @staticmethod
    def _contraction_study(ctx: RunContext) -> ExperimentOutcome:
        problem = ctx.problem
        study = ctx.config.study
        dt, T = ctx.dt, ctx.T
        lam = problem.signal.lambda_dA
        runs = ctx.config.ensemble.M
        K = study.paths
        r1 = problem.r1
        law_a = EkfService.initial_state(problem)
        if study.matched:
            law_b = law_a
        else:
            law_b = EkfState(xhat=problem.x0_mean + study.mean_shift * np.ones(r1),
                             P=study.p0_ratio * problem.P0, t=0.0)

        def unit(i: int):
            streams = ctx.streams.for_run(i)
            obs = ModelService.simulate_observations(problem, dt, T, streams.generator("truth"))
            rng = streams.generator("initial")
            x0_a = law_a.xhat[None, :] + rng.standard_normal((K, r1)) @ psd_sqrt(law_a.P).T
            x0_b = law_b.xhat[None, :] + rng.standard_normal((K, r1)) @ psd_sqrt(law_b.P).T
            return McKeanService.run_coupling(problem, obs, x0_a, x0_b, law_a, law_b, streams)

        results = ExperimentService._map_runs(ctx, unit, runs)
        times = results[0].times
        distances = np.concatenate([r.squared_distance for r in results], axis=1)
        mean_distance = distances.mean(axis=1)
        initial = distances[0]
        bound = np.exp(-lam * times)[:, None] * initial[None, :]
        slack = (1.0 + 10.0 * dt * times)[:, None]
        pathwise_ok = np.all(distances <= bound * slack + 1e-300, axis=1)
        ctx.csv("contraction.csv", ["t", "mean_sq_distance", "bound", "pass"],
                matrix_rows(times, mean_distance, bound.mean(axis=1), pathwise_ok))

        w_upper = {}
        for t in ctx.study_times:
            gaps = np.sqrt(distances[ctx.index(t)])
            w_upper[f"{t:g}"] = MetricsService.wasserstein_coupled_upper(gaps, np.zeros_like(gaps), delta=2.0)
        seeds = ctx.seeds(runs)
        verdicts = []
        if study.matched:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(bound > 0, distances / (bound * slack), 0.0)
            worst = float(np.max(ratio))
            verdicts.append(_verdict("matched_contraction", worst, 1.0, worst <= 1.0 + 1e-9, seeds))
        else:
            report = ExperimentService.try_report(problem)
            window = times >= ctx.config.numerics.t_burn
            fit = MetricsService.exponential_rate_fit(times[window], mean_distance[window])
            target = lam / 4.0
            if report is not None and report.lambda_hat_dA is not None:
                target = min(report.lambda_hat_dA, target)
            required = target * (1.0 - study.epsilon)
            verdicts.append(_verdict("mismatched_decay_rate", fit.rate, required, fit.rate >= required,
                                     seeds, upper=False, r_squared=fit.r_squared, stderr=fit.stderr))
        ctx.json("contraction.json", {"wasserstein2_coupled_upper": w_upper,
                                      "paths": int(distances.shape[1]), "matched": study.matched})
        return ExperimentOutcome(verdicts=verdicts)

    @staticmethod
    def _fluctuation_check(ctx: RunContext) -> ExperimentOutcome:
        problem = ctx.problem
        dt = ctx.dt
        N = ctx.config.ensemble.N[0]
        theta = ctx.config.ensemble.theta
        r1 = problem.r1
        S = problem.sensor.S
        R = problem.signal.R1
        inflation = theta * np.eye(r1)
        obs = ModelService.simulate_observations(problem, dt, ctx.T, ctx.streams.generator("truth"))
        state = EnsembleService.init_ensemble(problem, N, ctx.streams.generator("initial"))
        noise = StepNoise(ctx.streams, "particles", N, r1, problem.r2)
        n = obs.dY.shape[0]
        dMbar = np.empty((n, r1))
        dM = np.empty((n, r1, r1))
        Q = np.empty((n, r1, r1))
        p_pre = np.empty((n, r1, r1))
        for k in range(n):
            dW, dV = noise.draw(k, dt)
            post = EnsembleService.enkf_step(state, obs.dY[k], dt, dW, dV, problem, theta)
            dMbar[k], dM[k] = EnsembleService.fluctuation_increments(state, post, obs.dY[k], dt,
                                                                     problem, theta)
            gain_p = state.p + inflation
            Q[k] = R + gain_p @ S @ gain_p
            p_pre[k] = state.p
            state = post

        def bracket(k, l, k2, l2):
            return (Q[:, k, k2] * p_pre[:, l, l2] + Q[:, l, l2] * p_pre[:, k, k2]
                    + Q[:, l2, k] * p_pre[:, k2, l] + Q[:, l, k2] * p_pre[:, k, l2])

        reports = {}
        for k in range(r1):
            reports[f"Mbar({k})"] = MetricsService.qv_check(dMbar[:, k], Q[:, k, k], dt)
            for k2 in range(k + 1, r1):
                reports[f"Mbar({k}),Mbar({k2})"] = MetricsService.qv_check(
                    dMbar[:, k], Q[:, k, k], dt, dMbar[:, k2], Q[:, k2, k2], Q[:, k, k2])
        if N > 1:
            for k in range(r1):
                for l in range(k, r1):
                    b_kl = bracket(k, l, k, l)
                    reports[f"M({k},{l})"] = MetricsService.qv_check(dM[:, k, l], b_kl, dt)
                    for j in range(r1):
                        reports[f"M({k},{l}),Mbar({j})"] = MetricsService.qv_check(
                            dM[:, k, l], b_kl, dt, dMbar[:, j], Q[:, j, j], 0.0)

        seeds = ctx.seeds(1)
        verdicts = [_verdict(f"qv_{name}", abs(rep.z), rep.threshold, rep.passed, seeds,
                             realized=rep.realized, predicted=rep.predicted, z=rep.z)
                    for name, rep in reports.items()]
        z_scores = [rep.z for rep in reports.values()]
        ctx.json("fluctuation_check.json", {
            "N": N,
            "increments": n,
            "z_scores": {name: rep.z for name, rep in reports.items()},
            "ks_pvalue": MetricsService.ks_calibration(z_scores) if len(z_scores) >= 3 else None,
        })
        return ExperimentOutcome(verdicts=verdicts)

    @staticmethod
    def _chaos_study(ctx: RunContext) -> ExperimentOutcome:
        problem = ctx.problem
        dt, T = ctx.dt, ctx.T
        Ns = sorted(ctx.config.ensemble.N)
        theta = ctx.config.ensemble.theta
        runs = ctx.config.ensemble.M
        t_burn = ctx.config.numerics.t_burn
        t_particle = ctx.study_times[0]

        def unit(i: int):
            streams = ctx.streams.for_run(i)
            obs = ModelService.simulate_observations(problem, dt, T, streams.generator("truth"))
            return {N: EnsembleService.run_enkf(problem, obs, N, streams.for_run(N), theta=theta, zeta=True)
                    for N in Ns}

        results = ExperimentService._map_runs(ctx, unit, runs)
        blow_up = any(r[N].blow_up for r in results for N in Ns)
        seeds = ctx.seeds(runs)
        if blow_up:
            logger.warning("Chaos study aborted: ensemble blow-up")
            return ExperimentOutcome(blow_up=True)

        times = results[0][Ns[0]].times
        window = times >= t_burn
        k_particle = ctx.index(t_particle)
        sup_xi, sup_rmse, particle = [], [], []
        for N in Ns:
            mean_xi = np.mean([r[N].xi for r in results], axis=0)
            sup_xi.append(float(np.max(mean_xi[window])))
            sup_rmse.append(float(np.max(np.sqrt(mean_xi[window]))))
            particle.append(float(np.mean([r[N].particle_gap[k_particle] for r in results])))
        ctx.csv("chaos_statistics.csv", ["N", "sup_mean_xi", "sup_rmse_xi", "mean_particle_gap"],
                [[N, a, b, c] for N, a, b, c in zip(Ns, sup_xi, sup_rmse, particle)])

        verdicts = []
        payload = {}
        if len(Ns) >= 3:
            fit = MetricsService.chaos_rate_fit(Ns, sup_rmse)
            payload["xi"] = fit.__dict__
            verdicts.append(_verdict("chaos_beta_range", fit.beta_hat, 0.5, 0.3 <= fit.beta_hat <= 0.7,
                                     seeds, upper=False, r_squared=fit.r_squared))
            verdicts.append(_verdict("chaos_fit_r_squared", fit.r_squared, 0.95, fit.r_squared >= 0.95,
                                     seeds, upper=False))
            if all(v > 0 for v in particle):
                particle_fit = MetricsService.chaos_rate_fit(Ns, particle)
                payload["particle"] = particle_fit.__dict__
                verdicts.append(_verdict("particle_chaos_exponent", particle_fit.beta_hat, 0.2,
                                         particle_fit.beta_hat > 0.2, seeds, upper=False))
        decreasing = bool(np.all(np.diff(sup_xi) < 0))
        verdicts.append(_verdict("sup_xi_decreasing", float(np.max(np.diff(sup_xi))) if len(Ns) > 1 else 0.0,
                                 0.0, decreasing, seeds))
        particle_decreasing = bool(np.all(np.diff(particle) < 0))
        verdicts.append(_verdict("particle_gap_decreasing",
                                 float(np.max(np.diff(particle))) if len(Ns) > 1 else 0.0,
                                 0.0, particle_decreasing, seeds))
        ctx.json("chaos_rate_fit.json", payload)
        return ExperimentOutcome(verdicts=verdicts)

    @staticmethod
    def _concentration_check(ctx: RunContext) -> ExperimentOutcome:
        problem = ctx.problem
        study = ctx.config.study
        dt = ctx.dt
        t = ctx.study_times[0]
        runs = ctx.config.ensemble.M
        report = StabilityService.compute_report(problem)
        r1, r2 = problem.r1, problem.r2
        x = problem.x0_mean + study.truth_offset * np.ones(r1)
        law = EkfService.initial_state(problem)
        P0_sqrt = psd_sqrt(problem.P0)

        def unit(i: int):
            streams = ctx.streams.for_run(i)
            obs = ModelService.simulate_observations(problem, dt, t, streams.generator("truth"), x0=x)
            rng = streams.generator("copies")
            xbar = law.xhat + P0_sqrt @ rng.standard_normal(r1)
            state = McKeanState(xbar=xbar, ekf=law, t=0.0)
            noise = rng.standard_normal((obs.dY.shape[0], r1 + r2)) * math.sqrt(dt)
            for k in range(obs.dY.shape[0]):
                state = McKeanService.mckean_step(state, obs.dY[k], noise[k, :r1], noise[k, r1:], dt, problem)
            xhat = state.ekf.xhat
            return (float(np.sum((obs.truth[-1] - xhat) ** 2)),
                    float(np.sum((state.xbar - xhat) ** 2)))

        results = ExperimentService._map_runs(ctx, unit, runs)
        truth_err = [r[0] for r in results]
        diffusion_err = [r[1] for r in results]
        gap = float(np.sum((x - law.xhat) ** 2))
        conc = MetricsService.concentration_check(truth_err, diffusion_err, [gap] * runs,
                                                  float(np.trace(problem.P0)), study.delta, report, t)
        ctx.csv("concentration_runs.csv", ["run", "truth_sq_error", "diffusion_sq_error",
                                           "bound_truth", "bound_diffusion"],
                [[i, a, b, c, conc.bound_diffusion]
                 for i, (a, b, c) in enumerate(zip(truth_err, diffusion_err, conc.bound_truth))])
        ctx.json("concentration_check.json", {k: v for k, v in conc.__dict__.items() if k != "bound_truth"})
        seeds = ctx.seeds(runs)
        required = conc.threshold - study.binomial_slack
        return ExperimentOutcome(verdicts=[
            _verdict("concentration_truth_event", conc.frequency_truth, required,
                     conc.frequency_truth >= required, seeds, upper=False),
            _verdict("concentration_diffusion_event", conc.frequency_diffusion, required,
                     conc.frequency_diffusion >= required, seeds, upper=False),
        ])

    @staticmethod
    def _divergence_probe(ctx: RunContext) -> ExperimentOutcome:
        problem = ctx.problem
        theta = ctx.config.ensemble.theta
        streams = ctx.streams.for_run(0)
        with np.errstate(over="ignore", invalid="ignore"):
            obs = ModelService.simulate_observations(problem, ctx.dt, ctx.T, streams.generator("truth"))
        reports = [EnsembleService.divergence_probe(problem, obs, N, streams.for_run(N), theta=theta)
                   for N in ctx.config.ensemble.N]
        ctx.json("divergence_probe.json", [r.__dict__ for r in reports])
        return ExperimentOutcome(blow_up=any(r.blow_up for r in reports))
