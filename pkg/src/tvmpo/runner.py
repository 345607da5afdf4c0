"""Run orchestration for the variational, exact and mean-field backends.

A run directory holds the trajectory record (one CSV per observable,
``diagnostics.csv``, ``metadata.json``), the resolved ``config.yaml`` and, for
the variational backend, checkpoints ``checkpoint_<step>.bin`` with a JSON
sidecar carrying the integrator and sampler state.
"""

from __future__ import annotations

import json
import logging
import math
import platform
import time
from dataclasses import dataclass
from importlib import metadata as importlib_metadata
from pathlib import Path

import numpy as np
import scipy

from .ansatz import MpoAnsatz, init_product, load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash, config_to_dict, dump_config, parse_config
from .errors import ConfigError, InvalidInputError, TvmpoError
from .exact import DenseState, MeanFieldState, meanfield_evolve, rk4_evolve
from .liouvillian import LindbladianSpec, ModelParams, build_lindbladian, coupling_matrix
from .observables import measure
from .record import TrajectoryRecord
from .sampler import SamplerConfig
from .tdvp import StepInfo, TdvpEngine, run_to_time

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.yaml"
CHECKPOINT_PREFIX = "checkpoint_"


def _versions() -> dict[str, str]:
    try:
        own = importlib_metadata.version("artifact")
    except importlib_metadata.PackageNotFoundError:
        own = "unknown"
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "artifact": own,
    }


def _base_metadata(cfg: RunConfig) -> dict:
    return {
        "backend": cfg.backend,
        "seed": cfg.seed,
        "workers": cfg.workers,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "versions": _versions(),
        "status": "running",
    }


def _finish(rec: TrajectoryRecord, out: Path, wall: list[float], error: Exception | None) -> None:
    rec.metadata["iterations"] = len(wall)
    rec.metadata["wall_time_total"] = float(sum(wall))
    rec.metadata["wall_time_per_iteration"] = float(np.mean(wall)) if wall else 0.0
    if error is None:
        rec.metadata["status"] = "complete"
        rec.metadata.pop("error", None)
    else:
        rec.metadata["status"] = "error"
        rec.metadata["error"] = f"{type(error).__name__}: {error}"
    rec.write(out)


# ---------------------------------------------------------------------------
# variational backend


def initial_ansatz(cfg: RunConfig) -> MpoAnsatz:
    init = cfg.ansatz.init
    if cfg.ansatz.chi > 1 and init.noise == 0:
        logger.warning(
            "chi > 1 with zero padding noise: the padded bond directions have vanishing "
            "log-derivatives and stay unused; set ansatz.init.noise to activate them"
        )
    rng = np.random.default_rng([cfg.seed, 1])
    return init_product(
        cfg.model.n_sites, cfg.unit_cell, cfg.ansatz.chi, init.single_site_rho(), init.noise, rng
    )


def build_engine(cfg: RunConfig, spec: LindbladianSpec | None = None) -> TdvpEngine:
    spec = spec if spec is not None else build_lindbladian(cfg.model)
    sampler = cfg.sampler if cfg.sampler.seed == cfg.seed else SamplerConfig(
        cfg.sampler.n_samples, cfg.sampler.sweeps_between, cfg.sampler.burn_in, cfg.sampler.n_chains, cfg.seed
    )
    return TdvpEngine(
        spec, initial_ansatz(cfg), sampler, cfg.regularization, cfg.integrator,
        n_workers=cfg.workers, seed=cfg.seed,
    )


def _vmc_observer(cfg: RunConfig):
    cadence = cfg.output.cadence
    next_t = [0.0]

    def observe(t: float, ansatz: MpoAnsatz, info) -> dict | None:
        at_end = t >= cfg.t_end - 1e-12 * max(1.0, cfg.t_end)
        if cadence > 0 and t < next_t[0] - 1e-12 and not at_end:
            return None
        if cadence > 0:
            next_t[0] = (math.floor(t / cadence + 1e-9) + 1) * cadence
        l2 = info["l2_per_site"] * ansatz.n_sites
        return {o.name: measure(o, ansatz, l2=l2) for o in cfg.output.observables}

    def sync(t: float) -> None:
        if cadence > 0:
            next_t[0] = (math.floor(t / cadence + 1e-9) + 1) * cadence

    observe.sync = sync
    return observe


def _checkpoint_paths(out: Path, step: int) -> tuple[Path, Path]:
    stem = out / f"{CHECKPOINT_PREFIX}{step:08d}"
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def latest_checkpoint(out: str | Path) -> tuple[Path, Path] | None:
    bins = sorted(Path(out).glob(f"{CHECKPOINT_PREFIX}*.bin"))
    for b in reversed(bins):
        side = b.with_suffix(".json")
        if side.exists():
            return b, side
    return None


def _run_vmc(cfg: RunConfig, out: Path, resume: bool) -> TrajectoryRecord:
    spec = build_lindbladian(cfg.model)
    engine = build_engine(cfg, spec)
    observer = _vmc_observer(cfg)
    rec = TrajectoryRecord(metadata=_base_metadata(cfg))
    if resume:
        found = latest_checkpoint(out)
        if found is None:
            raise InvalidInputError(f"{out} holds no checkpoint to resume from")
        bin_path, side_path = found
        state = json.loads(side_path.read_text())
        engine.load_state_dict(state["engine"], load_checkpoint(bin_path))
        old = TrajectoryRecord.read(out)
        old.truncate(engine.t)
        rec.times, rec.columns, rec.diagnostics = old.times, old.columns, old.diagnostics
        rec.metadata["resumed_from"] = bin_path.name
        observer.sync(engine.t)

    wall: list[float] = []

    def on_step(eng: TdvpEngine, info: StepInfo) -> None:
        logger.info(
            "step %d t=%.6g tau=%.3g err=%.3g rejected=%d", eng.steps, info.t, info.tau, info.err, info.rejected
        )
        if cfg.checkpoint_every and eng.steps % cfg.checkpoint_every == 0:
            bin_path, side_path = _checkpoint_paths(out, eng.steps)
            save_checkpoint(eng.ansatz, bin_path)
            side_path.write_text(json.dumps({"engine": eng.state_dict()}))
            rec.write(out)

    try:
        outcome = run_to_time(engine, cfg.t_end, observer, rec, on_step)
        wall = outcome.wall_times
        error = outcome.error
    except TvmpoError as exc:
        error = exc
    _finish(rec, out, wall, error)
    if error is not None:
        raise error
    return rec


# ---------------------------------------------------------------------------
# exact backend


def _run_exact(cfg: RunConfig, out: Path) -> TrajectoryRecord:
    spec = build_lindbladian(cfg.model)
    rho0 = DenseState.product(cfg.ansatz.init.single_site_rho(), cfg.model.n_sites)
    dt = cfg.exact.dt
    every = max(1, int(round(cfg.output.cadence / dt))) if cfg.output.cadence > 0 else 1
    rec = TrajectoryRecord(metadata=_base_metadata(cfg))
    wall: list[float] = []
    error = None
    try:
        start = time.perf_counter()
        for t, state in rk4_evolve(spec, rho0, cfg.t_end, dt, every):
            rec.append(t, {o.name: measure(o, state, spec=spec) for o in cfg.output.observables})
            now = time.perf_counter()
            wall.append(now - start)
            start = now
    except TvmpoError as exc:
        error = exc
    _finish(rec, out, wall, error)
    if error is not None:
        raise error
    return rec


# ---------------------------------------------------------------------------
# mean-field backend


def meanfield_parameters(model: ModelParams) -> tuple[float, float]:
    """``(sum J~, h)`` for the mean-field equations of an Ising model.

    The equations assume ``H = -sum g z z - h sum x`` with jump
    ``(sigma^z - i sigma^y) / 2``; the model's own sign convention is mapped
    onto that form.
    """
    if model.kind != "tfi_long_range":
        raise InvalidInputError("the mean-field backend supports only the transverse-field Ising model")
    if model.jump_kind != "z_minus_y":
        raise InvalidInputError("the mean-field backend requires jump 'z_minus_y'")
    g = coupling_matrix(model)
    sign = 1.0 if model.sign_convention == "sm_plus" else -1.0
    return float(-g[0].sum()), float(-sign * model.h)


def _run_meanfield(cfg: RunConfig, out: Path) -> TrajectoryRecord:
    for o in cfg.output.observables:
        if o.kind != "magnetization":
            raise ConfigError(f"output.observables: {o.name} is not available from the mean-field backend")
    jsum, h = meanfield_parameters(cfg.model)
    cadence = cfg.output.cadence if cfg.output.cadence > 0 else 0.01
    n_points = int(math.floor(cfg.t_end / cadence + 1e-9)) + 1
    times = np.arange(n_points) * cadence
    if times[-1] < cfg.t_end - 1e-12:
        times = np.append(times, cfg.t_end)
    start = time.perf_counter()
    traj = meanfield_evolve(MeanFieldState(*cfg.ansatz.init.bloch), jsum, h, cfg.model.gamma, times)
    rec = TrajectoryRecord(metadata=_base_metadata(cfg))
    index = {"x": 0, "y": 1, "z": 2}
    for t, m in zip(times, traj):
        rec.append(float(t), {o.name: complex(m[index[o.axis]]) for o in cfg.output.observables})
    _finish(rec, out, [time.perf_counter() - start], None)
    return rec


# ---------------------------------------------------------------------------
# entry points


def run(cfg: RunConfig, output_dir: str | Path | None = None) -> TrajectoryRecord:
    """Execute the configured backend and write its outputs."""
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stale in out.glob(f"{CHECKPOINT_PREFIX}*"):
        stale.unlink()
    (out / CONFIG_FILE).write_text(dump_config(cfg))
    if cfg.backend == "vmc":
        return _run_vmc(cfg, out, resume=False)
    if cfg.backend == "exact":
        return _run_exact(cfg, out)
    return _run_meanfield(cfg, out)


def resume(output_dir: str | Path) -> TrajectoryRecord:
    """Continue a variational run from its latest checkpoint."""
    out = Path(output_dir)
    cfg = parse_config(out / CONFIG_FILE)
    if cfg.backend != "vmc":
        raise InvalidInputError("only variational runs can be resumed")
    return _run_vmc(cfg, out, resume=True)


# ---------------------------------------------------------------------------
# comparison


@dataclass(frozen=True)
class Deviation:
    max_abs: float
    mean_abs: float
    passed: bool


@dataclass(frozen=True)
class CompareReport:
    tolerance: float
    t_range: tuple[float, float]
    deviations: dict[str, Deviation]

    @property
    def passed(self) -> bool:
        return all(d.passed for d in self.deviations.values())

    def format(self) -> str:
        lines = [f"compared on t in [{self.t_range[0]:g}, {self.t_range[1]:g}], tolerance {self.tolerance:g}"]
        for name, d in sorted(self.deviations.items()):
            tag = "PASS" if d.passed else "FAIL"
            lines.append(f"{tag} {name}: max {d.max_abs:.3e} mean {d.mean_abs:.3e}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def compare(run_a: TrajectoryRecord, run_b: TrajectoryRecord, tolerance: float) -> CompareReport:
    """Max and mean absolute deviation of the real parts on the coarser time grid."""
    common = sorted(set(run_a.columns) & set(run_b.columns))
    if not common:
        raise InvalidInputError("the records share no observables")
    if not run_a.times or not run_b.times:
        raise InvalidInputError("cannot compare an empty record")
    lo = max(run_a.times[0], run_b.times[0])
    hi = min(run_a.times[-1], run_b.times[-1])
    if lo > hi:
        raise InvalidInputError(f"time ranges do not overlap ({lo:g} > {hi:g})")
    ta, tb = np.asarray(run_a.times), np.asarray(run_b.times)
    in_a = ta[(ta >= lo) & (ta <= hi)]
    in_b = tb[(tb >= lo) & (tb <= hi)]
    grid = in_a if len(in_a) <= len(in_b) else in_b
    devs = {}
    for name in common:
        va = np.interp(grid, ta, run_a.real(name))
        vb = np.interp(grid, tb, run_b.real(name))
        diff = np.abs(va - vb)
        mx = float(diff.max())
        devs[name] = Deviation(mx, float(diff.mean()), bool(mx <= tolerance))
    return CompareReport(tolerance, (float(lo), float(hi)), devs)
