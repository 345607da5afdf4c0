"""Stochastic time-dependent variational principle for the MPO ansatz.

Each gradient evaluation samples configurations, evaluates the local
Lindbladian estimator and the log-derivatives, and averages

    S_ij = E[conj(Delta_i) Delta_j],     f_i = E[conj(Delta_i) L_loc].

The parameter velocity solves ``S a' = f`` after regularization, and the
parameters are integrated with forward Euler or an adaptive Heun scheme,
renormalizing the trace after every accepted step.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping

import numpy as np

from .ansatz import (
    AMPLITUDE_FLOOR,
    MpoAnsatz,
    PartialProducts,
    log_derivative,
    renormalize_trace,
    trace_of_rho,
)
from .errors import (
    DegenerateAmplitudeError,
    EmptyBatchError,
    InvalidInputError,
    NumericalError,
    StalledIntegrationError,
)
from .liouvillian import LindbladianSpec
from .record import TrajectoryRecord
from .sampler import Sample, SamplerConfig, draw_batch, initial_sample, sample_from

logger = logging.getLogger(__name__)

EPS_FLOOR = 1e-30


# ---------------------------------------------------------------------------
# local estimator


class LocalEstimator:
    """``<x|L|rho> / <x|rho>`` by direct contraction with cached products.

    Built once per ansatz: single-site span terms are merged per site and
    contracted against the site environments; multi-site terms are contracted
    window by window with ``M[x] = sum_v B[x, v] A[v]`` at factor sites.
    """

    def __init__(self, spec: LindbladianSpec, ansatz: MpoAnsatz):
        if spec.n_sites != ansatz.n_sites:
            raise InvalidInputError(f"spec has N={spec.n_sites}, ansatz has N={ansatz.n_sites}")
        self.spec = spec
        self.ansatz = ansatz
        n, s = ansatz.n_sites, ansatz.local_dim
        site_ops = np.zeros((n, s, s), dtype=np.complex128)
        self._multi = []
        for term in spec.span_terms:
            if len(term.offsets) == 1 and term.span == 1:
                site_ops[term.anchor % n] += term.coefficient * term.factors[0]
            else:
                self._multi.append(term)
        self._has_local = bool(np.any(site_ops))
        cells = ansatz.cells
        # (N, d^2, chi, chi): M tensors of the merged single-site operators
        self._site_m = np.einsum("jxv,jvab->jxab", site_ops, ansatz.tensors[cells])
        self._m_cache: dict[tuple[int, int], np.ndarray] = {}

    def _m(self, op: np.ndarray, cell: int) -> np.ndarray:
        key = (id(op), cell)
        if key not in self._m_cache:
            self._m_cache[key] = np.einsum("xv,vab->xab", op, self.ansatz.tensors[cell])
        return self._m_cache[key]

    def _window(self, term, x: np.ndarray, sample: Sample) -> np.ndarray:
        a = self.ansatz
        n = a.n_sites
        factor_at = dict(zip(term.offsets, term.factors))
        prod = None
        for off in range(term.span):
            site = (term.anchor + off) % n
            cell = site % a.unit_cell
            if off in factor_at:
                mat = self._m(factor_at[off], cell)[x[:, site]]
            else:
                mat = a.tensors[cell][x[:, site]]
            prod = mat if prod is None else prod @ mat
        start, stop = term.anchor % n, term.anchor % n + term.span
        if stop <= n:
            rest = sample.pp.right[:, stop] @ sample.pp.left[:, start]
        else:
            rest = np.broadcast_to(np.eye(a.chi, dtype=np.complex128), prod.shape).copy()
            for site in range(stop - n, start):
                rest = rest @ a.tensors[site % a.unit_cell][x[:, site]]
        return np.einsum("bij,bji->b", prod, rest)

    def __call__(self, sample: Sample, env: np.ndarray | None = None) -> np.ndarray:
        x = sample.x
        amp = sample.amp
        if np.any(np.abs(amp) < AMPLITUDE_FLOOR):
            raise DegenerateAmplitudeError("amplitude magnitude below 1e-300; resample")
        numer = np.zeros(x.shape[0], dtype=np.complex128)
        if self._has_local:
            if env is None:
                env = sample.pp.environments()
            m = self._site_m[np.arange(self.ansatz.n_sites), x]
            numer += np.einsum("bjik,bjki->b", m, env)
        for term in self._multi:
            numer += term.coefficient * self._window(term, x, sample)
        return self.spec.diagonal.evaluate(x) + numer / amp


def local_estimator(spec: LindbladianSpec, ansatz: MpoAnsatz, sample: Sample) -> np.ndarray:
    """Local estimator for every chain of ``sample`` (needs both product sets)."""
    return LocalEstimator(spec, ansatz)(sample)


# ---------------------------------------------------------------------------
# moments


@dataclass
class MomentAccumulator:
    """Running sums over samples; merge is elementwise addition."""

    sum_SD: np.ndarray
    sum_F: np.ndarray
    sum_FF: np.ndarray
    sum_L2: float = 0.0
    count: int = 0

    @classmethod
    def empty(cls, n_params: int) -> MomentAccumulator:
        return cls(
            np.zeros((n_params, n_params), dtype=np.complex128),
            np.zeros(n_params, dtype=np.complex128),
            np.zeros((n_params, n_params), dtype=np.complex128),
        )

    def merge(self, other: MomentAccumulator) -> MomentAccumulator:
        return MomentAccumulator(
            self.sum_SD + other.sum_SD,
            self.sum_F + other.sum_F,
            self.sum_FF + other.sum_FF,
            self.sum_L2 + other.sum_L2,
            self.count + other.count,
        )


def accumulate(acc: MomentAccumulator, delta: np.ndarray, lloc) -> MomentAccumulator:
    """Add one sample (``delta`` of shape ``(P,)``) or a batch (``(B, P)``) in place."""
    delta = np.atleast_2d(delta)
    delta = delta.reshape(delta.shape[0], -1)
    lloc = np.atleast_1d(np.asarray(lloc, dtype=np.complex128))
    if delta.shape[1] != acc.sum_F.shape[0] or delta.shape[0] != lloc.shape[0]:
        raise InvalidInputError("log-derivative and estimator shapes do not match the accumulator")
    dh = delta.conj().T
    l2 = np.abs(lloc) ** 2
    acc.sum_SD += dh @ delta
    acc.sum_F += dh @ lloc
    acc.sum_FF += (dh * l2) @ delta
    acc.sum_L2 += float(l2.sum())
    acc.count += delta.shape[0]
    return acc


@dataclass
class Moments:
    S: np.ndarray
    f: np.ndarray
    force_cov: np.ndarray
    l2: float
    count: int


def assemble(acc: MomentAccumulator) -> Moments:
    """Sample means; no mean subtraction of the log-derivatives."""
    if acc.count == 0:
        raise EmptyBatchError("no samples accumulated")
    S = acc.sum_SD / acc.count
    S = 0.5 * (S + S.conj().T)
    f = acc.sum_F / acc.count
    cov = acc.sum_FF / acc.count - np.outer(f, f.conj())
    return Moments(S, f, cov, acc.sum_L2 / acc.count, acc.count)


# ---------------------------------------------------------------------------
# linear solve


@dataclass(frozen=True)
class RegularizationConfig:
    eps_shift: float = 1e-8
    eps_snr: float = 1e-8

    def __post_init__(self) -> None:
        if self.eps_shift < 0 or self.eps_snr < 0:
            raise InvalidInputError("regularization parameters must be non-negative")


def regularized_solve(
    S: np.ndarray,
    f: np.ndarray,
    force_cov: np.ndarray,
    cfg: RegularizationConfig,
    n_samples: int,
    return_eigenvalues: bool = False,
):
    """Shifted, signal-to-noise damped pseudo-inverse ``S^-1 f``.

    In the eigenbasis of ``S + eps_shift``, mode ``k`` contributes
    ``v_k (v_k^+ f) / lambda_k`` damped by ``1 / (1 + (eps_snr / snr_k)**6)``
    where ``snr_k`` is the rotated force over its standard error.
    """
    n = S.shape[0]
    try:
        lam, vecs = np.linalg.eigh(S + cfg.eps_shift * np.eye(n))
    except np.linalg.LinAlgError as exc:
        diag = np.abs(np.diag(S))
        raise NumericalError(
            f"eigendecomposition of the metric failed (diag range {diag.min():.3e}..{diag.max():.3e})"
        ) from exc
    rho = vecs.conj().T @ f
    var = np.einsum("ik,ij,jk->k", vecs.conj(), force_cov, vecs).real
    snr = np.abs(rho) / np.sqrt(np.maximum(var, 0.0) / n_samples + EPS_FLOOR)
    with np.errstate(divide="ignore", over="ignore"):
        damp = 1.0 / (1.0 + (cfg.eps_snr / snr) ** 6)
        coeff = np.where(lam != 0, rho / lam, 0.0) * damp
    coeff = np.nan_to_num(coeff)
    adot = vecs @ coeff
    if return_eigenvalues:
        return adot, lam - cfg.eps_shift
    return adot


# ---------------------------------------------------------------------------
# integration


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: Literal["euler", "heun_adaptive"] = "heun_adaptive"
    tau: float = 0.01
    eps_tol: float = 0.01
    tau_init: float = 1e-8
    tau_max: float = 0.1
    tau_min: float = 1e-12

    def __post_init__(self) -> None:
        if self.scheme not in ("euler", "heun_adaptive"):
            raise InvalidInputError(f"unknown integrator scheme {self.scheme!r}")
        for name in ("tau", "eps_tol", "tau_init", "tau_max", "tau_min"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")


def euler_step(ansatz: MpoAnsatz, adot: np.ndarray, tau: float) -> MpoAnsatz:
    return renormalize_trace(ansatz.with_flat(ansatz.flat() + tau * adot))


def heun_step_factor(err: float, eps_tol: float) -> float:
    if err == 0:
        return 2.0
    return float(np.clip(0.9 * math.sqrt(eps_tol / err), 0.2, 2.0))


def heun_adaptive_step(
    velocity: Callable[[np.ndarray], np.ndarray],
    a: np.ndarray,
    adot: np.ndarray,
    tau: float,
    cfg: IntegratorConfig,
    limit: float | None = None,
) -> tuple[np.ndarray, float, float, float, int]:
    """One accepted predictor-corrector step of ``a' = velocity(a)``.

    ``adot`` is the velocity at ``a``; ``limit`` caps the step so that it lands
    on the end time. Returns ``(a_new, tau_used, tau_next, err, rejections)``.
    """
    if limit is not None and limit < tau:
        tau = limit
    rejected = 0
    while True:
        a_e = a + tau * adot
        a_h = a + 0.5 * tau * (adot + velocity(a_e))
        err = float(np.linalg.norm(a_h - a_e) / max(np.linalg.norm(a), 1.0))
        factor = heun_step_factor(err, cfg.eps_tol)
        if err <= cfg.eps_tol:
            tau_next = min(max(tau * factor, cfg.tau_min), cfg.tau_max)
            return a_h, tau, tau_next, err, rejected
        rejected += 1
        tau *= factor
        if tau < cfg.tau_min:
            raise StalledIntegrationError(f"step size {tau:.3e} fell below {cfg.tau_min:.1e}")


@dataclass
class Evaluation:
    adot: np.ndarray
    moments: Moments
    s_eigenvalues: np.ndarray
    acceptance: float


@dataclass
class _Worker:
    rng: np.random.Generator
    state: Sample | None = None


@dataclass
class StepInfo:
    t: float
    tau: float
    err: float
    trace_error: float
    rejected: int = 0


class TdvpEngine:
    """Owns the ansatz, the Markov chains and the integrator state.

    The velocity at the current parameters is evaluated lazily and cached in
    :attr:`current`. Checkpoint state is taken just before that evaluation, so
    restoring it and re-evaluating reproduces the same samples.
    """

    def __init__(
        self,
        spec: LindbladianSpec,
        ansatz: MpoAnsatz,
        sampler: SamplerConfig,
        regularization: RegularizationConfig | None = None,
        integrator: IntegratorConfig | None = None,
        n_workers: int = 1,
        seed: int | None = None,
    ):
        if spec.n_sites != ansatz.n_sites:
            raise InvalidInputError(f"spec has N={spec.n_sites}, ansatz has N={ansatz.n_sites}")
        if n_workers < 1:
            raise InvalidInputError("n_workers must be >= 1")
        self.spec = spec
        self.sampler = sampler
        self.regularization = regularization or RegularizationConfig()
        self.integrator = integrator or IntegratorConfig()
        self.ansatz = renormalize_trace(ansatz)
        self.t = 0.0
        self.steps = 0
        if self.integrator.scheme == "heun_adaptive":
            self.tau = self.integrator.tau_init
        else:
            self.tau = self.integrator.tau
        root = np.random.SeedSequence(sampler.seed if seed is None else seed)
        self.workers = [_Worker(np.random.default_rng(s)) for s in root.spawn(n_workers)]
        self._current: Evaluation | None = None
        self._snapshot: dict | None = None

    # -- gradient ---------------------------------------------------------

    def evaluate(self, ansatz: MpoAnsatz) -> Evaluation:
        """Sample on every worker, merge moments and solve for the velocity."""
        estimator = LocalEstimator(self.spec, ansatz)
        total = MomentAccumulator.empty(ansatz.n_params)
        proposals = accepted = 0
        for w in self.workers:
            if w.state is None:
                start = initial_sample(ansatz, self.sampler.n_chains, w.rng)
            else:
                start = sample_from(ansatz, w.state.x)
            acc = MomentAccumulator.empty(ansatz.n_params)
            last = start
            for s in draw_batch(ansatz, self.sampler, start, w.rng):
                last = s
                ok = np.abs(s.amp) >= AMPLITUDE_FLOOR
                if not ok.all():
                    logger.warning("dropping %d samples with vanishing amplitude", int((~ok).sum()))
                    s = _subset(s, ok)
                env = s.pp.environments()
                lloc = estimator(s, env)
                delta = log_derivative(ansatz, s.x, s.pp, s.amp, env)
                accumulate(acc, delta.reshape(s.batch, -1), lloc)
            proposals += last.n_proposals - start.n_proposals
            accepted += last.n_accepted - start.n_accepted
            w.state = last
            total = total.merge(acc)
        moments = assemble(total)
        adot, eigs = regularized_solve(
            moments.S, moments.f, moments.force_cov, self.regularization, moments.count,
            return_eigenvalues=True,
        )
        rate = accepted / proposals if proposals else float("nan")
        return Evaluation(adot, moments, eigs, rate)

    @property
    def current(self) -> Evaluation:
        if self._current is None:
            self._snapshot = self._live_state()
            self._current = self.evaluate(self.ansatz)
        return self._current

    # -- stepping ---------------------------------------------------------

    def step(self, t_end: float | None = None) -> StepInfo:
        """Advance by one accepted step, never past ``t_end``."""
        cur = self.current
        cfg = self.integrator
        a = self.ansatz.flat()
        limit = None if t_end is None else t_end - self.t
        if cfg.scheme == "euler":
            tau = self.integrator.tau if limit is None else min(self.integrator.tau, limit)
            new, err, tau_next, rejected = a + tau * cur.adot, float("nan"), self.tau, 0
        else:
            def velocity(params: np.ndarray) -> np.ndarray:
                return self.evaluate(self.ansatz.with_flat(params)).adot

            try:
                new, tau, tau_next, err, rejected = heun_adaptive_step(
                    velocity, a, cur.adot, self.tau, cfg, limit
                )
            except StalledIntegrationError as exc:
                raise StalledIntegrationError(f"{exc} at t={self.t:.6g}") from None
        self.ansatz = renormalize_trace(self.ansatz.with_flat(new))
        self.t += tau
        self.steps += 1
        self.tau = tau_next
        self._current = None
        self._snapshot = None
        return StepInfo(
            t=self.t,
            tau=tau,
            err=err,
            trace_error=abs(trace_of_rho(self.ansatz) - 1.0),
            rejected=rejected,
        )

    # -- checkpoint state ---------------------------------------------------

    def _live_state(self) -> dict:
        return {
            "t": self.t,
            "tau": self.tau,
            "steps": self.steps,
            "workers": [
                {
                    "rng": w.rng.bit_generator.state,
                    "x": None if w.state is None else w.state.x.tolist(),
                }
                for w in self.workers
            ],
        }

    def state_dict(self) -> dict:
        if self._current is not None and self._snapshot is not None:
            return self._snapshot
        return self._live_state()

    def load_state_dict(self, state: Mapping, ansatz: MpoAnsatz) -> None:
        if len(state["workers"]) != len(self.workers):
            raise InvalidInputError("checkpoint worker count differs from the engine's")
        self.ansatz = ansatz
        self.t = float(state["t"])
        self.tau = float(state["tau"])
        self.steps = int(state["steps"])
        for w, ws in zip(self.workers, state["workers"]):
            w.rng.bit_generator.state = ws["rng"]
            w.state = None if ws["x"] is None else sample_from(ansatz, np.array(ws["x"]))
        self._current = None
        self._snapshot = None


def _subset(sample: Sample, mask: np.ndarray) -> Sample:
    return Sample(
        x=sample.x[mask],
        amp=sample.amp[mask],
        pp=PartialProducts(sample.pp.left[mask], sample.pp.right[mask]),
        n_proposals=sample.n_proposals,
        n_accepted=sample.n_accepted,
        sweeps=sample.sweeps,
        next_direction=sample.next_direction,
    )


Observer = Callable[[float, MpoAnsatz, Mapping[str, float]], Mapping[str, complex] | None]


@dataclass
class RunOutcome:
    record: TrajectoryRecord
    error: Exception | None = None
    wall_times: list[float] = field(default_factory=list)


def run_to_time(
    engine: TdvpEngine,
    t_end: float,
    observer: Observer | None = None,
    record: TrajectoryRecord | None = None,
    on_step: Callable[[TdvpEngine, StepInfo], None] | None = None,
) -> RunOutcome:
    """Step until ``t_end``, observing at the start (fresh records) and after every step.

    An observer that returns ``None`` suppresses the row for that step.

    Diagnostics come from the gradient evaluation at the observed parameters.
    A stalled integration ends the loop early; the partial record is returned
    together with the error.
    """
    rec = record if record is not None else TrajectoryRecord()
    outcome = RunOutcome(rec)

    def observe(info: dict[str, float]) -> None:
        ev = engine.current
        info.update(
            l2_per_site=ev.moments.l2 / engine.ansatz.n_sites,
            min_eig_s=float(ev.s_eigenvalues[0]),
            acceptance=ev.acceptance,
        )
        values = observer(engine.t, engine.ansatz, info) if observer else {}
        if values is not None:
            rec.append(engine.t, values, info)

    if not rec.times:
        trace_error = abs(trace_of_rho(engine.ansatz) - 1.0)
        observe({"tau": 0.0, "err": 0.0, "trace_error": trace_error, "rejected": 0.0})
    eps = 1e-12 * max(1.0, abs(t_end))
    while engine.t < t_end - eps:
        start = time.perf_counter()
        try:
            info = engine.step(t_end)
        except StalledIntegrationError as exc:
            outcome.error = exc
            break
        observe(
            {
                "tau": info.tau,
                "err": info.err,
                "trace_error": info.trace_error,
                "rejected": float(info.rejected),
            }
        )
        outcome.wall_times.append(time.perf_counter() - start)
        if on_step is not None:
            on_step(engine, info)
    return outcome
