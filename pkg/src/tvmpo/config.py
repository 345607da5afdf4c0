"""Run configuration: YAML parsing, validation and round-tripping.

Every section is optional except ``model``, ``ansatz.chi`` and ``t_end``.
Missing keys take the baseline defaults (``n_samples = 5000``,
``eps_tol = 0.01``, ``eps_shift = eps_snr = 1e-8``); unknown keys are errors.
:func:`config_to_dict` produces the fully resolved form, which parses back to
an identical :class:`RunConfig`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml

from .errors import ConfigError, InvalidInputError
from .liouvillian import PAULI, Coupling, Lattice, ModelParams, Ring, Torus
from .observables import ObservableRequest
from .sampler import SamplerConfig
from .tdvp import IntegratorConfig, RegularizationConfig

Backend = Literal["vmc", "exact", "meanfield"]
BACKENDS = ("vmc", "exact", "meanfield")


@dataclass(frozen=True)
class InitSpec:
    """Product initial state ``(1 + m . sigma) / 2`` on every site."""

    bloch: tuple[float, float, float] = (0.0, -1.0, 0.0)
    noise: float = 0.0

    def __post_init__(self) -> None:
        if len(self.bloch) != 3:
            raise InvalidInputError("bloch must have three components")
        if float(np.linalg.norm(self.bloch)) > 1 + 1e-12:
            raise InvalidInputError("bloch vector must have norm <= 1")
        if self.noise < 0:
            raise InvalidInputError("noise must be non-negative")

    def single_site_rho(self) -> np.ndarray:
        rho = np.eye(2, dtype=np.complex128)
        for m, axis in zip(self.bloch, "xyz"):
            rho = rho + m * PAULI[axis]
        return 0.5 * rho


@dataclass(frozen=True)
class AnsatzConfig:
    chi: int
    unit_cell: int | None = None
    init: InitSpec = field(default_factory=InitSpec)

    def __post_init__(self) -> None:
        if self.chi < 1:
            raise InvalidInputError("chi must be >= 1")
        if self.unit_cell is not None and self.unit_cell < 1:
            raise InvalidInputError("unit_cell must be >= 1")


@dataclass(frozen=True)
class OutputConfig:
    """Observables to record; ``cadence = 0`` records every step."""

    observables: tuple[ObservableRequest, ...] = (
        ObservableRequest("magnetization", "x"),
        ObservableRequest("magnetization", "y"),
        ObservableRequest("magnetization", "z"),
    )
    cadence: float = 0.0

    def __post_init__(self) -> None:
        if self.cadence < 0:
            raise InvalidInputError("cadence must be non-negative")
        names = [o.name for o in self.observables]
        if len(set(names)) != len(names):
            raise InvalidInputError("duplicate observables")


@dataclass(frozen=True)
class ExactConfig:
    dt: float = 1e-3

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    ansatz: AnsatzConfig
    t_end: float
    backend: Backend = "vmc"
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    regularization: RegularizationConfig = field(default_factory=RegularizationConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    exact: ExactConfig = field(default_factory=ExactConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    workers: int = 1
    seed: int = 0
    checkpoint_every: int = 0
    output_dir: str = "run"

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise InvalidInputError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if not self.t_end > 0:
            raise InvalidInputError("t_end must be positive")
        if self.workers < 1:
            raise InvalidInputError("workers must be >= 1")
        if self.checkpoint_every < 0:
            raise InvalidInputError("checkpoint_every must be >= 0")
        n = self.model.n_sites
        for obs in self.output.observables:
            obs.validate(n)
        cell = self.unit_cell
        if n % cell:
            raise InvalidInputError(f"unit_cell {cell} does not divide N={n}")

    @property
    def unit_cell(self) -> int:
        if self.ansatz.unit_cell is not None:
            return self.ansatz.unit_cell
        return self.model.lattice.row_length

    def with_overrides(self, **changes: Any) -> RunConfig:
        """Copy with top-level fields replaced; ``None`` values are ignored."""
        changes = {k: v for k, v in changes.items() if v is not None}
        cfg = replace(self, **changes)
        if "seed" in changes:
            cfg = replace(cfg, sampler=replace(cfg.sampler, seed=cfg.seed))
        return cfg


# ---------------------------------------------------------------------------
# schema


def _float(v: Any) -> float:
    if isinstance(v, bool):
        raise TypeError("expected a number")
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        raise TypeError("expected a number")
    return float(v)


def _int(v: Any) -> int:
    if isinstance(v, bool):
        raise TypeError("expected an integer")
    if isinstance(v, float):
        if not v.is_integer():
            raise TypeError("expected an integer")
        return int(v)
    if not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _bool(v: Any) -> bool:
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _str(v: Any) -> str:
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _section(raw: Any, path: str, allowed: set[str]) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key" if path else f"{key}: unknown key")
    return raw


def _get(sec: dict, key: str, path: str, conv, default=None, required: bool = False):
    where = f"{path}.{key}" if path else key
    if key not in sec:
        if required:
            raise ConfigError(f"{where}: required key missing")
        return default
    try:
        return conv(sec[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _build(path: str, ctor, **kwargs):
    try:
        return ctor(**kwargs)
    except InvalidInputError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _lattice(raw: Any) -> Lattice:
    sec = _section(raw, "model.lattice", {"type", "n", "lx", "ly"})
    kind = _get(sec, "type", "model.lattice", _str, "ring")
    if kind == "ring":
        if "lx" in sec or "ly" in sec:
            raise ConfigError("model.lattice: a ring takes only n")
        n = _get(sec, "n", "model.lattice", _int, required=True)
        if n < 1:
            raise ConfigError("model.lattice.n: need at least 1 site")
        return Ring(n)
    if kind == "torus":
        if "n" in sec:
            raise ConfigError("model.lattice: a torus takes lx and ly, not n")
        lx = _get(sec, "lx", "model.lattice", _int, required=True)
        ly = _get(sec, "ly", "model.lattice", _int, required=True)
        if lx < 2 or ly < 2:
            raise ConfigError("model.lattice: lx and ly must be >= 2")
        return Torus(lx, ly)
    raise ConfigError(f"model.lattice.type: expected ring or torus, got {kind!r}")


def _coupling(raw: Any, i: int, vector: bool) -> Coupling:
    path = f"model.couplings[{i}]"
    sec = _section(raw, path, {"strength", "alpha"})
    alpha = _get(sec, "alpha", path, _float, math.inf)
    if vector:
        strength = _get(sec, "strength", path, lambda v: tuple(_float(c) for c in v), required=True)
        if len(strength) != 3:
            raise ConfigError(f"{path}.strength: an XYZ coupling needs three components")
    else:
        strength = _get(sec, "strength", path, _float, required=True)
    return _build(path, Coupling, strength=strength, alpha=alpha)


MODEL_KEYS = {
    "kind", "lattice", "couplings", "h", "gamma", "jump", "sign_convention",
    "pair_counting", "kac", "r_trunc",
}


def _model(raw: Any) -> ModelParams:
    if raw is None:
        raise ConfigError("model: required section missing")
    sec = _section(raw, "model", MODEL_KEYS)
    if "lattice" not in sec:
        raise ConfigError("model.lattice: required key missing")
    kind = _get(sec, "kind", "model", _str, "tfi_long_range")
    if kind not in ("tfi_long_range", "xyz_long_range"):
        raise ConfigError(f"model.kind: expected tfi_long_range or xyz_long_range, got {kind!r}")
    raw_c = sec.get("couplings", [])
    if not isinstance(raw_c, list):
        raise ConfigError("model.couplings: expected a list")
    couplings = tuple(_coupling(c, i, kind == "xyz_long_range") for i, c in enumerate(raw_c))
    choices = {
        "jump": ("spin_decay_xy", "z_minus_y"),
        "sign_convention": ("sm_plus", "main_text_minus"),
        "pair_counting": ("unordered", "ordered"),
    }
    picked = {}
    for key, options in choices.items():
        value = _get(sec, key, "model", _str, options[0])
        if value not in options:
            raise ConfigError(f"model.{key}: expected one of {options}, got {value!r}")
        picked[key] = value
    return _build(
        "model",
        ModelParams,
        kind=kind,
        lattice=_lattice(sec["lattice"]),
        couplings=couplings,
        h=_get(sec, "h", "model", _float, 0.0),
        gamma=_get(sec, "gamma", "model", _float, 1.0),
        jump_kind=picked["jump"],
        sign_convention=picked["sign_convention"],
        pair_counting=picked["pair_counting"],
        kac=_get(sec, "kac", "model", _bool, False),
        r_trunc=_get(sec, "r_trunc", "model", _int, 1),
    )


def _ansatz(raw: Any) -> AnsatzConfig:
    if raw is None:
        raise ConfigError("ansatz: required section missing")
    sec = _section(raw, "ansatz", {"chi", "unit_cell", "init"})
    init_sec = _section(sec.get("init"), "ansatz.init", {"bloch", "noise"})
    init = _build(
        "ansatz.init",
        InitSpec,
        bloch=_get(init_sec, "bloch", "ansatz.init", lambda v: tuple(_float(c) for c in v), (0.0, -1.0, 0.0)),
        noise=_get(init_sec, "noise", "ansatz.init", _float, 0.0),
    )
    return _build(
        "ansatz",
        AnsatzConfig,
        chi=_get(sec, "chi", "ansatz", _int, required=True),
        unit_cell=_get(sec, "unit_cell", "ansatz", _int, None),
        init=init,
    )


def _dataclass_section(raw: Any, path: str, cls, exclude: tuple[str, ...] = (), **extra):
    names = {f.name: f for f in fields(cls) if f.name not in exclude}
    sec = _section(raw, path, set(names))
    kwargs = {}
    for name, f in names.items():
        if name not in sec:
            continue
        default = f.default
        if isinstance(default, bool):
            conv = _bool
        elif isinstance(default, int):
            conv = _int
        elif isinstance(default, float):
            conv = _float
        else:
            conv = _str
        kwargs[name] = _get(sec, name, path, conv)
    kwargs.update(extra)
    return _build(path, cls, **kwargs)


def _observable(raw: Any, i: int) -> ObservableRequest:
    path = f"output.observables[{i}]"
    if isinstance(raw, str):
        raw = {"kind": raw}
    sec = _section(raw, path, {"kind", "axis", "distance", "connected", "k"})
    return _build(
        path,
        ObservableRequest,
        kind=_get(sec, "kind", path, _str, required=True),
        axis=_get(sec, "axis", path, _str, "z"),
        distance=_get(sec, "distance", path, _int, 1),
        connected=_get(sec, "connected", path, _bool, True),
        k=_get(sec, "k", path, _int, 0),
    )


def _output(raw: Any) -> OutputConfig:
    sec = _section(raw, "output", {"observables", "cadence"})
    kwargs = {}
    if "observables" in sec:
        if not isinstance(sec["observables"], list):
            raise ConfigError("output.observables: expected a list")
        kwargs["observables"] = tuple(_observable(o, i) for i, o in enumerate(sec["observables"]))
    if "cadence" in sec:
        kwargs["cadence"] = _get(sec, "cadence", "output", _float)
    return _build("output", OutputConfig, **kwargs)


TOP_KEYS = {
    "model", "ansatz", "t_end", "backend", "sampler", "regularization", "integrator",
    "exact", "output", "workers", "seed", "checkpoint_every", "output_dir",
}


def config_from_dict(raw: Any) -> RunConfig:
    sec = _section(raw, "", TOP_KEYS)
    seed = _get(sec, "seed", "", _int, 0)
    if seed < 0:
        raise ConfigError("seed: must be non-negative")
    backend = _get(sec, "backend", "", _str, "vmc")
    model = _model(sec.get("model"))
    ansatz = _ansatz(sec.get("ansatz"))
    if ansatz.unit_cell is None:
        ansatz = replace(ansatz, unit_cell=model.lattice.row_length)
    return _build(
        "config",
        RunConfig,
        model=model,
        ansatz=ansatz,
        t_end=_get(sec, "t_end", "", _float, required=True),
        backend=backend,
        sampler=_dataclass_section(sec.get("sampler"), "sampler", SamplerConfig, ("seed",), seed=seed),
        regularization=_dataclass_section(sec.get("regularization"), "regularization", RegularizationConfig),
        integrator=_dataclass_section(sec.get("integrator"), "integrator", IntegratorConfig),
        exact=_dataclass_section(sec.get("exact"), "exact", ExactConfig),
        output=_output(sec.get("output")),
        workers=_get(sec, "workers", "", _int, 1),
        seed=seed,
        checkpoint_every=_get(sec, "checkpoint_every", "", _int, 0),
        output_dir=_get(sec, "output_dir", "", _str, "run"),
    )


def parse_config_text(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"parse error at {where}: {exc.problem or exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    if raw is None:
        raise ConfigError("empty configuration")
    return config_from_dict(raw)


def parse_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config_text(p.read_text())


# ---------------------------------------------------------------------------
# serialization


def _num(v: float) -> float | str:
    return "inf" if math.isinf(v) and v > 0 else float(v)


def config_to_dict(cfg: RunConfig) -> dict:
    """Fully resolved configuration as plain YAML/JSON-compatible data."""
    m = cfg.model
    lat = m.lattice
    lattice = {"type": "ring", "n": lat.n} if isinstance(lat, Ring) else {"type": "torus", "lx": lat.lx, "ly": lat.ly}
    couplings = []
    for c in m.couplings:
        s = c.strength
        strength = [float(v) for v in s] if isinstance(s, tuple) else float(s)
        couplings.append({"strength": strength, "alpha": _num(c.alpha)})
    s, r, it = cfg.sampler, cfg.regularization, cfg.integrator
    return {
        "backend": cfg.backend,
        "t_end": float(cfg.t_end),
        "seed": cfg.seed,
        "workers": cfg.workers,
        "checkpoint_every": cfg.checkpoint_every,
        "output_dir": cfg.output_dir,
        "model": {
            "kind": m.kind,
            "lattice": lattice,
            "couplings": couplings,
            "h": float(m.h),
            "gamma": float(m.gamma),
            "jump": m.jump_kind,
            "sign_convention": m.sign_convention,
            "pair_counting": m.pair_counting,
            "kac": m.kac,
            "r_trunc": m.r_trunc,
        },
        "ansatz": {
            "chi": cfg.ansatz.chi,
            "unit_cell": cfg.unit_cell,
            "init": {"bloch": [float(v) for v in cfg.ansatz.init.bloch], "noise": float(cfg.ansatz.init.noise)},
        },
        "sampler": {
            "n_samples": s.n_samples,
            "sweeps_between": s.sweeps_between,
            "burn_in": s.burn_in,
            "n_chains": s.n_chains,
        },
        "regularization": {"eps_shift": r.eps_shift, "eps_snr": r.eps_snr},
        "integrator": {
            "scheme": it.scheme,
            "tau": it.tau,
            "eps_tol": it.eps_tol,
            "tau_init": it.tau_init,
            "tau_max": it.tau_max,
            "tau_min": it.tau_min,
        },
        "exact": {"dt": cfg.exact.dt},
        "output": {
            "cadence": cfg.output.cadence,
            "observables": [
                {"kind": o.kind, "axis": o.axis, "distance": o.distance, "connected": o.connected, "k": o.k}
                for o in cfg.output.observables
            ],
        },
    }


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
