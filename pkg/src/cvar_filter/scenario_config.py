"""
Scenario documents: everything needed to reproduce a Monte Carlo run.

A scenario is stored as YAML or JSON (chosen by file suffix) with
``schema_version: 1``.  Field names match the ``ScenarioConfig`` attributes::

    schema_version: 1
    name: case1
    system:
      template: s2s_surrogate
      params: {axes: 1, dt: 0.1, decay: 0.5, input_gain_position: 1.0, input_gain_velocity: 0.5}
      u_lower: [-0.4]
      u_upper: [0.4]
    disturbance:
      uniform: true
      w: [[0.03, -0.01], ...]
    barrier: {H: [-1.0, 0.0], offset: 1.0}
    cert: {alpha: 0.9, beta: 0.1}
    legacy_law: {gain: 1.0, axes: [{position_index: 0, speed: 0.1}]}
    x0: [0.0, 0.0]
    steps: 25
    num_rollouts: 1000
    master_seed: 7
    method: epigraph

The canonical form of a document is its ``to_dict()`` serialized as JSON with
sorted keys and compact separators; the config hash is the SHA-256 of that.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .barrier import (
    BarrierCertificate,
    BarrierError,
    BarrierExpr,
    barrier_from_dict,
    barrier_to_dict,
    dimension,
)
from .risk import DistributionError, RiskLevelError, check_probabilities
from .safety_filter import DccpOptions, FilterMethod
from .system import DimensionError, LinearStochasticSystem, Outcome

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SYSTEM_TEMPLATES = ("s2s_surrogate", "matrices")

S2S_DEFAULT_PARAMS: dict[str, float] = {
    "axes": 1,
    "dt": 0.1,
    "decay": 0.5,
    "input_gain_position": 1.0,
    "input_gain_velocity": 0.5,
}


class ScenarioConfigError(ValueError):
    """Raised for invalid scenario documents; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


# =============================================================================
# FIELD HELPERS
# =============================================================================


def _vector(value: Any, path: str, length: int | None = None) -> tuple[float, ...]:
    try:
        array = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ScenarioConfigError(path, f"expected a list of numbers, got {value!r}") from e
    if array.ndim != 1:
        raise ScenarioConfigError(path, f"expected a flat list of numbers, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ScenarioConfigError(path, "entries must be finite")
    if length is not None and array.size != length:
        raise ScenarioConfigError(path, f"expected {length} entries, got {array.size}")
    return tuple(float(v) for v in array)


def _matrix(value: Any, path: str) -> tuple[tuple[float, ...], ...]:
    try:
        array = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ScenarioConfigError(path, f"expected a matrix (list of rows), got {value!r}") from e
    if array.ndim != 2 or array.size == 0:
        raise ScenarioConfigError(path, f"expected a nonempty matrix, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ScenarioConfigError(path, "entries must be finite")
    return tuple(tuple(float(v) for v in row) for row in array)


def _optional_matrix(value: Any, path: str) -> tuple[tuple[float, ...], ...] | None:
    return None if value is None else _matrix(value, path)


def _int(value: Any, path: str, minimum: int | None = None) -> int:
    integral = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if not integral or value != int(value):
        raise ScenarioConfigError(path, f"expected an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ScenarioConfigError(path, f"must be at least {minimum}, got {value}")
    return value


def _float(value: Any, path: str) -> float:
    if isinstance(value, bool):
        raise ScenarioConfigError(path, f"expected a number, got {value!r}")
    try:
        result = float(value)
    except (TypeError, ValueError) as e:
        raise ScenarioConfigError(path, f"expected a number, got {value!r}") from e
    if not math.isfinite(result):
        raise ScenarioConfigError(path, "must be finite")
    return result


def _mapping(value: Any, path: str, allowed: set[str]) -> dict[str, Any]:
    if not isinstance(value, dict):
        raise ScenarioConfigError(path, f"expected a mapping, got {type(value).__name__}")
    unknown = set(value) - allowed
    if unknown:
        raise ScenarioConfigError(f"{path}.{sorted(unknown)[0]}" if path else sorted(unknown)[0], "unknown field")
    return value


def _rows(matrix: tuple[tuple[float, ...], ...] | None) -> list[list[float]] | None:
    return None if matrix is None else [list(row) for row in matrix]


# =============================================================================
# SECTIONS
# =============================================================================


@dataclass(frozen=True)
class SystemSpec:
    """Dynamics: a named template with parameters, or explicit matrices."""

    template: str = "s2s_surrogate"
    params: dict[str, float] = field(default_factory=lambda: dict(S2S_DEFAULT_PARAMS))
    A: tuple[tuple[float, ...], ...] | None = None
    B: tuple[tuple[float, ...], ...] | None = None
    outcome_matrices: tuple[dict[str, Any], ...] | None = None
    u_lower: tuple[float, ...] = (-0.4,)
    u_upper: tuple[float, ...] = (0.4,)

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Nominal ``(A, B)``; explicit matrices override the template."""
        if self.template == "matrices":
            if self.A is None or self.B is None:
                raise ScenarioConfigError("system.A", 'template "matrices" needs both A and B')
            return np.array(self.A), np.array(self.B)
        A_t, B_t = s2s_matrices(self.params)
        A = np.array(self.A) if self.A is not None else A_t
        B = np.array(self.B) if self.B is not None else B_t
        return A, B

    def to_dict(self) -> dict[str, Any]:
        return {
            "template": self.template,
            "params": dict(self.params),
            "A": _rows(self.A),
            "B": _rows(self.B),
            "outcome_matrices": None
            if self.outcome_matrices is None
            else [{"A": _rows(o["A"]), "B": _rows(o["B"])} for o in self.outcome_matrices],
            "u_lower": list(self.u_lower),
            "u_upper": list(self.u_upper),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SystemSpec:
        data = _mapping(data, "system", {f.name for f in dataclasses.fields(cls)})
        template = data.get("template", "s2s_surrogate")
        if template not in SYSTEM_TEMPLATES:
            raise ScenarioConfigError("system.template", f"must be one of {SYSTEM_TEMPLATES}, got {template!r}")
        params: dict[str, float] = {}
        if template == "s2s_surrogate":
            raw = _mapping(data.get("params") or {}, "system.params", set(S2S_DEFAULT_PARAMS))
            params = {**S2S_DEFAULT_PARAMS, **raw}
            params = {key: _float(value, f"system.params.{key}") for key, value in params.items()}
            params["axes"] = _int(params["axes"], "system.params.axes", minimum=1)
        outcome_matrices = None
        if data.get("outcome_matrices") is not None:
            outcome_matrices = tuple(
                _outcome_matrices(o, f"system.outcome_matrices.{i}") for i, o in enumerate(data["outcome_matrices"])
            )
        return cls(
            template=template,
            params=params,
            A=_optional_matrix(data.get("A"), "system.A"),
            B=_optional_matrix(data.get("B"), "system.B"),
            outcome_matrices=outcome_matrices,
            u_lower=_vector(data.get("u_lower", cls.u_lower), "system.u_lower"),
            u_upper=_vector(data.get("u_upper", cls.u_upper), "system.u_upper"),
        )


def _outcome_matrices(data: Any, path: str) -> dict[str, Any]:
    data = _mapping(data, path, {"A", "B"})
    return {"A": _matrix(data.get("A"), f"{path}.A"), "B": _matrix(data.get("B"), f"{path}.B")}


def s2s_matrices(params: dict[str, float]) -> tuple[np.ndarray, np.ndarray]:
    """Step-to-step surrogate: per axis ``c+ = c + dt v + gp u``, ``v+ = decay v + gv u``.

    Axes are stacked block-diagonally, so the state is ``[c_x, v_x, c_y, v_y, ...]``
    and control ``j`` is the step-size input of axis ``j``.
    """
    axes = int(params["axes"])
    A_axis = np.array([[1.0, params["dt"]], [0.0, params["decay"]]])
    B_axis = np.array([[params["input_gain_position"]], [params["input_gain_velocity"]]])
    return np.kron(np.eye(axes), A_axis), np.kron(np.eye(axes), B_axis)


@dataclass(frozen=True)
class BoxSpec:
    """Box the disturbance set was sampled from (``count`` uniform draws, seeded)."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    count: int = 10
    seed: int = 7

    def sample(self) -> tuple[tuple[float, ...], ...]:
        rng = np.random.default_rng(self.seed)
        draws = rng.uniform(np.array(self.lower), np.array(self.upper), size=(self.count, len(self.lower)))
        return tuple(tuple(float(v) for v in row) for row in draws)

    def to_dict(self) -> dict[str, Any]:
        return {"lower": list(self.lower), "upper": list(self.upper), "count": self.count, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> BoxSpec:
        data = _mapping(data, "disturbance.box", {"lower", "upper", "count", "seed"})
        lower = _vector(data.get("lower"), "disturbance.box.lower")
        upper = _vector(data.get("upper"), "disturbance.box.upper", len(lower))
        if any(lo > hi for lo, hi in zip(lower, upper, strict=True)):
            raise ScenarioConfigError("disturbance.box.upper", "must not be below lower")
        return cls(
            lower=lower,
            upper=upper,
            count=_int(data.get("count", 10), "disturbance.box.count", minimum=1),
            seed=_int(data.get("seed", 7), "disturbance.box.seed", minimum=0),
        )


@dataclass(frozen=True)
class DisturbanceSpec:
    """Finite disturbance set ``w_1..w_N`` (entering as ``G(w_i) = w_i``)."""

    w: tuple[tuple[float, ...], ...]
    uniform: bool = True
    probs: tuple[float, ...] | None = None
    box: BoxSpec | None = None

    def probabilities(self) -> np.ndarray:
        if self.uniform:
            return np.full(len(self.w), 1.0 / len(self.w))
        return np.array(self.probs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "uniform": self.uniform,
            "w": [list(row) for row in self.w],
            "probs": None if self.probs is None else list(self.probs),
            "box": None if self.box is None else self.box.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DisturbanceSpec:
        data = _mapping(data, "disturbance", {"uniform", "w", "probs", "box"})
        box = None if data.get("box") is None else BoxSpec.from_dict(data["box"])
        if data.get("w") is None:
            if box is None:
                raise ScenarioConfigError("disturbance.w", "needs either w or a box to sample from")
            w = box.sample()
        else:
            w = _matrix(data["w"], "disturbance.w")
        uniform = data.get("uniform", True)
        if not isinstance(uniform, bool):
            raise ScenarioConfigError("disturbance.uniform", f"expected true or false, got {uniform!r}")
        probs = None
        if data.get("probs") is not None:
            probs = _vector(data["probs"], "disturbance.probs")
            try:
                check_probabilities(probs, size=len(w))
            except DistributionError as e:
                raise ScenarioConfigError("disturbance.probs", str(e)) from e
        elif not uniform:
            raise ScenarioConfigError("disturbance.probs", "required when uniform is false")
        return cls(w=w, uniform=uniform, probs=probs, box=box)


@dataclass(frozen=True)
class AxisReference:
    """Reference for one control axis: ``r(t) = start + speed t + offset + amplitude sin(2 pi t / period)``."""

    position_index: int
    start: float = 0.0
    speed: float = 0.0
    amplitude: float = 0.0
    period: float = 20.0
    offset: float = 0.0

    def at(self, t: float) -> float:
        return self.start + self.speed * t + self.offset + self.amplitude * math.sin(2.0 * math.pi * t / self.period)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any], path: str) -> AxisReference:
        data = _mapping(data, path, {f.name for f in dataclasses.fields(cls)})
        if "position_index" not in data:
            raise ScenarioConfigError(f"{path}.position_index", "required")
        period = _float(data.get("period", 20.0), f"{path}.period")
        if period <= 0:
            raise ScenarioConfigError(f"{path}.period", f"must be positive, got {period}")
        return cls(
            position_index=_int(data["position_index"], f"{path}.position_index", minimum=0),
            start=_float(data.get("start", 0.0), f"{path}.start"),
            speed=_float(data.get("speed", 0.0), f"{path}.speed"),
            amplitude=_float(data.get("amplitude", 0.0), f"{path}.amplitude"),
            period=period,
            offset=_float(data.get("offset", 0.0), f"{path}.offset"),
        )


@dataclass(frozen=True)
class LegacyLawSpec:
    gain: float
    axes: tuple[AxisReference, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"gain": self.gain, "axes": [axis.to_dict() for axis in self.axes]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> LegacyLawSpec:
        data = _mapping(data, "legacy_law", {"gain", "axes"})
        axes = data.get("axes")
        if not isinstance(axes, list) or not axes:
            raise ScenarioConfigError("legacy_law.axes", "expected a nonempty list")
        return cls(
            gain=_float(data.get("gain", 1.0), "legacy_law.gain"),
            axes=tuple(AxisReference.from_dict(axis, f"legacy_law.axes.{j}") for j, axis in enumerate(axes)),
        )


class ReferenceTrackingLaw:
    """Legacy controller stepping each axis toward its next reference position.

    ``u_j = gain * (r_j(t + 1) - x[position_index_j])``; the law ignores the
    barrier entirely.
    """

    def __init__(self, spec: LegacyLawSpec):
        self.spec = spec
        self.positions = np.array([axis.position_index for axis in spec.axes])

    def reference(self, t: int) -> np.ndarray:
        return np.array([axis.at(t) for axis in self.spec.axes])

    def __call__(self, x: np.ndarray, t: int) -> np.ndarray:
        return self.spec.gain * (self.reference(t + 1) - np.asarray(x)[self.positions])


# =============================================================================
# DOCUMENT
# =============================================================================

_TOP_LEVEL_FIELDS = {
    "schema_version",
    "name",
    "system",
    "disturbance",
    "barrier",
    "cert",
    "legacy_law",
    "x0",
    "steps",
    "num_rollouts",
    "master_seed",
    "method",
    "filter_enabled",
    "dccp",
}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    system: SystemSpec
    disturbance: DisturbanceSpec
    barrier: dict[str, Any]
    cert: BarrierCertificate
    legacy_law: LegacyLawSpec
    x0: tuple[float, ...]
    steps: int = 25
    num_rollouts: int = 1000
    master_seed: int = 7
    method: FilterMethod = FilterMethod.EPIGRAPH
    filter_enabled: bool = True
    dccp: DccpOptions = field(default_factory=DccpOptions)

    def __post_init__(self):
        self._validate()

    def _validate(self) -> None:
        try:
            A, B = self.system.matrices()
        except ValueError as e:
            if isinstance(e, ScenarioConfigError):
                raise
            raise ScenarioConfigError("system", str(e)) from e
        n = A.shape[0]
        if A.shape != (n, n):
            raise ScenarioConfigError("system.A", f"must be square, got shape {A.shape}")
        if B.shape[0] != n:
            raise ScenarioConfigError("system.B", f"must have {n} rows, got shape {B.shape}")
        m = B.shape[1]
        if len(self.system.u_lower) != m:
            raise ScenarioConfigError("system.u_lower", f"expected {m} entries, got {len(self.system.u_lower)}")
        if len(self.system.u_upper) != m:
            raise ScenarioConfigError("system.u_upper", f"expected {m} entries, got {len(self.system.u_upper)}")
        if any(lo > hi for lo, hi in zip(self.system.u_lower, self.system.u_upper, strict=True)):
            raise ScenarioConfigError("system.u_upper", "must not be below u_lower")
        for i, w in enumerate(self.disturbance.w):
            if len(w) != n:
                raise ScenarioConfigError(f"disturbance.w.{i}", f"expected {n} entries, got {len(w)}")
        if self.system.outcome_matrices is not None and len(self.system.outcome_matrices) != len(self.disturbance.w):
            raise ScenarioConfigError(
                "system.outcome_matrices", f"expected one entry per disturbance ({len(self.disturbance.w)})"
            )
        if len(self.x0) != n:
            raise ScenarioConfigError("x0", f"expected {n} entries, got {len(self.x0)}")
        try:
            barrier_dim = dimension(self.barrier_expr())
        except BarrierError as e:
            raise ScenarioConfigError("barrier", str(e)) from e
        if barrier_dim != n:
            raise ScenarioConfigError("barrier", f"acts on {barrier_dim} states, system has {n}")
        if len(self.legacy_law.axes) != m:
            raise ScenarioConfigError(
                "legacy_law.axes", f"expected {m} axes (one per control), got {len(self.legacy_law.axes)}"
            )
        for j, axis in enumerate(self.legacy_law.axes):
            if axis.position_index >= n:
                raise ScenarioConfigError(
                    f"legacy_law.axes.{j}.position_index", f"must be below {n}, got {axis.position_index}"
                )
        if not self.disturbance.uniform:
            if self.disturbance.probs is None:
                raise ScenarioConfigError("disturbance.probs", "required when uniform is false")
            try:
                check_probabilities(self.disturbance.probs, len(self.disturbance.w))
            except DistributionError as e:
                raise ScenarioConfigError("disturbance.probs", str(e)) from e
        if self.steps < 1:
            raise ScenarioConfigError("steps", f"must be at least 1, got {self.steps}")
        if self.num_rollouts < 1:
            raise ScenarioConfigError("num_rollouts", f"must be at least 1, got {self.num_rollouts}")
        try:
            self.system_model()
        except (DimensionError, DistributionError) as e:
            raise ScenarioConfigError("system", str(e)) from e

    # --- derived objects -----------------------------------------------------

    def barrier_expr(self) -> BarrierExpr:
        return barrier_from_dict(self.barrier)

    def system_model(self) -> LinearStochasticSystem:
        A, B = self.system.matrices()
        if self.system.outcome_matrices is not None:
            outcomes = tuple(
                Outcome(o["A"], o["B"], w)
                for o, w in zip(self.system.outcome_matrices, self.disturbance.w, strict=True)
            )
        else:
            outcomes = tuple(Outcome(A, B, w) for w in self.disturbance.w)
        return LinearStochasticSystem(
            outcomes, self.disturbance.probabilities(), self.system.u_lower, self.system.u_upper
        )

    def legacy_controller(self) -> ReferenceTrackingLaw:
        return ReferenceTrackingLaw(self.legacy_law)

    def with_beta(self, beta: float) -> ScenarioConfig:
        return dataclasses.replace(self, cert=BarrierCertificate(self.cert.alpha, beta))

    # --- serialization -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "system": self.system.to_dict(),
            "disturbance": self.disturbance.to_dict(),
            "barrier": self.barrier,
            "cert": self.cert.to_dict(),
            "legacy_law": self.legacy_law.to_dict(),
            "x0": list(self.x0),
            "steps": self.steps,
            "num_rollouts": self.num_rollouts,
            "master_seed": self.master_seed,
            "method": self.method.value,
            "filter_enabled": self.filter_enabled,
            "dccp": self.dccp.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScenarioConfig:
        """Validate a parsed document.

        Raises:
            ScenarioConfigError: naming the first offending field.
        """
        data = _mapping(data, "", _TOP_LEVEL_FIELDS)
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ScenarioConfigError("schema_version", f"unsupported version {version!r}, expected {SCHEMA_VERSION}")
        for required in ("system", "disturbance", "barrier", "cert", "legacy_law", "x0"):
            if data.get(required) is None:
                raise ScenarioConfigError(required, "required")

        try:
            barrier = barrier_to_dict(barrier_from_dict(data["barrier"]))
        except (BarrierError, TypeError, KeyError) as e:
            raise ScenarioConfigError("barrier", str(e)) from e

        cert_data = _mapping(data["cert"], "cert", {"alpha", "beta"})
        for key in ("alpha", "beta"):
            if key not in cert_data:
                raise ScenarioConfigError(f"cert.{key}", "required")
        try:
            cert = BarrierCertificate(
                _float(cert_data["alpha"], "cert.alpha"), _float(cert_data["beta"], "cert.beta")
            )
        except RiskLevelError as e:
            raise ScenarioConfigError("cert.beta", str(e)) from e
        except BarrierError as e:
            raise ScenarioConfigError("cert.alpha", str(e)) from e

        try:
            method = FilterMethod(data.get("method", FilterMethod.EPIGRAPH.value))
        except ValueError as e:
            raise ScenarioConfigError("method", f"must be one of {[m.value for m in FilterMethod]}") from e
        try:
            dccp_fields = {f.name for f in dataclasses.fields(DccpOptions)}
            dccp = DccpOptions.from_dict(_mapping(data.get("dccp") or {}, "dccp", dccp_fields))
        except (TypeError, ValueError) as e:
            if isinstance(e, ScenarioConfigError):
                raise
            raise ScenarioConfigError("dccp", str(e)) from e
        filter_enabled = data.get("filter_enabled", True)
        if not isinstance(filter_enabled, bool):
            raise ScenarioConfigError("filter_enabled", f"expected true or false, got {filter_enabled!r}")

        return cls(
            name=str(data.get("name", "scenario")),
            system=SystemSpec.from_dict(data["system"]),
            disturbance=DisturbanceSpec.from_dict(data["disturbance"]),
            barrier=barrier,
            cert=cert,
            legacy_law=LegacyLawSpec.from_dict(data["legacy_law"]),
            x0=_vector(data["x0"], "x0"),
            steps=_int(data.get("steps", 25), "steps", minimum=1),
            num_rollouts=_int(data.get("num_rollouts", 1000), "num_rollouts", minimum=1),
            master_seed=_int(data.get("master_seed", 7), "master_seed", minimum=0),
            method=method,
            filter_enabled=filter_enabled,
            dccp=dccp,
        )


# =============================================================================
# FILES, OVERRIDES AND HASHING
# =============================================================================


def canonical_json(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(cfg: ScenarioConfig) -> str:
    """SHA-256 of the canonical form; stable across platforms."""
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


def load_scenario(path: Path) -> ScenarioConfig:
    """Load a scenario document from YAML (``.yaml``/``.yml``) or JSON.

    Raises:
        FileNotFoundError: if ``path`` does not exist.
        ScenarioConfigError: if the document does not parse or validate.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ScenarioConfigError("document", f"cannot parse {path}: {e}") from e
    if data is None:
        raise ScenarioConfigError("document", f"{path} is empty")
    logger.debug("Loaded scenario document %s", path)
    return ScenarioConfig.from_dict(data)


def save_scenario(cfg: ScenarioConfig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix in (".yaml", ".yml"):
        text = yaml.safe_dump(cfg.to_dict(), sort_keys=False, allow_unicode=True, default_flow_style=None)
    else:
        text = json.dumps(cfg.to_dict(), indent=2, ensure_ascii=False) + "\n"
    path.write_text(text, encoding="utf-8")
    return path


def parse_override(item: str) -> tuple[str, Any]:
    """Split ``key.path=value``; the value is parsed as YAML (``0.5``, ``[1, 2]``, ``true``)."""
    if "=" not in item:
        raise ScenarioConfigError(item, "override must look like key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ScenarioConfigError(key, f"cannot parse value {raw!r}") from e
    return key, value


def apply_overrides(data: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Set dotted paths (list entries addressed by index) in a document dict, in place.

    Raises:
        ScenarioConfigError: if a path does not name an existing field.
    """
    for dotted, value in overrides.items():
        keys = dotted.split(".")
        node: Any = data
        for depth, key in enumerate(keys):
            last = depth == len(keys) - 1
            if isinstance(node, list):
                if not key.isdigit() or int(key) >= len(node):
                    raise ScenarioConfigError(dotted, "unknown field")
                key = int(key)
            elif not isinstance(node, dict) or (key not in node and not (last and _optional_key(keys[:-1], key))):
                raise ScenarioConfigError(dotted, "unknown field")
            if last:
                node[key] = value
            else:
                node = node[key]
    return data


def _optional_key(parents: list[str], key: str) -> bool:
    """Keys that may be absent from a document dict but are valid to set."""
    if parents == ["system", "params"]:
        return key in S2S_DEFAULT_PARAMS
    if len(parents) == 3 and parents[:2] == ["legacy_law", "axes"]:
        return key in {f.name for f in dataclasses.fields(AxisReference)}
    return False
