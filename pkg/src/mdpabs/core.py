"""Shared domain types, configuration, and normalization.

Everything downstream (ingest, interval abstraction, metrics, clustering,
MDP construction, verification, evaluation, guided learning) speaks the
vocabulary defined here.
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .actions import ActionAbstraction

K_METHODS = ("elbow", "silhouette", "gap", "canopy")
METRIC_NAMES = ("euclidean", "multistep", "spatiotemporal")
DP_KINDS = ("total_variation",)
CLUSTER_MODES = ("kmeans", "singleton")


class ConfigError(ValueError):
    """Malformed configuration document or values."""


@dataclass(frozen=True)
class ConcreteState:
    """One recorded decision step.

    `reward` is the reward earned by the action taken from this state (the
    terminal row of an episode carries no action effect and by convention
    a reward of 0 in bundled fixtures, though any value is accepted).
    """

    episode_id: int
    t: int
    features: tuple[float, ...]
    action: tuple[float, ...]
    reward: float
    terminal: bool
    labels: Mapping[str, bool]


# ---------------------------------------------------------------------------
# semantic mapping: named expressions over feature names


_ALLOWED_FUNCS: dict[str, Callable] = {
    "abs": np.abs,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "minimum": np.minimum,
    "maximum": np.maximum,
}

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Num, ast.Constant,
    ast.Name, ast.Load, ast.Call,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


def _compile_expression(expr: str, feature_names: Sequence[str]) -> Callable:
    """Compile an arithmetic expression over feature names.

    Only names from the feature schema plus a small math whitelist are
    allowed; anything else is rejected up front so config errors surface
    at load time, not mid-pipeline.
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"semantic expression {expr!r} does not parse: {exc}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(
                f"semantic expression {expr!r} uses disallowed syntax ({type(node).__name__})")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_FUNCS:
                raise ConfigError(f"semantic expression {expr!r} calls a non-whitelisted function")
        elif isinstance(node, ast.Name):
            if node.id not in feature_names and node.id not in _ALLOWED_FUNCS:
                raise ConfigError(
                    f"semantic expression {expr!r} references unknown feature {node.id!r}")
    code = compile(tree, "<semantic-expr>", "eval")

    def evaluate(env: Mapping[str, Any]):
        scope = dict(_ALLOWED_FUNCS)
        scope.update(env)
        return eval(code, {"__builtins__": {}}, scope)

    return evaluate


@dataclass(frozen=True)
class SemanticDim:
    name: str
    expr: str
    unit: str = ""


@dataclass(frozen=True)
class SemanticMapping:
    """Ordered list of named semantic dimensions (J = len(dimensions))."""

    dimensions: tuple[SemanticDim, ...]

    def __post_init__(self) -> None:
        if len(self.dimensions) < 1:
            raise ConfigError("semantic mapping needs at least one dimension")
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ConfigError("semantic dimension names must be unique")

    @property
    def J(self) -> int:
        return len(self.dimensions)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dimensions)

    def evaluate(self, feature_names: Sequence[str], features: np.ndarray) -> np.ndarray:
        """Raw semantic values for a (n, m) feature matrix -> (n, J)."""
        features = np.asarray(features, dtype=float)
        env = {name: features[:, i] for i, name in enumerate(feature_names)}
        cols = []
        for dim in self.dimensions:
            fn = _compile_expression(dim.expr, feature_names)
            col = np.asarray(fn(env), dtype=float)
            cols.append(np.broadcast_to(col, (features.shape[0],)))
        return np.column_stack(cols)


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormalizationBounds:
    """Per-dimension min/max, computed from the modeling split only."""

    names: tuple[str, ...]
    mins: tuple[float, ...]
    maxs: tuple[float, ...]

    @classmethod
    def from_values(cls, names: Sequence[str], values: np.ndarray) -> "NormalizationBounds":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        return cls(tuple(names),
                   tuple(float(v) for v in values.min(axis=0)),
                   tuple(float(v) for v in values.max(axis=0)))

    def validate(self) -> None:
        for name, lo, hi in zip(self.names, self.mins, self.maxs):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"normalization bounds for '{name}' are not finite")
            if lo == hi:
                raise ValueError(f"degenerate normalization dimension '{name}' (min == max)")


def normalize(values, bounds: NormalizationBounds) -> np.ndarray:
    """Affine map to [0,1] per dimension, clamped.

    (x - min) / (max - min); out-of-bound inputs (validation data) clamp
    rather than fail.
    """
    bounds.validate()
    x = np.asarray(values, dtype=float)
    mins = np.asarray(bounds.mins)
    maxs = np.asarray(bounds.maxs)
    return np.clip((x - mins) / (maxs - mins), 0.0, 1.0)


def denormalize(values, bounds: NormalizationBounds) -> np.ndarray:
    bounds.validate()
    x = np.asarray(values, dtype=float)
    mins = np.asarray(bounds.mins)
    maxs = np.asarray(bounds.maxs)
    return x * (maxs - mins) + mins


@dataclass(frozen=True)
class SemanticVector:
    """Normalized semantic coordinates plus the Monte-Carlo return estimate."""

    theta: tuple[float, ...]
    v_hat: float
    bounds: NormalizationBounds


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class MetricWeights:
    """Weights of the value metric terms plus the (epsilon,d) threshold.

    c_d defaults large so availability mismatch dominates; c_t defaults to 0
    which keeps the spatio-temporal and multi-step metrics identical (and the
    triangle inequality exact, see validate_weights).
    """

    c_r: float = 1.0
    c_p: float = 1.0
    c_d: float = 1e6
    c_t: float = 0.0
    epsilon: float = 1e6
    tau_t: int = 0
    dp_kind: str = "total_variation"


def validate_weights(w: MetricWeights) -> list[str]:
    out = []
    for name in ("c_r", "c_p", "c_d", "c_t"):
        v = getattr(w, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
            out.append(f"{name} must be a finite nonnegative real")
    if not (isinstance(w.epsilon, (int, float)) and w.epsilon > 0):
        out.append("epsilon must be > 0")
    if not (isinstance(w.tau_t, int) and w.tau_t >= 0):
        out.append("tau_t must be a nonnegative integer")
    if w.dp_kind not in DP_KINDS:
        out.append(f"dp_kind must be one of {DP_KINDS}")
    if w.c_t > 0 and w.tau_t > 0:
        # the windowed temporal indicator is not a pseudometric; two hops of
        # tau_t can bridge more than tau_t
        out.append("c_t > 0 with tau_t > 0 breaks the triangle inequality; "
                   "use tau_t = 0 or c_t = 0")
    return out


@dataclass(frozen=True)
class AbstractionConfig:
    d_min: tuple[float, ...] = (0.002, 0.002)
    d_max: tuple[float, ...] = (0.05, 0.05)
    n_min: float = 2e-4
    e_mean: float = 0.005
    e_max: float = 0.01
    reduction_band: tuple[float, float] = (0.10, 0.30)
    gamma: float = 0.95
    delta: float = 0.05
    seed: int = 0
    k_method: str = "silhouette"
    alpha: float = 0.5
    beta: float = 0.5
    max_iters: int = 50
    k_range: tuple[int, ...] = ()
    p_tol: float | None = 0.25
    auto_split: bool = False
    split_budget: int = 16
    cluster_mode: str = "kmeans"


def validate_config(config: AbstractionConfig) -> list[str]:
    """Invariant check. Violations are data, not failures: returns a list of
    human-readable strings, empty iff the config is valid."""
    out: list[str] = []
    if len(config.d_min) != len(config.d_max):
        out.append("d_min and d_max must have the same dimension count")
    else:
        for j, (dmin, dmax) in enumerate(zip(config.d_min, config.d_max)):
            if not (0 < dmin):
                out.append(f"d_min[{j}] must be > 0")
            if dmin > dmax:
                out.append(f"d_min <= d_max violated at dimension {j}")
    if not (0 < config.n_min < 1):
        out.append("n_min must be in (0,1)")
    if config.e_mean > config.e_max:
        out.append("e_mean <= e_max violated")
    lo, hi = config.reduction_band
    if not (0 < lo <= hi < 1):
        out.append("reduction band must satisfy 0 < lo <= hi < 1")
    if not (0 < config.gamma < 1):
        out.append("gamma must be in (0,1)")
    if not (0 < config.delta < 1):
        out.append("delta must be in (0,1)")
    if config.k_method not in K_METHODS:
        out.append(f"k_method must be one of {K_METHODS}")
    if not (math.isfinite(config.alpha) and math.isfinite(config.beta)):
        out.append("alpha and beta must be finite")
    if config.max_iters < 1:
        out.append("max_iters must be >= 1")
    if any(k < 2 for k in config.k_range):
        out.append("k_range entries must be >= 2")
    if list(config.k_range) != sorted(set(config.k_range)):
        out.append("k_range must be strictly increasing")
    if config.p_tol is not None and not (config.p_tol > 0):
        out.append("p_tol must be > 0 or null to disable pruning")
    if config.split_budget < 0:
        out.append("split_budget must be >= 0")
    if config.cluster_mode not in CLUSTER_MODES:
        out.append(f"cluster_mode must be one of {CLUSTER_MODES}")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully parsed configuration document."""

    name: str
    semantics: SemanticMapping
    actions: ActionAbstraction
    abstraction: AbstractionConfig
    weights: MetricWeights
    split_ratio: tuple[int, int] = (8, 2)
    properties: tuple[dict, ...] = ()
    guide: dict = field(default_factory=dict)

    def to_jsonable(self) -> dict:
        return {
            "name": self.name,
            "semantics": [{"name": d.name, "expr": d.expr, "unit": d.unit}
                          for d in self.semantics.dimensions],
            "actions": [{"name": n, "low": lo, "high": hi, "granularity": g}
                        for n, lo, hi, g in zip(self.actions.names, self.actions.lows,
                                                self.actions.highs, self.actions.granularities)],
            "abstraction": {
                f.name: (list(v) if isinstance(v := getattr(self.abstraction, f.name), tuple) else v)
                for f in fields(AbstractionConfig)
            },
            "weights": {f.name: getattr(self.weights, f.name) for f in fields(MetricWeights)},
            "split": {"ratio": list(self.split_ratio)},
            "properties": [dict(p) for p in self.properties],
            "guide": dict(self.guide),
        }


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(config.to_jsonable(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _reject_unknown(section: str, mapping: Mapping[str, Any], known: Sequence[str]) -> None:
    unknown = sorted(set(mapping) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def _parse_abstraction(raw: Mapping[str, Any]) -> AbstractionConfig:
    known = [f.name for f in fields(AbstractionConfig)]
    _reject_unknown("abstraction", raw, known)
    kwargs: dict[str, Any] = dict(raw)
    for key in ("d_min", "d_max"):
        if key in kwargs:
            v = kwargs[key]
            kwargs[key] = tuple(float(x) for x in (v if isinstance(v, (list, tuple)) else [v]))
    if "reduction_band" in kwargs:
        band = kwargs["reduction_band"]
        if not (isinstance(band, (list, tuple)) and len(band) == 2):
            raise ConfigError("reduction_band must be a [lo, hi] pair")
        kwargs["reduction_band"] = (float(band[0]), float(band[1]))
    if "k_range" in kwargs:
        kwargs["k_range"] = tuple(int(k) for k in kwargs["k_range"])
    return AbstractionConfig(**kwargs)


def _parse_weights(raw: Mapping[str, Any]) -> MetricWeights:
    known = [f.name for f in fields(MetricWeights)]
    _reject_unknown("weights", raw, known)
    return MetricWeights(**raw)


def parse_experiment_config(doc: Mapping[str, Any]) -> ExperimentConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("config document must be a JSON object")
    _reject_unknown("config", doc,
                    ["name", "semantics", "actions", "abstraction", "weights",
                     "split", "properties", "guide"])
    if "semantics" not in doc:
        raise ConfigError("config is missing the 'semantics' section")
    if "actions" not in doc:
        raise ConfigError("config is missing the 'actions' section")

    dims = []
    for i, item in enumerate(doc["semantics"]):
        _reject_unknown(f"semantics[{i}]", item, ["name", "expr", "unit"])
        if "name" not in item or "expr" not in item:
            raise ConfigError(f"semantics[{i}] needs 'name' and 'expr'")
        dims.append(SemanticDim(str(item["name"]), str(item["expr"]), str(item.get("unit", ""))))
    semantics = SemanticMapping(tuple(dims))

    names, lows, highs, grans = [], [], [], []
    for i, item in enumerate(doc["actions"]):
        _reject_unknown(f"actions[{i}]", item, ["name", "low", "high", "granularity"])
        for key in ("name", "low", "high", "granularity"):
            if key not in item:
                raise ConfigError(f"actions[{i}] needs '{key}'")
        names.append(str(item["name"]))
        lows.append(float(item["low"]))
        highs.append(float(item["high"]))
        grans.append(float(item["granularity"]))
    try:
        actions = ActionAbstraction(tuple(names), tuple(lows), tuple(highs), tuple(grans))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    abstraction = _parse_abstraction(doc.get("abstraction", {}))
    weights = _parse_weights(doc.get("weights", {}))

    split = doc.get("split", {"ratio": [8, 2]})
    _reject_unknown("split", split, ["ratio"])
    ratio = split.get("ratio", [8, 2])
    if not (isinstance(ratio, (list, tuple)) and len(ratio) == 2
            and all(isinstance(r, int) and r > 0 for r in ratio)):
        raise ConfigError("split.ratio must be a pair of positive integers")

    properties = []
    for i, item in enumerate(doc.get("properties", [])):
        _reject_unknown(f"properties[{i}]", item, ["kind", "horizon", "label"])
        properties.append(dict(item))

    guide = dict(doc.get("guide", {}))
    _reject_unknown("guide", guide,
                    ["env", "episodes", "learning_rate", "eps_start", "eps_end",
                     "threshold_fraction", "horizon", "lka_sin2"])

    violations = validate_config(abstraction) + validate_weights(weights)
    if violations:
        raise ConfigError("invalid configuration: " + "; ".join(violations))

    # expression sanity: compile against a dummy schema of the referenced names
    # happens at dataset load time when the real schema is known

    return ExperimentConfig(
        name=str(doc.get("name", "experiment")),
        semantics=semantics,
        actions=actions,
        abstraction=abstraction,
        weights=weights,
        split_ratio=(int(ratio[0]), int(ratio[1])),
        properties=tuple(properties),
        guide=guide,
    )


def load_experiment_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return parse_experiment_config(doc)
