"""Experiment configuration: nested YAML mapped onto frozen dataclasses.

Validation errors name the offending field by its dotted path, e.g.
``lesions.test_shapes``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigValidationError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class PhantomConfig:
    source: str = "procedural"  # or a phantom directory
    dims: tuple = (48, 48, 48)
    seed: int = 1


@dataclass(frozen=True)
class ProtocolConfig:
    bvalues: tuple = (0.0, 1000.0, 4000.0)
    sigma_fraction: float = 0.07
    n_directions: int = 3
    direction_seed: int = 0
    train_directions: tuple = (0, 1)
    test_direction: int = 2
    repetitions: int = 2
    noise_seed: int = 1000


@dataclass(frozen=True)
class LesionConfig:
    n_shapes: int = 24
    size_range: tuple = (4, 9)
    elongation_range: tuple = (1.0, 3.0)
    shape_seed: int = 0
    train_shapes: tuple = (0, 16)  # [start, stop) into the shape list
    test_shapes: tuple = (16, 24)
    count_range: tuple = (4, 10)
    seed: int = 100


@dataclass(frozen=True)
class MethodSpec:
    inputs: tuple


def _default_methods():
    return {
        "MBD": MethodSpec((0.0, 1000.0, 4000.0)),
        "N2N": MethodSpec((4000.0,)),
        "CNNe": MethodSpec((0.0, 1000.0)),
    }


@dataclass(frozen=True)
class TrainingSection:
    target_bvalue: float = 4000.0
    patch_size: int = 16
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 60
    patience: int = 10
    loss: str = "MSE"
    seed: int = 0
    val_fraction: float = 1.0 / 3.0
    split_seed: int = 5
    symmetric_pairs: bool = True
    methods: dict = field(default_factory=_default_methods)


@dataclass(frozen=True)
class EvaluationConfig:
    n_paramsets: int = 200
    n_test_slices: int = 3
    seed: int = 7
    mppca_patch_radius: int = 2
    alge_pair: tuple = (0.0, 1000.0)
    showcase: dict = field(default_factory=lambda: {"f": 0.75, "D1": 0.4, "D2": 0.6, "dT2": 15.0})


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    lesions: LesionConfig = field(default_factory=LesionConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form (key order and YAML layout do not matter)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def validate(self) -> "ExperimentConfig":
        p, pr, le, tr, ev = self.phantom, self.protocol, self.lesions, self.training, self.evaluation
        if len(p.dims) != 3 or min(p.dims) < 32:
            _fail("phantom.dims", "need three dims, each >= 32")
        if not pr.bvalues or list(pr.bvalues) != sorted(set(pr.bvalues)) or pr.bvalues[0] < 0:
            _fail("protocol.bvalues", "must be distinct, ascending and non-negative")
        if pr.sigma_fraction < 0:
            _fail("protocol.sigma_fraction", "must be >= 0")
        if pr.repetitions < 2:
            _fail("protocol.repetitions", "training on repetition pairs needs >= 2")
        dirs = set(pr.train_directions)
        if not dirs:
            _fail("protocol.train_directions", "need at least one training direction")
        if any(not 0 <= d < pr.n_directions for d in dirs | {pr.test_direction}):
            _fail("protocol.train_directions", f"direction indices must lie in [0, {pr.n_directions})")
        if pr.test_direction in dirs:
            _fail("protocol.test_direction", "the test direction must not be used for training")
        for name in ("train_shapes", "test_shapes"):
            a, b = getattr(le, name)
            if not 0 <= a < b <= le.n_shapes:
                _fail(f"lesions.{name}", f"range [{a}, {b}) not within the {le.n_shapes} shapes")
        (a0, a1), (b0, b1) = le.train_shapes, le.test_shapes
        if a0 < b1 and b0 < a1:
            _fail("lesions.test_shapes", "overlaps lesions.train_shapes; the pools must be disjoint")
        if le.count_range[0] < 1 or le.count_range[1] < le.count_range[0]:
            _fail("lesions.count_range", "need 1 <= min <= max")
        if tr.target_bvalue not in pr.bvalues:
            _fail("training.target_bvalue", f"not among protocol.bvalues {pr.bvalues}")
        if tr.patch_size < 16:
            _fail("training.patch_size", "must be >= 16")
        if not 0 < tr.val_fraction < 1:
            _fail("training.val_fraction", "must lie in (0, 1)")
        for name in ("batch_size", "max_epochs", "patience"):
            if getattr(tr, name) <= 0:
                _fail(f"training.{name}", "must be positive")
        if tr.learning_rate <= 0:
            _fail("training.learning_rate", "must be positive")
        for m, spec in tr.methods.items():
            if m not in ("MBD", "N2N", "CNNe"):
                _fail(f"training.methods.{m}", "unknown network method")
            if any(b not in pr.bvalues for b in spec.inputs):
                _fail(f"training.methods.{m}.inputs", f"b-values must come from {pr.bvalues}")
        if ev.n_paramsets < 1:
            _fail("evaluation.n_paramsets", "must be >= 1")
        if ev.n_test_slices < 1:
            _fail("evaluation.n_test_slices", "must be >= 1")
        if len(ev.alge_pair) != 2 or ev.alge_pair[0] == ev.alge_pair[1] or any(b not in pr.bvalues for b in ev.alge_pair):
            _fail("evaluation.alge_pair", "need two distinct b-values from the protocol")
        return self


def _fail(path, message):
    raise ConfigValidationError(path, message)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(value, default, path):
    """Cast ``value`` to the type of ``default``."""
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise TypeError
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in value)
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigValidationError(path, f"expected {type(default).__name__}, got {value!r}") from None
    return value


def _build(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigValidationError(path or "<root>", "expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigValidationError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")
    default = cls()
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        current = getattr(default, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, sub)
        elif name == "methods":
            if not isinstance(value, dict) or not value:
                raise ConfigValidationError(sub, "expected a non-empty mapping of method -> {inputs: [...]}")
            kwargs[name] = {m: MethodSpec(_coerce((spec or {}).get("inputs"), (0.0,), f"{sub}.{m}.inputs")) for m, spec in value.items()}
        elif name == "showcase":
            kwargs[name] = {k: _coerce(v, 0.0, f"{sub}.{k}") for k, v in value.items()}
        else:
            kwargs[name] = _coerce(value, current, sub)
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigValidationError("<file>", f"not valid YAML: {exc}") from None
    return config_from_dict(data or {})


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
