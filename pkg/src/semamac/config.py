"""Experiment configuration: scenario presets, validation, JSON round-trip.

A configuration fully describes one experiment: the network instance
(UE count, channel count, segment count, association matrix), the fairness
setting, the training hyperparameters, and the seed list. Configurations
serialize to JSON with explicit keys so experiment provenance is diff-able.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

from .errors import ConfigurationError

VARIANT_SAMA = "sama-d3ql"
VARIANT_MA = "ma-d3ql"
VARIANT_RANDOM = "random"
ALL_VARIANTS = (VARIANT_SAMA, VARIANT_MA, VARIANT_RANDOM)

_VARIANT_ALIASES = {
    "sama": VARIANT_SAMA,
    "sama-d3ql": VARIANT_SAMA,
    "ma": VARIANT_MA,
    "ma-d3ql": VARIANT_MA,
    "rnd": VARIANT_RANDOM,
    "random": VARIANT_RANDOM,
}

CONFIG_SCHEMA_VERSION = 1


def normalize_variant(name: str) -> str:
    try:
        return _VARIANT_ALIASES[name.strip().lower()]
    except KeyError:
        raise ConfigurationError(
            f"unknown variant {name!r}; expected one of {sorted(set(_VARIANT_ALIASES))}"
        ) from None


@dataclass
class ExperimentConfig:
    """Scenario description plus training hyperparameters.

    `matrix` holds inline association rows (one list of 0/1 per UE), or a
    list of per-slot blocks of such rows for time-varying associations.
    `matrix_file` points at a matrix file instead (mutually exclusive).
    `alpha` may be `math.inf` to request the max-min objective.
    `throughput_window` of None means full-horizon (all-time) averaging.
    """

    n_ues: int
    n_channels: int
    n_segments: int
    matrix: list | None = None
    matrix_file: str | None = None
    horizon: int = 10_000
    alpha: float = 1.0
    variants: list = field(default_factory=lambda: list(ALL_VARIANTS))
    seeds: list = field(default_factory=lambda: list(range(10)))
    history_len: int = 4
    memory_capacity: int = 500
    batch_size: int = 32
    discount: float = 0.9
    learning_rate: float = 0.001
    epsilon_floor: float = 0.005
    epsilon_decay: float = 0.995
    target_sync_every: int = 50
    throughput_window: int | None = None
    optimizer: str = "adam"
    grad_clip: float = 10.0
    lstm_units: int = 64
    fc_units: list = field(default_factory=lambda: [64, 32])
    dtype: str = "float32"

    # ------------------------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        """Check every invariant; raise ConfigurationError naming the violation."""
        if self.n_ues < 1:
            raise ConfigurationError(f"n_ues must be >= 1, got {self.n_ues}")
        if self.n_channels < 1:
            raise ConfigurationError(f"n_channels must be >= 1, got {self.n_channels}")
        if self.n_segments < 1:
            raise ConfigurationError(f"n_segments must be >= 1, got {self.n_segments}")
        if self.horizon < 0:
            raise ConfigurationError(f"horizon must be >= 0, got {self.horizon}")
        if not (isinstance(self.alpha, (int, float)) and (self.alpha >= 0)):
            raise ConfigurationError(f"alpha must be a nonnegative real or inf, got {self.alpha!r}")
        if not self.seeds:
            raise ConfigurationError("seeds list must be non-empty")
        if not (0.0 <= self.discount < 1.0):
            raise ConfigurationError(f"discount must lie in [0, 1), got {self.discount}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.history_len < 1:
            raise ConfigurationError(f"history_len must be >= 1, got {self.history_len}")
        if self.memory_capacity < 1:
            raise ConfigurationError(f"memory_capacity must be >= 1, got {self.memory_capacity}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 < self.epsilon_decay <= 1.0):
            raise ConfigurationError(f"epsilon_decay must lie in (0, 1], got {self.epsilon_decay}")
        if not (0.0 <= self.epsilon_floor <= 1.0):
            raise ConfigurationError(f"epsilon_floor must lie in [0, 1], got {self.epsilon_floor}")
        if self.target_sync_every < 1:
            raise ConfigurationError(f"target_sync_every must be >= 1, got {self.target_sync_every}")
        if self.throughput_window is not None and self.throughput_window < 1:
            raise ConfigurationError(
                f"throughput_window must be >= 1 or null, got {self.throughput_window}"
            )
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.grad_clip <= 0:
            raise ConfigurationError(f"grad_clip must be positive, got {self.grad_clip}")
        if self.lstm_units < 1:
            raise ConfigurationError(f"lstm_units must be >= 1, got {self.lstm_units}")
        if len(self.fc_units) != 2 or any(u < 1 for u in self.fc_units):
            raise ConfigurationError(f"fc_units must be two positive sizes, got {self.fc_units}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be 'float32' or 'float64', got {self.dtype!r}")
        self.variants = [normalize_variant(v) for v in self.variants]
        if (self.matrix is None) == (self.matrix_file is None):
            raise ConfigurationError("exactly one of matrix / matrix_file must be given")
        # Matrix structural invariants (binary entries, coverage) are enforced
        # by AssociationMatrix; this also checks shape against the counts.
        self.association_matrix()
        return self

    def association_matrix(self):
        from .env import AssociationMatrix

        if self.matrix_file is not None:
            mat = AssociationMatrix.from_file(self.matrix_file)
        else:
            mat = AssociationMatrix.from_inline(self.matrix)
        if mat.n_ues != self.n_ues or mat.n_segments != self.n_segments:
            raise ConfigurationError(
                f"matrix shape {mat.n_ues}x{mat.n_segments} does not match "
                f"n_ues={self.n_ues}, n_segments={self.n_segments}"
            )
        return mat

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = "inf" if math.isinf(self.alpha) else self.alpha
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d.pop("schema_version", None)
        if d.get("alpha") == "inf":
            d["alpha"] = math.inf
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(f"incomplete config: {exc}") from None

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())


# ----------------------------------------------------------------------
# Scenario presets.
#
# s1a / s1b are the two single-channel four-UE instances; s2a/s2b/s2c are
# six-UE, three-channel instances with decreasing sparsity of the shared
# structure. The s2 matrices are artifact-defined: each UE always owns one
# private segment, and pair cliques additionally share segments as noted.
_S1A_MATRIX = [
    [1, 1, 0, 0, 0],
    [1, 0, 1, 0, 0],
    [0, 0, 0, 1, 0],
    [0, 0, 0, 0, 1],
]

_S1B_MATRIX = [
    [1, 1, 0, 0],
    [1, 1, 0, 0],
    [0, 0, 1, 1],
    [0, 0, 1, 1],
]

# Sparse: six privates, one segment shared by the (1, 2) pair.
_S2A_MATRIX = [
    [1, 0, 0, 0, 0, 0, 1],
    [0, 1, 0, 0, 0, 0, 1],
    [0, 0, 1, 0, 0, 0, 0],
    [0, 0, 0, 1, 0, 0, 0],
    [0, 0, 0, 0, 1, 0, 0],
    [0, 0, 0, 0, 0, 1, 0],
]

# Dense: six privates, three pair cliques each sharing two segments.
_S2B_MATRIX = [
    [1, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0],
    [0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0, 0, 0, 1, 1, 0, 0],
    [0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0],
    [0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 1],
    [0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1],
]

# Intermediate: six privates, pairs (1, 2) and (3, 4) share one segment each.
_S2C_MATRIX = [
    [1, 0, 0, 0, 0, 0, 1, 0],
    [0, 1, 0, 0, 0, 0, 1, 0],
    [0, 0, 1, 0, 0, 0, 0, 1],
    [0, 0, 0, 1, 0, 0, 0, 1],
    [0, 0, 0, 0, 1, 0, 0, 0],
    [0, 0, 0, 0, 0, 1, 0, 0],
]

_PRESETS = {
    "s1a": dict(n_ues=4, n_channels=1, n_segments=5, matrix=_S1A_MATRIX),
    "s1b": dict(n_ues=4, n_channels=1, n_segments=4, matrix=_S1B_MATRIX),
    "s2a": dict(n_ues=6, n_channels=3, n_segments=7, matrix=_S2A_MATRIX),
    "s2b": dict(n_ues=6, n_channels=3, n_segments=12, matrix=_S2B_MATRIX),
    "s2c": dict(n_ues=6, n_channels=3, n_segments=8, matrix=_S2C_MATRIX),
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def preset(name: str) -> ExperimentConfig:
    """Return a fresh config for a named scenario preset."""
    try:
        spec = _PRESETS[name.strip().lower()]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; available presets: {', '.join(PRESET_NAMES)}"
        ) from None
    cfg = ExperimentConfig(
        n_ues=spec["n_ues"],
        n_channels=spec["n_channels"],
        n_segments=spec["n_segments"],
        matrix=[list(row) for row in spec["matrix"]],
    )
    return cfg.validate()
