"""Semantic-aware multiple access: simulator, fairness objectives, allocation
oracles, and a multi-agent recurrent Q-learning stack, all seed-reproducible."""

from .config import (
    ALL_VARIANTS,
    ExperimentConfig,
    PRESET_NAMES,
    VARIANT_MA,
    VARIANT_RANDOM,
    VARIANT_SAMA,
    preset,
)
from .env import (
    AssociationMatrix,
    ChannelObs,
    EnvState,
    JointAction,
    SemanticMacEnv,
    SlotOutcome,
    ThroughputLedger,
    segment_indicator,
    throughputs,
)
from .errors import (
    ConfigurationError,
    ContractError,
    ResourceBudgetError,
    SemamacError,
    TrainingDivergedError,
    UnsupportedConfigurationError,
)
from .fairness import AlphaFairness, max_min, utility
from .oracle import TimeShare, brute_force_schedule, optimal_time_share, stationary_throughputs
from .qnet import (
    AgentObservation,
    DuelingRecurrentQNet,
    ObsTuple,
    ReplayMemory,
    encode_state,
    load_checkpoint,
    save_checkpoint,
    sync_target,
    td_target,
    train_step,
)
from .trainer import AgentPolicy, EpsilonSchedule, RunResult, evaluate, run, select_action

__version__ = "0.1.0"
