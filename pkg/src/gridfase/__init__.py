"""Multi-rate adaptive state estimation toolkit for distribution feeders."""

from .errors import (
    ChecksumMismatch,
    DimensionMismatch,
    EmptyReplay,
    GridFaseError,
    NonConvergence,
    ParseError,
    RankDeficient,
    SingularInnovation,
    ValidationError,
)
from .feeder import FeederModel, TopologyOrder, load_feeder, serialize_feeder, topology_order
from .powerflow import (
    BaseCurves,
    InjectionProfile,
    NetworkIndex,
    SystemState,
    generate_profiles,
    solve_powerflow,
    true_trajectory,
)
from .telemetry import (
    Kind,
    Measurement,
    NoiseSpec,
    SensorConfig,
    Snapshot,
    build_channels,
    h_full,
    h_slow,
    jacobian_H,
    stream,
    synthesize,
)
from .estimator import (
    FilterConfig,
    FilterState,
    HoltMemory,
    SmoothingCoefficients,
    ekf_update,
    fase_step,
    holt_advance,
    holt_fg,
    predict,
    reconstruct_slow,
    wls_static,
)
from .agent import (
    ActionGrid,
    QNetwork,
    TrainConfig,
    TrainedAgent,
    Transition,
    act,
    bellman_target,
    load_agent,
    observe,
    reward,
    save_agent,
    train_offline,
    train_step,
)
from .harness import (
    FaseEpisodeEnv,
    Method,
    MetricsReport,
    RunTrace,
    Scenario,
    compare,
    episode_env,
    load_scenario,
    metrics,
    monte_carlo,
    run_scenario,
)

__version__ = "0.1.0"

DATA_DIR = __path__[0] + "/data"
