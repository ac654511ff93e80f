"""RIS-aided mmWave joint localization and communication simulator.

Hierarchical RIS/MS codebooks, the adaptive feedback beam-training protocol with its
exhaustive-search and random-phase baselines, grid-search parameter estimation and
position/orientation recovery.
"""
from .codebook import (
    MsCodebook,
    RisCodebook,
    SolverSettings,
    beam_pattern,
    build_ms_codebook,
    build_ris_codebook,
    children,
)
from .errors import ConfigError, InvalidArgument, InvalidGeometry, NumericalFailure
from .estimation import EstimatorGrids, PositionEstimate, achievable_rate, estimate_position, make_grids, metrics
from .geometry import (
    ChannelParams,
    ScenarioGeometry,
    derive_channel_params,
    far_field_limit,
    optimal_phase_profile,
    steering_vector,
)
from .harness import SimulationConfig, TrialRecord, noise_free_bound, run_sweep, tx_power_from_snr
from .training import Link, NoiseModel, TrainingOutcome, run_adaptive, run_exhaustive, run_random_phase, slot_count

__version__ = "0.1.0"
