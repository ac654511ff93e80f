"""Grid-search channel-parameter estimators, position/orientation recovery and metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .geometry import (
    SPEED_OF_LIGHT,
    ChannelParams,
    ScenarioGeometry,
    bs_beamformer,
    cascade,
    derive_channel_params,
    hop_channels,
    ris_pointing,
    steering_vector,
    wrap_angle,
)


@dataclass(frozen=True)
class EstimatorGrids:
    theta_grid: np.ndarray  # RIS departure angles, radians
    phi_grid: np.ndarray  # MS arrival angles, radians
    tau_grid: np.ndarray  # total BS -> RIS -> MS delays, seconds

    def __post_init__(self):
        for name in ("theta_grid", "phi_grid", "tau_grid"):
            g = getattr(self, name)
            if g.ndim != 1 or g.size == 0 or np.any(np.diff(g) <= 0):
                raise InvalidArgument(f"{name} must be a nonempty strictly increasing 1-D array")


def make_grids(geom: ScenarioGeometry, theta_points: int = 2048, phi_points: int = 2048,
               tau_step: float = 0.05e-9, tau_span: float = 500e-9,
               params: ChannelParams | None = None) -> EstimatorGrids:
    """Uniform search grids.

    Departure angles cover (-pi/2, pi/2).  Arrival angles at the MS cover (pi/2, 3pi/2): a ULA
    cannot tell front from back, and the RIS lies behind the MS broadside for small
    orientations.  The delay span is capped at ``N/B`` because the subcarrier phase ramp
    repeats with that period.
    """
    params = params or derive_channel_params(geom)
    k = np.arange(theta_points)
    theta = -np.pi / 2 + (k + 0.5) * np.pi / theta_points
    k = np.arange(phi_points)
    phi = np.pi / 2 + (k + 0.5) * np.pi / phi_points
    span = min(tau_span, geom.num_subcarriers / geom.bandwidth)
    tau = params.tau_br + np.arange(0.0, span, tau_step)
    tau = tau[tau < params.tau_br + span]
    return EstimatorGrids(theta_grid=theta, phi_grid=phi, tau_grid=tau)


def _argmax_first(values: np.ndarray) -> int:
    return int(np.argmax(values))


def estimate_theta_rm(phi_opt: np.ndarray, phi_br: float, grid: np.ndarray, geom: ScenarioGeometry) -> float:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InvalidArgument("empty theta grid")
    objective = np.abs(ris_pointing(grid, phi_br, geom).conj().T @ phi_opt)
    return float(grid[_argmax_first(objective)])


def estimate_phi_rm(w_opt: np.ndarray, grid: np.ndarray, geom: ScenarioGeometry) -> float:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InvalidArgument("empty phi grid")
    objective = np.abs(steering_vector(geom.n_ms, grid, geom.spacing_ratio).conj().T @ w_opt)
    return float(grid[_argmax_first(objective)])


def delay_signature(tau, geom: ScenarioGeometry) -> np.ndarray:
    """Phase ramp over the subcarriers for delay(s) ``tau``; shape (N,) or (N, len(tau))."""
    n = geom.subcarrier_indices.astype(float)
    return np.exp(-2j * np.pi * np.multiply.outer(n, np.asarray(tau, dtype=float)) * geom.bandwidth
                  / geom.num_subcarriers)


def estimate_tau_rm(y_stacked: np.ndarray, tau_br: float, grid: np.ndarray, geom: ScenarioGeometry) -> float:
    """Correlate against the delay signature of each total delay in ``grid``; subtract tau_br."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InvalidArgument("empty tau grid")
    objective = np.abs(np.conj(y_stacked) @ delay_signature(grid, geom))
    return float(grid[_argmax_first(objective)] - tau_br)


def recover_position(theta_hat: float, tau_hat: float, ris_position) -> np.ndarray:
    if not tau_hat > 0:
        raise InvalidArgument(f"tau_hat must be positive, got {tau_hat}")
    r = np.asarray(ris_position, dtype=float)
    return r + SPEED_OF_LIGHT * tau_hat * np.array([math.cos(theta_hat), math.sin(theta_hat)])


def recover_orientation(theta_hat: float, phi_hat: float) -> float:
    return wrap_angle(math.pi + theta_hat - phi_hat)


@dataclass(frozen=True)
class PositionEstimate:
    m_hat: np.ndarray
    alpha_hat: float
    theta_hat: float
    phi_hat: float
    tau_hat: float


def estimate_position(phi_opt: np.ndarray, w_opt: np.ndarray, y_stacked: np.ndarray, geom: ScenarioGeometry,
                      grids: EstimatorGrids) -> PositionEstimate:
    """Full two-step localization from the selected codewords and their observations.

    Only the BS and RIS positions are taken from ``geom``; the MS position and orientation
    there are never read.
    """
    known = derive_channel_params(geom)
    theta = estimate_theta_rm(phi_opt, known.phi_br, grids.theta_grid, geom)
    phi = estimate_phi_rm(w_opt, grids.phi_grid, geom)
    tau = estimate_tau_rm(y_stacked, known.tau_br, grids.tau_grid, geom)
    return PositionEstimate(
        m_hat=recover_position(theta, tau, geom.ris_position),
        alpha_hat=recover_orientation(theta, phi),
        theta_hat=wrap_angle(theta),
        phi_hat=wrap_angle(phi),
        tau_hat=tau,
    )


def metrics(truth: ScenarioGeometry, est: PositionEstimate) -> tuple[float, float]:
    """Squared position error (m^2) and squared wrapped orientation error (rad^2)."""
    pe = float(np.sum((truth.m - est.m_hat) ** 2))
    oe = wrap_angle(truth.ms_orientation - est.alpha_hat) ** 2
    return pe, oe


def effective_gains(w_opt: np.ndarray, phi_opt: np.ndarray, geom: ScenarioGeometry,
                    params: ChannelParams | None = None) -> np.ndarray:
    """|w^H H[n] f| on every subcarrier."""
    params = params or derive_channel_params(geom)
    h_br, h_rm = hop_channels(geom, params)
    h = cascade(h_rm, phi_opt, h_br)
    return np.abs(w_opt.conj() @ (h @ bs_beamformer(geom, params)).T)


def achievable_rate(w_opt: np.ndarray, phi_opt: np.ndarray, geom: ScenarioGeometry, tx_power: float,
                    sigma_sq: float, params: ChannelParams | None = None) -> float:
    """Sum over subcarriers of log2(1 + P |w^H H[n] f|^2 / sigma^2), in bits per OFDM symbol."""
    if sigma_sq <= 0:
        raise InvalidArgument("sigma_sq must be positive for a finite rate")
    g = effective_gains(w_opt, phi_opt, geom, params)
    return float(np.sum(np.log2(1 + tx_power / sigma_sq * g**2)))
