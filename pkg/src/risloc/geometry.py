"""Scene geometry, ULA steering vectors and the cascaded BS -> RIS -> MS OFDM channel.

Conventions
-----------
* Array response of an ``N``-element ULA: ``[a(angle)]_i = exp(j 2 pi (i-1) (d/lambda) sin(angle))``,
  angles measured from broadside.
* The BS -> RIS departure angle is ``arccos((r_x - b_x) / |b - r|)`` and the RIS arrival angle is
  ``-pi`` plus that value.  The RIS -> MS departure angle is the bearing of ``m - r`` and the MS
  arrival angle is ``pi + theta_rm - alpha``.
* Subcarriers are indexed symmetrically, ``n = -(N-1)/2 .. (N-1)/2``, and every subcarrier uses the
  carrier wavelength.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, InvalidGeometry
from .kvfile import format_kv, read_kv

SPEED_OF_LIGHT = 299_792_458.0
RANK1_RTOL = 1e-9


def wrap_angle(angle):
    """Wrap radians into (-pi, pi]."""
    wrapped = np.angle(np.exp(1j * np.asarray(angle, dtype=float)))
    # np.angle maps the branch cut to +pi already except for exact -pi
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2 * np.pi, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


@dataclass(frozen=True)
class ScenarioGeometry:
    bs_position: tuple[float, float] = (0.0, 0.0)
    ris_position: tuple[float, float] = (40.0, 60.0)
    ms_position: tuple[float, float] = (60.0, 45.0)
    ms_orientation: float = math.pi / 10
    carrier_frequency: float = 60e9
    bandwidth: float = 100e6
    num_subcarriers: int = 31
    element_spacing: float | None = None  # None -> half wavelength
    path_loss_exponent: float = 2.08
    n_bs: int = 64
    n_ms: int = 16
    n_ris: int = 16
    n_rf: int = 2

    def __post_init__(self):
        object.__setattr__(self, "bs_position", tuple(float(v) for v in self.bs_position))
        object.__setattr__(self, "ris_position", tuple(float(v) for v in self.ris_position))
        object.__setattr__(self, "ms_position", tuple(float(v) for v in self.ms_position))
        if self.element_spacing is None:
            object.__setattr__(self, "element_spacing", self.wavelength / 2)
        if self.num_subcarriers < 1 or self.num_subcarriers % 2 == 0:
            raise InvalidArgument(f"num_subcarriers must be odd and positive, got {self.num_subcarriers}")
        if not 0 < self.bandwidth < 0.05 * self.carrier_frequency:
            raise InvalidArgument("bandwidth must be positive and below 5% of the carrier frequency")
        for name in ("n_bs", "n_ms", "n_ris", "n_rf"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        if self.n_rf > self.n_ms:
            raise InvalidArgument("n_rf cannot exceed n_ms")
        if self.element_spacing <= 0:
            raise InvalidArgument("element_spacing must be positive")
        if self.dist_br == 0 or self.dist_rm == 0:
            raise InvalidGeometry("BS, RIS and MS positions must be distinct")
        if self.n_ris >= far_field_bound(self):
            raise InvalidGeometry(
                f"n_ris={self.n_ris} violates the far-field limit {far_field_bound(self):.3f}"
            )

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def spacing_ratio(self) -> float:
        return self.element_spacing / self.wavelength

    @property
    def subcarrier_indices(self) -> np.ndarray:
        half = (self.num_subcarriers - 1) // 2
        return np.arange(-half, half + 1)

    @property
    def b(self) -> np.ndarray:
        return np.array(self.bs_position)

    @property
    def r(self) -> np.ndarray:
        return np.array(self.ris_position)

    @property
    def m(self) -> np.ndarray:
        return np.array(self.ms_position)

    @property
    def dist_br(self) -> float:
        return float(np.linalg.norm(self.b - self.r))

    @property
    def dist_rm(self) -> float:
        return float(np.linalg.norm(self.r - self.m))

    def with_ms(self, position, orientation=None) -> "ScenarioGeometry":
        if orientation is None:
            orientation = self.ms_orientation
        return replace(self, ms_position=tuple(position), ms_orientation=orientation)


@dataclass(frozen=True)
class ChannelParams:
    theta_br: float
    phi_br: float
    theta_rm: float
    phi_rm: float
    tau_br: float
    tau_rm: float
    rho_br: float
    rho_rm: float

    @property
    def tau_total(self) -> float:
        return self.tau_br + self.tau_rm


def steering_vector(num_elements: int, angle, spacing_ratio: float = 0.5) -> np.ndarray:
    """ULA response; ``angle`` may be a scalar (-> vector) or 1-D array (-> one column per angle)."""
    if num_elements < 1:
        raise InvalidArgument("num_elements must be >= 1")
    i = np.arange(num_elements)
    angle = np.asarray(angle, dtype=float)
    phase = 2 * np.pi * spacing_ratio * np.multiply.outer(i, np.sin(angle))
    return np.exp(1j * phase)


def derive_channel_params(geom: ScenarioGeometry) -> ChannelParams:
    dbr, drm = geom.dist_br, geom.dist_rm
    if dbr == 0 or drm == 0:
        raise InvalidGeometry("coincident BS/RIS or RIS/MS positions")
    b, r, m = geom.b, geom.r, geom.m
    theta_br = math.acos((r[0] - b[0]) / dbr)
    theta_rm = math.atan2(m[1] - r[1], m[0] - r[0])
    mu = geom.path_loss_exponent
    return ChannelParams(
        theta_br=theta_br,
        phi_br=-math.pi + theta_br,
        theta_rm=theta_rm,
        phi_rm=wrap_angle(math.pi + theta_rm - geom.ms_orientation),
        tau_br=dbr / SPEED_OF_LIGHT,
        tau_rm=drm / SPEED_OF_LIGHT,
        rho_br=dbr ** (-mu / 2),
        rho_rm=drm ** (-mu / 2),
    )


def _delay_phase(tau, n, geom):
    return np.exp(-2j * np.pi * tau * np.asarray(n) * geom.bandwidth / geom.num_subcarriers)


def _check_subcarrier(n, geom):
    half = (geom.num_subcarriers - 1) // 2
    if int(n) != n or abs(n) > half:
        raise InvalidArgument(f"subcarrier index {n} outside [-{half}, {half}]")


def single_hop_channel(which: str, n: int, params: ChannelParams, geom: ScenarioGeometry) -> np.ndarray:
    """One hop of the two-hop channel on subcarrier ``n``.

    ``which`` is ``"br"`` (BS -> RIS, shape N_R x N_B) or ``"rm"`` (RIS -> MS, shape N_M x N_R).
    """
    _check_subcarrier(n, geom)
    q = geom.spacing_ratio
    if which == "br":
        rx = steering_vector(geom.n_ris, params.phi_br, q)
        tx = steering_vector(geom.n_bs, params.theta_br, q)
        rho, tau = params.rho_br, params.tau_br
    elif which == "rm":
        rx = steering_vector(geom.n_ms, params.phi_rm, q)
        tx = steering_vector(geom.n_ris, params.theta_rm, q)
        rho, tau = params.rho_rm, params.tau_rm
    else:
        raise InvalidArgument(f"unknown hop {which!r}; expected 'br' or 'rm'")
    return rho * _delay_phase(tau, n, geom) * np.outer(rx, tx.conj())


def hop_channels(geom: ScenarioGeometry, params: ChannelParams | None = None):
    """Both hops stacked over subcarriers: shapes (N, N_R, N_B) and (N, N_M, N_R)."""
    params = params or derive_channel_params(geom)
    h_br = np.stack([single_hop_channel("br", n, params, geom) for n in geom.subcarrier_indices])
    h_rm = np.stack([single_hop_channel("rm", n, params, geom) for n in geom.subcarrier_indices])
    return h_br, h_rm


def check_phase_profile(profile: np.ndarray, n_ris: int | None = None, atol: float = 1e-9) -> np.ndarray:
    profile = np.asarray(profile, dtype=complex)
    if profile.ndim != 1 or (n_ris is not None and profile.size != n_ris):
        raise InvalidArgument(f"phase profile must be a vector of length {n_ris}")
    modulus = 1 / math.sqrt(profile.size)
    if not np.allclose(np.abs(profile), modulus, rtol=0, atol=atol):
        raise InvalidArgument("phase profile entries must all have modulus 1/sqrt(N_R)")
    return profile


def cascade(h_rm: np.ndarray, phase_profile: np.ndarray, h_br: np.ndarray) -> np.ndarray:
    """H_RM diag(phi) H_BR; works on single matrices or subcarrier stacks."""
    phase_profile = check_phase_profile(phase_profile, h_br.shape[-2])
    return h_rm @ (phase_profile[:, None] * h_br)


def reflection_gain(phase_profile: np.ndarray, params: ChannelParams, geom: ScenarioGeometry) -> complex:
    """beta = [a(theta_rm) * conj(a(phi_br))]^H phi."""
    return complex(np.vdot(ris_pointing(params.theta_rm, params.phi_br, geom), phase_profile))


def ris_pointing(theta_rm, phi_br: float, geom: ScenarioGeometry) -> np.ndarray:
    """Columns a_t(theta) * conj(a_r(phi_br)) for each theta (vector if theta is scalar)."""
    q = geom.spacing_ratio
    at = steering_vector(geom.n_ris, theta_rm, q)
    ar = steering_vector(geom.n_ris, phi_br, q)
    return at * (ar.conj() if at.ndim == 1 else ar.conj()[:, None])


def optimal_phase_profile(theta_rm: float, phi_br: float, geom: ScenarioGeometry) -> np.ndarray:
    return ris_pointing(theta_rm, phi_br, geom) / math.sqrt(geom.n_ris)


def bs_beamformer(geom: ScenarioGeometry, params: ChannelParams | None = None) -> np.ndarray:
    params = params or derive_channel_params(geom)
    return steering_vector(geom.n_bs, params.theta_br, geom.spacing_ratio) / math.sqrt(geom.n_bs)


def matched_combiner(geom: ScenarioGeometry, params: ChannelParams | None = None) -> np.ndarray:
    params = params or derive_channel_params(geom)
    return steering_vector(geom.n_ms, params.phi_rm, geom.spacing_ratio) / math.sqrt(geom.n_ms)


@dataclass(frozen=True)
class CascadedChannel:
    per_subcarrier: np.ndarray = field(repr=False)  # (N, N_M, N_B)
    beta: complex
    params: ChannelParams
    phase_profile: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.per_subcarrier.setflags(write=False)
        self.phase_profile.setflags(write=False)

    def is_rank_one(self, rtol: float = RANK1_RTOL) -> bool:
        s = np.linalg.svd(self.per_subcarrier, compute_uv=False)
        return bool(np.all(s[:, 1] < rtol * s[:, 0])) if s.shape[1] > 1 else True


def cascaded_channel(geom: ScenarioGeometry, phase_profile: np.ndarray,
                     params: ChannelParams | None = None) -> CascadedChannel:
    params = params or derive_channel_params(geom)
    profile = check_phase_profile(phase_profile, geom.n_ris).copy()
    h_br, h_rm = hop_channels(geom, params)
    return CascadedChannel(
        per_subcarrier=cascade(h_rm, profile, h_br),
        beta=reflection_gain(profile, params, geom),
        params=params,
        phase_profile=profile,
    )


def far_field_bound(geom: ScenarioGeometry) -> float:
    """Right-hand side of the far-field element-count inequality (N_R must be strictly below)."""
    lam, d = geom.wavelength, geom.element_spacing
    return math.sqrt(lam) / (math.sqrt(2) * d) * math.sqrt(min(geom.dist_br, geom.dist_rm))


def far_field_limit(geom: ScenarioGeometry) -> int:
    """Largest RIS element count that still satisfies the far-field condition."""
    return math.ceil(far_field_bound(geom)) - 1


# --- scenario files -------------------------------------------------------------------------

SCENARIO_KEYS = (
    "bs_x", "bs_y", "ris_x", "ris_y", "ms_x", "ms_y", "alpha_rad", "fc_hz", "bw_hz",
    "n_subcarriers", "n_bs", "n_ms", "n_ris", "n_rf", "mu",
)


def scenario_from_mapping(values: dict[str, str]) -> ScenarioGeometry:
    missing = [k for k in SCENARIO_KEYS if k not in values]
    if missing:
        raise InvalidArgument(f"scenario is missing keys: {', '.join(missing)}")
    f = {k: float(values[k]) for k in SCENARIO_KEYS}
    ints = {}
    for k in ("n_subcarriers", "n_bs", "n_ms", "n_ris", "n_rf"):
        if f[k] != int(f[k]):
            raise InvalidArgument(f"{k} must be an integer, got {values[k]!r}")
        ints[k] = int(f[k])
    return ScenarioGeometry(
        bs_position=(f["bs_x"], f["bs_y"]),
        ris_position=(f["ris_x"], f["ris_y"]),
        ms_position=(f["ms_x"], f["ms_y"]),
        ms_orientation=f["alpha_rad"],
        carrier_frequency=f["fc_hz"],
        bandwidth=f["bw_hz"],
        num_subcarriers=ints["n_subcarriers"],
        path_loss_exponent=f["mu"],
        n_bs=ints["n_bs"],
        n_ms=ints["n_ms"],
        n_ris=ints["n_ris"],
        n_rf=ints["n_rf"],
    )


def scenario_to_mapping(geom: ScenarioGeometry) -> dict[str, object]:
    return {
        "bs_x": repr(geom.bs_position[0]), "bs_y": repr(geom.bs_position[1]),
        "ris_x": repr(geom.ris_position[0]), "ris_y": repr(geom.ris_position[1]),
        "ms_x": repr(geom.ms_position[0]), "ms_y": repr(geom.ms_position[1]),
        "alpha_rad": repr(geom.ms_orientation),
        "fc_hz": repr(geom.carrier_frequency), "bw_hz": repr(geom.bandwidth),
        "n_subcarriers": geom.num_subcarriers,
        "n_bs": geom.n_bs, "n_ms": geom.n_ms, "n_ris": geom.n_ris, "n_rf": geom.n_rf,
        "mu": repr(geom.path_loss_exponent),
    }


def load_scenario(path: str | Path) -> ScenarioGeometry:
    return scenario_from_mapping(read_kv(path, set(SCENARIO_KEYS)))


def save_scenario(geom: ScenarioGeometry, path: str | Path) -> None:
    Path(path).write_text(format_kv(scenario_to_mapping(geom)), encoding="utf-8")
