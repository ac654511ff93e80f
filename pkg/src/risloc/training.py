"""Beam training over the cascaded channel: the adaptive hierarchical protocol and its baselines.

Codeword and candidate indices in this module are 1-based, matching the protocol trace.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import MsCodebook, RisCodebook, children
from .errors import InvalidArgument
from .geometry import ChannelParams, ScenarioGeometry, bs_beamformer, derive_channel_params, hop_channels

SCHEMES = ("proposed", "exhaustive", "random_phase", "optimal")


@dataclass(frozen=True)
class NoiseModel:
    sigma_sq: float
    rng_seed: int = 0

    def __post_init__(self):
        if self.sigma_sq < 0:
            raise InvalidArgument("sigma_sq must be >= 0")


@dataclass(frozen=True)
class Link:
    """Per-subcarrier hops plus the fixed BS beam, ready for fast codeword sweeps."""

    geom: ScenarioGeometry
    params: ChannelParams
    h_rm: np.ndarray = field(repr=False)  # (N, N_M, N_R)
    incident: np.ndarray = field(repr=False)  # (N, N_R): H_BR[n] f

    @classmethod
    def from_geometry(cls, geom: ScenarioGeometry, params: ChannelParams | None = None) -> "Link":
        params = params or derive_channel_params(geom)
        h_br, h_rm = hop_channels(geom, params)
        return cls(geom=geom, params=params, h_rm=h_rm, incident=h_br @ bs_beamformer(geom, params))

    def response(self, ms_codewords: np.ndarray, ris_profiles: np.ndarray) -> np.ndarray:
        """Noise-free ``w^H H[n] f`` for every (MS column, RIS column); shape (K_ms, K_ris, N)."""
        w = ms_codewords[:, None] if ms_codewords.ndim == 1 else ms_codewords
        phi = ris_profiles[:, None] if ris_profiles.ndim == 1 else ris_profiles
        left = np.einsum("mk,nmr->nkr", w.conj(), self.h_rm)  # (N, K_ms, N_R)
        right = phi[None, :, :] * self.incident[:, :, None]  # (N, N_R, K_ris)
        return np.moveaxis(left @ right, 0, -1)


def observe_pair(link: Link, w: np.ndarray, phi: np.ndarray, tx_power: float, noise: NoiseModel,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Received samples over all subcarriers for one combiner / RIS profile pair."""
    y = math.sqrt(tx_power) * link.response(w, phi)[0, 0]
    if noise.sigma_sq > 0:
        rng = rng if rng is not None else np.random.default_rng(noise.rng_seed)
        z = _antenna_noise(rng, (link.geom.num_subcarriers, link.geom.n_ms), noise.sigma_sq)
        y = y + z @ w.conj()
    return y


def _antenna_noise(rng, shape, sigma_sq):
    return math.sqrt(sigma_sq / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass
class SlotRecord:
    stage: int
    slot: int
    ms_idx: list[int]
    ris_idx: int | None
    sum_power: list[float]


def measure_grid(link: Link, ms_codewords: np.ndarray, ris_profiles: np.ndarray, tx_power: float,
                 sigma_sq: float, rng: np.random.Generator, n_rf: int):
    """Observe every (MS, RIS) pair; ``n_rf`` consecutive pairs (RIS-major) share one slot.

    Pairs in the same slot see the same antenna-noise realization, combined through their own
    combiner.  Returns the (K_ms, K_ris, N) observations and the number of slots used.
    """
    y = math.sqrt(tx_power) * link.response(ms_codewords, ris_profiles)
    k_ms, k_ris, n_sc = y.shape
    n_pairs = k_ms * k_ris
    n_slots = -(-n_pairs // n_rf)
    if sigma_sq > 0:
        z = _antenna_noise(rng, (n_slots, n_sc, link.geom.n_ms), sigma_sq)
        pair = np.arange(n_pairs)
        ris_of, ms_of = np.divmod(pair, k_ms)
        combined = np.einsum("pna,ap->pn", z[pair // n_rf], ms_codewords.conj()[:, ms_of])
        y = y + combined.reshape(k_ris, k_ms, n_sc).transpose(1, 0, 2)
    return y, n_slots


def sum_power(observations: np.ndarray) -> np.ndarray:
    """Energy per pair summed over the last (subcarrier) axis."""
    return np.sum(np.abs(observations) ** 2, axis=-1)


def select_and_feedback(p: np.ndarray) -> tuple[int, int]:
    """1-based (row, column) of the largest entry; ties go to the lowest column, then lowest row."""
    p = np.asarray(p)
    rows, cols = np.nonzero(p == p.max())
    col = cols.min()
    return int(rows[cols == col].min()) + 1, int(col) + 1


def slot_count(scheme: str, levels: int, branching: int, n_rf: int) -> int:
    if scheme == "proposed":
        pairs = levels * branching**2
        per_stage = branching**2
        if per_stage % n_rf:
            raise InvalidArgument(f"n_rf={n_rf} does not divide K^2={per_stage}")
    elif scheme == "exhaustive":
        pairs = branching ** (2 * levels)
    elif scheme == "random_phase":
        pairs = branching**levels
    elif scheme == "optimal":
        return 0
    else:
        raise InvalidArgument(f"unknown scheme {scheme!r}")
    if pairs % n_rf:
        raise InvalidArgument(f"n_rf={n_rf} does not divide the {pairs} measured pairs")
    return pairs // n_rf


@dataclass
class StageMeasurement:
    received: np.ndarray = field(repr=False)  # (K_ms, K_ris, N)
    sum_power: np.ndarray
    ms_candidates: list[int]  # codeword indices at this level
    ris_candidates: list[int]
    selected_ms: int  # row within the candidates, 1-based
    selected_ris: int  # column within the candidates, 1-based


@dataclass
class TrainingOutcome:
    scheme: str
    per_stage: list[StageMeasurement]
    final_ris_codeword: np.ndarray
    final_ms_codeword: np.ndarray
    final_ris_index: int | None  # None when the RIS profile is not from the codebook
    final_ms_index: int
    stacked_final: np.ndarray
    slots_used: int
    feedback: list[int] = field(default_factory=list)
    trace: list[SlotRecord] = field(default_factory=list, repr=False)


def _trace_slots(stage, y_power, ms_cands, ris_cands, n_rf, first_slot):
    records = []
    k_ms = len(ms_cands)
    pairs = [(r, m) for r in range(len(ris_cands)) for m in range(k_ms)]
    for s, start in enumerate(range(0, len(pairs), n_rf)):
        chunk = pairs[start:start + n_rf]
        records.append(SlotRecord(
            stage=stage,
            slot=first_slot + s,
            ms_idx=[ms_cands[m] for _, m in chunk],
            ris_idx=ris_cands[chunk[0][0]],
            sum_power=[float(y_power[m, r]) for r, m in chunk],
        ))
    return records


def _rng(noise: NoiseModel, rng):
    return rng if rng is not None else np.random.default_rng(noise.rng_seed)


def run_adaptive(link: Link, ris_cb: RisCodebook, ms_cb: MsCodebook, tx_power: float, noise: NoiseModel,
                 rng: np.random.Generator | None = None, record_trace: bool = False) -> TrainingOutcome:
    """Stage-by-stage refinement: measure K x K pairs, pick the best, expand its children."""
    if ris_cb.num_levels != ms_cb.num_levels or ris_cb.branching != ms_cb.branching:
        raise InvalidArgument("RIS and MS codebooks must share levels and branching")
    rng = _rng(noise, rng)
    k, n_rf = ris_cb.branching, link.geom.n_rf
    ms_cands, ris_cands = list(range(1, k + 1)), list(range(1, k + 1))
    stages, feedback, trace = [], [], []
    slots = 0
    for s in range(1, ris_cb.num_levels + 1):
        w = ms_cb.level(s)[:, [i - 1 for i in ms_cands]]
        phi = ris_cb.level(s)[:, [i - 1 for i in ris_cands]]
        y, used = measure_grid(link, w, phi, tx_power, noise.sigma_sq, rng, n_rf)
        p = sum_power(y)
        i_ms, i_ris = select_and_feedback(p)
        if record_trace:
            trace.extend(_trace_slots(s, p, ms_cands, ris_cands, n_rf, slots + 1))
        slots += used
        feedback.append(i_ris)
        stages.append(StageMeasurement(y, p, ms_cands, ris_cands, i_ms, i_ris))
        best_ms, best_ris = ms_cands[i_ms - 1], ris_cands[i_ris - 1]
        if s < ris_cb.num_levels:
            ms_cands, ris_cands = children(best_ms, k), children(best_ris, k)
    last = stages[-1]
    return TrainingOutcome(
        scheme="proposed",
        per_stage=stages,
        final_ris_codeword=ris_cb.level(ris_cb.num_levels)[:, best_ris - 1],
        final_ms_codeword=ms_cb.level(ms_cb.num_levels)[:, best_ms - 1],
        final_ris_index=best_ris,
        final_ms_index=best_ms,
        stacked_final=last.received[last.selected_ms - 1, last.selected_ris - 1],
        slots_used=slots,
        feedback=feedback,
        trace=trace,
    )


def run_exhaustive(link: Link, ris_cb: RisCodebook, ms_cb: MsCodebook, tx_power: float, noise: NoiseModel,
                   rng: np.random.Generator | None = None, record_trace: bool = False) -> TrainingOutcome:
    """Measure every pair of level-S codewords and keep the strongest."""
    rng = _rng(noise, rng)
    w, phi = ms_cb.level(ms_cb.num_levels), ris_cb.level(ris_cb.num_levels)
    y, used = measure_grid(link, w, phi, tx_power, noise.sigma_sq, rng, link.geom.n_rf)
    p = sum_power(y)
    i_ms, i_ris = select_and_feedback(p)
    ms_cands, ris_cands = list(range(1, w.shape[1] + 1)), list(range(1, phi.shape[1] + 1))
    trace = _trace_slots(1, p, ms_cands, ris_cands, link.geom.n_rf, 1) if record_trace else []
    return TrainingOutcome(
        scheme="exhaustive",
        per_stage=[StageMeasurement(y, p, ms_cands, ris_cands, i_ms, i_ris)],
        final_ris_codeword=phi[:, i_ris - 1],
        final_ms_codeword=w[:, i_ms - 1],
        final_ris_index=i_ris,
        final_ms_index=i_ms,
        stacked_final=y[i_ms - 1, i_ris - 1],
        slots_used=used,
        feedback=[i_ris],
        trace=trace,
    )


def random_phase_profile(n_ris: int, rng: np.random.Generator) -> np.ndarray:
    return np.exp(2j * np.pi * rng.random(n_ris)) / math.sqrt(n_ris)


def run_random_phase(link: Link, ms_cb: MsCodebook, tx_power: float, noise: NoiseModel,
                     rng: np.random.Generator | None = None, record_trace: bool = False) -> TrainingOutcome:
    """One random RIS profile held fixed while the MS sweeps its level-S codebook."""
    rng = _rng(noise, rng)
    phi = random_phase_profile(link.geom.n_ris, rng)
    w = ms_cb.level(ms_cb.num_levels)
    y, used = measure_grid(link, w, phi[:, None], tx_power, noise.sigma_sq, rng, link.geom.n_rf)
    p = sum_power(y)
    i_ms, _ = select_and_feedback(p)
    ms_cands = list(range(1, w.shape[1] + 1))
    trace = _trace_slots(1, p, ms_cands, [None], link.geom.n_rf, 1) if record_trace else []
    return TrainingOutcome(
        scheme="random_phase",
        per_stage=[StageMeasurement(y, p, ms_cands, [0], i_ms, 1)],
        final_ris_codeword=phi,
        final_ms_codeword=w[:, i_ms - 1],
        final_ris_index=None,
        final_ms_index=i_ms,
        stacked_final=y[i_ms - 1, 0],
        slots_used=used,
        trace=trace,
    )


TRACE_HEADER = "trial,stage,slot,ms_idx,ris_idx,sum_power"


def trace_lines(trial: int, outcome: TrainingOutcome) -> list[str]:
    """Protocol trace rows: one per slot, plus one ``fb`` row per RIS-bound feedback message."""
    lines = []
    by_stage: dict[int, list[SlotRecord]] = {}
    for rec in outcome.trace:
        by_stage.setdefault(rec.stage, []).append(rec)
    for stage in sorted(by_stage):
        for rec in by_stage[stage]:
            ms = ";".join(str(i) for i in rec.ms_idx)
            ris = "" if rec.ris_idx is None else str(rec.ris_idx)
            power = ";".join(f"{v:.10g}" for v in rec.sum_power)
            lines.append(f"{trial},{stage},{rec.slot},{ms},{ris},{power}")
        if stage <= len(outcome.feedback):
            lines.append(f"{trial},{stage},fb,,{outcome.feedback[stage - 1]},")
    return lines


def write_trace(path: str | Path, rows: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")
