"""Monte Carlo sweeps, the noise-free saturation run, and CSV/config I/O."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import MsCodebook, RisCodebook, SolverSettings, build_ms_codebook, build_ris_codebook
from .errors import ConfigError, InvalidArgument, NumericalFailure
from .estimation import EstimatorGrids, PositionEstimate, achievable_rate, estimate_position, make_grids, metrics
from .geometry import (
    SCENARIO_KEYS,
    ScenarioGeometry,
    derive_channel_params,
    matched_combiner,
    optimal_phase_profile,
    scenario_from_mapping,
    scenario_to_mapping,
)
from .kvfile import format_kv, parse_kv
from .training import (
    SCHEMES,
    Link,
    NoiseModel,
    TrainingOutcome,
    run_adaptive,
    run_exhaustive,
    run_random_phase,
    slot_count,
    trace_lines,
)

CSV_HEADER = "scheme,snr_db,trial,seed,pe_m2,oe_rad2,rate_bits,slots"


@dataclass
class SimulationConfig:
    geometry: ScenarioGeometry = field(default_factory=ScenarioGeometry)
    levels: int = 6
    branching: int = 2
    m_levels: int = 128
    solver: SolverSettings = field(default_factory=SolverSettings)
    theta_points: int = 2048
    phi_points: int = 2048
    tau_step_ns: float = 0.05
    tau_span_ns: float = 500.0
    snr_list_db: list[float] = field(default_factory=lambda: [-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0])
    trials_per_point: int = 500
    base_seed: int = 0
    schemes: list[str] = field(default_factory=lambda: list(SCHEMES))
    output_path: str = "results.csv"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.trials_per_point < 1:
            raise ConfigError("trials_per_point must be >= 1")
        if not self.snr_list_db:
            raise ConfigError("snr list must be nonempty")
        if not self.schemes:
            raise ConfigError("schemes must be nonempty")
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ConfigError(f"unknown schemes: {', '.join(unknown)}")
        if self.branching**self.levels > self.m_levels:
            raise ConfigError("branching^levels must not exceed m_levels")
        for s in range(1, self.levels + 1):
            if (self.branching**s) % self.geometry.n_rf:
                raise ConfigError(f"n_rf does not divide K^{s}")
        # canonical orderings
        self.snr_list_db = sorted(float(v) for v in set(self.snr_list_db))
        self.schemes = [s for s in SCHEMES if s in self.schemes]

    def grids(self) -> EstimatorGrids:
        return make_grids(self.geometry, self.theta_points, self.phi_points,
                          self.tau_step_ns * 1e-9, self.tau_span_ns * 1e-9)


# --- config files ---------------------------------------------------------------------------

_SIM_KEYS = {
    "levels": int, "branching": int, "m_levels": int,
    "cm_step": float, "cm_max_iters": int, "cm_tol": float,
    "altmin_max_iters": int, "altmin_tol": float,
    "theta_points": int, "phi_points": int, "tau_step_ns": float, "tau_span_ns": float,
    "snr_db": str, "trials": int, "seed": int, "schemes": str, "output": str,
}
CONFIG_KEYS = set(SCENARIO_KEYS) | set(_SIM_KEYS)


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def config_from_mapping(values: dict[str, str]) -> SimulationConfig:
    try:
        base = SimulationConfig()
        scen = scenario_to_mapping(base.geometry)
        scen.update({k: v for k, v in values.items() if k in SCENARIO_KEYS})
        geometry = scenario_from_mapping({k: str(v) for k, v in scen.items()})
        typed = {}
        for key, kind in _SIM_KEYS.items():
            if key in values:
                typed[key] = kind(values[key]) if kind is not str else values[key]
        solver = SolverSettings(
            cm_step=typed.get("cm_step", base.solver.cm_step),
            cm_max_iters=typed.get("cm_max_iters", base.solver.cm_max_iters),
            cm_tol=typed.get("cm_tol", base.solver.cm_tol),
            altmin_max_iters=typed.get("altmin_max_iters", base.solver.altmin_max_iters),
            altmin_tol=typed.get("altmin_tol", base.solver.altmin_tol),
        )
        return SimulationConfig(
            geometry=geometry,
            levels=typed.get("levels", base.levels),
            branching=typed.get("branching", base.branching),
            m_levels=typed.get("m_levels", base.m_levels),
            solver=solver,
            theta_points=typed.get("theta_points", base.theta_points),
            phi_points=typed.get("phi_points", base.phi_points),
            tau_step_ns=typed.get("tau_step_ns", base.tau_step_ns),
            tau_span_ns=typed.get("tau_span_ns", base.tau_span_ns),
            snr_list_db=[float(v) for v in _split_list(typed["snr_db"])] if "snr_db" in typed else base.snr_list_db,
            trials_per_point=typed.get("trials", base.trials_per_point),
            base_seed=typed.get("seed", base.base_seed),
            schemes=_split_list(typed["schemes"]) if "schemes" in typed else base.schemes,
            output_path=typed.get("output", base.output_path),
        )
    except ConfigError:
        raise
    except (ValueError, InvalidArgument) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> SimulationConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_mapping(parse_kv(text, CONFIG_KEYS, source=str(path)))


def config_to_text(cfg: SimulationConfig) -> str:
    values: dict[str, object] = dict(scenario_to_mapping(cfg.geometry))
    values.update({
        "levels": cfg.levels, "branching": cfg.branching, "m_levels": cfg.m_levels,
        "cm_step": repr(cfg.solver.cm_step), "cm_max_iters": cfg.solver.cm_max_iters,
        "cm_tol": repr(cfg.solver.cm_tol), "altmin_max_iters": cfg.solver.altmin_max_iters,
        "altmin_tol": repr(cfg.solver.altmin_tol),
        "theta_points": cfg.theta_points, "phi_points": cfg.phi_points,
        "tau_step_ns": repr(cfg.tau_step_ns), "tau_span_ns": repr(cfg.tau_span_ns),
        "snr_db": ",".join(f"{v:g}" for v in cfg.snr_list_db),
        "trials": cfg.trials_per_point, "seed": cfg.base_seed,
        "schemes": ",".join(cfg.schemes), "output": cfg.output_path,
    })
    return format_kv(values)


# --- power budget ---------------------------------------------------------------------------

def noise_power_dbm(geom: ScenarioGeometry) -> float:
    """Thermal noise per subcarrier: -174 dBm/Hz over B/N."""
    return -174.0 + 10 * math.log10(geom.bandwidth / geom.num_subcarriers)


def noise_power(geom: ScenarioGeometry) -> float:
    return 10 ** ((noise_power_dbm(geom) - 30) / 10)


def tx_power_from_snr(snr_db: float, geom: ScenarioGeometry) -> float:
    """Transmit power (W) for which P rho_br^2 rho_rm^2 / sigma^2 equals the target SNR."""
    p = derive_channel_params(geom)
    return 10 ** (snr_db / 10) * noise_power(geom) / (p.rho_br**2 * p.rho_rm**2)


# --- trials ---------------------------------------------------------------------------------

@dataclass
class TrialRecord:
    scheme: str
    snr_db: float
    trial: int
    seed: int
    pe: float
    oe: float
    rate: float
    slots: int

    def csv_row(self) -> str:
        return ",".join([
            self.scheme, _num(self.snr_db), str(self.trial), str(self.seed),
            _num(self.pe), _num(self.oe), _num(self.rate), str(self.slots),
        ])


def _num(x: float) -> str:
    return "0" if x == 0 else f"{x:.10g}"


@dataclass
class TrialResult:
    record: TrialRecord
    outcome: TrainingOutcome | None
    estimate: PositionEstimate
    final_ris_codeword: np.ndarray
    final_ms_codeword: np.ndarray


def trial_seed(base_seed: int, scheme: str, snr_index: int, trial: int) -> int:
    ss = np.random.SeedSequence([base_seed, SCHEMES.index(scheme), snr_index, trial])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class Workspace:
    """Everything a trial needs that does not depend on the seed; built once per sweep."""

    config: SimulationConfig
    ris_cb: RisCodebook
    ms_cb: MsCodebook
    link: Link
    grids: EstimatorGrids

    @classmethod
    def build(cls, config: SimulationConfig) -> "Workspace":
        geom = config.geometry
        return cls(
            config=config,
            ris_cb=build_ris_codebook(geom, config.levels, config.branching, config.m_levels, config.solver),
            ms_cb=build_ms_codebook(geom, config.levels, config.branching, config.m_levels, config.solver),
            link=Link.from_geometry(geom),
            grids=config.grids(),
        )


def run_trial(ws: Workspace, scheme: str, snr_db: float | None, seed: int, trial: int = 0,
              record_trace: bool = False) -> TrialResult:
    """One training + estimation + metrics pass.  ``snr_db=None`` runs noise-free (no rate)."""
    geom, cfg = ws.config.geometry, ws.config
    sigma_sq = noise_power(geom)
    tx_power = tx_power_from_snr(0.0 if snr_db is None else snr_db, geom)
    noise = NoiseModel(0.0 if snr_db is None else sigma_sq, seed)
    rng = np.random.default_rng(seed)
    outcome = None
    if scheme == "proposed":
        outcome = run_adaptive(ws.link, ws.ris_cb, ws.ms_cb, tx_power, noise, rng, record_trace)
    elif scheme == "exhaustive":
        outcome = run_exhaustive(ws.link, ws.ris_cb, ws.ms_cb, tx_power, noise, rng, record_trace)
    elif scheme == "random_phase":
        outcome = run_random_phase(ws.link, ws.ms_cb, tx_power, noise, rng, record_trace)
    elif scheme != "optimal":
        raise InvalidArgument(f"unknown scheme {scheme!r}")
    if outcome is None:
        # matched beams, estimated from the noise-free observation
        p = ws.link.params
        phi, w = optimal_phase_profile(p.theta_rm, p.phi_br, geom), matched_combiner(geom, p)
        y = math.sqrt(tx_power) * ws.link.response(w, phi)[0, 0]
    else:
        phi, w, y = outcome.final_ris_codeword, outcome.final_ms_codeword, outcome.stacked_final
    est = estimate_position(phi, w, y, geom, ws.grids)
    pe, oe = metrics(geom, est)
    rate = math.nan if snr_db is None else achievable_rate(w, phi, geom, tx_power, sigma_sq, ws.link.params)
    record = TrialRecord(
        scheme=scheme, snr_db=math.nan if snr_db is None else float(snr_db), trial=trial, seed=seed,
        pe=pe, oe=oe, rate=rate, slots=slot_count(scheme, cfg.levels, cfg.branching, geom.n_rf),
    )
    return TrialResult(record, outcome, est, phi, w)


def run_sweep(config: SimulationConfig, workspace: Workspace | None = None,
              trace_rows: list[str] | None = None) -> list[TrialRecord]:
    """All (scheme, SNR, trial) combinations in canonical order."""
    ws = workspace or Workspace.build(config)
    records = []
    for scheme in config.schemes:
        for snr_index, snr in enumerate(config.snr_list_db):
            for trial in range(config.trials_per_point):
                seed = trial_seed(config.base_seed, scheme, snr_index, trial)
                try:
                    res = run_trial(ws, scheme, snr, seed, trial, record_trace=trace_rows is not None)
                except (ArithmeticError, np.linalg.LinAlgError) as exc:
                    raise NumericalFailure(
                        f"trial failed: scheme={scheme} snr_db={snr:g} trial={trial} seed={seed}: {exc}"
                    ) from exc
                if trace_rows is not None and res.outcome is not None:
                    trace_rows.extend(trace_lines(len(records), res.outcome))
                records.append(res.record)
    return records


def noise_free_bound(config: SimulationConfig, workspace: Workspace | None = None) -> dict[str, TrialResult]:
    """Noise-free selection and estimation for every configured scheme.

    The random-phase profile is drawn with the seed of trial 0 at the first SNR point, so the
    result lines up with that trial of :func:`run_sweep`.
    """
    ws = workspace or Workspace.build(config)
    return {
        scheme: run_trial(ws, scheme, None, trial_seed(config.base_seed, scheme, 0, 0))
        for scheme in config.schemes
    }


# --- CSV --------------------------------------------------------------------------------------

def emit_csv(records: list[TrialRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")


def read_csv(path: str | Path) -> list[TrialRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigError(f"{path}: missing or unexpected CSV header")
    out = []
    for line in lines[1:]:
        scheme, snr, trial, seed, pe, oe, rate, slots = line.split(",")
        out.append(TrialRecord(scheme, float(snr), int(trial), int(seed), float(pe), float(oe), float(rate),
                               int(slots)))
    return out


AGGREGATE_HEADER = "scheme,snr_db,trials,mean_pe_m2,mean_oe_rad2,mean_rate_bits,median_pe_m2,median_rate_bits"


def aggregate(records: list[TrialRecord]) -> list[dict]:
    """Per (scheme, SNR) means and medians, in first-seen order."""
    groups: dict[tuple[str, float], list[TrialRecord]] = {}
    for rec in records:
        groups.setdefault((rec.scheme, rec.snr_db), []).append(rec)
    rows = []
    for (scheme, snr), recs in groups.items():
        pe = np.array([r.pe for r in recs])
        oe = np.array([r.oe for r in recs])
        rate = np.array([r.rate for r in recs])
        rows.append({
            "scheme": scheme, "snr_db": snr, "trials": len(recs),
            "mean_pe_m2": float(pe.mean()), "mean_oe_rad2": float(oe.mean()), "mean_rate_bits": float(rate.mean()),
            "median_pe_m2": float(np.median(pe)), "median_rate_bits": float(np.median(rate)),
        })
    return rows


def format_aggregate(rows: list[dict]) -> str:
    keys = AGGREGATE_HEADER.split(",")
    lines = [AGGREGATE_HEADER]
    for row in rows:
        lines.append(",".join(str(row[k]) if isinstance(row[k], (str, int)) else _num(row[k]) for k in keys))
    return "\n".join(lines) + "\n"


def emit_aggregate(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_aggregate(rows))
