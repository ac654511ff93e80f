"""Hierarchical codebooks for the RIS (pure analog) and the MS (hybrid analog/digital).

Each level ``s`` is built the same way: a least-squares fit of flat-top target patterns on a
sine-domain grid, column normalization, then a hardware-specific step -- per-column projection
onto the constant-modulus set for the RIS, or an analog/digital factorization of ``n_rf``
columns at a time for the MS.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .geometry import ScenarioGeometry, steering_vector

COND_LIMIT = 1e12


@dataclass(frozen=True)
class AngleDictionary:
    matrix_a: np.ndarray  # num_elements x M
    grid: np.ndarray  # sine-domain points, strictly increasing in (-1, 1)


@dataclass(frozen=True)
class TargetMask:
    matrix_g: np.ndarray  # M x K^s, binary
    level: int


@dataclass
class SolverSettings:
    cm_step: float = 0.5
    cm_max_iters: int = 500
    cm_tol: float = 1e-8
    altmin_max_iters: int = 2000
    altmin_tol: float = 1e-8
    restart_seed: int = 12345


def build_angle_dictionary(num_elements: int, m_levels: int, spacing_ratio: float = 0.5) -> AngleDictionary:
    if num_elements < 1:
        raise InvalidArgument("num_elements must be >= 1")
    if m_levels < num_elements:
        raise InvalidArgument(f"need m_levels >= num_elements ({m_levels} < {num_elements})")
    m = np.arange(1, m_levels + 1)
    grid = -1 + (2 * m - 1) / m_levels
    n = np.arange(num_elements)[:, None]
    matrix_a = np.exp(2j * np.pi * spacing_ratio * n * grid[None, :])
    return AngleDictionary(matrix_a=matrix_a, grid=grid)


def build_target_mask(level: int, branching: int, m_levels: int) -> TargetMask:
    if level < 1 or branching < 1:
        raise InvalidArgument("level and branching must be >= 1")
    count = branching**level
    if m_levels % count:
        raise InvalidArgument(f"K^s = {count} does not divide M = {m_levels}")
    width = m_levels // count
    first = np.zeros(m_levels)
    first[:width] = 1.0
    g = np.stack([np.roll(first, k * width) for k in range(count)], axis=1)
    return TargetMask(matrix_g=g, level=level)


def ls_codewords(dictionary: AngleDictionary, mask: TargetMask) -> np.ndarray:
    """Minimum-norm least-squares solution of ``A^H C = G`` (columns not yet normalized)."""
    a_h = dictionary.matrix_a.conj().T
    if a_h.shape[0] != mask.matrix_g.shape[0]:
        raise InvalidArgument("dictionary and mask disagree on the number of grid points")
    cond = np.linalg.cond(a_h)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalFailure(f"angle dictionary is ill-conditioned (cond = {cond:.3e})")
    return np.linalg.pinv(a_h) @ mask.matrix_g


def normalize_codewords(c: np.ndarray) -> np.ndarray:
    """Unit-norm columns, each rotated so its largest-magnitude entry is real positive."""
    c = c / np.linalg.norm(c, axis=0, keepdims=True)
    peak = c[np.argmax(np.abs(c), axis=0), np.arange(c.shape[1])]
    return c * (peak.conj() / np.abs(peak))[None, :]


ZERO_RTOL = 1e-10


def _phase_project(x: np.ndarray, modulus: float) -> np.ndarray:
    # entries that are zero up to roundoff take phase 0
    phase = np.where(np.abs(x) > ZERO_RTOL * modulus, np.angle(x), 0.0)
    return modulus * np.exp(1j * phase)


def project_constant_modulus(target, modulus: float, max_iters: int = 500, tol: float = 1e-8,
                             step: float = 0.5, history: list | None = None) -> np.ndarray:
    """Gradient projection for ``min ||x - target||^2`` s.t. ``|x_i| = modulus``.

    Starts from the all-``modulus`` vector.  Each iteration takes a gradient step on the
    quadratic, projects onto the constant-modulus set, and halves the step whenever the
    objective would increase.  ``step = 0.5`` is the reciprocal Lipschitz constant of the
    objective, for which one iteration reaches the per-entry optimum.
    """
    target = np.asarray(target, dtype=complex)
    if not np.any(target):
        raise InvalidArgument("target must be nonzero")
    x = np.full(target.shape, modulus, dtype=complex)
    obj = float(np.sum(np.abs(x - target) ** 2))
    if history is not None:
        history.append(obj)
    for _ in range(max_iters):
        mu = step
        while True:
            cand = _phase_project(x - mu * 2 * (x - target), modulus)
            cand_obj = float(np.sum(np.abs(cand - target) ** 2))
            if cand_obj <= obj or mu < 1e-12:
                break
            mu /= 2
        if cand_obj > obj:
            break
        decrease = obj - cand_obj
        x, obj = cand, cand_obj
        if history is not None:
            history.append(obj)
        if decrease < tol:
            break
    return x


def _altmin(targets, analog, modulus, max_iters, tol):
    """One alternation run; returns (analog, digital, residual trace) or None if singular."""
    digital = np.linalg.pinv(analog) @ targets
    res = float(np.linalg.norm(targets - analog @ digital) ** 2)
    trace = [res]
    for _ in range(max_iters):
        gram = digital @ digital.conj().T
        eig = np.linalg.eigvalsh(gram)
        if eig[0] <= eig[-1] / COND_LIMIT**2:
            return None
        # phase extraction on a majorizer of the residual; equals arg(T D^H) when D D^H = c I
        grad = (analog @ digital - targets) @ digital.conj().T
        analog = _phase_project(analog - grad / eig[-1], modulus)
        digital = np.linalg.pinv(analog) @ targets
        new_res = float(np.linalg.norm(targets - analog @ digital) ** 2)
        improvement = res - new_res
        res = new_res
        trace.append(res)
        if improvement < tol:
            break
    if np.linalg.cond(digital) > COND_LIMIT:
        return None
    return analog, digital, trace


def hybrid_factorize(targets, n_rf: int, max_iters: int = 2000, tol: float = 1e-8,
                     history: list | None = None, restart_seed: int = 12345):
    """Factor ``targets`` (N_M x n_rf) as analog (modulus 1/sqrt(N_M)) times digital.

    Alternates a least-squares digital update with a phase-extraction analog update, starting
    from the phases of ``targets``; a singular digital factor triggers one restart from seeded
    random phases.  The digital factor is rescaled once at the end so that
    ``||analog @ digital||_F^2 == n_rf``.
    """
    targets = np.asarray(targets, dtype=complex)
    n_m, cols = targets.shape
    if cols != n_rf:
        raise InvalidArgument(f"targets must have n_rf={n_rf} columns, got {cols}")
    if n_rf > n_m:
        raise InvalidArgument("n_rf cannot exceed the number of antennas")
    modulus = 1 / math.sqrt(n_m)
    run = _altmin(targets, _phase_project(targets, modulus), modulus, max_iters, tol)
    if run is None:
        rng = np.random.default_rng(restart_seed)
        init = modulus * np.exp(2j * np.pi * rng.random((n_m, n_rf)))
        run = _altmin(targets, init, modulus, max_iters, tol)
    if run is None:
        raise NumericalFailure("digital factor is singular after restart")
    analog, digital, trace = run
    if history is not None:
        history.extend(trace)
    digital = digital * (math.sqrt(n_rf) / np.linalg.norm(analog @ digital))
    return analog, digital


def beam_pattern(codeword, angles, spacing_ratio: float = 0.5) -> np.ndarray:
    """|a(angle)^H codeword| for each angle in radians."""
    codeword = np.asarray(codeword, dtype=complex)
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if angles.size == 0:
        return np.zeros(0)
    return np.abs(steering_vector(codeword.size, angles, spacing_ratio).conj().T @ codeword)


def children(index: int, branching: int) -> list[int]:
    """1-based indices at level s+1 refining codeword ``index`` at level s."""
    if index < 1:
        raise InvalidArgument("codeword indices are 1-based")
    return list(range((index - 1) * branching + 1, index * branching + 1))


@dataclass
class RisCodebook:
    levels: list[np.ndarray]  # level s -> N_R x K^s, one codeword per column
    branching: int
    elements: int
    objective_traces: list[list[float]] = field(default_factory=list, repr=False)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def level(self, s: int) -> np.ndarray:
        return self.levels[s - 1]


@dataclass
class MsCodebook:
    levels: list[np.ndarray]  # effective codewords, N_M x K^s
    blocks: list[list[tuple[np.ndarray, np.ndarray]]]  # per level: (analog, digital) per block
    branching: int
    elements: int
    n_rf: int
    residual_traces: list[list[float]] = field(default_factory=list, repr=False)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def level(self, s: int) -> np.ndarray:
        return self.levels[s - 1]


def _check_levels(levels: int, branching: int, m_levels: int):
    if levels < 1 or branching < 2:
        raise InvalidArgument("need levels >= 1 and branching >= 2")
    if branching**levels > m_levels:
        raise InvalidArgument(f"K^S = {branching ** levels} exceeds M = {m_levels}")


def build_ris_codebook(geom: ScenarioGeometry, levels: int = 6, branching: int = 2, m_levels: int = 128,
                       solver: SolverSettings | None = None) -> RisCodebook:
    solver = solver or SolverSettings()
    _check_levels(levels, branching, m_levels)
    n = geom.n_ris
    dictionary = build_angle_dictionary(n, m_levels, geom.spacing_ratio)
    modulus = 1 / math.sqrt(n)
    out, traces = [], []
    for s in range(1, levels + 1):
        targets = normalize_codewords(ls_codewords(dictionary, build_target_mask(s, branching, m_levels)))
        cols = []
        for col in targets.T:
            hist: list[float] = []
            cols.append(project_constant_modulus(col, modulus, solver.cm_max_iters, solver.cm_tol,
                                                 solver.cm_step, history=hist))
            traces.append(hist)
        out.append(np.stack(cols, axis=1))
    return RisCodebook(levels=out, branching=branching, elements=n, objective_traces=traces)


def build_ms_codebook(geom: ScenarioGeometry, levels: int = 6, branching: int = 2, m_levels: int = 128,
                      solver: SolverSettings | None = None) -> MsCodebook:
    solver = solver or SolverSettings()
    _check_levels(levels, branching, m_levels)
    n, n_rf = geom.n_ms, geom.n_rf
    for s in range(1, levels + 1):
        if (branching**s) % n_rf:
            raise InvalidArgument(f"n_rf={n_rf} does not divide K^{s} = {branching ** s}")
    dictionary = build_angle_dictionary(n, m_levels, geom.spacing_ratio)
    effective, blocks, traces = [], [], []
    for s in range(1, levels + 1):
        targets = normalize_codewords(ls_codewords(dictionary, build_target_mask(s, branching, m_levels)))
        level_blocks = []
        for k in range(targets.shape[1] // n_rf):
            hist: list[float] = []
            analog, digital = hybrid_factorize(targets[:, k * n_rf:(k + 1) * n_rf], n_rf,
                                               solver.altmin_max_iters, solver.altmin_tol,
                                               history=hist, restart_seed=solver.restart_seed)
            level_blocks.append((analog, digital))
            traces.append(hist)
        blocks.append(level_blocks)
        effective.append(np.concatenate([a @ d for a, d in level_blocks], axis=1))
    return MsCodebook(levels=effective, blocks=blocks, branching=branching, elements=n, n_rf=n_rf,
                      residual_traces=traces)


# --- text dump format ------------------------------------------------------------------------

def _fmt(z: complex) -> str:
    return f"{z.real:.16g},{z.imag:.16g}"


def _row(values) -> str:
    return " ".join(_fmt(z) for z in values)


def _parse_row(tokens) -> np.ndarray:
    vals = []
    for tok in tokens:
        re, im = tok.split(",")
        vals.append(complex(float(re), float(im)))
    return np.array(vals, dtype=complex)


def dumps_codebook(cb: RisCodebook | MsCodebook) -> str:
    header = f"levels={cb.num_levels} branching={cb.branching} elements={cb.elements}"
    if isinstance(cb, MsCodebook):
        header += f" rf={cb.n_rf}"
    lines = [header]
    for s, mat in enumerate(cb.levels, start=1):
        for k, col in enumerate(mat.T, start=1):
            lines.append(f"{s} {k} {_row(col)}")
    if isinstance(cb, MsCodebook):
        for s, level_blocks in enumerate(cb.blocks, start=1):
            for k, (analog, digital) in enumerate(level_blocks, start=1):
                lines.append(f"RF {s} {k}")
                lines.extend(_row(r) for r in analog)
                lines.append(f"BB {s} {k}")
                lines.extend(_row(r) for r in digital)
    return "\n".join(lines) + "\n"


def loads_codebook(text: str) -> RisCodebook | MsCodebook:
    lines = text.splitlines()
    header = dict(item.split("=", 1) for item in lines[0].split())
    num_levels, branching, elements = int(header["levels"]), int(header["branching"]), int(header["elements"])
    n_rf = int(header["rf"]) if "rf" in header else None
    cols: list[list[np.ndarray]] = [[] for _ in range(num_levels)]
    i = 1
    while i < len(lines) and lines[i] and not lines[i].startswith(("RF", "BB")):
        tokens = lines[i].split()
        s, k = int(tokens[0]), int(tokens[1])
        if k != len(cols[s - 1]) + 1:
            raise InvalidArgument(f"line {i + 1}: codeword {s} {k} out of order")
        cols[s - 1].append(_parse_row(tokens[2:]))
        i += 1
    levels = [np.stack(c, axis=1) for c in cols]
    if n_rf is None:
        return RisCodebook(levels=levels, branching=branching, elements=elements)
    blocks: list[list] = [[] for _ in range(num_levels)]
    while i < len(lines):
        tag, s, _k = lines[i].split()
        if tag != "RF":
            raise InvalidArgument(f"line {i + 1}: expected RF section")
        analog = np.stack([_parse_row(lines[i + 1 + r].split()) for r in range(elements)])
        i += 1 + elements
        if lines[i].split()[0] != "BB":
            raise InvalidArgument(f"line {i + 1}: expected BB section")
        digital = np.stack([_parse_row(lines[i + 1 + r].split()) for r in range(n_rf)])
        i += 1 + n_rf
        blocks[int(s) - 1].append((analog, digital))
    return MsCodebook(levels=levels, blocks=blocks, branching=branching, elements=elements, n_rf=n_rf)


def save_codebook(cb: RisCodebook | MsCodebook, path: str | Path) -> None:
    Path(path).write_text(dumps_codebook(cb), encoding="utf-8")


def load_codebook(path: str | Path) -> RisCodebook | MsCodebook:
    return loads_codebook(Path(path).read_text(encoding="utf-8"))
