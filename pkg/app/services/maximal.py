"""
Operadores maximales sobre GridFunction: maximal fraccionaria M_{α,r}, maximal sharp M^#
y los maximales truncados M_{T_α,Q0} y M_{T_α} que guían la construcción esparsa.
"""
import logging
from typing import Optional

import numpy as np

from app.services.dyadic import (
    CellBox, DyadicCube, box_sums_outer, block_expand, block_max, iter_level_tilings, summed_table,
)
from app.services.errors import FrameOverflowError, GeometryError, ParameterError
from app.services.gridfn import GridFunction
from app.services.kernels import KernelOperator, KernelSpec

logger = logging.getLogger(__name__)


def _cube_volumes(tiling, h_n: float) -> float:
    return float(tiling.side_units ** tiling.frame.n) * h_n


def frac_maximal(f: GridFunction, alpha: float, r: float = 1.0, include_shifted: bool = True) -> GridFunction:
    """
    M_{α,r} f(x) = max sobre cubos Q ∋ x de las 1 + 3^n retículas de |Q|^{α/n}·||f||_{r,Q}.

    Los cubos que salen del marco cuentan con f extendida por cero y |Q| completo.
    """
    frame = f.frame
    if not 0 <= alpha < frame.n:
        raise ParameterError(f"α={alpha} debe cumplir 0 <= α < n")
    if r < 1:
        raise ParameterError(f"r={r} debe ser >= 1")
    table = summed_table(f.cell_integrals(r))
    h_n = float(frame.cell_volume)
    out = np.zeros(frame.shape)
    for tiling in iter_level_tilings(frame, include_shifted):
        volume = _cube_volumes(tiling, h_n)
        sums = np.maximum(box_sums_outer(table, tiling.axis_lo, tiling.axis_hi), 0.0)
        values = volume ** (alpha / frame.n) * (sums / volume) ** (1.0 / r)
        np.maximum(out, tiling.values_to_cells(values), out=out)
    return GridFunction.from_values(frame, out)


def sharp_maximal(g: GridFunction, include_shifted: bool = True) -> GridFunction:
    """
    M^# g(x) = max sobre Q ∋ x de (1/|Q|)∫_Q |g - g_Q|, con g = 0 fuera del marco.

    Las piezas potencia entran por su promedio de celda.
    """
    frame = g.frame
    h_n = float(frame.cell_volume)
    values = g.cell_averages().ravel()
    out = np.zeros(frame.n_cells)
    for tiling in iter_level_tilings(frame, include_shifted):
        ids = np.ravel_multi_index(np.meshgrid(*tiling.cell_pos, indexing="ij"), tiling.shape).ravel()
        n_cubes = int(np.prod(tiling.shape))
        volume = _cube_volumes(tiling, h_n)
        inside = np.bincount(ids, minlength=n_cubes) * h_n
        avg = np.bincount(ids, weights=values * h_n, minlength=n_cubes) / volume
        dev = np.bincount(ids, weights=np.abs(values - avg[ids]) * h_n, minlength=n_cubes)
        osc = (dev + (volume - inside) * np.abs(avg)) / volume
        np.maximum(out, osc[ids], out=out)
    return GridFunction.from_values(frame, out.reshape(frame.shape))


def _truncation_sup(op: KernelOperator, region: CellBox, full: np.ndarray, level_min: int) -> np.ndarray:
    """
    max sobre Q diádicos con x ∈ Q ⊆ región y nivel >= level_min de
    max_{ξ∈Q} |full(ξ) - T(f·χ_{3Q})(ξ)|, sobre las celdas de la región.
    """
    frame = op.frame
    L = frame.depth
    shape = region.sides
    coords = np.stack(np.meshgrid(*[np.arange(a, b) for a, b in zip(region.lo, region.hi)], indexing="ij"), axis=-1)
    coords = coords.reshape(-1, frame.n)
    targets = np.ravel_multi_index(coords.T, frame.shape)
    base = full.ravel()[targets]
    out = np.zeros(shape)
    for level in range(level_min, L + 1):
        u = 2 ** (L - level)
        lo = (coords // u) * u
        triple_lo = lo - u
        triple_hi = lo + 2 * u
        diff = np.abs(base - op.apply_box_per_target(targets, triple_lo, triple_hi)).reshape(shape)
        np.maximum(out, block_expand(block_max(diff, u), u), out=out)
    return out


def grand_truncated(kernel: KernelSpec, f: GridFunction, root: DyadicCube,
                    operator: Optional[KernelOperator] = None) -> GridFunction:
    """
    M_{T_α,Q0} f(x) = sup_{x∈Q⊆Q0} ess sup_{ξ∈Q} |T_α(f·χ_{3Q0 \\ 3Q})(ξ)|, cero fuera de Q0.

    T(f·χ_{3Q0}) se evalúa una vez y se resta T(f·χ_{3Q}) con la tabla de prefijos.
    """
    frame = f.frame
    if root.tag != 0:
        raise GeometryError("Q0 debe pertenecer a la retícula base")
    box = root.box(frame)
    if not box.inside(frame.cells_per_axis):
        raise GeometryError(f"Q0 {root.index}@{root.level} fuera del marco")
    triple = box.tripled()
    N = frame.cells_per_axis
    if any(a < -N or b > 2 * N for a, b in zip(triple.lo, triple.hi)):
        raise FrameOverflowError("3Q0 sale del marco extendido")
    op = operator or KernelOperator(kernel, f)
    full = op.apply_box(triple)
    values = np.zeros(frame.shape)
    values[box.slices()] = _truncation_sup(op, box, full, root.level)
    return GridFunction.from_values(frame, values)


def grand_maximal(kernel: KernelSpec, f: GridFunction, operator: Optional[KernelOperator] = None) -> GridFunction:
    """M_{T_α} f(x) = sup_{Q∋x} ess sup_{ξ∈Q} |T_α(f·χ_{R^n \\ 3Q})(ξ)| sobre los cubos base del marco."""
    op = operator or KernelOperator(kernel, f)
    full = op.apply()
    return GridFunction.from_values(f.frame, _truncation_sup(op, f.frame.domain_box, full, 0))


def local_residue(op: KernelOperator) -> np.ndarray:
    """|T(f·χ_{3Q(x)})(x)| con Q(x) la celda fina de x: lo que el truncamiento más fino no ve."""
    frame = op.frame
    coords = np.stack(np.unravel_index(np.arange(frame.n_cells), frame.shape), axis=1)
    values = op.apply_box_per_target(np.arange(frame.n_cells), coords - 1, coords + 2)
    return np.abs(values).reshape(frame.shape)
