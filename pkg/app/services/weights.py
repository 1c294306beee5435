"""
Características de Muckenhoupt sobre las retículas diádicas del marco: A_{p,q}, A_s y A_∞
(forma de Fujii-Wilson), y las relaciones entre clases.

Sólo cuentan los cubos contenidos en el dominio raíz.
"""
import csv
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from app.schemas import RelationsReport
from app.services.dyadic import (
    DyadicFrame, block_expand, box_sums_outer, dump_cube, iter_level_tilings, summed_table,
)
from app.services.errors import DomainError, ParameterError
from app.services.gridfn import PowerWeight, Weight, weight_cell_moments
from app.services.utils import conjugate, format_float

logger = logging.getLogger(__name__)

CubeRow = Tuple[str, float]


def weight_power(w: Weight, s: float) -> Weight:
    """w^s conservando la representación."""
    if isinstance(w, PowerWeight):
        return w.power(s)
    return w.power_abs(s)


def _characteristic(frame: DyadicFrame, first: np.ndarray, second: np.ndarray, exponent: float,
                    include_shifted: bool, rows: Optional[List[CubeRow]]) -> float:
    """sup_Q (avg_Q a)·(avg_Q b)^exponent a partir de los momentos por celda de a y b."""
    table_a = summed_table(first)
    table_b = summed_table(second)
    h_n = float(frame.cell_volume)
    best = 0.0
    for tiling in iter_level_tilings(frame, include_shifted):
        inside = tiling.inside_mask()
        if not inside.any():
            continue
        volume = float(tiling.side_units ** frame.n) * h_n
        avg_a = box_sums_outer(table_a, tiling.axis_lo, tiling.axis_hi) / volume
        avg_b = box_sums_outer(table_b, tiling.axis_lo, tiling.axis_hi) / volume
        values = np.where(inside, avg_a * avg_b ** exponent, 0.0)
        if not np.all(np.isfinite(values)):
            raise DomainError("Característica infinita: momento no integrable en algún cubo")
        best = max(best, float(values.max()))
        if rows is not None:
            for cube, value, ok in zip(tiling.cubes(), values.ravel(), inside.ravel()):
                if ok:
                    rows.append((dump_cube(cube), float(value)))
    return best


def apq_char(w: Weight, p: float, q: float, frame: DyadicFrame, include_shifted: bool = True,
             rows: Optional[List[CubeRow]] = None) -> float:
    """
    [w]_{A_{p,q}} = sup_Q (avg_Q w^q)·(avg_Q w^{-p'})^{q/p'}.

    Args:
        w: Peso potencia o de malla
        p, q: Exponentes, p > 1
        frame: Marco cuyas retículas definen los cubos
        rows: Si se pasa una lista, recibe (cubo, valor) por cubo evaluado

    Returns:
        El supremo (>= 1 salvo redondeo)
    """
    if p <= 1 or q <= 0:
        raise ParameterError(f"A_(p,q) requiere p > 1 y q > 0 (p={p}, q={q})")
    p_prime = conjugate(p)
    first = weight_cell_moments(w, frame, q)
    second = weight_cell_moments(w, frame, -p_prime)
    return _characteristic(frame, first, second, q / p_prime, include_shifted, rows)


def as_char(w: Weight, s: float, frame: DyadicFrame, include_shifted: bool = True,
            rows: Optional[List[CubeRow]] = None) -> float:
    """[w]_{A_s} = sup_Q (avg_Q w)·(avg_Q w^{-1/(s-1)})^{s-1}."""
    if s <= 1:
        raise ParameterError(f"A_s requiere s > 1 (s={s})")
    first = weight_cell_moments(w, frame, 1.0)
    second = weight_cell_moments(w, frame, -1.0 / (s - 1))
    return _characteristic(frame, first, second, s - 1, include_shifted, rows)


def ainfty_char(w: Weight, frame: DyadicFrame) -> float:
    """
    [w]_{A_∞} = sup_Q (1/w(Q))·∫_Q M_d(w·χ_Q), cubos de la retícula base.

    M_d restringida a subcubos de Q se acumula desde la celda fina hacia arriba:
    m_k = max(promedio en el nivel k, m_{k+1}).
    """
    mass = weight_cell_moments(w, frame, 1.0)
    h_n = float(frame.cell_volume)
    L = frame.depth
    n = frame.n
    running = mass / h_n
    best = 1.0
    for level in range(L, -1, -1):
        u = 2 ** (L - level)
        block_mass = _block_sum(mass, u)
        average = block_expand(block_mass / (u ** n * h_n), u)
        running = np.maximum(running, average)
        integral = _block_sum(running * h_n, u)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(block_mass > 0, integral / block_mass, 1.0)
        best = max(best, float(ratio.max()))
    return best


def _block_sum(arr: np.ndarray, u: int) -> np.ndarray:
    shape = []
    for s in arr.shape:
        shape.extend([s // u, u])
    return arr.reshape(shape).sum(axis=tuple(range(1, 2 * arr.ndim, 2)))


def _relative(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def apq_relations(w: Weight, p: float, q: float, frame: DyadicFrame, include_shifted: bool = True) -> RelationsReport:
    """
    Comprueba [w^q]_{A_{1+q/p'}} = [w]_{A_{p,q}} y [w^{-p'}]_{A_{1+p'/q}} = [w]_{A_{p,q}}^{p'/q}.

    La segunda relación usa σ = w^{-p'}, que es la que se cumple cubo a cubo.
    """
    p_prime = conjugate(p)
    apq = apq_char(w, p, q, frame, include_shifted)
    first = as_char(weight_power(w, q), 1 + q / p_prime, frame, include_shifted)
    second = as_char(weight_power(w, -p_prime), 1 + p_prime / q, frame, include_shifted)
    report = RelationsReport(apq=apq, as_of_wq=first, as_of_wpprime=second,
                             deviation_first=_relative(first, apq),
                             deviation_second=_relative(second ** (q / p_prime), apq))
    logger.debug(f"apq_relations p={p} q={q}: {report.model_dump()}")
    return report


def write_rows(rows: List[CubeRow], path: Union[str, Path]) -> None:
    """CSV `cube,value` en el orden de evaluación."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cube", "value"])
        for cube, value in rows:
            writer.writerow([cube, format_float(value)])
