"""
Construcción recursiva de familias esparsas por tiempo de parada y operadores esparsos.

En cada cubo P se calcula el maximal truncado local, se toma como umbral su cuantil 1-θ,
y los hijos son los cubos de Calderón-Zygmund del conjunto de superación a altura λ.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from app.schemas import DominationReport, SparseConstruction, SparseNodeReport
from app.services.dyadic import (
    CellBox, DyadicCube, DyadicFrame, SparseFamily, box_sum, cz_select, dump_cube, summed_table, triple_host,
)
from app.services.errors import DomainError, ParameterError
from app.services.gridfn import GridFunction, PowerWeight, Weight, power_moment, weight_cell_moments
from app.services.kernels import KernelOperator, KernelSpec
from app.services.maximal import grand_truncated
from app.services.utils import to_fraction

logger = logging.getLogger(__name__)

RATIONAL_DENOMINATOR = 10**6


@dataclass
class SparseBuild:
    """Resultado de build_sparse_family."""
    raw: SparseFamily
    hosted: Dict[int, SparseFamily]
    report: SparseConstruction
    operator: KernelOperator = field(repr=False)

    @property
    def hosted_list(self) -> List[SparseFamily]:
        return [self.hosted[j] for j in sorted(self.hosted)]


def build_sparse_family(kernel: KernelSpec, f: GridFunction, root: Optional[DyadicCube] = None,
                        theta=None, lam=None, r: float = 1.0,
                        operator: Optional[KernelOperator] = None) -> SparseBuild:
    """
    Familia ½-esparsa F ⊂ D(Q0) y sus 3^n familias hospedadas {3P : P ∈ F}.

    Args:
        kernel: Núcleo de T_α
        f: Función soportada en 3Q0
        root: Q0 (por defecto el cubo raíz del marco)
        theta: Fracción θ de P que puede superar el umbral (por defecto 2^{-(n+2)})
        lam: Altura λ de Calderón-Zygmund (por defecto 2^{-(n+1)})
        r: Exponente de las normas locales

    Returns:
        SparseBuild con la familia cruda, las hospedadas y el reporte por nodo
    """
    frame = f.frame
    n = frame.n
    theta = Fraction(1, 2 ** (n + 2)) if theta is None else Fraction(theta)
    lam = Fraction(1, 2 ** (n + 1)) if lam is None else Fraction(lam)
    if not 0 < theta < lam < 1:
        raise ParameterError(f"Se exige 0 < θ < λ < 1 (θ={theta}, λ={lam})")
    root = root or DyadicCube(tag=0, level=0, index=(0,) * n)
    op = operator or KernelOperator(kernel, f)
    norm_table = summed_table(f.cell_integrals(r))

    nodes: List[DyadicCube] = []
    e_sets: List[np.ndarray] = []
    reports: List[SparseNodeReport] = []
    truncated = False
    queue = deque([root])
    while queue:
        P = queue.popleft()
        box = P.box(frame)
        m = grand_truncated(kernel, f, P, operator=op).coef[box.slices()]
        ncells = box.volume_units
        c = math.floor(theta * ncells)
        tau = float(np.sort(m, axis=None)[::-1][c])
        above = m > tau

        triple = box.tripled()
        volume3 = float(frame.box_volume(triple))
        mass = float(box_sum(norm_table, triple.lo, triple.hi))
        norm = (mass / volume3) ** (1.0 / r) if mass > 0 else 0.0
        scale = volume3 ** (kernel.alpha / n) * norm
        c_p = tau / scale if scale > 0 else 0.0

        density = np.zeros(frame.shape, dtype=bool)
        density[box.slices()] = above
        children = cz_select(density, P, lam, frame) if P.level < frame.depth else []
        if P.level >= frame.depth and above.any():
            truncated = True

        region = np.zeros(frame.shape, dtype=bool)
        region[box.slices()] = True
        for child in children:
            region[child.box(frame).slices()] = False
        nodes.append(P)
        e_sets.append(np.flatnonzero(region.ravel()))
        child_units = sum(ch.box(frame).volume_units for ch in children)
        reports.append(SparseNodeReport(cube=dump_cube(P), tau=tau, c_p=c_p, e_ratio=float(above.sum()) / ncells,
                                        children_ratio=child_units / ncells))
        logger.debug(f"Nodo {dump_cube(P)}: τ={tau:.6g} c_P={c_p:.6g} |E|={int(above.sum())} hijos={len(children)}")
        queue.extend(children)

    order = sorted(range(len(nodes)), key=lambda i: nodes[i].sort_key())
    raw = SparseFamily(cubes=[nodes[i] for i in order], eta=Fraction(1, 2),
                       assignment=[tuple(int(c) for c in e_sets[i]) for i in order])

    hosted_cubes: Dict[int, List[DyadicCube]] = {}
    hosted_sets: Dict[int, List[tuple]] = {}
    for pos, i in enumerate(order):
        tag, host = triple_host(nodes[i], frame)
        hosted_cubes.setdefault(tag, []).append(host)
        hosted_sets.setdefault(tag, []).append(raw.assignment[pos])
    hosted_eta = Fraction(1, 2 * 3 ** n)
    hosted = {tag: SparseFamily(cubes=hosted_cubes[tag], eta=hosted_eta, assignment=hosted_sets[tag])
              for tag in sorted(hosted_cubes)}

    report = SparseConstruction(node_count=len(nodes), depth=max(c.level for c in nodes),
                                max_c=max(rep.c_p for rep in reports), truncated=truncated, nodes=reports)
    if truncated:
        logger.warning("La recursión esparsa alcanzó el nivel más fino con selección pendiente")
    logger.info(f"Familia esparsa: {len(nodes)} nodos, profundidad {report.depth}, max c_P={report.max_c:.4g}")
    return SparseBuild(raw=raw, hosted=hosted, report=report, operator=op)


def _as_family_list(families: Union[SparseFamily, Sequence[SparseFamily]]) -> List[SparseFamily]:
    return [families] if isinstance(families, SparseFamily) else list(families)


def sparse_apply(families: Union[SparseFamily, Sequence[SparseFamily]], f: GridFunction,
                 alpha: float, r: float = 1.0) -> GridFunction:
    """A f = Σ_j Σ_{Q∈S_j} |Q|^{α/n}·||f||_{r,Q}·χ_Q."""
    frame = f.frame
    if r < 1:
        raise ParameterError(f"r={r} debe ser >= 1")
    table = summed_table(f.cell_integrals(r))
    out = np.zeros(frame.shape)
    for family in _as_family_list(families):
        for cube in family.cubes:
            box = frame.box(cube)
            clipped = box.clipped(frame.cells_per_axis)
            if clipped is None:
                continue
            volume = float(frame.box_volume(box))
            mass = max(float(box_sum(table, box.lo, box.hi)), 0.0)
            out[clipped.slices()] += volume ** (alpha / frame.n) * (mass / volume) ** (1.0 / r)
    return GridFunction.from_values(frame, out)


def gen_sparse_apply(family: Union[SparseFamily, Sequence[SparseFamily]], g: GridFunction,
                     sigma: Optional[Weight], beta: float, s: float) -> GridFunction:
    """Ã^β_{s,S}(gσ) = (Σ_Q (|Q|^{-β} ∫_Q gσ)^s χ_Q)^{1/s}."""
    frame = g.frame
    if not 0 < s < math.inf:
        raise ParameterError(f"s={s} debe estar en (0, ∞)")
    if not 0 < beta <= 1:
        raise ParameterError(f"β={beta} debe estar en (0, 1]")
    if np.any(g.coef < 0):
        raise DomainError("gen_sparse_apply requiere g >= 0")
    if isinstance(sigma, GridFunction):
        table = summed_table(g.multiply(sigma).cell_integrals())
    else:
        table = summed_table(g.cell_integrals(1.0, sigma, 1.0))
    out = np.zeros(frame.shape)
    for fam in _as_family_list(family):
        for cube in fam.cubes:
            box = frame.box(cube)
            clipped = box.clipped(frame.cells_per_axis)
            if clipped is None:
                continue
            mass = max(float(box_sum(table, box.lo, box.hi)), 0.0)
            out[clipped.slices()] += (float(frame.box_volume(box)) ** (-beta) * mass) ** s
    return GridFunction.from_values(frame, out ** (1.0 / s))


def _is_lebesgue(w: Optional[Weight]) -> bool:
    return w is None or (isinstance(w, PowerWeight) and w.a == 0)


def weight_box_mass(w: Optional[Weight], frame: DyadicFrame, box: CellBox, s: float = 1.0,
                    table: Optional[np.ndarray] = None) -> float:
    """∫_Q w^s; los pesos potencia se integran sobre Q entero, los de malla sobre Q ∩ marco."""
    if w is None:
        return float(frame.box_volume(box))
    if isinstance(w, PowerWeight):
        lo, hi = frame.box_bounds(box)
        return w.coeff ** s * power_moment(w.a * s, lo, hi)
    table = summed_table(weight_cell_moments(w, frame, s)) if table is None else table
    return float(box_sum(table, box.lo, box.hi))


def _rational(value: Union[float, Fraction]) -> Fraction:
    """Racional de denominador acotado que recupera 6 a partir de 6.000000000000001."""
    return to_fraction(value).limit_denominator(RATIONAL_DENOMINATOR)


def two_weight_char(family: Union[SparseFamily, Sequence[SparseFamily]], u: Optional[Weight],
                    sigma: Optional[Weight], p: Union[float, Fraction], q: Union[float, Fraction],
                    beta: Union[float, Fraction], frame: DyadicFrame) -> float:
    """
    sup_{Q∈S} |Q|^{-β}·u(Q)^{1/q}·σ(Q)^{1/p'}.

    Los factores de Lebesgue se agrupan en una potencia de |Q| cuyo exponente se calcula en
    racionales; si se anula, la potencia vale exactamente 1.
    """
    p_prime_inv = 1.0 - 1.0 / float(p)
    q_inv = 1.0 / float(q)
    volume_exponent = -_rational(beta)
    if _is_lebesgue(u):
        volume_exponent += 1 / _rational(q)
    if _is_lebesgue(sigma):
        volume_exponent += 1 - 1 / _rational(p)
    u_table = summed_table(weight_cell_moments(u, frame)) if isinstance(u, GridFunction) else None
    s_table = summed_table(weight_cell_moments(sigma, frame)) if isinstance(sigma, GridFunction) else None
    best = 0.0
    for fam in _as_family_list(family):
        for cube in fam.cubes:
            box = frame.box(cube)
            factor = 1.0 if volume_exponent == 0 else float(frame.box_volume(box)) ** float(volume_exponent)
            if _is_lebesgue(u):
                factor *= (1.0 if u is None else u.coeff) ** q_inv
            else:
                factor *= weight_box_mass(u, frame, box, table=u_table) ** q_inv
            if _is_lebesgue(sigma):
                factor *= (1.0 if sigma is None else sigma.coeff) ** p_prime_inv
            else:
                factor *= weight_box_mass(sigma, frame, box, table=s_table) ** p_prime_inv
            best = max(best, factor)
    return best


def domination_ratio(kernel: KernelSpec, f: GridFunction, families: Union[SparseFamily, Sequence[SparseFamily]],
                     r: float = 1.0, operator: Optional[KernelOperator] = None, tol: float = 1e-12) -> DominationReport:
    """max sobre celdas de |T_α f| / A f, con las celdas A f = 0 y |T f| > tol como violaciones."""
    frame = f.frame
    op = operator or KernelOperator(kernel, f)
    t_values = np.abs(op.apply())
    a_values = sparse_apply(families, f, kernel.alpha, r).coef
    violations = [tuple(int(i) for i in idx) for idx in np.argwhere((a_values <= 0) & (t_values > tol))]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(a_values > 0, t_values / np.where(a_values > 0, a_values, 1.0), 0.0)
    if not np.any(ratios > 0):
        return DominationReport(ratio=0.0, cell=None, violations=violations)
    flat = int(np.argmax(ratios))
    cell = tuple(int(i) for i in np.unravel_index(flat, frame.shape))
    if violations:
        logger.warning(f"Dominación esparsa: {len(violations)} celdas con A f = 0 y T f != 0")
    return DominationReport(ratio=float(ratios.ravel()[flat]), cell=cell, violations=violations)


def format_report(report: SparseConstruction) -> str:
    """Reporte de texto: una línea por nodo y un resumen final."""
    lines = ["# cube | tau | c_P | |E|/|P| | sum|P_j|/|P|"]
    for node in report.nodes:
        lines.append(f"{node.cube} | {node.tau!r} | {node.c_p!r} | {node.e_ratio!r} | {node.children_ratio!r}")
    lines.append(f"# depth={report.depth} nodes={report.node_count} max_c={report.max_c!r} truncated={report.truncated}")
    return "\n".join(lines) + "\n"
