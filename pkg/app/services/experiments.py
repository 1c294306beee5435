"""
Experimentos numéricos: contabilidad de exponentes, familias de potencias extremales,
comprobación de la cota con exponente óptimo, funcional de tipo débil y prueba puntual de Kurtz.
"""
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy import stats

from app.config import get_settings
from app.schemas import (
    BoundResult, BoundRow, ExperimentResult, ExperimentRow, ExponentTuple, KurtzReport, WeakTypeResult,
)
from app.services.dyadic import CellBox, DyadicFrame, SparseFamily, centered_cube, verify_sparse
from app.services.errors import DomainError, HarmonicError, ParameterError, ToleranceError
from app.services.gridfn import GridFunction, PowerWeight, Weight, superlevel_measure, weighted_norm
from app.services.kernels import KernelSpec, apply_kernel
from app.services.maximal import frac_maximal, sharp_maximal
from app.services.sparse import sparse_apply, two_weight_char, weight_box_mass
from app.services.utils import conjugate, format_float
from app.services.weights import apq_char, weight_power

logger = logging.getLogger(__name__)
settings = get_settings()


# ===== EXPONENTES =====

def exponent_tuple(n: int, alpha, r, p) -> ExponentTuple:
    """Construye la tupla validada; las violaciones de la cadena son errores de parámetro."""
    try:
        return ExponentTuple(n=n, alpha=alpha, r=r, p=p)
    except ValidationError as e:
        raise ParameterError(f"Tupla de exponentes inválida: {e.errors()[0]['msg']}") from e


def sharp_exponent(t: ExponentTuple) -> float:
    return t.sharp


# ===== FAMILIA CENTRADA =====

def centered_family(frame: DyadicFrame) -> SparseFamily:
    """
    Q_k = [-2^{-k}, 2^{-k})^n para los niveles que el marco resuelve, con E_{Q_k} = Q_k \\ Q_{k+1}.

    El último cubo se queda entero como su propio conjunto E.
    """
    cubes: List[CellBox] = []
    k = 0
    while True:
        try:
            cubes.append(centered_cube(frame, Fraction(1, 2 ** k)))
        except HarmonicError:
            break
        k += 1
    if not cubes or not cubes[0].inside(frame.cells_per_axis):
        raise DomainError("El marco no contiene Q_0 = [-1, 1)^n")
    assignment = []
    for j, cube in enumerate(cubes):
        inner = np.zeros(frame.shape, dtype=bool)
        if j + 1 < len(cubes):
            inner[cubes[j + 1].slices()] = True
        own = np.zeros(frame.shape, dtype=bool)
        own[cube.slices()] = True
        own &= ~inner
        assignment.append(tuple(int(i) for i in np.flatnonzero(own)))
    return SparseFamily(cubes=cubes, eta=Fraction(1, 2), assignment=assignment)


def _log2_shell_moment(c: float, j: np.ndarray) -> np.ndarray:
    """log2 de ∫_{2^{-j-1} <= |x| < 2^{-j}} |x|^{c-1} dx en n = 1."""
    if c == 0:
        return np.full(j.shape, 1.0 + math.log2(math.log(2.0)))
    return 1.0 - j * c + math.log2(-math.expm1(-c * math.log(2.0)) / c)


def _log2_ball_moment(c: float, j: int) -> float:
    """log2 de ∫_{|x| < 2^{-j}} |x|^{c-1} dx, c > 0."""
    return 1.0 - j * c - math.log2(c)


def centered_coefficients(alpha: float, r: float, gamma: float, levels: np.ndarray) -> np.ndarray:
    """
    log2 de a_k = |Q_k|^α · ||f||_{r,Q_k} para f = |x|^γ χ_{[-1,1)} en n = 1.

    Es también la cota inferior de A f sobre E_{Q_k}.
    """
    e = gamma * r
    if e <= -1:
        raise DomainError(f"|x|^{gamma} no es localmente r-integrable (r={r})")
    log_side = 1.0 - levels
    log_mass = _log2_ball_moment(e + 1.0, 0) - levels * (e + 1.0)
    return alpha * log_side + (log_mass - log_side) / r


def centered_norm(alpha: float, r: float, gamma: float, weight_exp: float, q: float,
                  max_level: Optional[int] = None) -> float:
    """
    ||A f · |x|^b||_{L^q} sobre la familia centrada, en n = 1 y en espacio log2.

    Sin max_level la familia es completa y la suma de capas se corta cuando lo que resta
    queda por debajo de 2^{-shell_log2_cutoff} del total; con max_level se trunca en Q_{max_level}.
    """
    c = weight_exp * q + 1.0
    if c <= 0:
        raise DomainError(f"|x|^{weight_exp * q} no es integrable en el origen")
    slope = -alpha - gamma
    decay = q * max(slope, 0.0) - c
    if max_level is None:
        if decay >= 0:
            raise DomainError(f"La norma de A f diverge (decaimiento por capa {decay:.3g} >= 0)")
        shells = int(math.ceil((settings.shell_log2_cutoff + 64.0) / -decay)) + 64
        if shells > settings.max_shells:
            raise DomainError(f"Se necesitan {shells} capas (> max_shells={settings.max_shells})")
        j = np.arange(shells, dtype=float)
        partial = np.logaddexp2.accumulate(centered_coefficients(alpha, r, gamma, j))
        terms = q * partial + _log2_shell_moment(c, j)
        total = float(np.logaddexp2.reduce(terms))
        if terms[-1] > total - settings.shell_log2_cutoff:
            raise DomainError("La suma de capas no alcanzó el corte relativo")
    else:
        j = np.arange(max_level + 1, dtype=float)
        partial = np.logaddexp2.accumulate(centered_coefficients(alpha, r, gamma, j))
        terms = q * partial[:-1] + _log2_shell_moment(c, j[:-1])
        core = q * partial[-1] + _log2_ball_moment(c, max_level)
        total = float(np.logaddexp2.reduce(np.append(terms, core)))
    return 2.0 ** (total / q)


# ===== NITIDEZ =====

@dataclass(frozen=True)
class _RowSetup:
    """Exponentes de una fila: f = |x|^gamma χ_B, peso |x|^b, normas (p_in, q_out)."""
    alpha: float
    r: float
    gamma: float
    b: float
    p_in: float
    q_out: float
    t_weight: PowerWeight


def _example_setup(example: int, t: ExponentTuple, eps: float) -> _RowSetup:
    n = t.n
    if example == 1:
        b = (n - eps) / (t.r * t.pr_prime)
        return _RowSetup(t.alpha, t.r, (eps - n) / t.r, b, t.p, t.q, PowerWeight(a=b))
    w = PowerWeight(a=(eps - n) / t.q)
    if t.r == 1:
        # adjunto: L^{q'}(w^{-q'}) -> L^{p'}(w^{-p'})
        return _RowSetup(t.alpha, 1.0, eps - n, -w.a, conjugate(t.q), t.p_prime, w)
    return _RowSetup(t.alpha, t.r, (eps - n) / t.r, w.a, t.p, t.q, w)


def verified_centered_family(frame: DyadicFrame) -> SparseFamily:
    """Familia centrada del marco, comprobada 1/2-esparsa con la asignación E_{Q_k} = Q_k \\ Q_{k+1}."""
    family = centered_family(frame)
    check = verify_sparse(family, frame, Fraction(1, 2))
    if not check.passed:
        raise DomainError(f"La familia centrada no es 1/2-esparsa en este marco: {check}")
    return family


def check_centered_lower_bound(family: SparseFamily, f: GridFunction, alpha: float, r: float, gamma: float) -> float:
    """
    Comprueba A f >= a_k sobre cada E_{Q_k} en la malla, con a_k de centered_coefficients.

    Devuelve el menor cociente min_{E_{Q_k}} A f / a_k; por debajo de 1 - quad_tolerance es un error.
    """
    af = sparse_apply(family, f, alpha, r).coef.reshape(-1)
    bounds = np.exp2(centered_coefficients(alpha, r, gamma, np.arange(len(family.cubes), dtype=float)))
    worst = math.inf
    for k, (cells, bound) in enumerate(zip(family.assignment, bounds)):
        ratio = float(af[np.asarray(cells, dtype=np.int64)].min()) / float(bound)
        if ratio < 1.0 - settings.quad_tolerance:
            raise ToleranceError(f"A f cae por debajo de a_{k} en E_(Q_{k}): cociente {ratio:.12g}")
        worst = min(worst, ratio)
    return worst


def _sharpness_row(example: int, t: ExponentTuple, eps: float, frame: DyadicFrame,
                   family: SparseFamily) -> ExperimentRow:
    setup = _example_setup(example, t, eps)
    f = GridFunction.power(frame, 1.0, setup.gamma)
    check_centered_lower_bound(family, f, setup.alpha, setup.r, setup.gamma)
    den = weighted_norm(f, setup.p_in, PowerWeight(a=setup.b))
    num = centered_norm(setup.alpha, setup.r, setup.gamma, setup.b, setup.q_out)
    char = apq_char(setup.t_weight.power(t.r), t.p / t.r, t.q / t.r, frame)
    row = ExperimentRow(eps=eps, t=char, num_norm=num, den_norm=den, ratio=num / den)
    logger.debug(f"ejemplo {example} ε={eps}: {row.model_dump()}")
    return row


def _fit_slope(rows: Sequence[ExperimentRow]) -> Tuple[float, float]:
    fit = stats.linregress(np.log([row.t for row in rows]), np.log([row.ratio for row in rows]))
    return float(fit.slope), float(fit.stderr)


def _run_rows(compute: Callable[[float], ExperimentRow], eps_list: Sequence[float]) -> Tuple[List[ExperimentRow], List[float]]:
    """Evalúa las filas en paralelo; las que divergen se descartan con aviso."""

    def guarded(eps: float) -> Union[ExperimentRow, HarmonicError]:
        try:
            return compute(eps)
        except DomainError as e:
            return e

    with ThreadPoolExecutor(max_workers=settings.max_concurrent_rows) as pool:
        outcomes = list(pool.map(guarded, eps_list))
    rows, dropped = [], []
    for eps, outcome in zip(eps_list, outcomes):
        if isinstance(outcome, HarmonicError):
            logger.warning(f"Fila ε={eps} descartada: {outcome}")
            dropped.append(eps)
        else:
            rows.append(outcome)
    rows.sort(key=lambda row: -row.eps)
    return rows, sorted(dropped, reverse=True)


def _check_eps(eps_list: Sequence[float], minimum: int) -> List[float]:
    eps_list = sorted({float(e) for e in eps_list}, reverse=True)
    if len(eps_list) < minimum:
        raise ParameterError(f"Se necesitan al menos {minimum} valores de ε distintos")
    if any(not 0 < e < 1 for e in eps_list):
        raise ParameterError("Todos los ε deben estar en (0, 1)")
    return eps_list


def sharpness_run(example: int, t: ExponentTuple, eps_list: Optional[Sequence[float]] = None,
                  frame: Optional[DyadicFrame] = None) -> ExperimentResult:
    """
    Ajusta la pendiente log ratio / log t sobre la familia de potencias del ejemplo elegido.

    Args:
        example: 1 (pendiente esperada γ₂) o 2 (pendiente esperada γ₁)
        t: Tupla de exponentes (sólo n = 1)
        eps_list: Valores de ε en (0, 1), al menos 5; por defecto la malla de configuración
        frame: Marco simétrico [-1, 1) que define t; por defecto profundidad default_depth

    Returns:
        ExperimentResult con filas ordenadas por ε descendente y veredicto
    """
    if example not in (1, 2):
        raise ParameterError(f"Ejemplo {example} desconocido (1 ó 2)")
    if t.n != 1:
        raise ParameterError("Los experimentos de nitidez sólo están definidos en n = 1")
    frame = frame or DyadicFrame.symmetric(1, settings.default_depth)
    if frame.n != 1 or frame.depth < 2:
        raise ParameterError("Se necesita un marco de dimensión 1 y profundidad >= 2")
    eps_list = _check_eps(settings.eps_grid() if eps_list is None else eps_list, 5)
    logger.info(f"Nitidez ejemplo {example}: α={t.alpha} r={t.r} p={t.p} L={frame.depth} ε={eps_list}")

    family = verified_centered_family(frame)
    rows, dropped = _run_rows(lambda eps: _sharpness_row(example, t, eps, frame, family), eps_list)
    if len(rows) < 3:
        raise DomainError(f"Sólo {len(rows)} filas convergentes; no se puede ajustar la pendiente")
    slope, stderr = _fit_slope(rows)
    expected = t.gamma2 if example == 1 else t.gamma1
    verdict = "pass" if abs(slope - expected) <= settings.slope_tolerance * expected else "fail"
    logger.info(f"Nitidez ejemplo {example}: pendiente={slope:.4f}±{stderr:.2g} esperada={expected:.4f} -> {verdict}")
    return ExperimentResult(example=example, exponents=t, rows=rows, dropped=dropped, slope=slope,
                            stderr=stderr, expected=expected, cotat_exponent=t.cotat_exponent, verdict=verdict)


def write_sharpness_csv(result: ExperimentResult, path: Union[str, Path]) -> None:
    """CSV `eps,t,num_norm,den_norm,ratio` con las filas de ajuste y de exponentes al final."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["eps", "t", "num_norm", "den_norm", "ratio"])
        for row in result.rows:
            writer.writerow([format_float(v) for v in (row.eps, row.t, row.num_norm, row.den_norm, row.ratio)])
        writer.writerow(["slope", format_float(result.slope), "stderr", format_float(result.stderr)])
        writer.writerow(["expected", format_float(result.expected), "cotat_exponent", format_float(result.cotat_exponent)])


# ===== COTA =====

CorpusPair = Tuple[str, Weight, GridFunction]


def _refine_weight(w: Weight) -> Weight:
    return w.refine() if isinstance(w, GridFunction) else w


def _two_weight_pair(w: Weight, t: ExponentTuple, family: SparseFamily, frame: DyadicFrame) -> Tuple[float, float]:
    """[w^q, σ]_{A^β_{p/r,q/r}} sobre la familia y el valor [w^r]^{r/q} calculado cubo a cubo."""
    u = weight_power(w, t.q)
    sigma = weight_power(w, -t.pr_prime * t.r)
    beta = 1.0 - t.alpha * t.r / t.n
    two = two_weight_char(family, u, sigma, t.p / t.r, t.q / t.r, beta, frame)
    expected = 0.0
    for cube in family.cubes:
        box = frame.box(cube)
        volume = float(frame.box_volume(box))
        avg_u = weight_box_mass(u, frame, box) / volume
        avg_s = weight_box_mass(sigma, frame, box) / volume
        expected = max(expected, avg_u ** (t.r / t.q) * avg_s ** (1.0 / t.pr_prime))
    return two, expected


def _bound_rows(t: ExponentTuple, corpus: Sequence[CorpusPair], eps_list: Sequence[float],
                frame: DyadicFrame) -> List[BoundRow]:
    family = verified_centered_family(frame)
    rows = []
    for label, w, f in corpus:
        af = sparse_apply(family, f, t.alpha, t.r)
        den = weighted_norm(f, t.p, w)
        if den <= 0:
            raise DomainError(f"Par '{label}': ||f w||_p = 0")
        ratio = weighted_norm(af, t.q, w) / den
        char = apq_char(weight_power(w, t.r), t.p / t.r, t.q / t.r, frame)
        two, expected = _two_weight_pair(w, t, family, frame)
        rows.append(BoundRow(label=label, ratio=ratio, t=char, normalized=ratio / char ** t.sharp,
                             two_weight=two, two_weight_expected=expected))
    for eps in eps_list:
        row = _sharpness_row(1, t, eps, frame, family)
        w = PowerWeight(a=(t.n - eps) / (t.r * t.pr_prime))
        two, expected = _two_weight_pair(w, t, family, frame)
        rows.append(BoundRow(label=f"example1:eps={format_float(eps)}", ratio=row.ratio, t=row.t,
                             normalized=row.ratio / row.t ** t.sharp, two_weight=two, two_weight_expected=expected))
    return rows


def default_corpus(frame: DyadicFrame, weights: Sequence[Tuple[str, Weight]]) -> List[CorpusPair]:
    """Cada peso con f = χ_{[0,1)^n}."""
    N = frame.cells_per_axis
    half = CellBox(lo=(N // 2,) * frame.n, hi=(N,) * frame.n)
    f = GridFunction.indicator(frame, half)
    return [(f"{label}|chi[0,1)", w, f) for label, w in weights]


def bound_run(t: ExponentTuple, corpus: Sequence[CorpusPair], frame: DyadicFrame,
              eps_list: Sequence[float] = ()) -> BoundResult:
    """
    max sobre el corpus de ratio / t^{sharp} con la familia centrada, y el mismo máximo tras un refinamiento.

    Las filas del ejemplo 1 (n = 1) se añaden para cada ε de eps_list.
    """
    if eps_list:
        eps_list = _check_eps(eps_list, 1)
        if t.n != 1:
            raise ParameterError("Las filas del ejemplo 1 sólo están definidas en n = 1")
    if not corpus and not eps_list:
        raise ParameterError("El corpus está vacío")
    logger.info(f"Cota: {len(corpus)} pares, {len(eps_list)} filas del ejemplo 1, L={frame.depth}")
    rows = _bound_rows(t, corpus, eps_list, frame)
    refined_corpus = [(label, _refine_weight(w), f.refine()) for label, w, f in corpus]
    refined_rows = _bound_rows(t, refined_corpus, eps_list, frame.refined())
    constant = max(row.normalized for row in rows)
    refined_constant = max(row.normalized for row in refined_rows)
    band = settings.refinement_band
    stable = constant / band <= refined_constant <= constant * band
    verdict = "pass" if constant <= settings.bound_budget and stable else "fail"
    logger.info(f"Cota: C={constant:.4g} refinada={refined_constant:.4g} -> {verdict}")
    return BoundResult(exponents=t, rows=rows, constant=constant, refined_constant=refined_constant,
                       budget=settings.bound_budget, verdict=verdict)


# ===== TIPO DÉBIL Y KURTZ =====

def weak_type_ratio(kernel: KernelSpec, f: GridFunction, w: Optional[PowerWeight] = None,
                    r: float = 1.0) -> WeakTypeResult:
    """
    sup_λ λ^r · μ{|T_α f| > λ} / ∫|f|^r w^r, con dμ = w^{rn/(n-αr)} dx.

    La malla de λ es geométrica sobre el rango observado de |T_α f|.
    """
    n = f.frame.n
    if r < 1:
        raise ParameterError(f"r={r} debe ser >= 1")
    if kernel.alpha * r >= n:
        raise ParameterError(f"Se exige αr < n (α={kernel.alpha}, r={r})")
    if not np.any(f.coef != 0):
        return WeakTypeResult(ratio=0.0, lam=None, denominator=0.0)
    denominator = float(np.sum(f.cell_integrals(r, w, r)))
    if not denominator > 0 or not math.isfinite(denominator):
        raise DomainError(f"Denominador ∫|f|^r w^r = {denominator} no válido")
    values = np.abs(apply_kernel(kernel, f).coef)
    level_fn = GridFunction.from_values(f.frame, values)
    positive = values[values > 0]
    if positive.size == 0:
        return WeakTypeResult(ratio=0.0, lam=None, denominator=denominator)
    measure_weight = None if w is None else w.power(r * n / (n - kernel.alpha * r))
    lo, hi = float(positive.min()), float(positive.max())
    grid = np.geomspace(lo, hi, settings.weak_lambda_points) * (1.0 - 1e-12)
    best, best_lam = 0.0, None
    for lam in grid:
        value = lam ** r * superlevel_measure(level_fn, float(lam), measure_weight)
        if value > best:
            best, best_lam = value, float(lam)
    return WeakTypeResult(ratio=best / denominator, lam=best_lam, denominator=denominator)


def _kurtz_ratio(kernel: KernelSpec, f: GridFunction, r: float) -> Tuple[float, Optional[Tuple[int, ...]]]:
    num = sharp_maximal(apply_kernel(kernel, f)).coef
    den = frac_maximal(f, kernel.alpha, r).coef
    if np.any(den <= 0):
        raise DomainError("M_{α,r} f se anula en alguna celda")
    ratios = num / den
    flat = int(np.argmax(ratios))
    return float(ratios.ravel()[flat]), tuple(int(i) for i in np.unravel_index(flat, f.frame.shape))


def kurtz_check(kernel: KernelSpec, f: GridFunction, r: float = 1.0) -> KurtzReport:
    """sup sobre celdas de M^#(T_α f) / M_{α,r} f, y el mismo supremo tras un refinamiento."""
    if np.any(f.coef < 0) or not np.any(f.coef > 0):
        raise DomainError("kurtz_check requiere f >= 0 no nula")
    ratio, cell = _kurtz_ratio(kernel, f, r)
    refined, _ = _kurtz_ratio(kernel, f.refine(), r)
    band = settings.refinement_band
    ok = math.isfinite(ratio) and ratio / band <= refined <= ratio * band
    logger.info(f"Kurtz: ratio={ratio:.4g} refinado={refined:.4g} celda={cell}")
    return KurtzReport(ratio=ratio, refined_ratio=refined, cell=cell, verdict="pass" if ok else "fail")
