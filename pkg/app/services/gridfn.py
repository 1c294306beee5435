"""
Funciones discretizadas sobre un marco diádico.

Cada celda fina guarda un descriptor (c, γ): el valor en la celda es c·|x|^γ con la
singularidad fijada en el origen; γ = 0 es una pieza constante. Las integrales por celda
se calculan con momentos exactos en n = 1 y con cuadratura adaptativa en n >= 2.
"""
import itertools
import logging
import math
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import roots_legendre

from app.config import get_settings
from app.services.dyadic import CellBox, CubeLike, DyadicFrame, block_expand
from app.services.errors import DomainError, GeometryError, ParameterError, ToleranceError
from app.services.utils import split_spec, to_fraction

logger = logging.getLogger(__name__)
settings = get_settings()

_GL_ORDER = 6


# ===== MOMENTOS DE POTENCIAS =====

def _half_moment(e: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """∫_a^b x^e dx con 0 <= a, sin cancelación para celdas lejos del origen."""
    e, a, b = np.broadcast_arrays(np.asarray(e, float), np.asarray(a, float), np.asarray(b, float))
    out = np.zeros(e.shape)
    with np.errstate(all="ignore"):
        ep1 = e + 1.0
        ratio = np.where(a > 0, (b - a) / np.where(a > 0, a, 1.0), 0.0)
        at_zero = b ** ep1 / ep1
        logarithmic = np.log1p(ratio)
        general = a ** ep1 / ep1 * np.expm1(ep1 * np.log1p(ratio))
        value = np.where(a == 0, at_zero, np.where(ep1 == 0, logarithmic, general))
    nonempty = b > a
    out[nonempty] = value[nonempty]
    return out


def _interval_moment(e, a, b) -> np.ndarray:
    """∫_a^b |x|^e dx para intervalos arbitrarios (vectorizado)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    positive = _half_moment(e, np.maximum(a, 0.0), np.maximum(b, 0.0))
    negative = _half_moment(e, np.maximum(-b, 0.0), np.maximum(-a, 0.0))
    return positive + negative


@lru_cache(maxsize=8)
def _tensor_rule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(_GL_ORDER)
    x = (x + 1.0) / 2.0
    w = w / 2.0
    pts = np.array(list(itertools.product(x, repeat=n)))
    wts = np.prod(np.array(list(itertools.product(w, repeat=n))), axis=1)
    return pts, wts


def _gl_boxes(e: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    pts, wts = _tensor_rule(lo.shape[1])
    span = hi - lo
    x = lo[:, None, :] + span[:, None, :] * pts[None]
    r = np.linalg.norm(x, axis=2)
    return np.prod(span, axis=1) * ((r ** e[:, None]) @ wts)


def _split_boxes(lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = lo.shape[1]
    mid = (lo + hi) / 2.0
    child_lo, child_hi = [], []
    for corner in itertools.product((0, 1), repeat=n):
        c = np.array(corner, dtype=bool)
        child_lo.append(np.where(c, mid, lo))
        child_hi.append(np.where(c, hi, mid))
    owner = np.tile(np.arange(len(lo)), 2 ** n)
    return np.concatenate(child_lo), np.concatenate(child_hi), owner


def _adaptive_smooth(e: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float, depth: int = 0) -> np.ndarray:
    """Gauss-Legendre tensorial con subdivisión en las cajas que no convergen."""
    if len(e) == 0:
        return np.zeros(0)
    coarse = _gl_boxes(e, lo, hi)
    clo, chi, owner = _split_boxes(lo, hi)
    child_values = _gl_boxes(e[owner], clo, chi)
    fine = np.bincount(owner, weights=child_values, minlength=len(e))
    bad = np.abs(fine - coarse) > tol * np.abs(fine)
    if bad.any():
        if depth >= settings.max_quad_depth:
            raise ToleranceError(f"Cuadratura sin converger tras {depth} subdivisiones")
        rows = bad[owner]
        refined = _adaptive_smooth(e[owner][rows], clo[rows], chi[rows], tol, depth + 1)
        fine[bad] = np.bincount(owner[rows], weights=refined, minlength=len(e))[bad]
    return fine


@lru_cache(maxsize=64)
def _unit_corner(e: float, n: int, tol: float) -> float:
    """∫_{[0,1]^n} |x|^e por autosemejanza: I = R / (1 - 2^{-(n+e)})."""
    lo, hi = [], []
    for corner in itertools.product((0, 1), repeat=n):
        if not any(corner):
            continue
        lo.append([0.5 if c else 0.0 for c in corner])
        hi.append([1.0 if c else 0.5 for c in corner])
    rest = _adaptive_smooth(np.full(len(lo), e), np.array(lo), np.array(hi), tol).sum()
    return float(rest / (1.0 - 2.0 ** (-(n + e))))


def _corner_moment(e: float, a: Sequence[float], tol: float) -> float:
    """∫ sobre [0,a_1]x...x[0,a_n]: cubo esquina más cajas alejadas del origen."""
    n = len(a)
    m = min(a)
    total = m ** (n + e) * _unit_corner(e, n, tol)
    lo, hi = [], []
    for choice in itertools.product((0, 1), repeat=n):
        if not any(choice) or any(c and ai <= m for c, ai in zip(choice, a)):
            continue
        lo.append([m if c else 0.0 for c in choice])
        hi.append([ai if c else m for c, ai in zip(choice, a)])
    if lo:
        total += _adaptive_smooth(np.full(len(lo), e), np.array(lo), np.array(hi), tol).sum()
    return float(total)


def _box_moment_nd(e: float, lo: Sequence[float], hi: Sequence[float], tol: float) -> float:
    segments = []
    for a, b in zip(lo, hi):
        if a < 0 < b:
            segments.append([(0.0, -a), (0.0, b)])
        elif b <= 0:
            segments.append([(-b, -a)])
        else:
            segments.append([(a, b)])
    total = 0.0
    smooth_lo, smooth_hi = [], []
    for piece in itertools.product(*segments):
        if all(s[0] == 0 for s in piece):
            total += _corner_moment(e, [s[1] for s in piece], tol)
        else:
            smooth_lo.append([s[0] for s in piece])
            smooth_hi.append([s[1] for s in piece])
    if smooth_lo:
        total += _adaptive_smooth(np.full(len(smooth_lo), e), np.array(smooth_lo), np.array(smooth_hi), tol).sum()
    return total


def power_moment(gamma: float, lo: Sequence, hi: Sequence, tol: Optional[float] = None) -> float:
    """
    ∫_caja |x|^γ dx.

    Args:
        gamma: Exponente real
        lo, hi: Extremos de la caja (uno por eje)
        tol: Tolerancia relativa para n >= 2 (por defecto settings.quad_tolerance)

    Returns:
        Valor exacto en n = 1; cuadratura adaptativa en n >= 2
    """
    lo = [float(v) for v in lo]
    hi = [float(v) for v in hi]
    n = len(lo)
    if len(hi) != n or any(b <= a for a, b in zip(lo, hi)):
        raise GeometryError(f"Caja inválida: {lo} .. {hi}")
    touches_origin = all(a <= 0 <= b for a, b in zip(lo, hi))
    if touches_origin and gamma <= -n:
        raise DomainError(f"|x|^{gamma} no es integrable cerca del origen en dimensión {n}")
    if gamma == 0:
        return float(np.prod(np.subtract(hi, lo)))
    if n == 1:
        return float(_interval_moment(gamma, lo[0], hi[0]))
    return _box_moment_nd(float(gamma), lo, hi, tol or settings.quad_tolerance)


def origin_cells(frame: DyadicFrame) -> np.ndarray:
    """Máscara de celdas cuya clausura contiene el origen."""
    edges = frame.axis_edges()
    masks = [(e[:-1] <= 0) & (e[1:] >= 0) for e in edges]
    out = masks[0]
    for m in masks[1:]:
        out = np.logical_and.outer(out, m)
    return out


def moment_grid(frame: DyadicFrame, exponents, active: Optional[np.ndarray] = None) -> np.ndarray:
    """∫_celda |x|^e por celda; las celdas inactivas valen 0 sin evaluarse."""
    e = np.broadcast_to(np.asarray(exponents, float), frame.shape).copy()
    active = np.ones(frame.shape, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    singular = origin_cells(frame) & active & (e <= -frame.n)
    if singular.any():
        raise DomainError(f"Exponente {e[singular].min()} no integrable en celdas que tocan el origen (n={frame.n})")
    out = np.zeros(frame.shape)
    edges = frame.axis_edges()
    if frame.n == 1:
        out[active] = _interval_moment(e, edges[0][:-1], edges[0][1:])[active]
        return out

    vol = float(frame.cell_volume)
    flat_e = e.ravel()
    flat_active = active.ravel()
    flat_out = out.ravel()
    flat_origin = origin_cells(frame).ravel()
    trivial = flat_active & (flat_e == 0)
    flat_out[trivial] = vol
    todo = flat_active & ~trivial
    coords = np.stack(np.unravel_index(np.arange(frame.n_cells), frame.shape), axis=1)
    lo = np.stack([edges[ax][coords[:, ax]] for ax in range(frame.n)], axis=1)
    hi = np.stack([edges[ax][coords[:, ax] + 1] for ax in range(frame.n)], axis=1)
    tol = settings.quad_tolerance
    for idx in np.flatnonzero(todo & flat_origin):
        flat_out[idx] = _box_moment_nd(flat_e[idx], lo[idx], hi[idx], tol)
    smooth = np.flatnonzero(todo & ~flat_origin)
    flat_out[smooth] = _adaptive_smooth(flat_e[smooth], lo[smooth], hi[smooth], tol)
    return flat_out.reshape(frame.shape)


# ===== PESOS =====

class PowerWeight(BaseModel):
    """Peso coeff·|x|^a."""
    model_config = ConfigDict(frozen=True)

    a: float = Field(default=0.0, description="Exponente")
    coeff: float = Field(default=1.0, gt=0, description="Coeficiente positivo")

    @classmethod
    def lebesgue(cls) -> "PowerWeight":
        return cls(a=0.0, coeff=1.0)

    @classmethod
    def parse(cls, spec: str) -> "PowerWeight":
        """Lee `power:a:coeff` (coeff opcional) o `lebesgue`."""
        if spec.strip() == "lebesgue":
            return cls.lebesgue()
        parts = split_spec(spec, ["power"])
        if len(parts) not in (2, 3):
            raise ParameterError(f"Peso '{spec}': se esperaba power:a[:coeff]")
        a = float(to_fraction(parts[1]))
        coeff = float(to_fraction(parts[2])) if len(parts) == 3 else 1.0
        if coeff <= 0:
            raise DomainError("Los pesos deben ser positivos")
        return cls(a=a, coeff=coeff)

    def power(self, s: float) -> "PowerWeight":
        return PowerWeight(a=self.a * s, coeff=self.coeff ** s)

    def dilate(self, t: float) -> "PowerWeight":
        """w(t·x)."""
        return PowerWeight(a=self.a, coeff=self.coeff * t ** self.a)

    def to_grid(self, frame: DyadicFrame, support: Optional[CellBox] = None) -> "GridFunction":
        f = GridFunction(frame, np.full(frame.shape, self.coeff), np.full(frame.shape, self.a), check=False)
        return f.mask(support) if support is not None else f


# ===== GRIDFUNCTION =====

class GridFunction:
    """Función con un descriptor (c, γ) por celda fina del marco."""

    def __init__(self, frame: DyadicFrame, coef, gamma=None, quadrature_slack: float = 0.0, check: bool = True):
        self.frame = frame
        self.coef = np.array(coef, dtype=float).reshape(frame.shape)
        self.gamma = np.zeros(frame.shape) if gamma is None else np.array(gamma, dtype=float).reshape(frame.shape)
        self.quadrature_slack = float(quadrature_slack)
        if not np.all(np.isfinite(self.coef)) or not np.all(np.isfinite(self.gamma)):
            raise DomainError("Descriptores no finitos")
        if np.any((self.gamma != 0) & (self.coef < 0)):
            raise DomainError("Las piezas potencia deben tener coeficiente no negativo")
        if check:
            bad = origin_cells(frame) & (self.coef != 0) & (self.gamma <= -frame.n)
            if bad.any():
                raise DomainError(f"Exponente {self.gamma[bad].min()} no localmente integrable (n={frame.n})")

    # --- constructores ---

    @classmethod
    def constant(cls, frame: DyadicFrame, value: float) -> "GridFunction":
        return cls(frame, np.full(frame.shape, float(value)))

    @classmethod
    def from_values(cls, frame: DyadicFrame, values) -> "GridFunction":
        """Pieza constante por celda."""
        return cls(frame, values)

    @classmethod
    def indicator(cls, frame: DyadicFrame, cube: CubeLike) -> "GridFunction":
        return cls.constant(frame, 1.0).mask(frame.box(cube))

    @classmethod
    def power(cls, frame: DyadicFrame, coeff: float, gamma: float, support: Optional[CubeLike] = None) -> "GridFunction":
        """coeff·|x|^γ, opcionalmente truncada a un cubo."""
        f = cls(frame, np.full(frame.shape, float(coeff)), np.full(frame.shape, float(gamma)), check=support is None)
        if support is None:
            return f
        masked = f.mask(frame.box(support))
        return cls(frame, masked.coef, masked.gamma)

    def _like(self, coef, gamma, slack: Optional[float] = None) -> "GridFunction":
        return GridFunction(self.frame, coef, gamma, self.quadrature_slack if slack is None else slack, check=False)

    def _same_frame(self, other: "GridFunction") -> None:
        if other.frame != self.frame:
            raise GeometryError("Las funciones no comparten marco")

    # --- álgebra puntual ---

    @property
    def is_piecewise_constant(self) -> bool:
        return bool(np.all((self.gamma == 0) | (self.coef == 0)))

    def values_at_centers(self) -> np.ndarray:
        r = np.linalg.norm(self.frame.centers(), axis=1).reshape(self.frame.shape)
        with np.errstate(all="ignore"):
            powered = self.coef * r ** self.gamma
        return np.where((self.gamma == 0) | (self.coef == 0), self.coef, powered)

    def refine(self) -> "GridFunction":
        """Divide cada celda en 2^n hijas con el mismo descriptor."""
        fine = self.frame.refined()
        return GridFunction(fine, block_expand(self.coef, 2), block_expand(self.gamma, 2),
                            self.quadrature_slack, check=False)

    def scale(self, c: float) -> "GridFunction":
        return GridFunction(self.frame, self.coef * c, self.gamma, abs(c) * self.quadrature_slack, check=False)

    def abs(self) -> "GridFunction":
        return self._like(np.abs(self.coef), self.gamma)

    def power_abs(self, s: float) -> "GridFunction":
        """|f|^s; exponentes negativos exigen f != 0 en todo el dominio."""
        if s < 0 and np.any(self.coef == 0):
            raise DomainError("|f|^s con s < 0 requiere f sin ceros")
        with np.errstate(divide="ignore"):
            coef = np.abs(self.coef) ** s
        return self._like(np.where(self.coef == 0, 0.0, coef), np.where(self.coef == 0, 0.0, self.gamma * s), 0.0)

    def multiply(self, other: Union["GridFunction", PowerWeight, float]) -> "GridFunction":
        if isinstance(other, PowerWeight):
            return self._like(self.coef * other.coeff, np.where(self.coef == 0, 0.0, self.gamma + other.a), 0.0)
        if isinstance(other, GridFunction):
            self._same_frame(other)
            coef = self.coef * other.coef
            return self._like(coef, np.where(coef == 0, 0.0, self.gamma + other.gamma), 0.0)
        return self.scale(float(other))

    def add(self, other: "GridFunction") -> "GridFunction":
        """Suma por celda; dos piezas potencia sólo se suman con el mismo exponente."""
        self._same_frame(other)
        a_zero = self.coef == 0
        b_zero = other.coef == 0
        same = self.gamma == other.gamma
        if np.any(~a_zero & ~b_zero & ~same):
            raise DomainError("Suma de piezas potencia con exponentes distintos en una misma celda")
        coef = np.where(a_zero, other.coef, np.where(b_zero, self.coef, self.coef + other.coef))
        gamma = np.where(a_zero, other.gamma, self.gamma)
        return GridFunction(self.frame, coef, np.where(coef == 0, 0.0, gamma),
                            self.quadrature_slack + other.quadrature_slack, check=False)

    def mask(self, box: Optional[CellBox]) -> "GridFunction":
        """Restricción a una caja (cero fuera)."""
        keep = np.zeros(self.frame.shape, dtype=bool)
        clipped = box.clipped(self.frame.cells_per_axis) if box is not None else None
        if clipped is not None:
            keep[clipped.slices()] = True
        return self._like(np.where(keep, self.coef, 0.0), np.where(keep, self.gamma, 0.0))

    # --- integrales ---

    def cell_integrals(self, r: float = 1.0, weight: Optional["Weight"] = None, weight_power: float = 1.0) -> np.ndarray:
        """∫_celda |f|^r · w^s por celda."""
        if isinstance(weight, GridFunction):
            return self.power_abs(r).multiply(weight.power_abs(weight_power)).cell_integrals()
        active = self.coef != 0
        e = self.gamma * r
        const = np.abs(self.coef) ** r
        if weight is not None:
            e = e + weight.a * weight_power
            const = const * weight.coeff ** weight_power
        e = np.where(active, e, 0.0)
        return const * moment_grid(self.frame, e, active)

    def cell_signed_integrals(self) -> np.ndarray:
        """∫_celda f con signo (sólo las piezas constantes lo tienen)."""
        active = self.coef != 0
        return self.coef * moment_grid(self.frame, np.where(active, self.gamma, 0.0), active)

    def cell_averages(self) -> np.ndarray:
        return self.cell_signed_integrals() / float(self.frame.cell_volume)

    # --- ficheros ---

    def to_records(self) -> List[str]:
        records = []
        for c, g in zip(self.coef.ravel(), self.gamma.ravel()):
            records.append(f"const {c!r}" if g == 0 else f"power {c!r} {g!r}")
        return records

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("\n".join(self.to_records()) + "\n", encoding="utf-8")

    @classmethod
    def from_records(cls, frame: DyadicFrame, lines: Sequence[str]) -> "GridFunction":
        coef, gamma = [], []
        for lineno, raw in enumerate(lines, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "const" and len(parts) == 2:
                    coef.append(float(to_fraction(parts[1])))
                    gamma.append(0.0)
                elif parts[0] == "power" and len(parts) == 3:
                    coef.append(float(to_fraction(parts[1])))
                    gamma.append(float(to_fraction(parts[2])))
                else:
                    raise GeometryError(f"línea {lineno}: registro desconocido {line!r}")
            except ParameterError as e:
                raise GeometryError(f"línea {lineno}: {e}") from e
        if len(coef) != frame.n_cells:
            raise GeometryError(f"Se leyeron {len(coef)} celdas, el marco tiene {frame.n_cells}")
        return cls(frame, coef, gamma)

    @classmethod
    def load(cls, path: Union[str, Path], frame: DyadicFrame) -> "GridFunction":
        return cls.from_records(frame, Path(path).read_text(encoding="utf-8").splitlines())

    def __repr__(self) -> str:
        return f"GridFunction(n={self.frame.n}, depth={self.frame.depth}, piecewise_constant={self.is_piecewise_constant})"


Weight = Union[PowerWeight, GridFunction]


def parse_weight(spec: str, frame: DyadicFrame) -> Weight:
    """`power:a:coeff`, `lebesgue` o `file:<ruta>` con registros de celda."""
    if spec.startswith("file:"):
        w = GridFunction.load(spec[5:], frame)
        if np.any(w.coef <= 0):
            raise DomainError("Los pesos leídos de fichero deben ser positivos en todo el dominio")
        return w
    return PowerWeight.parse(spec)


def weight_cell_moments(w: Optional[Weight], frame: DyadicFrame, s: float = 1.0) -> np.ndarray:
    """∫_celda w^s por celda (w = None es Lebesgue)."""
    if w is None:
        return np.full(frame.shape, float(frame.cell_volume))
    if isinstance(w, GridFunction):
        if w.frame != frame:
            raise GeometryError("El peso no comparte marco")
        return w.power_abs(s).cell_integrals()
    return w.coeff ** s * moment_grid(frame, w.a * s)


# ===== NORMAS =====

def local_norm(f: GridFunction, r: float, cube: CubeLike) -> float:
    """||f||_{r,Q} = ((1/|Q|) ∫_Q |f|^r)^{1/r}, con extensión por cero fuera del marco."""
    if r < 1:
        raise ParameterError(f"r={r} debe ser >= 1")
    box = f.frame.box(cube)
    clipped = box.clipped(f.frame.cells_per_axis)
    if clipped is None:
        return 0.0
    total = float(np.sum(f.cell_integrals(r)[clipped.slices()]))
    return (total / float(f.frame.box_volume(box))) ** (1.0 / r)


def weighted_norm(f: GridFunction, p: float, w: Optional[Weight] = None) -> float:
    """||f·w||_{L^p} sobre el dominio."""
    if p < 1:
        raise ParameterError(f"p={p} debe ser >= 1")
    total = float(np.sum(f.cell_integrals(p, w, p)))
    if not math.isfinite(total):
        raise DomainError("La norma pesada diverge")
    return total ** (1.0 / p)


def superlevel_measure(g: GridFunction, lam: float, weight: Optional[PowerWeight] = None) -> float:
    """
    μ{x : |g(x)| > λ} con dμ = w dx.

    En n = 1 el conjunto de nivel dentro de una pieza potencia se resuelve exactamente;
    en n >= 2 cada celda entra o no según el valor en su centro.
    """
    if lam <= 0:
        raise ParameterError(f"λ={lam} debe ser positivo")
    frame = g.frame
    wa = 0.0 if weight is None else weight.a
    wc = 1.0 if weight is None else weight.coeff
    coef = np.abs(g.coef)
    if frame.n > 1 or g.is_piecewise_constant:
        above = np.abs(g.values_at_centers()) > lam
        return float(wc * np.sum(moment_grid(frame, wa, above)))

    edges = frame.axis_edges()[0]
    a, b = edges[:-1], edges[1:]
    total = 0.0
    const = (g.gamma == 0) | (coef == 0)
    if np.any(const & (coef > lam)):
        total += float(np.sum(_interval_moment(wa, a, b)[const & (coef > lam)]))
    power = ~const
    if np.any(power):
        ga = g.gamma[power]
        with np.errstate(divide="ignore"):
            rho = (lam / coef[power]) ** (1.0 / ga)
        pa, pb = a[power], b[power]
        inner = _interval_moment(wa, np.maximum(pa, -rho), np.minimum(pb, rho))
        outer = _interval_moment(wa, pa, np.minimum(pb, -rho)) + _interval_moment(wa, np.maximum(pa, rho), pb)
        total += float(np.sum(np.where(ga < 0, inner, outer)))
    return wc * total
