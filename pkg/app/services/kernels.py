"""
Núcleos fraccionarios K_α(x - y), aplicación de T_α sobre GridFunction y certificados
numéricos de las condiciones de tamaño (S) y de Hörmander (H).
"""
import itertools
import logging
import math
from functools import lru_cache
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy import integrate, optimize
from scipy.special import gamma as gamma_fn
from scipy.special import roots_jacobi, roots_legendre

from app.config import get_settings
from app.schemas import ConditionReport
from app.services.dyadic import CellBox, box_sum
from app.services.errors import DepthError, DomainError, GeometryError, ParameterError, PreconditionError, ToleranceError
from app.services.gridfn import GridFunction, _half_moment, power_moment
from app.services.utils import split_spec, to_fraction

logger = logging.getLogger(__name__)
settings = get_settings()


class KernelSpec(BaseModel):
    """K(z) = c·Ω(z/|z|)·m(|z|)·|z|^{α-n}; Ω ≡ 1 y m ≡ 1 salvo en las variantes rough/perturbed."""
    model_config = ConfigDict(frozen=True)

    variant: Literal["power", "rough", "perturbed"] = Field(default="power")
    alpha: float = Field(..., description="Orden α ∈ (0, n)")
    n: int = Field(default=1, ge=1, le=3)
    c: float = Field(default=1.0, description="Constante multiplicativa")
    omega: Tuple[float, ...] = Field(default=(), description="Ω por ortante (bit i = signo negativo del eje i)")
    profile_r: Tuple[float, ...] = Field(default=(), description="Radios del perfil de modulación")
    profile_m: Tuple[float, ...] = Field(default=(), description="Valores de la modulación")

    @model_validator(mode="after")
    def check_kernel(self):
        if not 0 < self.alpha < self.n:
            raise ValueError(f"α={self.alpha} debe estar en (0, {self.n})")
        if self.variant == "rough" and len(self.omega) != 2 ** self.n:
            raise ValueError(f"Ω necesita {2 ** self.n} valores (uno por ortante)")
        if self.variant == "perturbed":
            r, m = np.asarray(self.profile_r), np.asarray(self.profile_m)
            if len(r) < 2 or len(r) != len(m):
                raise ValueError("el perfil necesita al menos dos pares (r, m)")
            if np.any(np.diff(r) <= 0) or r[0] < 0:
                raise ValueError("los radios del perfil deben ser crecientes y no negativos")
            if not np.all(np.isfinite(m)):
                raise ValueError("la modulación debe estar acotada")
        return self

    def factor(self, z: np.ndarray) -> np.ndarray:
        """K(z)/|z|^{α-n} para puntos z de forma (..., n)."""
        z = np.asarray(z, dtype=float)
        if self.variant == "rough":
            idx = np.zeros(z.shape[:-1], dtype=np.int64)
            for i in range(self.n):
                idx += (z[..., i] < 0).astype(np.int64) << i
            out = self.c * np.asarray(self.omega)[idx]
        else:
            out = np.full(z.shape[:-1], self.c)
        if self.variant == "perturbed":
            out = out * np.interp(np.linalg.norm(z, axis=-1), self.profile_r, self.profile_m)
        return out

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore"):
            return self.factor(z) * np.linalg.norm(z, axis=-1) ** (self.alpha - self.n)

    def scalar(self, z: float) -> float:
        """Evaluación rápida en n = 1 para los integrandos de quad."""
        w = self.c
        if self.variant == "rough":
            w *= self.omega[0] if z >= 0 else self.omega[1]
        if self.variant == "perturbed":
            w *= float(np.interp(abs(z), self.profile_r, self.profile_m))
        return w * abs(z) ** (self.alpha - 1.0)

    @property
    def amplitude(self) -> float:
        """sup |c·Ω| (sin modulación)."""
        return abs(self.c) * (max(abs(w) for w in self.omega) if self.variant == "rough" else 1.0)


def _read_profile(path: Union[str, Path]) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    rs, ms = [], []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        r, m = line.replace(",", " ").split()[:2]
        rs.append(float(to_fraction(r)))
        ms.append(float(to_fraction(m)))
    return tuple(rs), tuple(ms)


def parse_kernel(spec: str, n: int = 1) -> KernelSpec:
    """
    Lee `power:alpha:c`, `rough:alpha:w+:w-` (2^n valores en general) o
    `perturbed:alpha:c:fichero-de-perfil`.
    """
    parts = split_spec(spec, ["power", "rough", "perturbed"])
    try:
        alpha = float(to_fraction(parts[1]))
        if parts[0] == "power":
            c = float(to_fraction(parts[2])) if len(parts) > 2 else 1.0
            return KernelSpec(variant="power", alpha=alpha, n=n, c=c)
        if parts[0] == "rough":
            omega = tuple(float(to_fraction(v)) for v in parts[2:])
            return KernelSpec(variant="rough", alpha=alpha, n=n, omega=omega)
        if len(parts) != 4:
            raise ParameterError(f"Núcleo '{spec}': se esperaba perturbed:alpha:c:fichero")
        profile_r, profile_m = _read_profile(parts[3])
        return KernelSpec(variant="perturbed", alpha=alpha, n=n, c=float(to_fraction(parts[2])),
                          profile_r=profile_r, profile_m=profile_m)
    except IndexError as e:
        raise ParameterError(f"Núcleo incompleto: {spec!r}") from e
    except ValidationError as e:
        raise ParameterError(f"Núcleo inválido {spec!r}: {e.errors()[0]['msg']}") from e


def _as_points(z, n: int) -> np.ndarray:
    pts = np.atleast_1d(np.asarray(z, dtype=float))
    if n == 1 and pts.shape[-1] != 1:
        pts = pts[..., None]
    if pts.shape[-1] != n:
        raise GeometryError(f"Se esperaban puntos de dimensión {n}")
    return pts


def kernel_eval(kernel: KernelSpec, z) -> Union[float, np.ndarray]:
    """K(z) para un punto (o un arreglo de puntos) distinto de 0."""
    pts = _as_points(z, kernel.n)
    if np.any(np.linalg.norm(pts, axis=-1) == 0):
        raise DomainError("K es singular en z = 0")
    values = kernel.evaluate(pts)
    return float(values.reshape(-1)[0]) if values.size == 1 else values


# ===== NORMAS EN ANILLOS =====

def _ball_volume(n: int, radius: float) -> float:
    return math.pi ** (n / 2) / gamma_fn(n / 2 + 1) * radius ** n


def _check_quad(value: float, abserr: float, what: str) -> None:
    if abserr > 1e-6 * abs(value) + 1e-300:
        raise ToleranceError(f"Cuadratura de {what} sin converger: valor={value}, error={abserr}")


def _annulus_1d(kernel: KernelSpec, rprime: float, s: float, x: Optional[float]) -> float:
    offset = 0.0 if x is None else x
    x_inside = x is not None and s < abs(offset) <= 2 * s
    if x is not None and x == 0:
        return 0.0
    if x_inside and (kernel.alpha - 1) * min(rprime, 1e300) <= -1:
        return math.inf

    def diff(y: float) -> float:
        if x is None:
            return abs(kernel.scalar(y))
        if y == offset:
            return math.inf
        return abs(kernel.scalar(y - offset) - kernel.scalar(y))

    if math.isinf(rprime):
        best = 0.0
        for lo, hi in ((-2 * s, -s), (s, 2 * s)):
            ys = np.linspace(lo, hi, 4097)
            vals = np.array([diff(y) for y in ys])
            k = int(np.argmax(vals))
            best = max(best, float(vals[k]))
            a, b = ys[max(k - 1, 0)], ys[min(k + 1, len(ys) - 1)]
            if b > a and math.isfinite(vals[k]):
                res = optimize.minimize_scalar(lambda y: -diff(y), bounds=(a, b), method="bounded")
                best = max(best, float(-res.fun))
        return best

    total = 0.0
    for lo, hi in ((-2 * s, -s), (s, 2 * s)):
        points = [offset] if x_inside and lo < offset < hi else None
        value, abserr = integrate.quad(lambda y: diff(y) ** rprime, lo, hi, points=points,
                                       epsabs=0.0, epsrel=settings.quad_tolerance, limit=200)
        _check_quad(value, abserr, "la norma en el anillo")
        total += value
    return (total / (4 * s)) ** (1.0 / rprime)


@lru_cache(maxsize=16)
def _polar_rule(n: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Direcciones y pesos sobre S^{n-1}, regla producto por ortante."""
    t, w = roots_legendre(order)
    dirs, wts = [], []
    if n == 2:
        for k in range(4):
            phi = (k + (t + 1) / 2) * math.pi / 2
            dirs.append(np.stack([np.cos(phi), np.sin(phi)], axis=1))
            wts.append(w * math.pi / 4)
    else:
        for kt, kp in itertools.product(range(2), range(4)):
            theta = (kt + (t + 1) / 2) * math.pi / 2
            phi = (kp + (t + 1) / 2) * math.pi / 2
            th, ph = np.meshgrid(theta, phi, indexing="ij")
            dirs.append(np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1).reshape(-1, 3))
            wts.append((np.outer(w, w) * np.sin(th) * (math.pi / 4) ** 2).ravel())
    return np.concatenate(dirs), np.concatenate(wts)


def _annulus_nd(kernel: KernelSpec, rprime: float, s: float, x: Optional[np.ndarray]) -> float:
    n = kernel.n
    if x is not None and not np.any(x):
        return 0.0
    previous = None
    for order in (16, 32, 64, 128):
        t, w = roots_legendre(order)
        rho = s + s * (t + 1) / 2
        rw = w * s / 2 * rho ** (n - 1)
        dirs, dw = _polar_rule(n, order)
        y = rho[:, None, None] * dirs[None, :, :]
        vals = kernel.evaluate(y) if x is None else kernel.evaluate(y - x) - kernel.evaluate(y)
        vals = np.abs(vals)
        if math.isinf(rprime):
            current = float(np.max(vals))
        else:
            integral = float(np.einsum("i,j,ij->", rw, dw, vals ** rprime))
            current = (integral / _ball_volume(n, 2 * s)) ** (1.0 / rprime)
        if previous is not None and abs(current - previous) <= 1e-6 * abs(current):
            return current
        previous = current
    if math.isinf(rprime):
        return previous
    raise ToleranceError(f"Norma en el anillo s={s} sin converger en n={n}")


def annulus_norm(kernel: KernelSpec, rprime: float, s: float, offset=None) -> float:
    """
    ||K(· - x) - K(·)||_{r', |y|~s}, normalizada sobre B(0, 2s).

    Args:
        kernel: Núcleo
        rprime: Exponente en [1, ∞]
        s: Radio interior del anillo s < |y| <= 2s
        offset: Desplazamiento x; None da la norma de K sola

    Returns:
        Norma no negativa (∞ si la diferencia no es integrable)
    """
    if s <= 0:
        raise ParameterError(f"s={s} debe ser positivo")
    if rprime < 1:
        raise ParameterError(f"r'={rprime} debe ser >= 1")
    if offset is None and kernel.variant != "perturbed":
        e = kernel.alpha - kernel.n
        if math.isinf(rprime):
            return kernel.amplitude * s ** e
        if kernel.n == 1:
            weights = kernel.omega if kernel.variant == "rough" else (1.0, 1.0)
            shell = float(_half_moment(e * rprime, s, 2 * s))
            total = sum(abs(kernel.c * w) ** rprime for w in weights) * shell
            return (total / (4 * s)) ** (1.0 / rprime)
    if kernel.n == 1:
        x = None if offset is None else float(np.ravel(offset)[0])
        return _annulus_1d(kernel, rprime, s, x)
    x = None if offset is None else _as_points(offset, kernel.n).reshape(kernel.n)
    return _annulus_nd(kernel, rprime, s, x)


# ===== CERTIFICADOS S Y H =====

def size_constant(kernel: KernelSpec, alpha: float, rprime: float, s_min: float, s_max: float) -> ConditionReport:
    """sup sobre escalas diádicas s de s^{n-α}·||K||_{r',|x|~s}."""
    scales = []
    s = s_min
    while s <= s_max * (1 + 1e-12):
        scales.append(s)
        s *= 2
    if len(scales) < 6:
        raise ParameterError(f"El rango [{s_min}, {s_max}] abarca {len(scales)} escalas diádicas; se exigen 6")
    values = [sc ** (kernel.n - alpha) * annulus_norm(kernel, rprime, sc) for sc in scales]
    finite = all(math.isfinite(v) for v in values)
    growth = 1.0
    for a, b in zip(values, values[1:]):
        if a > 0 and b > 0:
            growth = max(growth, b / a, a / b)
    tail_ratio = (growth - 1.0) / settings.size_tolerance if finite else math.inf
    verdict = "pass" if finite and tail_ratio < 1 else "fail"
    logger.debug(f"size_constant α={alpha} r'={rprime}: valores={values}")
    return ConditionReport(condition="S", rprime=rprime, samples=scales, values=values,
                           supremum=max(values), tail_ratio=tail_ratio, verdict=verdict)


def hormander_sum(kernel: KernelSpec, alpha: float, rprime: float, x, R: float, M: int,
                  tail_tol: Optional[float] = None) -> ConditionReport:
    """Suma parcial Σ_{m=1}^{M} (2^m R)^{n-α}·||K(·-x) - K(·)||_{r',|y|~2^m R}."""
    tail_tol = settings.hormander_tail_tol if tail_tol is None else tail_tol
    point = _as_points(x, kernel.n).reshape(kernel.n)
    norm_x = float(np.linalg.norm(point))
    if R <= settings.hormander_c * norm_x:
        raise PreconditionError(f"R={R} debe superar {settings.hormander_c}·|x|={settings.hormander_c * norm_x}")
    if M < 2:
        raise ParameterError("M debe ser al menos 2")
    terms = []
    for m in range(1, M + 1):
        s = 2.0 ** m * R
        terms.append(s ** (kernel.n - alpha) * annulus_norm(kernel, rprime, s, point))
    partial = float(sum(terms))
    ratio = terms[-1] / terms[-2] if terms[-2] > 0 else 0.0
    tail = terms[-1] * ratio / (1 - ratio) if ratio < 1 else math.inf
    verdict = "pass" if ratio < 1 and tail < tail_tol and math.isfinite(partial) else "fail"
    logger.debug(f"hormander_sum x={norm_x} R={R} M={M}: suma={partial} razón={ratio}")
    return ConditionReport(condition="H", rprime=rprime, samples=list(range(1, M + 1)), values=terms,
                           supremum=partial, tail_ratio=ratio, tail_estimate=tail, verdict=verdict)


# ===== OPERADOR =====

def _gl_cells_1d(a: np.ndarray, b: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray]:
    t, w = roots_legendre(order)
    half = (b - a)[:, None] / 2
    return a[:, None] + half * (t[None] + 1), half * w[None]


def _primitive_1d(kernel: KernelSpec, z: np.ndarray) -> np.ndarray:
    """F con F' = K en n = 1 (variantes power y rough), F(0) = 0."""
    w_pos, w_neg = (kernel.omega if kernel.variant == "rough" else (1.0, 1.0))
    weight = np.where(z >= 0, w_pos, w_neg)
    return kernel.c * weight * np.sign(z) * np.abs(z) ** kernel.alpha / kernel.alpha


def _near_quad_1d(kernel: KernelSpec, x: float, a: float, b: float, coef: float, gamma: float) -> Tuple[float, float]:
    """∫_a^b K(x - y)·coef·|y|^γ dy con las singularidades en x y en 0 como pesos algebraicos."""
    cuts = sorted({a, b} | {p for p in (x, 0.0) if a < p < b})
    value, error = 0.0, 0.0
    for u, v in zip(cuts, cuts[1:]):
        k_left, k_right = u == x, v == x
        f_left, f_right = gamma != 0 and u == 0, gamma != 0 and v == 0
        left = (kernel.alpha - 1 if k_left else 0.0) + (gamma if f_left else 0.0)
        right = (kernel.alpha - 1 if k_right else 0.0) + (gamma if f_right else 0.0)

        def g(y, k_sing=k_left or k_right, f_sing=f_left or f_right):
            z = x - y
            kv = kernel.factor(np.array([[z]]))[0] if k_sing else kernel.scalar(z)
            fv = coef if f_sing or gamma == 0 else coef * abs(y) ** gamma
            return kv * fv

        if left or right:
            res, err = integrate.quad(g, u, v, weight="alg", wvar=(left, right), limit=200)
        else:
            res, err = integrate.quad(g, u, v, epsabs=0.0, epsrel=settings.quad_tolerance, limit=200)
        value += res
        error += err
    return value, error


def _gl_boxes_points(lo: np.ndarray, hi: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray]:
    t, w = roots_legendre(order)
    t = (t + 1) / 2
    w = w / 2
    n = lo.shape[-1]
    pts = np.array(list(itertools.product(t, repeat=n)))
    wts = np.prod(np.array(list(itertools.product(w, repeat=n))), axis=1)
    span = hi - lo
    y = lo[..., None, :] + span[..., None, :] * pts
    return y, np.prod(span, axis=-1)[..., None] * wts


def _adaptive_nd(g, lo: np.ndarray, hi: np.ndarray, singular: List[np.ndarray], tail_model, tol: float,
                 depth: int = 0) -> Tuple[float, float]:
    """Integral de g sobre una caja con puntos singulares aislados; devuelve (valor, holgura)."""
    inside = [p for p in singular if np.all(lo <= p) and np.all(p <= hi)]
    if inside:
        if depth >= settings.max_quad_depth:
            v = tail_model(lo, hi)
            return v, abs(v)
        p = inside[0]
        cut = np.where((lo < p) & (p < hi), p, (lo + hi) / 2)
        value, slack = 0.0, 0.0
        for corner in itertools.product((0, 1), repeat=len(lo)):
            c = np.array(corner, dtype=bool)
            v, s = _adaptive_nd(g, np.where(c, cut, lo), np.where(c, hi, cut), singular, tail_model, tol, depth + 1)
            value += v
            slack += s
        return value, slack
    y, w = _gl_boxes_points(lo, hi, 6)
    coarse = float(np.sum(g(y) * w))
    mid = (lo + hi) / 2
    fine = 0.0
    children = []
    for corner in itertools.product((0, 1), repeat=len(lo)):
        c = np.array(corner, dtype=bool)
        clo, chi = np.where(c, mid, lo), np.where(c, hi, mid)
        yc, wc = _gl_boxes_points(clo, chi, 6)
        fine += float(np.sum(g(yc) * wc))
        children.append((clo, chi))
    if abs(fine - coarse) <= tol * abs(fine) + 1e-300 or depth >= settings.max_quad_depth:
        return fine, (abs(fine - coarse) if depth >= settings.max_quad_depth else 0.0)
    value, slack = 0.0, 0.0
    for clo, chi in children:
        v, s = _adaptive_nd(g, clo, chi, singular, tail_model, tol, depth + 1)
        value += v
        slack += s
    return value, slack


class KernelOperator:
    """
    Matriz G[objetivo, fuente] = ∫_{celda fuente} K(x_objetivo - y) f(y) dy y tabla de prefijos
    sobre las fuentes, de modo que T(f·χ_B) en todos los objetivos cuesta O(2^n) por objetivo.
    """

    def __init__(self, kernel: KernelSpec, f: GridFunction):
        if kernel.n != f.frame.n:
            raise GeometryError(f"Núcleo en dimensión {kernel.n} y función en dimensión {f.frame.n}")
        cells = f.frame.n_cells
        if cells > settings.max_operator_cells:
            raise DepthError(
                f"KernelOperator con {cells} celdas supera MAX_OPERATOR_CELLS={settings.max_operator_cells} "
                f"(matriz densa de {8 * cells * cells / 2**20:.0f} MB)"
            )
        self.kernel = kernel
        self.f = f
        self.frame = f.frame
        self._target_slack = np.zeros(self.frame.n_cells)
        self.matrix = self._build()
        self.slack = float(self._target_slack.max()) + f.quadrature_slack
        self._prefix = None
        logger.debug(f"KernelOperator {kernel.variant} α={kernel.alpha}: {self.frame.n_cells} celdas, holgura={self.slack:.3e}")

    # --- construcción ---

    def _stencil_1d(self) -> np.ndarray:
        """W[d + N - 1] = ∫_{celda d} K(x_0 - y) dy con x_0 el centro de la celda 0."""
        N = self.frame.cells_per_axis
        h = float(self.frame.h)
        d = np.arange(-(N - 1), N, dtype=float)
        if self.kernel.variant in ("power", "rough"):
            return _primitive_1d(self.kernel, h / 2 - d * h) - _primitive_1d(self.kernel, -h / 2 - d * h)
        a, b = d * h, (d + 1) * h
        W = np.zeros(len(d))
        near = np.abs(d) <= 2
        for k in np.flatnonzero(near):
            W[k], err = _near_quad_1d(self.kernel, h / 2, a[k], b[k], 1.0, 0.0)
            self._target_slack += err
        far = np.flatnonzero(~near)
        if far.size:
            vals, diff = self._far_gl_1d(np.array([h / 2]), a[far], b[far], np.ones(far.size), np.zeros(far.size))
            W[far] = vals[0]
            self._target_slack += float(np.sum(np.abs(diff)))
        return W

    def _far_gl_1d(self, x: np.ndarray, a: np.ndarray, b: np.ndarray, coef: np.ndarray, gamma: np.ndarray):
        """Gauss-Legendre (Gauss-Jacobi si la celda toca el origen) para pares alejados."""
        results = []
        for order in (10, 14):
            y, w = _gl_cells_1d(a, b, order)
            fw = w * coef[:, None] * np.where(gamma[:, None] == 0, 1.0, np.abs(y) ** gamma[:, None])
            for j in np.flatnonzero((gamma != 0) & ((a == 0) | (b == 0))):
                jac_right = b[j] == 0
                t, wj = roots_jacobi(order, gamma[j] if jac_right else 0.0, 0.0 if jac_right else gamma[j])
                half = (b[j] - a[j]) / 2
                y[j] = a[j] + half * (t + 1)
                fw[j] = coef[j] * half ** (gamma[j] + 1) * wj
            z = x[:, None, None] - y[None]
            results.append(np.einsum("ijq,jq->ij", self.kernel.evaluate(z[..., None]), fw))
        return results[1], results[1] - results[0]

    def _stencil_nd(self) -> np.ndarray:
        n = self.frame.n
        N = self.frame.cells_per_axis
        h = float(self.frame.h)
        offsets = np.array(list(itertools.product(range(-(N - 1), N), repeat=n)), dtype=float)
        lo = offsets * h
        hi = lo + h
        x = np.full(n, h / 2)
        W = np.zeros(len(offsets))
        near = np.max(np.abs(offsets), axis=1) <= 1
        for k in np.flatnonzero(near):
            W[k], err = self._near_box_nd(x, lo[k], hi[k], 1.0, 0.0)
            self._target_slack += err
        far = np.flatnonzero(~near)
        estimates = []
        for order in (6, 8):
            y, w = _gl_boxes_points(lo[far], hi[far], order)
            estimates.append(np.sum(self.kernel.evaluate(x - y) * w, axis=-1))
        W[far] = estimates[1]
        self._target_slack += float(np.sum(np.abs(estimates[1] - estimates[0])))
        return W.reshape((2 * N - 1,) * n)

    def _near_box_nd(self, x: np.ndarray, lo: np.ndarray, hi: np.ndarray, coef: float, gamma: float) -> Tuple[float, float]:
        """Par cercano o singular en n >= 2."""
        kernel = self.kernel
        if gamma == 0 and kernel.variant in ("power", "rough"):
            value = 0.0
            axes = [[(a, b)] if not a < xi < b else [(a, xi), (xi, b)] for a, b, xi in zip(lo, hi, x)]
            for piece in itertools.product(*axes):
                plo = np.array([p[0] for p in piece])
                phi = np.array([p[1] for p in piece])
                zlo, zhi = x - phi, x - plo
                sign_point = (zlo + zhi)[None] / 2
                value += float(kernel.factor(sign_point)[0]) * power_moment(kernel.alpha - kernel.n, zlo, zhi)
            return coef * value, 0.0

        def g(y):
            fy = coef if gamma == 0 else coef * np.linalg.norm(y, axis=-1) ** gamma
            return kernel.evaluate(x - y) * fy

        def tail_model(blo, bhi):
            c = (blo + bhi) / 2
            if np.all(blo <= x) and np.all(x <= bhi):
                fc = coef if gamma == 0 else coef * np.linalg.norm(c) ** gamma
                return fc * float(kernel.factor((x - c)[None])[0]) * power_moment(kernel.alpha - kernel.n, x - bhi, x - blo)
            return float(kernel.evaluate((x - c)[None])[0]) * coef * power_moment(gamma, blo, bhi)

        singular = [x] + ([np.zeros(len(x))] if gamma != 0 else [])
        return _adaptive_nd(g, lo, hi, singular, tail_model, settings.quad_tolerance)

    def _power_column(self, j: int) -> np.ndarray:
        """Columna de una celda fuente con pieza potencia."""
        frame = self.frame
        coef = float(self.f.coef.ravel()[j])
        gamma = float(self.f.gamma.ravel()[j])
        centers = frame.centers()
        edges = frame.axis_edges()
        jc = np.unravel_index(j, frame.shape)
        lo = np.array([edges[ax][jc[ax]] for ax in range(frame.n)])
        hi = np.array([edges[ax][jc[ax] + 1] for ax in range(frame.n)])
        coords = np.stack(np.unravel_index(np.arange(frame.n_cells), frame.shape), axis=1)
        dist = np.max(np.abs(coords - np.array(jc)), axis=1)
        touches_origin = bool(np.all(lo <= 0) and np.all(0 <= hi))
        column = np.zeros(frame.n_cells)
        if frame.n == 1:
            near = dist <= 2
            far = np.flatnonzero(~near)
            if far.size:
                vals, diff = self._far_gl_1d(centers[far, 0], lo, hi, np.array([coef]), np.array([gamma]))
                column[far] = vals[:, 0]
                self._target_slack[far] += np.abs(diff[:, 0])
            for i in np.flatnonzero(near):
                column[i], err = _near_quad_1d(self.kernel, centers[i, 0], lo[0], hi[0], coef, gamma)
                self._target_slack[i] += err
            return column
        near = (dist <= 1) | touches_origin
        far = np.flatnonzero(~near)
        if far.size:
            estimates = []
            for order in (6, 8):
                y, w = _gl_boxes_points(lo, hi, order)
                fy = coef * np.linalg.norm(y, axis=-1) ** gamma
                estimates.append(np.sum(self.kernel.evaluate(centers[far][:, None, :] - y[None]) * (w * fy)[None], axis=-1))
            column[far] = estimates[1]
            self._target_slack[far] += np.abs(estimates[1] - estimates[0])
        for i in np.flatnonzero(near):
            column[i], err = self._near_box_nd(centers[i], lo, hi, coef, gamma)
            self._target_slack[i] += err
        return column

    def _build(self) -> np.ndarray:
        frame = self.frame
        N = frame.cells_per_axis
        coef = self.f.coef.ravel()
        gamma = self.f.gamma.ravel()
        G = np.zeros((frame.n_cells, frame.n_cells))
        const_cols = np.flatnonzero((gamma == 0) & (coef != 0))
        if const_cols.size:
            W = self._stencil_1d() if frame.n == 1 else self._stencil_nd()
            coords = np.stack(np.unravel_index(np.arange(frame.n_cells), frame.shape), axis=1)
            idx = tuple(coords[const_cols][None, :, ax] - coords[:, None, ax] + N - 1 for ax in range(frame.n))
            G[:, const_cols] = W[idx] * coef[const_cols][None, :]
        for j in np.flatnonzero((gamma != 0) & (coef != 0)):
            G[:, j] = self._power_column(j)
        return G

    # --- evaluación ---

    @property
    def prefix(self) -> np.ndarray:
        if self._prefix is None:
            table = self.matrix.reshape((self.frame.n_cells,) + self.frame.shape)
            for ax in range(1, self.frame.n + 1):
                table = np.cumsum(table, axis=ax)
            self._prefix = np.pad(table, [(0, 0)] + [(1, 0)] * self.frame.n)
        return self._prefix

    def apply(self) -> np.ndarray:
        """T f en los centros de celda."""
        return self.matrix.sum(axis=1).reshape(self.frame.shape)

    def apply_box(self, box: CellBox) -> np.ndarray:
        """T(f·χ_B) en todos los objetivos; B puede salir del marco."""
        values = box_sum(self.prefix, box.lo, box.hi)
        return np.broadcast_to(values, (self.frame.n_cells,)).reshape(self.frame.shape).copy()

    def apply_box_per_target(self, targets: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """T(f·χ_{B_t})(x_t) con una caja distinta por objetivo."""
        size = self.frame.cells_per_axis
        n = self.frame.n
        lo = np.clip(lo, 0, size)
        hi = np.maximum(np.clip(hi, 0, size), lo)
        total = np.zeros(len(targets))
        prefix = self.prefix
        for corner in itertools.product((0, 1), repeat=n):
            idx = tuple(np.where(corner[ax], hi[:, ax], lo[:, ax]) for ax in range(n))
            total += (-1) ** (n - sum(corner)) * prefix[(targets,) + idx]
        return total


def apply_kernel(kernel: KernelSpec, f: GridFunction) -> GridFunction:
    """T_α f en los centros de las celdas finas, con la holgura de cuadratura adjunta."""
    op = KernelOperator(kernel, f)
    return GridFunction(f.frame, op.apply(), quadrature_slack=op.slack)
