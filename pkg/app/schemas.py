"""
Modelos Pydantic para reportes de los servicios y requests/responses de la API.
"""
import math
from datetime import datetime
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, computed_field, field_serializer, field_validator, model_validator

from app.services.utils import conjugate, parse_number


def _rational(v):
    if isinstance(v, str):
        return parse_number(v)
    return v


def _json_float(v: Optional[float]):
    """JSON no admite inf ni nan: se envían como texto."""
    if v is None or math.isfinite(v):
        return v
    return str(v)


# ===== EXPONENTES =====

class ExponentTuple(BaseModel):
    """Tupla (n, α, r, p) con sus exponentes derivados."""
    n: int = Field(default=1, ge=1, le=3, description="Dimensión")
    alpha: float = Field(..., description="Orden fraccionario α")
    r: float = Field(default=1.0, description="Exponente local r")
    p: float = Field(..., description="Exponente de partida p")

    @field_validator("alpha", "r", "p", mode="before")
    @classmethod
    def coerce_rationals(cls, v):
        return _rational(v)

    @model_validator(mode="after")
    def _check_chain(self):
        if not 0 <= self.alpha < self.n:
            raise ValueError(f"α={self.alpha} debe cumplir 0 <= α < n={self.n}")
        upper = math.inf if self.alpha == 0 else self.n / self.alpha
        if not 1 <= self.r < self.p < upper:
            raise ValueError(f"se exige 1 <= r < p < n/α: r={self.r}, p={self.p}, n/α={upper}")
        return self

    @computed_field
    @property
    def q(self) -> float:
        return 1.0 / (1.0 / self.p - self.alpha / self.n)

    @computed_field
    @property
    def p_prime(self) -> float:
        return conjugate(self.p)

    @computed_field
    @property
    def r_prime(self) -> float:
        return conjugate(self.r)

    @field_serializer("r_prime")
    def _finite_r_prime(self, v: float):
        return _json_float(v)

    @computed_field
    @property
    def pr_prime(self) -> float:
        """(p/r)'."""
        return conjugate(self.p / self.r)

    @computed_field
    @property
    def gamma1(self) -> float:
        return 1.0 - self.alpha / self.n

    @computed_field
    @property
    def gamma2(self) -> float:
        return self.pr_prime / self.q * (1.0 - self.alpha * self.r / self.n)

    @computed_field
    @property
    def sharp(self) -> float:
        return max(self.gamma1, self.gamma2)

    @computed_field
    @property
    def cotat_exponent(self) -> float:
        """Forma alternativa (1/q)(1 + (p/r)'·r/p) del segundo exponente."""
        return (1.0 + self.pr_prime * self.r / self.p) / self.q


# ===== REPORTES DE SERVICIOS =====

class ConditionReport(BaseModel):
    """Certificado numérico de la condición de tamaño (S) o de Hörmander (H)."""
    condition: Literal["S", "H"] = Field(..., description="Condición comprobada")
    rprime: float = Field(..., description="Exponente r'")
    samples: List[float] = Field(default_factory=list, description="Escalas s o índices m muestreados")
    values: List[float] = Field(default_factory=list, description="Valor por muestra")
    supremum: float = Field(..., description="Supremo estimado (o suma parcial en H)")
    tail_ratio: float = Field(..., description="Razón de decaimiento de la cola")
    tail_estimate: Optional[float] = Field(None, description="Cola extrapolada (sólo H)")
    verdict: Literal["pass", "fail"] = Field(..., description="Veredicto")

    @field_serializer("rprime", "supremum", "tail_ratio", "tail_estimate")
    def _finite(self, v: Optional[float]):
        return _json_float(v)

    @field_serializer("values")
    def _finite_values(self, v: List[float]):
        return [_json_float(x) for x in v]


class SparseNodeReport(BaseModel):
    """Un nodo de la recursión de parada."""
    cube: str = Field(..., description="Cubo P como 'tag k m...'")
    tau: float = Field(..., description="Umbral τ_P (cuantil 1-θ)")
    c_p: float = Field(..., description="Constante realizada c_P")
    e_ratio: float = Field(..., description="|E|/|P|")
    children_ratio: float = Field(..., description="Σ|P_j| / |P|")


class SparseConstruction(BaseModel):
    """Resumen de build_sparse_family."""
    node_count: int
    depth: int = Field(..., description="Nivel máximo alcanzado")
    max_c: float = Field(..., description="Máximo de c_P")
    truncated: bool = Field(..., description="La recursión tocó el nivel más fino con selección pendiente")
    nodes: List[SparseNodeReport] = Field(default_factory=list)


class DominationReport(BaseModel):
    ratio: float = Field(..., description="max |T f| / A f")
    cell: Optional[Tuple[int, ...]] = Field(None, description="Celda donde se alcanza")
    violations: List[Tuple[int, ...]] = Field(default_factory=list, description="Celdas con A f = 0 y |T f| > tolerancia")


class RelationsReport(BaseModel):
    apq: float = Field(..., description="[w]_{A_{p,q}}")
    as_of_wq: float = Field(..., description="[w^q]_{A_{1+q/p'}}")
    as_of_wpprime: float = Field(..., description="[w^{p'}]_{A_{1+p'/q}}")
    deviation_first: float = Field(..., description="Desviación relativa de [w^q] = [w]")
    deviation_second: float = Field(..., description="Desviación relativa de [w^{p'}] = [w]^{p'/q}")

    @computed_field
    @property
    def max_deviation(self) -> float:
        return max(self.deviation_first, self.deviation_second)


class ExperimentRow(BaseModel):
    eps: float
    t: float = Field(..., description="Característica [w^r]_{A_{p/r,q/r}}")
    num_norm: float
    den_norm: float
    ratio: float


class ExperimentResult(BaseModel):
    example: int = Field(..., description="Ejemplo 1 ó 2")
    exponents: ExponentTuple
    rows: List[ExperimentRow] = Field(default_factory=list, description="Filas ordenadas por ε descendente")
    dropped: List[float] = Field(default_factory=list, description="ε descartados por divergencia")
    slope: float = Field(..., description="Pendiente ajustada log ratio / log t")
    stderr: float = Field(..., description="Error estándar de la pendiente")
    expected: float = Field(..., description="Exponente esperado")
    cotat_exponent: float = Field(..., description="Exponente en la forma alternativa")
    verdict: Literal["pass", "fail"]


class BoundRow(BaseModel):
    label: str
    ratio: float
    t: float
    normalized: float = Field(..., description="ratio / t^{sharp}")
    two_weight: float = Field(..., description="[w^q, σ]_{A^{1-α/n}} sobre la familia usada")
    two_weight_expected: float = Field(..., description="[w^r]^{r/q}_{A_{p/r,q/r}} sobre la misma familia")


class BoundResult(BaseModel):
    exponents: ExponentTuple
    rows: List[BoundRow] = Field(default_factory=list)
    constant: float
    refined_constant: float
    budget: float
    verdict: Literal["pass", "fail"]


class WeakTypeResult(BaseModel):
    ratio: float
    lam: Optional[float] = Field(None, description="λ donde se alcanza el supremo")
    denominator: float


class KurtzReport(BaseModel):
    ratio: float
    refined_ratio: float
    cell: Optional[Tuple[int, ...]] = None
    verdict: Literal["pass", "fail"]


# ===== REQUEST MODELS =====

class SharpnessRequest(BaseModel):
    example: Literal[1, 2] = Field(default=1, description="Ejemplo de la familia de potencias")
    alpha: float = Field(default=0.25, description="α")
    r: float = Field(default=1.0, description="r")
    p: float = Field(default=4 / 3, description="p")
    eps_list: Optional[List[float]] = Field(None, description="Lista de ε; por defecto la de configuración")
    depth: Optional[int] = Field(None, ge=2, le=16, description="Profundidad L del marco")

    @field_validator("alpha", "r", "p", mode="before")
    @classmethod
    def coerce_rationals(cls, v):
        return _rational(v)


class BoundRequest(BaseModel):
    alpha: float = Field(default=0.25)
    r: float = Field(default=1.0)
    p: float = Field(default=4 / 3)
    weights: List[str] = Field(default_factory=lambda: ["lebesgue"], description="Pesos 'power:a:coeff'")
    eps_list: Optional[List[float]] = Field(None, description="Filas del ejemplo 1 a reutilizar")
    depth: Optional[int] = Field(None, ge=2, le=14)

    @field_validator("alpha", "r", "p", mode="before")
    @classmethod
    def coerce_rationals(cls, v):
        return _rational(v)


class ApqRequest(BaseModel):
    weight: str = Field(..., description="Peso 'power:a:coeff'")
    p: float = Field(..., gt=1)
    q: float = Field(..., gt=1)
    n: int = Field(default=1, ge=1, le=3)
    depth: int = Field(default=8, ge=1, le=14)
    symmetric: bool = Field(default=True, description="Marco [-1,1)^n en lugar de [0,1)^n")

    @field_validator("p", "q", mode="before")
    @classmethod
    def coerce_rationals(cls, v):
        return _rational(v)


class KernelCheckRequest(BaseModel):
    kernel: str = Field(..., description="'power:alpha:c' o 'rough:alpha:w+:w-'")
    condition: Literal["size", "hormander"] = Field(default="size")
    rprime: float = Field(default=math.inf, ge=1)
    n: int = Field(default=1, ge=1, le=3)
    s_min: float = Field(default=2.0 ** -6, gt=0)
    s_max: float = Field(default=2.0 ** 2, gt=0)
    x: float = Field(default=1.0, description="Desplazamiento (eje 1) para Hörmander")
    R: float = Field(default=4.0, gt=0)
    M: int = Field(default=20, ge=2, le=60)

    @field_validator("rprime", mode="before")
    @classmethod
    def coerce_rationals(cls, v):
        return _rational(v)


class ExponentsRequest(BaseModel):
    n: int = Field(default=1, ge=1, le=3)
    alpha: float
    r: float = Field(default=1.0)
    p: float

    @field_validator("alpha", "r", "p", mode="before")
    @classmethod
    def coerce_rationals(cls, v):
        return _rational(v)


# ===== RESPONSE MODELS =====

class ApqResponse(BaseModel):
    weight: str
    apq: float
    relations: RelationsReport


class HealthResponse(BaseModel):
    """Response para health check."""
    status: str = Field(default="healthy", description="Estado del servicio")
    timestamp: datetime = Field(default_factory=datetime.utcnow, description="Timestamp del check")
    version: str = Field(default="1.0.0", description="Versión de la API")


# ===== ERROR MODELS =====

class ErrorResponse(BaseModel):
    """Modelo para respuestas de error."""
    error: str = Field(..., description="Mensaje de error")
    detail: Optional[str] = Field(None, description="Detalle adicional del error")
    timestamp: datetime = Field(default_factory=datetime.utcnow, description="Timestamp del error")
