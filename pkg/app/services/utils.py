"""
Utilidades comunes: racionales exactos, exponentes conjugados y cadenas de especificación.
"""
import math
from fractions import Fraction
from typing import Any, List, Union

from app.services.errors import ParameterError

Number = Union[int, float, Fraction]


def to_fraction(value: Any) -> Fraction:
    """Convierte int, str ('3/2', '0.25') o Fraction a Fraction exacta."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ParameterError(f"Valor racional inválido: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ParameterError(f"Valor racional no finito: {value!r}")
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise ParameterError(f"Valor racional inválido: {value!r}") from e
    raise ParameterError(f"Tipo no convertible a racional: {type(value).__name__}")


def parse_number(text: str) -> float:
    """Lee un real admitiendo notación racional ('1/4')."""
    text = text.strip()
    if text.lower() in ("inf", "infinity", "∞"):
        return math.inf
    if "/" in text:
        return float(to_fraction(text))
    try:
        return float(text)
    except ValueError as e:
        raise ParameterError(f"Número inválido: {text!r}") from e


def conjugate(p: float) -> float:
    """Exponente conjugado p' = p/(p-1); p = 1 da infinito."""
    if p < 1:
        raise ParameterError(f"Exponente conjugado indefinido para p={p}")
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1)


def split_spec(spec: str, prefix_options: List[str]) -> List[str]:
    """Separa una cadena `tipo:a:b...` validando el tipo."""
    parts = [p.strip() for p in spec.split(":")]
    if not parts or parts[0] not in prefix_options:
        raise ParameterError(f"Especificación desconocida: {spec!r} (tipos: {', '.join(prefix_options)})")
    return parts


def format_float(value: float) -> str:
    """Representación estable de floats para CSV reproducible."""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))
