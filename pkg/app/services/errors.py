"""
Jerarquía de excepciones del laboratorio.
Los veredictos (pass/fail) nunca se señalan con excepciones: son valores.
"""


class HarmonicError(ValueError):
    """Error base de todos los servicios numéricos."""


class ParameterError(HarmonicError):
    """Parámetro fuera de rango (r < 1, λ <= 0, restricciones de la tupla de exponentes)."""


class DomainError(HarmonicError):
    """Exponente no integrable, dato negativo donde se exige positividad o denominador nulo."""


class GeometryError(HarmonicError):
    """Cubo fuera del rango representable, caja desalineada o marcos distintos."""


class DepthError(GeometryError):
    """Se superó la profundidad máxima del marco."""


class HeightError(HarmonicError):
    """La densidad media del cubo raíz supera la altura de Calderón-Zygmund."""


class FrameOverflowError(GeometryError):
    """El triple 3Q0 sale del marco extendido."""


class PreconditionError(HarmonicError):
    """Precondición de un verificador incumplida (p. ej. R <= 2|x| en Hörmander)."""


class ToleranceError(HarmonicError):
    """La cuadratura no alcanzó la tolerancia pedida."""
