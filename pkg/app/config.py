"""
Configuración de la aplicación usando Pydantic Settings.
Maneja variables de entorno, tolerancias numéricas y valores por defecto de los experimentos.
"""
from typing import List
from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Configuración principal del laboratorio."""

    # API Configuration
    api_key: str = Field(default="your-secret-api-key-here", alias="API_KEY", description="Clave API para autenticación")
    max_concurrent_rows: int = Field(default=4, alias="MAX_CONCURRENT_ROWS", ge=1, le=32, description="Filas ε evaluadas en paralelo")

    # Marco y cuadratura
    default_depth: int = Field(default=10, alias="DEFAULT_DEPTH", ge=1, le=16, description="Profundidad L por defecto")
    quad_tolerance: float = Field(default=1e-8, alias="QUAD_TOLERANCE", gt=0, lt=1, description="Tolerancia relativa de cuadratura")
    max_quad_depth: int = Field(default=12, alias="MAX_QUAD_DEPTH", ge=1, le=40, description="Subdivisiones máximas en cuadratura adaptativa")
    max_operator_cells: int = Field(default=4096, alias="MAX_OPERATOR_CELLS", ge=16, le=65536, description="Celdas máximas de KernelOperator (matriz densa de 8·celdas² bytes; 4096 = profundidad 12 en n = 1, 128 MB)")

    # Verificadores de núcleos
    size_tolerance: float = Field(default=0.05, alias="SIZE_TOLERANCE", gt=0, description="Crecimiento admitido entre escalas (condición S)")
    hormander_tail_tol: float = Field(default=1e-3, alias="HORMANDER_TAIL_TOL", gt=0, description="Cola extrapolada admitida (condición H)")
    hormander_c: float = Field(default=2.0, alias="HORMANDER_C", gt=1, description="Constante c_{r'} de la condición H")

    # Experimentos
    slope_tolerance: float = Field(default=0.15, alias="SLOPE_TOLERANCE", gt=0, lt=1, description="Banda relativa de la pendiente ajustada")
    eps_min_exponent: int = Field(default=2, alias="EPS_MIN_EXPONENT", ge=1, description="ε más grande = 2^-min")
    eps_max_exponent: int = Field(default=8, alias="EPS_MAX_EXPONENT", ge=2, description="ε más pequeño = 2^-max")
    refinement_band: float = Field(default=1.5, alias="REFINEMENT_BAND", gt=1, description="Factor admitido bajo un refinamiento")
    bound_budget: float = Field(default=50.0, alias="BOUND_BUDGET", gt=0, description="Presupuesto C_budget de bound_run")
    weak_lambda_points: int = Field(default=64, alias="WEAK_LAMBDA_POINTS", ge=4, le=4096, description="Puntos de la malla de λ")
    shell_log2_cutoff: float = Field(default=60.0, alias="SHELL_LOG2_CUTOFF", gt=10, description="Corte relativo (log2) de las capas del cubo centrado")
    max_shells: int = Field(default=10_000_000, alias="MAX_SHELLS", ge=10, description="Máximo de capas evaluadas")

    # Logging
    log_level: str = Field(default="INFO", alias="LOG_LEVEL", description="Nivel de logging")

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
        "extra": "ignore"
    }

    def eps_grid(self) -> List[float]:
        """Malla ε = {2^-min, ..., 2^-max} en orden descendente."""
        return [2.0 ** -k for k in range(self.eps_min_exponent, self.eps_max_exponent + 1)]


# Instancia global de configuración
settings = Settings()


def get_settings() -> Settings:
    """Obtiene la instancia de configuración."""
    return settings
