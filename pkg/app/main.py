"""
Aplicación FastAPI principal: expone los experimentos del laboratorio por HTTP.
Los cálculos corren en hilos de trabajo para no bloquear el bucle de eventos.
"""
import asyncio
import logging
from datetime import datetime

import numpy as np
from fastapi import FastAPI, HTTPException, Depends, Header, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.middleware.gzip import GZipMiddleware
from fastapi.responses import JSONResponse
import uvicorn

from app.config import get_settings
from app.schemas import (
    ApqRequest, ApqResponse, BoundRequest, BoundResult, ConditionReport, ErrorResponse, ExperimentResult,
    ExponentsRequest, ExponentTuple, HealthResponse, KernelCheckRequest, SharpnessRequest,
)
from app.services.dyadic import DyadicFrame
from app.services.errors import HarmonicError
from app.services.experiments import bound_run, default_corpus, exponent_tuple, sharpness_run
from app.services.gridfn import PowerWeight
from app.services.kernels import hormander_sum, parse_kernel, size_constant
from app.services.weights import apq_char, apq_relations

settings = get_settings()

# Configurar logging
logging.basicConfig(
    level=settings.log_level,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Crear aplicación FastAPI
app = FastAPI(
    title="Laboratorio de Análisis Armónico Diádico",
    description="API para experimentos de dominación esparsa, pesos A_{p,q} y nitidez de exponentes",
    version="1.0.0",
    docs_url="/docs",
    redoc_url="/redoc"
)

# Middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.add_middleware(GZipMiddleware, minimum_size=1000)


# Dependencias
async def verify_api_key(x_api_key: str = Header(None)):
    """Verifica la clave API."""
    if not x_api_key or x_api_key != settings.api_key:
        raise HTTPException(
            status_code=401,
            detail="API key inválida o faltante"
        )
    return x_api_key


# Middleware de logging
@app.middleware("http")
async def log_requests(request: Request, call_next):
    """Middleware para logging de requests."""
    start_time = datetime.utcnow()

    response = await call_next(request)

    process_time = (datetime.utcnow() - start_time).total_seconds()

    logger.info(
        f"{request.method} {request.url.path} - "
        f"Status: {response.status_code} - "
        f"Time: {process_time:.3f}s"
    )

    return response


# Endpoints
@app.post("/sharpness", response_model=ExperimentResult)
async def sharpness(request: SharpnessRequest, api_key: str = Depends(verify_api_key)):
    """Ejecuta un experimento de nitidez (n = 1) y devuelve filas, pendiente y veredicto."""
    t = exponent_tuple(1, request.alpha, request.r, request.p)
    frame = DyadicFrame.symmetric(1, request.depth or settings.default_depth)
    logger.info(f"Iniciando nitidez: ejemplo {request.example}, L={frame.depth}")
    return await asyncio.to_thread(sharpness_run, request.example, t, request.eps_list, frame)


@app.post("/bound", response_model=BoundResult)
async def bound(request: BoundRequest, api_key: str = Depends(verify_api_key)):
    """Comprueba la cota con exponente óptimo sobre pesos potencia y χ_{[0,1)}."""
    t = exponent_tuple(1, request.alpha, request.r, request.p)
    frame = DyadicFrame.symmetric(1, request.depth or settings.default_depth)
    weights = [(spec, PowerWeight.parse(spec)) for spec in request.weights]
    corpus = default_corpus(frame, weights)
    return await asyncio.to_thread(bound_run, t, corpus, frame, request.eps_list or ())


@app.post("/apq", response_model=ApqResponse)
async def apq(request: ApqRequest, api_key: str = Depends(verify_api_key)):
    """Característica A_{p,q} de un peso potencia y sus relaciones con A_s."""
    w = PowerWeight.parse(request.weight)
    frame = (DyadicFrame.symmetric if request.symmetric else DyadicFrame.unit)(request.n, request.depth)

    def compute() -> ApqResponse:
        value = apq_char(w, request.p, request.q, frame)
        return ApqResponse(weight=request.weight, apq=value,
                           relations=apq_relations(w, request.p, request.q, frame))

    return await asyncio.to_thread(compute)


@app.post("/kernel-check", response_model=ConditionReport)
async def kernel_check(request: KernelCheckRequest, api_key: str = Depends(verify_api_key)):
    """Certificado de la condición de tamaño o de Hörmander para un núcleo."""
    kernel = parse_kernel(request.kernel, request.n)
    if request.condition == "size":
        return await asyncio.to_thread(size_constant, kernel, kernel.alpha, request.rprime,
                                       request.s_min, request.s_max)
    offset = np.zeros(request.n)
    offset[0] = request.x
    return await asyncio.to_thread(hormander_sum, kernel, kernel.alpha, request.rprime,
                                   offset, request.R, request.M)


@app.post("/exponents", response_model=ExponentTuple)
async def exponents(request: ExponentsRequest):
    """Exponentes derivados de (n, α, r, p)."""
    return exponent_tuple(request.n, request.alpha, request.r, request.p)


@app.get("/healthz", response_model=HealthResponse)
async def health_check():
    """Health check endpoint."""
    return HealthResponse(
        status="healthy",
        timestamp=datetime.utcnow(),
        version="1.0.0"
    )


# Manejo de errores
@app.exception_handler(HarmonicError)
async def harmonic_exception_handler(request: Request, exc: HarmonicError):
    """Parámetros o datos fuera del dominio de la operación."""
    logger.warning(f"{type(exc).__name__} en {request.url.path}: {exc}")
    return JSONResponse(
        status_code=422,
        content=ErrorResponse(
            error=type(exc).__name__,
            detail=str(exc),
            timestamp=datetime.utcnow()
        ).model_dump(mode="json")
    )


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    """Manejador global de excepciones."""
    logger.error(f"Error no manejado: {exc}", exc_info=True)
    return JSONResponse(
        status_code=500,
        content=ErrorResponse(
            error="Error interno del servidor",
            detail=str(exc),
            timestamp=datetime.utcnow()
        ).model_dump(mode="json")
    )


if __name__ == "__main__":
    import os
    port = int(os.environ.get("PORT", 8080))
    uvicorn.run(
        "app.main:app",
        host="0.0.0.0",
        port=port,
        reload=False,
        log_level="info"
    )
