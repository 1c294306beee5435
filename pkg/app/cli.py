"""
Interfaz de línea de comandos: `python -m app.cli <subcomando> [opciones]`.

Códigos de salida: 0 veredicto pass, 1 veredicto fail, 2 error de uso o de dominio.
Con `--config fichero` las líneas `clave = valor` hacen de valores por defecto y los flags mandan.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from dotenv import dotenv_values

from app.config import get_settings
from app.services.dyadic import DyadicFrame, dump_family, verify_sparse
from app.services.errors import HarmonicError, ParameterError
from app.services.experiments import (
    bound_run, default_corpus, exponent_tuple, kurtz_check, sharpness_run, weak_type_ratio, write_sharpness_csv,
)
from app.services.gridfn import GridFunction, PowerWeight, parse_weight
from app.services.kernels import hormander_sum, parse_kernel, size_constant
from app.services.sparse import build_sparse_family, domination_ratio, format_report
from app.services.utils import parse_number
from app.services.weights import apq_char, apq_relations, write_rows

settings = get_settings()
logger = logging.getLogger("app.cli")

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _number_list(text: str) -> List[float]:
    return [parse_number(part) for part in text.split(",") if part.strip()]


def _spec_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _add_tuple_args(sub: argparse.ArgumentParser, with_n: bool = True) -> None:
    if with_n:
        sub.add_argument("--n", type=int, default=1, help="Dimensión")
    sub.add_argument("--alpha", type=parse_number, default=None, help="α (admite '1/4')")
    sub.add_argument("--r", type=parse_number, default=1.0, help="r")
    sub.add_argument("--p", type=parse_number, default=None, help="p")


def _add_frame_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--n", type=int, default=1, help="Dimensión")
    sub.add_argument("--depth", type=int, default=None, help="Profundidad L del marco")
    sub.add_argument("--unit", action="store_true", help="Marco [0,1)^n en lugar de [-1,1)^n")


def build_parser(defaults: Optional[Dict[str, str]] = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.cli", description="Laboratorio de análisis armónico diádico")
    parser.add_argument("--config", default=None, help="Fichero 'clave = valor' con valores por defecto")
    parser.add_argument("--log-level", default=settings.log_level)
    subparsers = parser.add_subparsers(dest="command", required=True)

    sub = subparsers.add_parser("sharpness", help="Experimento de nitidez (n = 1)")
    sub.add_argument("--example", type=int, choices=[1, 2], default=1)
    _add_tuple_args(sub)
    sub.add_argument("--eps-list", type=_number_list, default=None, help="ε separados por comas")
    sub.add_argument("--depth", type=int, default=None)
    sub.add_argument("--out", default=None, help="CSV de salida")

    sub = subparsers.add_parser("bound", help="Cota con exponente óptimo sobre un corpus de pesos")
    _add_tuple_args(sub)
    sub.add_argument("--weights", type=_spec_list, default=["lebesgue"], help="Pesos separados por comas")
    sub.add_argument("--eps-list", type=_number_list, default=None)
    sub.add_argument("--depth", type=int, default=None)

    sub = subparsers.add_parser("dominate", help="Familia esparsa y dominación puntual")
    sub.add_argument("--kernel", default=None)
    sub.add_argument("--f", default=None, help="Registros de celda de f")
    _add_frame_args(sub)
    sub.add_argument("--r", type=parse_number, default=1.0)
    sub.add_argument("--report", default=None, help="Reporte de texto por nodo")
    sub.add_argument("--family-out", default=None, help="Familia cruda en formato de texto")

    sub = subparsers.add_parser("kernel-check", help="Condición de tamaño o de Hörmander")
    sub.add_argument("--kernel", default=None)
    sub.add_argument("--condition", choices=["size", "hormander"], default="size")
    sub.add_argument("--rprime", type=parse_number, default=float("inf"))
    sub.add_argument("--n", type=int, default=1)
    sub.add_argument("--s-min", type=parse_number, default=2.0 ** -6)
    sub.add_argument("--s-max", type=parse_number, default=4.0)
    sub.add_argument("--x", type=parse_number, default=1.0)
    sub.add_argument("--R", type=parse_number, default=4.0)
    sub.add_argument("--M", type=int, default=20)

    sub = subparsers.add_parser("apq", help="Característica A_{p,q} y relaciones")
    sub.add_argument("--weight", default=None)
    sub.add_argument("--p", type=parse_number, default=None)
    sub.add_argument("--q", type=parse_number, default=None)
    _add_frame_args(sub)
    sub.add_argument("--rows-out", default=None, help="CSV cubo,valor")

    for name, help_text in (("weak-type", "Funcional de tipo débil"), ("kurtz", "Prueba puntual M^# ≤ C M_{α,r}")):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--kernel", default=None)
        sub.add_argument("--f", default=None)
        _add_frame_args(sub)
        sub.add_argument("--r", type=parse_number, default=1.0)
        if name == "weak-type":
            sub.add_argument("--weight", default="lebesgue")

    sub = subparsers.add_parser("exponents", help="Exponentes derivados de (n, α, r, p)")
    _add_tuple_args(sub)
    defaults = defaults or {}
    known_dests = {action.dest for sub in (parser, *subparsers.choices.values()) for action in sub._actions}
    unknown = sorted(set(defaults) - known_dests)
    if unknown:
        raise ParameterError(f"Claves de configuración desconocidas: {', '.join(unknown)}")
    for sub in subparsers.choices.values():
        sub.set_defaults(**defaults)
    return parser


def _require(parser: argparse.ArgumentParser, args: argparse.Namespace, *names: str) -> None:
    missing = [name for name in names if getattr(args, name, None) is None]
    if missing:
        parser.error(f"faltan argumentos: {', '.join('--' + m.replace('_', '-') for m in missing)}")


def _frame(args: argparse.Namespace) -> DyadicFrame:
    depth = args.depth or settings.default_depth
    return DyadicFrame.unit(args.n, depth) if args.unit else DyadicFrame.symmetric(args.n, depth)


def _emit(payload) -> None:
    print(payload.model_dump_json(indent=2) if hasattr(payload, "model_dump_json") else json.dumps(payload, indent=2))


def _verdict_code(verdict: str) -> int:
    return EXIT_PASS if verdict == "pass" else EXIT_FAIL


# ===== SUBCOMANDOS =====

def cmd_sharpness(args: argparse.Namespace) -> int:
    t = exponent_tuple(args.n, args.alpha, args.r, args.p)
    frame = DyadicFrame.symmetric(1, args.depth or settings.default_depth)
    result = sharpness_run(args.example, t, args.eps_list, frame)
    if args.out:
        write_sharpness_csv(result, args.out)
    _emit(result)
    return _verdict_code(result.verdict)


def cmd_bound(args: argparse.Namespace) -> int:
    t = exponent_tuple(args.n, args.alpha, args.r, args.p)
    frame = DyadicFrame.symmetric(args.n, args.depth or settings.default_depth)
    corpus = default_corpus(frame, [(spec, parse_weight(spec, frame)) for spec in args.weights])
    result = bound_run(t, corpus, frame, args.eps_list or ())
    _emit(result)
    return _verdict_code(result.verdict)


def cmd_dominate(args: argparse.Namespace) -> int:
    frame = _frame(args)
    kernel = parse_kernel(args.kernel, frame.n)
    f = GridFunction.load(args.f, frame)
    build = build_sparse_family(kernel, f, r=args.r)
    check = verify_sparse(build.raw, frame)
    report = domination_ratio(kernel, f, build.hosted_list, args.r, operator=build.operator)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(format_report(build.report))
    if args.family_out:
        with open(args.family_out, "w", encoding="utf-8") as fh:
            fh.write(dump_family(build.raw))
    _emit({"sparsity": check.model_dump(mode="json"), "construction": {
        "node_count": build.report.node_count, "depth": build.report.depth,
        "max_c": build.report.max_c, "truncated": build.report.truncated},
        "domination": report.model_dump(mode="json")})
    ok = check.passed and not report.violations and np.isfinite(report.ratio)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_kernel_check(args: argparse.Namespace) -> int:
    kernel = parse_kernel(args.kernel, args.n)
    if args.condition == "size":
        report = size_constant(kernel, kernel.alpha, args.rprime, args.s_min, args.s_max)
    else:
        offset = np.zeros(args.n)
        offset[0] = args.x
        report = hormander_sum(kernel, kernel.alpha, args.rprime, offset, args.R, args.M)
    _emit(report)
    return _verdict_code(report.verdict)


def cmd_apq(args: argparse.Namespace) -> int:
    frame = _frame(args)
    w = parse_weight(args.weight, frame)
    rows = [] if args.rows_out else None
    value = apq_char(w, args.p, args.q, frame, rows=rows)
    if rows is not None:
        write_rows(rows, args.rows_out)
    relations = apq_relations(w, args.p, args.q, frame)
    _emit({"weight": args.weight, "apq": value, "relations": relations.model_dump(mode="json")})
    return EXIT_PASS


def cmd_weak_type(args: argparse.Namespace) -> int:
    frame = _frame(args)
    kernel = parse_kernel(args.kernel, frame.n)
    f = GridFunction.load(args.f, frame)
    result = weak_type_ratio(kernel, f, PowerWeight.parse(args.weight), args.r)
    _emit(result)
    return EXIT_PASS


def cmd_kurtz(args: argparse.Namespace) -> int:
    frame = _frame(args)
    kernel = parse_kernel(args.kernel, frame.n)
    f = GridFunction.load(args.f, frame)
    report = kurtz_check(kernel, f, args.r)
    _emit(report)
    return _verdict_code(report.verdict)


def cmd_exponents(args: argparse.Namespace) -> int:
    _emit(exponent_tuple(args.n, args.alpha, args.r, args.p))
    return EXIT_PASS


COMMANDS = {
    "sharpness": (cmd_sharpness, ("alpha", "p")),
    "bound": (cmd_bound, ("alpha", "p")),
    "dominate": (cmd_dominate, ("kernel", "f")),
    "kernel-check": (cmd_kernel_check, ("kernel",)),
    "apq": (cmd_apq, ("weight", "p", "q")),
    "weak-type": (cmd_weak_type, ("kernel", "f")),
    "kurtz": (cmd_kurtz, ("kernel", "f")),
    "exponents": (cmd_exponents, ("alpha", "p")),
}


def _config_defaults(argv: Sequence[str]) -> Dict[str, str]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    path = Path(known.config)
    if not path.is_file():
        raise ParameterError(f"Fichero de configuración inexistente: {path}")
    values = dotenv_values(path, interpolate=False)
    empty = sorted(key for key, value in values.items() if value is None)
    if empty:
        raise ParameterError(f"{path}: se esperaba 'clave = valor' en {', '.join(empty)}")
    # los flags usan guion bajo como dest
    return {key.replace("-", "_"): value for key, value in values.items()}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser(_config_defaults(argv))
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=args.log_level,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )
        handler, required = COMMANDS[args.command]
        _require(parser, args, *required)
        return handler(args)
    except SystemExit as e:
        return EXIT_ERROR if e.code else EXIT_PASS
    except (HarmonicError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
