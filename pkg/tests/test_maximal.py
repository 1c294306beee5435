"""
Pruebas de los operadores maximales.
"""
import math
import os
import sys

import numpy as np
import pytest

# Agregar el directorio raíz al path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.services.dyadic import CellBox, DyadicCube, DyadicFrame
from app.services.errors import GeometryError, ParameterError
from app.services.gridfn import GridFunction
from app.services.kernels import KernelOperator, parse_kernel
from app.services.maximal import frac_maximal, grand_maximal, grand_truncated, local_residue, sharp_maximal

RIESZ_HALF = parse_kernel("power:1/2", 1)


def test_frac_maximal_of_constant():
    frame = DyadicFrame.symmetric(1, 4)
    m = frac_maximal(GridFunction.constant(frame, 1.0), 0.5)
    assert np.allclose(m.coef, math.sqrt(2.0), rtol=1e-12)


def test_frac_maximal_alpha_zero_is_hardy_littlewood():
    frame = DyadicFrame.unit(1, 3)
    f = GridFunction.from_values(frame, [8.0, 0, 0, 0, 0, 0, 0, 0])
    m = frac_maximal(f, 0.0, include_shifted=False)
    assert m.coef[0] == pytest.approx(8.0)
    assert m.coef[7] == pytest.approx(1.0)
    assert np.all(m.coef >= 1.0 - 1e-12)


def test_frac_maximal_rejects_bad_parameters():
    frame = DyadicFrame.unit(1, 3)
    f = GridFunction.constant(frame, 1.0)
    with pytest.raises(ParameterError):
        frac_maximal(f, 1.0)
    with pytest.raises(ParameterError):
        frac_maximal(f, 0.5, r=0.5)


def test_sharp_maximal_of_half_indicator():
    frame = DyadicFrame.unit(1, 4)
    g = GridFunction.indicator(frame, CellBox(lo=(0,), hi=(8,)))
    m = sharp_maximal(g)
    assert np.allclose(m.coef, 0.5, rtol=1e-12)


def test_sharp_maximal_of_constant_sees_the_frame_edge():
    frame = DyadicFrame.unit(1, 3)
    base = sharp_maximal(GridFunction.constant(frame, 1.0), include_shifted=False)
    assert np.allclose(base.coef, 0.0)
    shifted = sharp_maximal(GridFunction.constant(frame, 1.0))
    assert np.all(shifted.coef > 0)


def test_grand_truncated_vanishes_outside_root():
    frame = DyadicFrame.unit(1, 4)
    f = GridFunction.constant(frame, 1.0)
    op = KernelOperator(RIESZ_HALF, f)
    root = DyadicCube(level=1, index=(0,))
    m = grand_truncated(RIESZ_HALF, f, root, operator=op)
    assert np.all(m.coef[8:] == 0.0)
    assert np.all(m.coef[:8] >= 0.0)
    assert np.any(m.coef[:8] > 0.0)
    assert np.allclose(grand_truncated(RIESZ_HALF, f, root).coef, m.coef)


def test_grand_truncated_rejects_bad_roots():
    frame = DyadicFrame.unit(1, 3)
    f = GridFunction.constant(frame, 1.0)
    with pytest.raises(GeometryError):
        grand_truncated(RIESZ_HALF, f, DyadicCube(tag=1, level=0, index=(0,)))
    with pytest.raises(GeometryError):
        grand_truncated(RIESZ_HALF, f, DyadicCube(level=1, index=(3,)))


def test_grand_maximal_is_finite_and_nonnegative():
    frame = DyadicFrame.unit(1, 4)
    f = GridFunction.constant(frame, 1.0)
    op = KernelOperator(RIESZ_HALF, f)
    whole = grand_maximal(RIESZ_HALF, f, operator=op)
    assert np.all(np.isfinite(whole.coef))
    assert np.all(whole.coef >= 0.0)


def test_local_residue_is_positive_for_positive_f():
    frame = DyadicFrame.unit(1, 4)
    op = KernelOperator(RIESZ_HALF, GridFunction.constant(frame, 1.0))
    residue = local_residue(op)
    assert residue.shape == frame.shape
    assert np.all(residue > 0)
    assert np.all(residue <= np.abs(op.apply()) + 1e-12)


def test_sharp_maximal_is_homogeneous():
    frame = DyadicFrame.unit(1, 5)
    g = GridFunction.from_values(frame, np.random.default_rng(7).uniform(-1.0, 2.0, 32))
    base = sharp_maximal(g).coef
    assert np.allclose(sharp_maximal(g.scale(2.5)).coef, 2.5 * base, rtol=1e-12, atol=1e-15)
    assert np.allclose(sharp_maximal(g.scale(-3.0)).coef, 3.0 * base, rtol=1e-12, atol=1e-15)


# ===== MAXIMAL TRUNCADO =====

def _brute_force_truncated(kernel, f, root):
    """Doble bucle directo: cada cubo Q ⊆ Q0 con un operador nuevo sobre f·χ_{3Q}."""
    frame = f.frame
    L = frame.depth
    box = root.box(frame)
    full = KernelOperator(kernel, f.mask(box.tripled())).apply()
    out = np.zeros(frame.shape)
    for level in range(root.level, L + 1):
        u = 2 ** (L - level)
        for lo in range(box.lo[0], box.hi[0], u):
            cube = CellBox(lo=(lo,), hi=(lo + u,))
            near = KernelOperator(kernel, f.mask(cube.tripled())).apply()
            peak = np.max(np.abs(full - near)[lo:lo + u])
            out[lo:lo + u] = np.maximum(out[lo:lo + u], peak)
    return out


def test_grand_truncated_matches_brute_force():
    frame = DyadicFrame.symmetric(1, 4)
    f = GridFunction.constant(frame, 1.0)
    root = DyadicCube(level=2, index=(2,))
    fast = grand_truncated(RIESZ_HALF, f, root).coef
    slow = _brute_force_truncated(RIESZ_HALF, f, root)
    assert np.allclose(fast, slow, rtol=1e-9, atol=1e-10)


def test_grand_truncated_matches_brute_force_for_steps():
    frame = DyadicFrame.unit(1, 4)
    f = GridFunction.from_values(frame, np.random.default_rng(11).uniform(-1.0, 1.0, 16))
    root = DyadicCube(level=1, index=(0,))
    fast = grand_truncated(RIESZ_HALF, f, root).coef
    assert np.allclose(fast, _brute_force_truncated(RIESZ_HALF, f, root), rtol=1e-9, atol=1e-10)


def test_truncated_maximal_controls_local_operator():
    frame = DyadicFrame.symmetric(1, 6)
    f = GridFunction.from_values(frame, np.random.default_rng(3).uniform(0.0, 1.0, 64))
    root = DyadicCube(level=1, index=(1,))
    box = root.box(frame)
    op = KernelOperator(RIESZ_HALF, f)
    local = np.abs(op.apply_box(box.tripled()))[box.slices()]
    m = grand_truncated(RIESZ_HALF, f, root, operator=op).coef[box.slices()]
    residue = local_residue(op)[box.slices()]
    # lo que falta es la celda singular: el residuo local más la holgura de cuadratura
    assert np.all(local <= m + residue + op.slack + 1e-12)
    assert np.all(residue <= local + op.slack + 1e-12)


MAXIMAL_CORPUS = np.random.default_rng(5).uniform(-1.0, 1.0, size=(6, 16))


def _maximal_control_ratio(values, depth):
    f = GridFunction.from_values(DyadicFrame.unit(1, 4), values)
    while f.frame.depth < depth:
        f = f.refine()
    op = KernelOperator(RIESZ_HALF, f)
    num = grand_maximal(RIESZ_HALF, f, operator=op).coef
    den = frac_maximal(f, RIESZ_HALF.alpha).coef + np.abs(KernelOperator(RIESZ_HALF, f.abs()).apply())
    return float(np.max(num / den))


def test_grand_maximal_is_controlled_by_fractional_maximal():
    coarse = [_maximal_control_ratio(values, 6) for values in MAXIMAL_CORPUS]
    fine = [_maximal_control_ratio(values, 7) for values in MAXIMAL_CORPUS]
    assert all(0 < c < math.inf for c in coarse + fine)
    assert 1 / 1.5 <= max(fine) / max(coarse) <= 1.5
