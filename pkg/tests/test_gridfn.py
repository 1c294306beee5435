"""
Pruebas de GridFunction: momentos exactos de potencias, normas locales y conjuntos de nivel.
"""
import math
import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

# Agregar el directorio raíz al path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.services.dyadic import CellBox, DyadicCube, DyadicFrame
from app.services.errors import DomainError, GeometryError, ParameterError
from app.services.gridfn import (
    GridFunction, PowerWeight, local_norm, parse_weight, power_moment, superlevel_measure, weight_cell_moments,
    weighted_norm,
)


# ===== MOMENTOS =====

def test_power_moment_one_dimension_is_exact():
    assert power_moment(-0.5, [0.0], [1.0]) == pytest.approx(2.0, rel=1e-14)
    assert power_moment(-0.5, [-1.0], [1.0]) == pytest.approx(4.0, rel=1e-14)
    assert power_moment(-2.0, [1.0], [2.0]) == pytest.approx(0.5, rel=1e-14)
    assert power_moment(0.0, [-1.0], [3.0]) == 4.0


def test_power_moment_rejects_non_integrable():
    with pytest.raises(DomainError):
        power_moment(-1.0, [-1.0], [1.0])
    with pytest.raises(DomainError):
        power_moment(-2.0, [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(GeometryError):
        power_moment(1.0, [1.0], [0.0])


def test_power_moment_two_dimensions():
    assert power_moment(-1.0, [0.0, 0.0], [1.0, 1.0]) == pytest.approx(2 * math.log(1 + math.sqrt(2)), rel=1e-6)
    assert power_moment(2.0, [0.0, 0.0], [1.0, 1.0]) == pytest.approx(2.0 / 3.0, rel=1e-8)
    assert power_moment(2.0, [-1.0, -1.0], [1.0, 1.0]) == pytest.approx(8.0 / 3.0, rel=1e-8)


@given(st.floats(-0.95, 3.0), st.floats(0.01, 2.0))
@settings(max_examples=50, deadline=None)
def test_power_moment_additive_over_split(gamma, b):
    whole = power_moment(gamma, [-1.0], [b])
    parts = power_moment(gamma, [-1.0], [0.0]) + power_moment(gamma, [0.0], [b])
    assert whole == pytest.approx(parts, rel=1e-12)


# ===== GRIDFUNCTION =====

def test_power_function_checks_integrability():
    frame = DyadicFrame.symmetric(1, 3)
    with pytest.raises(DomainError):
        GridFunction.power(frame, 1.0, -1.0)
    with pytest.raises(DomainError):
        GridFunction(frame, -np.ones(8), np.full(8, -0.5))


def test_refine_preserves_integrals():
    frame = DyadicFrame.symmetric(1, 4)
    f = GridFunction.power(frame, 1.0, -0.5)
    fine = f.refine()
    assert fine.frame.depth == 5
    assert fine.cell_integrals().sum() == pytest.approx(f.cell_integrals().sum(), rel=1e-12)
    assert f.cell_integrals().sum() == pytest.approx(4.0, rel=1e-12)


def test_pointwise_algebra():
    frame = DyadicFrame.unit(1, 2)
    f = GridFunction.from_values(frame, [1.0, 2.0, 0.0, 3.0])
    g = GridFunction.power(frame, 2.0, 0.5)
    assert np.allclose(f.add(f.scale(2.0)).coef, [3.0, 6.0, 0.0, 9.0])
    assert np.allclose(f.multiply(PowerWeight(a=1.0, coeff=2.0)).gamma, [1.0, 1.0, 0.0, 1.0])
    with pytest.raises(DomainError):
        f.add(g)
    assert f.power_abs(2.0).coef.tolist() == [1.0, 4.0, 0.0, 9.0]
    with pytest.raises(DomainError):
        f.power_abs(-1.0)
    assert f.mask(CellBox(lo=(1,), hi=(3,))).coef.tolist() == [0.0, 2.0, 0.0, 0.0]


def test_records_format(tmp_path):
    frame = DyadicFrame.symmetric(1, 2)
    f = GridFunction.power(frame, 1.5, -0.25)
    path = tmp_path / "f.txt"
    f.save(path)
    loaded = GridFunction.load(path, frame)
    assert np.array_equal(loaded.coef, f.coef)
    assert np.array_equal(loaded.gamma, f.gamma)
    with pytest.raises(GeometryError):
        GridFunction.from_records(frame, ["const 1", "const 2"])
    with pytest.raises(GeometryError):
        GridFunction.from_records(frame, ["linear 1 2"] * 4)


# ===== NORMAS =====

def test_local_norm_uses_zero_extension():
    frame = DyadicFrame.unit(1, 3)
    f = GridFunction.constant(frame, 1.0)
    assert local_norm(f, 1.0, CellBox(lo=(-8,), hi=(8,))) == pytest.approx(0.5)
    assert local_norm(f, 2.0, CellBox(lo=(-8,), hi=(8,))) == pytest.approx(math.sqrt(0.5))
    assert local_norm(f, 3.0, DyadicCube(level=1, index=(1,))) == pytest.approx(1.0)
    assert local_norm(f, 1.0, CellBox(lo=(9,), hi=(12,))) == 0.0
    with pytest.raises(ParameterError):
        local_norm(f, 0.5, DyadicCube(level=0, index=(0,)))


def test_weighted_norm_of_power_pair():
    frame = DyadicFrame.symmetric(1, 4)
    f = GridFunction.power(frame, 1.0, -0.25)
    assert weighted_norm(f, 2.0, PowerWeight(a=0.25)) == pytest.approx(math.sqrt(2.0), rel=1e-12)
    assert weighted_norm(f, 1.0) == pytest.approx(2 * 4.0 / 3.0, rel=1e-12)


def test_superlevel_measure_power_piece():
    frame = DyadicFrame.symmetric(1, 3)
    g = GridFunction.power(frame, 1.0, -0.5)
    assert superlevel_measure(g, 2.0) == pytest.approx(0.5, rel=1e-12)
    assert superlevel_measure(g, 2.0, PowerWeight(a=1.0)) == pytest.approx(1.0 / 16.0, rel=1e-12)
    assert superlevel_measure(g, 0.5) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ParameterError):
        superlevel_measure(g, 0.0)


def test_superlevel_measure_step_function():
    frame = DyadicFrame.unit(1, 2)
    g = GridFunction.from_values(frame, [0.5, 3.0, -4.0, 1.0])
    assert superlevel_measure(g, 1.0) == pytest.approx(0.5)


# ===== PESOS =====

def test_weight_specs():
    frame = DyadicFrame.unit(1, 2)
    w = parse_weight("power:-1/2:2", frame)
    assert w == PowerWeight(a=-0.5, coeff=2.0)
    assert parse_weight("lebesgue", frame) == PowerWeight.lebesgue()
    with pytest.raises(DomainError):
        PowerWeight.parse("power:1:-1")
    with pytest.raises(ParameterError):
        PowerWeight.parse("gauss:1")
    assert np.allclose(weight_cell_moments(None, frame), 0.25)
    assert weight_cell_moments(w, frame, -2.0).sum() == pytest.approx(0.125, rel=1e-12)
