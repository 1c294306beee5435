"""
Pruebas de los experimentos: exponentes, familia centrada, nitidez, cota, tipo débil y Kurtz.
"""
import math
import os
import sys
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

# Agregar el directorio raíz al path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.services.dyadic import CellBox, DyadicFrame, verify_sparse
from app.services.errors import DomainError, ParameterError, ToleranceError
from app.services.experiments import (
    bound_run, centered_family, centered_norm, check_centered_lower_bound, default_corpus, exponent_tuple,
    kurtz_check, sharp_exponent, sharpness_run, verified_centered_family, weak_type_ratio, write_sharpness_csv,
)
from app.services.gridfn import GridFunction, PowerWeight, weighted_norm
from app.services.kernels import parse_kernel
from app.services.sparse import sparse_apply

EPS = [2.0 ** -k for k in range(2, 9)]
RIESZ_QUARTER = parse_kernel("power:1/4", 1)


# ===== EXPONENTES =====

@given(n=st.integers(1, 3), a=st.floats(0.05, 0.9), v=st.floats(0.0, 0.5), u=st.floats(0.05, 0.95))
@settings(max_examples=1000, deadline=None)
def test_exponent_identities(n, a, v, u):
    alpha = a * n
    upper = n / alpha
    r = 1 + v * (upper - 1)
    p = r + u * (upper - r)
    assume(r < p < upper)
    t = exponent_tuple(n, alpha, r, p)
    assert abs((1 + t.pr_prime * r / t.q) - (1 - alpha * r / n) * t.pr_prime) <= 1e-12
    assert abs((1 / t.q + 1 / t.p_prime) - (1 - alpha / n)) <= 1e-12
    assert t.q > p
    assert t.gamma1 == pytest.approx(1 - a)
    assert t.sharp == max(t.gamma1, t.gamma2)


@given(a=st.floats(0.05, 0.95), u=st.floats(0.01, 0.99))
@settings(max_examples=200, deadline=None)
def test_r_equal_one_reduces_to_classical_exponent(a, u):
    p = 1 + u * (1 / a - 1)
    assume(1 < p < 1 / a)
    t = exponent_tuple(1, a, 1, p)
    assert t.pr_prime == pytest.approx(t.p_prime)
    assert t.gamma2 == pytest.approx((1 - a) * t.p_prime / t.q, rel=1e-9)
    assert t.cotat_exponent == pytest.approx(t.p_prime / t.q, rel=1e-9)


def test_reference_tuple():
    t = exponent_tuple(1, "1/4", 1, "4/3")
    assert t.q == pytest.approx(2.0)
    assert t.p_prime == pytest.approx(4.0)
    assert t.gamma1 == pytest.approx(0.75)
    assert t.gamma2 == pytest.approx(1.5)
    assert t.sharp == pytest.approx(1.5)
    assert sharp_exponent(t) == t.sharp
    assert math.isinf(t.r_prime)
    assert t.model_dump(mode="json")["r_prime"] == "inf"


def test_exponent_chain_violations():
    with pytest.raises(ParameterError):
        exponent_tuple(1, 0.5, 1, 2.5)
    with pytest.raises(ParameterError):
        exponent_tuple(1, 0.25, 2, 2)
    with pytest.raises(ParameterError):
        exponent_tuple(1, 1.0, 1, 1.5)


# ===== FAMILIA CENTRADA =====

def test_centered_family_is_half_sparse():
    frame = DyadicFrame.symmetric(1, 6)
    family = centered_family(frame)
    assert len(family.cubes) == 6
    assert family.cubes[-1].sides == (2,)
    assert verify_sparse(family, frame).passed
    with pytest.raises(DomainError):
        centered_family(DyadicFrame.unit(1, 4))


def test_verified_centered_family_is_half_sparse_at_frame_depth():
    frame = DyadicFrame.symmetric(1, 10)
    family = verified_centered_family(frame)
    assert len(family.cubes) == 10
    check = verify_sparse(family, frame, Fraction(1, 2))
    assert check.passed
    assert check.min_ratio >= Fraction(1, 2)


@pytest.mark.parametrize("alpha, r, gamma", [(0.25, 1.0, -0.75), (0.25, 1.0, -0.5), (0.25, 2.0, -0.3), (0.5, 1.0, 0.0)])
def test_sparse_operator_dominates_level_coefficients(alpha, r, gamma):
    frame = DyadicFrame.symmetric(1, 8)
    family = verified_centered_family(frame)
    f = GridFunction.power(frame, 1.0, gamma)
    worst = check_centered_lower_bound(family, f, alpha, r, gamma)
    # sobre E_(Q_0) sólo actúa Q_0
    assert worst == pytest.approx(1.0, rel=1e-9)


def test_lower_bound_failure_is_reported():
    frame = DyadicFrame.symmetric(1, 6)
    family = verified_centered_family(frame)
    f = GridFunction.power(frame, 1.0, -0.5)
    with pytest.raises(ToleranceError):
        check_centered_lower_bound(family, f.scale(0.5), 0.25, 1.0, -0.5)


def test_centered_norm_matches_grid_evaluation():
    L = 8
    frame = DyadicFrame.symmetric(1, L)
    alpha, r, gamma, b, q = 0.25, 1.0, -0.5, 0.125, 2.0
    f = GridFunction.power(frame, 1.0, gamma)
    af = sparse_apply(centered_family(frame), f, alpha, r)
    grid = weighted_norm(af, q, PowerWeight(a=b))
    assert centered_norm(alpha, r, gamma, b, q, max_level=L - 1) == pytest.approx(grid, rel=1e-9)


def test_centered_norm_full_family_limit():
    alpha, r, gamma, b, q = 0.25, 1.0, -0.5, 0.125, 2.0
    full = centered_norm(alpha, r, gamma, b, q)
    assert full >= centered_norm(alpha, r, gamma, b, q, max_level=10) * (1 - 1e-12)
    assert full == pytest.approx(centered_norm(alpha, r, gamma, b, q, max_level=400), rel=1e-9)


def test_centered_norm_divergence():
    with pytest.raises(DomainError):
        centered_norm(0.5, 1.0, -0.9, -0.4, 2.0)
    with pytest.raises(DomainError):
        centered_norm(0.5, 1.0, -0.5, -0.5, 2.0)
    with pytest.raises(DomainError):
        centered_norm(0.5, 1.0, -1.0, 0.0, 2.0)


# ===== NITIDEZ =====

@pytest.fixture(scope="module")
def reference_tuple():
    return exponent_tuple(1, 0.25, 1, 4 / 3)


@pytest.fixture(scope="module")
def example_one(reference_tuple):
    return sharpness_run(1, reference_tuple, EPS, DyadicFrame.symmetric(1, 10))


def test_example_one_slope(example_one):
    assert example_one.expected == pytest.approx(1.5)
    assert example_one.slope == pytest.approx(1.5, rel=0.15)
    assert example_one.verdict == "pass"
    assert [row.eps for row in example_one.rows] == sorted(EPS, reverse=True)
    ratios = [row.ratio for row in example_one.rows]
    assert ratios == sorted(ratios)


def test_example_two_slope(reference_tuple):
    result = sharpness_run(2, reference_tuple, EPS, DyadicFrame.symmetric(1, 10))
    assert result.expected == pytest.approx(0.75)
    assert result.slope == pytest.approx(0.75, rel=0.15)
    assert result.verdict == "pass"


@pytest.mark.slow
def test_example_one_slope_on_finer_frame(reference_tuple):
    result = sharpness_run(1, reference_tuple, EPS, DyadicFrame.symmetric(1, 12))
    assert result.verdict == "pass"


def test_sharpness_rejects_bad_runs(reference_tuple):
    with pytest.raises(ParameterError):
        sharpness_run(1, reference_tuple, EPS[:4])
    with pytest.raises(ParameterError):
        sharpness_run(3, reference_tuple, EPS)
    with pytest.raises(ParameterError):
        sharpness_run(1, exponent_tuple(2, 0.5, 1, 2), EPS)
    with pytest.raises(ParameterError):
        sharpness_run(1, reference_tuple, EPS + [1.5])


def test_sharpness_csv_is_deterministic(example_one, tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    write_sharpness_csv(example_one, first)
    write_sharpness_csv(example_one, second)
    assert first.read_bytes() == second.read_bytes()
    lines = first.read_text(encoding="utf-8").split("\n")
    assert lines[0] == "eps,t,num_norm,den_norm,ratio"
    assert lines[1].startswith("0.25,")
    assert lines[-3].startswith("slope,")
    assert lines[-2].startswith("expected,")
    assert ",cotat_exponent," in lines[-2]
    assert lines[-1] == ""


# ===== COTA =====

def test_bound_lebesgue_baseline(reference_tuple):
    frame = DyadicFrame.symmetric(1, 8)
    corpus = default_corpus(frame, [("lebesgue", PowerWeight.lebesgue())])
    result = bound_run(reference_tuple, corpus, frame)
    row = result.rows[0]
    assert row.t == pytest.approx(1.0, rel=1e-12)
    assert row.two_weight == pytest.approx(1.0, rel=1e-12)
    assert row.two_weight_expected == pytest.approx(1.0, rel=1e-12)
    assert 0 < result.constant <= result.budget
    assert result.verdict == "pass"


def test_bound_rows_are_homogeneous_in_the_weight(reference_tuple):
    frame = DyadicFrame.symmetric(1, 8)
    weights = [("a", PowerWeight(a=-0.125)), ("b", PowerWeight(a=-0.125, coeff=3.0)), ("c", PowerWeight(a=0.2))]
    result = bound_run(reference_tuple, default_corpus(frame, weights), frame, eps_list=[0.25])
    assert len(result.rows) == 4
    assert result.rows[0].normalized == pytest.approx(result.rows[1].normalized, rel=1e-10)
    for row in result.rows:
        assert row.two_weight == pytest.approx(row.two_weight_expected, rel=1e-10)
    assert result.rows[-1].label.startswith("example1:eps=")


def test_bound_requires_data(reference_tuple):
    with pytest.raises(ParameterError):
        bound_run(reference_tuple, [], DyadicFrame.symmetric(1, 6))


# ===== TIPO DÉBIL =====

def test_weak_type_zero_function():
    frame = DyadicFrame.unit(1, 5)
    result = weak_type_ratio(RIESZ_QUARTER, GridFunction.constant(frame, 0.0))
    assert result.ratio == 0.0
    assert result.denominator == 0.0
    assert result.lam is None


def test_weak_type_is_scale_invariant():
    frame = DyadicFrame.unit(1, 6)
    f = GridFunction.indicator(frame, CellBox(lo=(0,), hi=(16,)))
    base = weak_type_ratio(RIESZ_QUARTER, f)
    doubled = weak_type_ratio(RIESZ_QUARTER, f.scale(2.0))
    assert 0 < base.ratio < math.inf
    assert doubled.ratio == pytest.approx(base.ratio, rel=1e-9)
    assert doubled.denominator == pytest.approx(2 * base.denominator)


def test_weak_type_rejects_bad_exponents():
    frame = DyadicFrame.unit(1, 4)
    f = GridFunction.constant(frame, 1.0)
    with pytest.raises(ParameterError):
        weak_type_ratio(RIESZ_QUARTER, f, r=4.0)
    with pytest.raises(ParameterError):
        weak_type_ratio(RIESZ_QUARTER, f, r=0.5)


# ===== KURTZ =====

def test_kurtz_constant_function():
    frame = DyadicFrame.unit(1, 6)
    f = GridFunction.constant(frame, 1.0)
    report = kurtz_check(RIESZ_QUARTER, f)
    assert 0 < report.ratio < math.inf
    assert report.verdict == "pass"
    doubled = kurtz_check(RIESZ_QUARTER, f.scale(2.0))
    assert doubled.ratio == pytest.approx(report.ratio, rel=1e-9)


def test_kurtz_requires_nonnegative_nonzero_f():
    frame = DyadicFrame.unit(1, 4)
    with pytest.raises(DomainError):
        kurtz_check(RIESZ_QUARTER, GridFunction.constant(frame, 0.0))
    with pytest.raises(DomainError):
        kurtz_check(RIESZ_QUARTER, GridFunction.constant(frame, -1.0))


KURTZ_STEPS = np.random.default_rng(17).uniform(0.0, 1.0, size=(20, 8))


def test_kurtz_random_step_corpus_is_refinement_stable():
    coarse, fine = [], []
    for values in KURTZ_STEPS:
        f = GridFunction.from_values(DyadicFrame.unit(1, 3), values)
        f = f.refine().refine()
        report = kurtz_check(RIESZ_QUARTER, f)
        assert 0 < report.ratio < math.inf
        assert report.verdict == "pass"
        coarse.append(report.ratio)
        fine.append(report.refined_ratio)
    assert 1 / 1.5 <= max(fine) / max(coarse) <= 1.5
