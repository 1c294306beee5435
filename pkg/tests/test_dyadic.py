"""
Pruebas de retículas diádicas, selección de Calderón-Zygmund y verificación de esparsidad.
"""
import os
import sys
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

# Agregar el directorio raíz al path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.services.dyadic import (
    CellBox, DyadicCube, DyadicFrame, SparseFamily, box_sum, centered_cube, children, cz_select, dump_family,
    family_shifts, level_tiling, load_family, parse_cube, rho_to_tag, summed_table, tag_to_rho, triple_host,
    verify_sparse,
)
from app.services.errors import DepthError, DomainError, GeometryError, HeightError, ParameterError


# ===== MARCOS Y CUBOS =====

def test_symmetric_frame_geometry():
    frame = DyadicFrame.symmetric(1, 3)
    assert frame.h == Fraction(1, 4)
    assert frame.cells_per_axis == 8
    assert frame.unit_to_point((4,)) == (Fraction(0),)
    assert frame.point_to_units([Fraction(1, 2)]) == (6,)
    with pytest.raises(GeometryError):
        frame.point_to_units([Fraction(1, 8)])


def test_base_cube_box():
    frame = DyadicFrame.unit(1, 3)
    assert DyadicCube(level=1, index=(1,)).box(frame) == CellBox(lo=(4,), hi=(8,))
    assert DyadicCube(level=3, index=(5,)).box(frame) == CellBox(lo=(5,), hi=(6,))


def test_cube_beyond_depth_raises():
    frame = DyadicFrame.unit(1, 2)
    with pytest.raises(DepthError, match="max depth"):
        DyadicCube(level=3, index=(0,)).box(frame)
    with pytest.raises(DepthError):
        children(DyadicCube(level=2, index=(0,)), frame)


def test_shifted_cube_has_triple_side():
    frame = DyadicFrame.unit(1, 3)
    cube = DyadicCube(tag=2, level=0, index=(-1,))
    box = cube.box(frame)
    assert box.sides == (24,)
    assert box.lo == ((3 * -1 + 1) * 8,)
    assert cube.side(frame) == 3


def test_rho_tag_roundtrip_and_shift_parity():
    for tag in range(1, 28):
        assert rho_to_tag(tag_to_rho(tag, 3)) == tag
    assert family_shifts(3, 1, 0) == (2,)
    assert family_shifts(3, 1, 1) == (1,)


@given(level=st.integers(0, 4), data=st.data())
@settings(max_examples=60, deadline=None)
def test_triple_host_is_concentric_triple(level, data):
    frame = DyadicFrame.unit(1, 6)
    m = data.draw(st.integers(0, 2 ** level - 1))
    cube = DyadicCube(level=level, index=(m,))
    tag, host = triple_host(cube, frame)
    assert tag >= 1
    assert host.box(frame) == cube.box(frame).tripled()


def test_triple_host_in_two_dimensions():
    frame = DyadicFrame.unit(2, 4)
    cube = DyadicCube(level=2, index=(1, 3))
    tag, host = triple_host(cube, frame)
    assert host.box(frame) == cube.box(frame).tripled()
    assert 1 <= tag <= 9


@given(tag=st.integers(1, 3), level=st.integers(0, 3), m=st.integers(-2, 3))
@settings(max_examples=80, deadline=None)
def test_shifted_children_tile_parent(tag, level, m):
    frame = DyadicFrame.unit(1, 6)
    parent = DyadicCube(tag=tag, level=level, index=(m,))
    pbox = parent.box(frame)
    boxes = sorted((c.box(frame) for c in children(parent, frame)), key=lambda b: b.lo)
    assert boxes[0].lo == pbox.lo
    assert boxes[-1].hi == pbox.hi
    assert boxes[0].hi == boxes[1].lo


def test_level_tiling_assigns_each_cell_to_its_cube():
    frame = DyadicFrame.unit(1, 4)
    for tag in range(0, 4):
        for level in range(0, 5):
            tiling = level_tiling(frame, tag, level)
            owner = tiling.values_to_cells(np.arange(np.prod(tiling.shape)).reshape(tiling.shape))
            cubes = tiling.cubes()
            for cell in range(frame.cells_per_axis):
                box = cubes[owner[cell]].box(frame)
                assert box.lo[0] <= cell < box.hi[0]


def test_centered_cube_alignment():
    frame = DyadicFrame.symmetric(1, 4)
    assert centered_cube(frame, Fraction(1, 2)) == CellBox(lo=(4,), hi=(12,))
    with pytest.raises(GeometryError):
        centered_cube(frame, Fraction(1, 32))


# ===== TABLAS DE SUMAS =====

@given(st.lists(st.integers(-5, 5), min_size=16, max_size=16),
       st.integers(-2, 4), st.integers(0, 6), st.integers(-2, 4), st.integers(0, 6))
@settings(max_examples=60, deadline=None)
def test_box_sum_matches_direct_sum(values, a0, w0, a1, w1):
    arr = np.array(values).reshape(4, 4)
    table = summed_table(arr)
    lo, hi = (a0, a1), (a0 + w0, a1 + w1)
    expected = arr[max(lo[0], 0):max(min(hi[0], 4), 0), max(lo[1], 0):max(min(hi[1], 4), 0)].sum()
    assert box_sum(table, lo, hi) == expected


# ===== CALDERÓN-ZYGMUND =====

def test_cz_select_picks_maximal_cube():
    frame = DyadicFrame.unit(1, 3)
    density = np.zeros(8, dtype=bool)
    density[:2] = True
    selected = cz_select(density, DyadicCube(level=0, index=(0,)), Fraction(1, 2), frame)
    assert selected == [DyadicCube(level=2, index=(0,))]


def test_cz_select_errors():
    frame = DyadicFrame.unit(1, 3)
    root = DyadicCube(level=0, index=(0,))
    with pytest.raises(HeightError, match="root exceeds height"):
        cz_select(np.ones(8, dtype=bool), root, Fraction(1, 2), frame)
    with pytest.raises(ParameterError):
        cz_select(np.zeros(8, dtype=bool), root, 1, frame)
    with pytest.raises(DomainError):
        cz_select(np.full(8, 2.0), root, Fraction(1, 2), frame)


@given(st.lists(st.booleans(), min_size=32, max_size=32), st.sampled_from([Fraction(1, 4), Fraction(1, 2)]))
@settings(max_examples=80, deadline=None)
def test_cz_cubes_are_disjoint_and_heavy(bits, lam):
    frame = DyadicFrame.unit(1, 5)
    density = np.array(bits)
    assume(Fraction(int(density.sum()), 32) <= lam)
    selected = cz_select(density, DyadicCube(level=0, index=(0,)), lam, frame)
    covered = np.zeros(32, dtype=int)
    for cube in selected:
        box = cube.box(frame)
        covered[box.slices()] += 1
        assert Fraction(int(density[box.slices()].sum()), box.volume_units) > lam
    assert covered.max(initial=0) <= 1
    assert Fraction(int(covered.sum()), 32) <= Fraction(int(density.sum()), 32) / lam


# ===== ESPARSIDAD =====

def test_verify_sparse_canonical_nested_family():
    frame = DyadicFrame.unit(1, 3)
    family = SparseFamily(cubes=[DyadicCube(level=0, index=(0,)), DyadicCube(level=1, index=(0,))])
    check = verify_sparse(family, frame)
    assert check.passed
    assert check.min_ratio == Fraction(1, 2)
    deeper = SparseFamily(cubes=[DyadicCube(level=0, index=(0,)), DyadicCube(level=1, index=(0,)),
                                 DyadicCube(level=1, index=(1,))])
    assert not verify_sparse(deeper, frame).passed


def test_verify_sparse_explicit_overlap_is_reported():
    frame = DyadicFrame.unit(1, 2)
    family = SparseFamily(cubes=[DyadicCube(level=0, index=(0,)), DyadicCube(level=1, index=(0,))],
                          assignment=[(0, 1), (1,)])
    check = verify_sparse(family, frame)
    assert not check.passed
    assert check.witness == 1


def test_verify_sparse_is_exact_at_threshold():
    frame = DyadicFrame.unit(1, 2)
    family = SparseFamily(cubes=[DyadicCube(level=0, index=(0,))], eta=Fraction(1, 2), assignment=[(0, 1)])
    assert verify_sparse(family, frame).passed
    assert not verify_sparse(family, frame, eta=Fraction(3, 4)).passed


def test_family_text_format():
    family = SparseFamily(cubes=[DyadicCube(level=1, index=(1,)), CellBox(lo=(2,), hi=(6,))], eta=Fraction(1, 2))
    loaded = load_family("# comentario\n" + dump_family(family), 1)
    assert loaded.eta == Fraction(1, 2)
    assert loaded.cubes == family.cubes
    with pytest.raises(GeometryError):
        parse_cube("0 1", 1)


# ===== RETÍCULAS DESPLAZADAS =====

def _tiling_boxes(frame, tag, level):
    return {cube.box(frame): cube for cube in level_tiling(frame, tag, level).cubes()}


@pytest.mark.parametrize("n, depth", [(1, 6), (2, 3)])
def test_every_triple_lies_in_exactly_one_shifted_family(n, depth):
    frame = DyadicFrame.unit(n, depth)
    tags = range(1, 3 ** n + 1)
    for level in range(depth + 1):
        families = {tag: _tiling_boxes(frame, tag, level) for tag in tags}
        for cube in level_tiling(frame, 0, level).cubes():
            triple = cube.box(frame).tripled()
            owners = [tag for tag in tags if triple in families[tag]]
            assert len(owners) == 1
            assert triple_host(cube, frame) == (owners[0], families[owners[0]][triple])


@pytest.mark.parametrize("tag", [0, 1, 2, 3])
def test_cubes_of_one_family_are_nested_or_disjoint(tag):
    frame = DyadicFrame.unit(1, 6)
    levels = [list(_tiling_boxes(frame, tag, level)) for level in range(7)]
    for k, coarse in enumerate(levels):
        for fine in levels[k + 1:]:
            for small in fine:
                for big in coarse:
                    assert big.contains(small) or not big.intersects(small)
        if k + 1 < len(levels):
            for small in levels[k + 1]:
                assert sum(big.contains(small) for big in coarse) == 1


# ===== PROPIEDADES DE SELECCIÓN Y ESPARSIDAD =====

def _maximal_heavy_cubes(density, lam, frame, order):
    """Cubos con media > λ sin ancestro pesado bajo la raíz, recorridos en el orden dado."""
    cubes = [cube for level in range(1, frame.depth + 1) for cube in level_tiling(frame, 0, level).cubes()]
    heavy = set()
    for i in order:
        box = cubes[i].box(frame)
        if Fraction(int(density[box.slices()].sum()), box.volume_units) > lam:
            heavy.add(i)
    boxes = [cube.box(frame) for cube in cubes]
    return sorted((cubes[i] for i in heavy
                   if not any(j != i and boxes[j].contains(boxes[i]) for j in heavy)),
                  key=DyadicCube.sort_key)


@given(st.lists(st.booleans(), min_size=16, max_size=16), st.randoms(use_true_random=False),
       st.sampled_from([Fraction(1, 4), Fraction(1, 3), Fraction(1, 2)]))
@settings(max_examples=60, deadline=None)
def test_cz_select_does_not_depend_on_traversal_order(bits, rnd, lam):
    frame = DyadicFrame.unit(1, 4)
    density = np.array(bits)
    assume(Fraction(int(density.sum()), 16) <= lam)
    order = list(range(2 + 4 + 8 + 16))
    rnd.shuffle(order)
    expected = _maximal_heavy_cubes(density, lam, frame, order)
    assert cz_select(density, DyadicCube(level=0, index=(0,)), lam, frame) == expected
    mirrored = cz_select(density[::-1].copy(), DyadicCube(level=0, index=(0,)), lam, frame)
    assert sorted(c.box(frame).lo for c in mirrored) == sorted(16 - c.box(frame).hi[0] for c in expected)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 15)), min_size=1, max_size=8),
       st.fractions(min_value=Fraction(1, 16), max_value=Fraction(15, 16)),
       st.fractions(min_value=Fraction(1, 16), max_value=Fraction(15, 16)))
@settings(max_examples=100, deadline=None)
def test_verify_sparse_is_monotone_in_eta(raw, eta_a, eta_b):
    frame = DyadicFrame.unit(1, 4)
    cubes = sorted({DyadicCube(level=level, index=(m % 2 ** level,)) for level, m in raw},
                   key=DyadicCube.sort_key)
    family = SparseFamily(cubes=cubes)
    low, high = sorted((eta_a, eta_b))
    strict = verify_sparse(family, frame, eta=high)
    loose = verify_sparse(family, frame, eta=low)
    if strict.passed:
        assert loose.passed
    assert strict.min_ratio == loose.min_ratio
