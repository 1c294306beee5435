"""
Geometría diádica: marco acotado, cubos de la retícula base y de las 3^n retículas desplazadas,
selección de Calderón-Zygmund por parada y verificación de esparsidad.

Todas las medidas de cubos se llevan en unidades de celda fina (enteros) y se convierten a
racionales exactos sólo cuando hace falta una longitud o un volumen.
"""
import itertools
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.services.errors import DepthError, DomainError, GeometryError, HeightError, ParameterError
from app.services.utils import to_fraction

logger = logging.getLogger(__name__)


# ===== TIPOS =====

class DyadicFrame(BaseModel):
    """Dominio raíz [origin, origin + side)^n con profundidad máxima L."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: int = Field(..., ge=1, le=3, description="Dimensión")
    origin: Tuple[Fraction, ...] = Field(..., description="Esquina inferior del cubo raíz")
    side: Fraction = Field(..., description="Lado del cubo raíz")
    depth: int = Field(..., ge=1, le=24, description="Profundidad máxima L")

    @field_validator("origin", mode="before")
    @classmethod
    def _origin_exact(cls, v):
        return tuple(to_fraction(c) for c in v)

    @field_validator("side", mode="before")
    @classmethod
    def _side_exact(cls, v):
        side = to_fraction(v)
        if side <= 0:
            raise ValueError("el lado raíz debe ser positivo")
        return side

    @model_validator(mode="after")
    def _check_dimension(self):
        if len(self.origin) != self.n:
            raise ValueError(f"origin tiene {len(self.origin)} coordenadas, se esperaban {self.n}")
        return self

    @classmethod
    def unit(cls, n: int = 1, depth: int = 8) -> "DyadicFrame":
        """Marco [0,1)^n."""
        return cls(n=n, origin=(0,) * n, side=1, depth=depth)

    @classmethod
    def symmetric(cls, n: int = 1, depth: int = 8) -> "DyadicFrame":
        """Marco [-1,1)^n, el de los experimentos con singularidad en el origen."""
        return cls(n=n, origin=(-1,) * n, side=2, depth=depth)

    @property
    def cells_per_axis(self) -> int:
        return 2 ** self.depth

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.cells_per_axis,) * self.n

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis ** self.n

    @property
    def h(self) -> Fraction:
        """Lado de la celda fina."""
        return self.side / self.cells_per_axis

    @property
    def cell_volume(self) -> Fraction:
        return self.h ** self.n

    @property
    def domain_box(self) -> "CellBox":
        return CellBox(lo=(0,) * self.n, hi=self.shape)

    def refined(self) -> "DyadicFrame":
        """Mismo dominio con un nivel más de profundidad."""
        return DyadicFrame(n=self.n, origin=self.origin, side=self.side, depth=self.depth + 1)

    def axis_edges(self) -> np.ndarray:
        """Bordes de celda (float) por eje; idénticos en todos los ejes salvo el origen."""
        return np.array([[float(o + self.h * i) for i in range(self.cells_per_axis + 1)] for o in self.origin])

    def axis_centers(self) -> np.ndarray:
        edges = self.axis_edges()
        return 0.5 * (edges[:, :-1] + edges[:, 1:])

    def centers(self) -> np.ndarray:
        """Centros de todas las celdas, forma (n_cells, n), orden C."""
        axes = self.axis_centers()
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def unit_to_point(self, units: Sequence[int]) -> Tuple[Fraction, ...]:
        """Coordenadas exactas de un vértice dado en unidades de celda."""
        return tuple(o + self.h * u for o, u in zip(self.origin, units))

    def point_to_units(self, point: Sequence) -> Tuple[int, ...]:
        """Inverso exacto de unit_to_point; falla si el punto no está en la malla."""
        units = []
        for o, x in zip(self.origin, point):
            q = (to_fraction(x) - o) / self.h
            if q.denominator != 1:
                raise GeometryError(f"El punto {x} no está alineado con la malla fina del marco")
            units.append(int(q))
        return tuple(units)

    def box(self, cube: Union["DyadicCube", "CellBox"]) -> "CellBox":
        return cube.box(self)

    def box_volume(self, box: "CellBox") -> Fraction:
        return box.volume_units * self.cell_volume

    def box_bounds(self, box: "CellBox") -> Tuple[np.ndarray, np.ndarray]:
        """Extremos (float) de la caja."""
        lo = np.array([float(x) for x in self.unit_to_point(box.lo)])
        hi = np.array([float(x) for x in self.unit_to_point(box.hi)])
        return lo, hi


class CellBox(BaseModel):
    """Caja alineada con la malla fina: [lo, hi) en unidades de celda, puede salir del dominio."""
    model_config = ConfigDict(frozen=True)

    lo: Tuple[int, ...]
    hi: Tuple[int, ...]

    @model_validator(mode="after")
    def _check(self):
        if len(self.lo) != len(self.hi) or any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"caja degenerada: lo={self.lo} hi={self.hi}")
        return self

    def box(self, frame: DyadicFrame) -> "CellBox":
        if len(self.lo) != frame.n:
            raise GeometryError("La caja no tiene la dimensión del marco")
        return self

    @property
    def volume_units(self) -> int:
        return int(np.prod([b - a for a, b in zip(self.lo, self.hi)]))

    @property
    def sides(self) -> Tuple[int, ...]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    def contains(self, other: "CellBox") -> bool:
        return all(a <= c and d <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def intersects(self, other: "CellBox") -> bool:
        return all(max(a, c) < min(b, d) for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def clipped(self, cells_per_axis: int) -> Optional["CellBox"]:
        """Intersección con el dominio [0, N)^n, o None si es vacía."""
        lo = tuple(max(a, 0) for a in self.lo)
        hi = tuple(min(b, cells_per_axis) for b in self.hi)
        if any(b <= a for a, b in zip(lo, hi)):
            return None
        return CellBox(lo=lo, hi=hi)

    def inside(self, cells_per_axis: int) -> bool:
        return all(a >= 0 and b <= cells_per_axis for a, b in zip(self.lo, self.hi))

    def slices(self) -> Tuple[slice, ...]:
        return tuple(slice(a, b) for a, b in zip(self.lo, self.hi))

    def tripled(self) -> "CellBox":
        """Triple concéntrico."""
        return CellBox(lo=tuple(a - (b - a) for a, b in zip(self.lo, self.hi)),
                       hi=tuple(b + (b - a) for a, b in zip(self.lo, self.hi)))


class DyadicCube(BaseModel):
    """Cubo de la retícula base (tag 0) o de la familia desplazada tag 1..3^n."""
    model_config = ConfigDict(frozen=True)

    tag: int = Field(default=0, ge=0)
    level: int = Field(..., ge=0)
    index: Tuple[int, ...]

    def sort_key(self) -> Tuple:
        return (self.level, self.tag, self.index)

    def _check(self, frame: DyadicFrame) -> None:
        if len(self.index) != frame.n:
            raise GeometryError(f"Índice {self.index} no tiene dimensión {frame.n}")
        if self.tag > 3 ** frame.n:
            raise GeometryError(f"Tag {self.tag} fuera de rango para n={frame.n}")
        if self.level > frame.depth:
            raise DepthError(f"max depth: nivel {self.level} > L={frame.depth}")

    def box(self, frame: DyadicFrame) -> CellBox:
        self._check(frame)
        u = 2 ** (frame.depth - self.level)
        if self.tag == 0:
            lo = tuple(m * u for m in self.index)
            return CellBox(lo=lo, hi=tuple(a + u for a in lo))
        shifts = family_shifts(self.tag, frame.n, self.level)
        lo = tuple((3 * m + s) * u for m, s in zip(self.index, shifts))
        return CellBox(lo=lo, hi=tuple(a + 3 * u for a in lo))

    def side(self, frame: DyadicFrame) -> Fraction:
        base = frame.side / 2 ** self.level
        return base if self.tag == 0 else 3 * base

    def origin(self, frame: DyadicFrame) -> Tuple[Fraction, ...]:
        return frame.unit_to_point(self.box(frame).lo)


CubeLike = Union[DyadicCube, CellBox]


class SparseFamily(BaseModel):
    """Familia de cubos con parámetro η y asignación opcional Q ↦ E_Q (celdas finas)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    cubes: List[CubeLike] = Field(default_factory=list)
    eta: Fraction = Field(default=Fraction(1, 2))
    assignment: Optional[List[Tuple[int, ...]]] = Field(default=None, description="Índices planos de celdas de cada E_Q")

    @field_validator("eta", mode="before")
    @classmethod
    def _eta_exact(cls, v):
        eta = to_fraction(v)
        if not 0 < eta < 1:
            raise ValueError("η debe estar en (0,1)")
        return eta

    @model_validator(mode="after")
    def _check_assignment(self):
        if self.assignment is not None and len(self.assignment) != len(self.cubes):
            raise ValueError("la asignación debe tener un E_Q por cubo")
        return self

    def __len__(self) -> int:
        return len(self.cubes)


class SparsityCheck(BaseModel):
    """Resultado de verify_sparse."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    passed: bool
    eta: Fraction
    min_ratio: Optional[Fraction] = None
    witness: Optional[int] = Field(default=None, description="Posición del primer cubo que viola")
    reason: Optional[str] = None


# ===== RETÍCULAS DESPLAZADAS =====

def tag_to_rho(tag: int, n: int) -> Tuple[int, ...]:
    """Dígitos ternarios ρ ∈ {0,1,2}^n de la familia desplazada."""
    if not 1 <= tag <= 3 ** n:
        raise GeometryError(f"Tag desplazado {tag} fuera de 1..{3 ** n}")
    t, rho = tag - 1, []
    for _ in range(n):
        rho.append(t % 3)
        t //= 3
    return tuple(rho)


def rho_to_tag(rho: Sequence[int]) -> int:
    return 1 + sum(r * 3 ** i for i, r in enumerate(rho))


def family_shifts(tag: int, n: int, level: int) -> Tuple[int, ...]:
    """Desplazamiento s_k = ρ·(-1)^k mod 3 por eje, en unidades de lado/2^k."""
    sign = 1 if level % 2 == 0 else 2
    return tuple((r * sign) % 3 for r in tag_to_rho(tag, n))


def lattice_tags(frame: DyadicFrame, include_shifted: bool = True) -> List[int]:
    return [0] + (list(range(1, 3 ** frame.n + 1)) if include_shifted else [])


# ===== OPERACIONES =====

def children(cube: DyadicCube, frame: DyadicFrame) -> List[DyadicCube]:
    """Los 2^n hijos de nivel k+1 con el mismo tag."""
    cube._check(frame)
    if cube.level >= frame.depth:
        raise DepthError(f"max depth: el cubo de nivel {cube.level} no tiene hijos con L={frame.depth}")
    if cube.tag == 0:
        base = tuple(2 * m for m in cube.index)
    else:
        s = family_shifts(cube.tag, frame.n, cube.level)
        s_next = family_shifts(cube.tag, frame.n, cube.level + 1)
        base = tuple(2 * m + (2 * a - b) // 3 for m, a, b in zip(cube.index, s, s_next))
    return [DyadicCube(tag=cube.tag, level=cube.level + 1, index=tuple(b + e for b, e in zip(base, offs)))
            for offs in itertools.product((0, 1), repeat=frame.n)]


def triple_host(cube: DyadicCube, frame: DyadicFrame) -> Tuple[int, DyadicCube]:
    """
    Familia desplazada j y cubo R_Q ∈ D_j con Q ⊂ R_Q y lado 3·lado(Q).

    R_Q es exactamente el triple concéntrico 3Q, que pertenece a una única familia.
    """
    if cube.tag != 0:
        raise GeometryError("triple_host requiere un cubo de la retícula base")
    cube._check(frame)
    if any(m < 0 or m >= 2 ** cube.level for m in cube.index):
        raise GeometryError(f"Cubo {cube.index} fuera del dominio en nivel {cube.level}")
    rho, index = [], []
    for m in cube.index:
        s = (m - 1) % 3
        index.append((m - 1 - s) // 3)
        rho.append(s if cube.level % 2 == 0 else (-s) % 3)
    tag = rho_to_tag(rho)
    return tag, DyadicCube(tag=tag, level=cube.level, index=tuple(index))


@dataclass(frozen=True)
class LevelTiling:
    """Un nivel de una retícula restringido a los cubos que tocan el dominio."""
    frame: DyadicFrame
    tag: int
    level: int
    axis_index: Tuple[np.ndarray, ...]
    axis_lo: Tuple[np.ndarray, ...]
    axis_hi: Tuple[np.ndarray, ...]
    cell_pos: Tuple[np.ndarray, ...]

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(a) for a in self.axis_index)

    @property
    def side_units(self) -> int:
        u = 2 ** (self.frame.depth - self.level)
        return u if self.tag == 0 else 3 * u

    def inside_mask(self) -> np.ndarray:
        """Cubos contenidos en el dominio raíz."""
        n_ax = self.frame.cells_per_axis
        masks = [(lo >= 0) & (hi <= n_ax) for lo, hi in zip(self.axis_lo, self.axis_hi)]
        return _outer_and(masks)

    def values_to_cells(self, values: np.ndarray) -> np.ndarray:
        """Difunde un valor por cubo a todas las celdas del dominio."""
        return values[np.ix_(*self.cell_pos)]

    def cubes(self) -> List[DyadicCube]:
        return [DyadicCube(tag=self.tag, level=self.level, index=tuple(int(m) for m in idx))
                for idx in itertools.product(*self.axis_index)]


def _outer_and(masks: List[np.ndarray]) -> np.ndarray:
    out = masks[0]
    for m in masks[1:]:
        out = np.logical_and.outer(out, m)
    return out


def level_tiling(frame: DyadicFrame, tag: int, level: int) -> LevelTiling:
    """Enumera un nivel de la retícula `tag` (0 = base) sobre el marco."""
    if level < 0:
        raise GeometryError(f"Nivel negativo: {level}")
    if level > frame.depth:
        raise DepthError(f"max depth: nivel {level} > L={frame.depth}")
    u = 2 ** (frame.depth - level)
    cells = np.arange(frame.cells_per_axis)
    idx, los, his, pos = [], [], [], []
    if tag == 0:
        for _ in range(frame.n):
            m = np.arange(2 ** level)
            idx.append(m)
            los.append(m * u)
            his.append(m * u + u)
            pos.append(cells // u)
    else:
        for s in family_shifts(tag, frame.n, level):
            m_min = (-s - 3) // 3 + 1
            m_max = (2 ** level - 1 - s) // 3
            m = np.arange(m_min, m_max + 1)
            idx.append(m)
            los.append((3 * m + s) * u)
            his.append((3 * m + s + 3) * u)
            pos.append(np.floor_divide(cells - s * u, 3 * u) - m_min)
    return LevelTiling(frame=frame, tag=tag, level=level, axis_index=tuple(idx),
                       axis_lo=tuple(los), axis_hi=tuple(his), cell_pos=tuple(pos))


def iter_level_tilings(frame: DyadicFrame, include_shifted: bool = True) -> Iterator[LevelTiling]:
    for tag in lattice_tags(frame, include_shifted):
        for level in range(frame.depth + 1):
            yield level_tiling(frame, tag, level)


def lattice_cubes(frame: DyadicFrame, tag: int, level: int) -> List[DyadicCube]:
    return level_tiling(frame, tag, level).cubes()


def base_subcubes(cube: DyadicCube, frame: DyadicFrame) -> Iterator[DyadicCube]:
    """Todos los subcubos diádicos (incluido él mismo), de arriba abajo."""
    layer = [cube]
    while layer:
        yield from layer
        if layer[0].level >= frame.depth:
            break
        layer = [c for q in layer for c in children(q, frame)]


# ===== TABLAS DE SUMAS Y BLOQUES =====

def summed_table(values: np.ndarray) -> np.ndarray:
    """Tabla de sumas acumuladas con ceros delante en los n últimos ejes."""
    out = np.asarray(values)
    n = out.ndim
    for ax in range(n):
        out = np.cumsum(out, axis=ax)
    pad = [(1, 0)] * n
    return np.pad(out, pad)


def box_sum(table: np.ndarray, lo: Sequence[int], hi: Sequence[int]) -> float:
    """Suma sobre la caja [lo,hi) recortada al dominio, por inclusión-exclusión."""
    n = len(lo)
    size = table.shape[-1] - 1
    lo = [min(max(a, 0), size) for a in lo]
    hi = [min(max(b, 0), size) for b in hi]
    if any(b <= a for a, b in zip(lo, hi)):
        return table.dtype.type(0)
    total = table.dtype.type(0)
    for corner in itertools.product((0, 1), repeat=n):
        idx = tuple(hi[i] if c else lo[i] for i, c in enumerate(corner))
        sign = (-1) ** (n - sum(corner))
        total = total + sign * table[(...,) + idx]
    return total


def box_sums_outer(table: np.ndarray, axis_lo: Sequence[np.ndarray], axis_hi: Sequence[np.ndarray]) -> np.ndarray:
    """Sumas sobre el producto de intervalos por eje (una por cubo de un LevelTiling)."""
    n = len(axis_lo)
    size = table.shape[-1] - 1
    lo = [np.clip(a, 0, size) for a in axis_lo]
    hi = [np.clip(np.maximum(b, a), 0, size) for a, b in zip(axis_lo, axis_hi)]
    total = None
    for corner in itertools.product((0, 1), repeat=n):
        idx = [hi[i] if c else lo[i] for i, c in enumerate(corner)]
        term = table[np.ix_(*idx)] * (-1) ** (n - sum(corner))
        total = term if total is None else total + term
    return total


def block_max(arr: np.ndarray, u: int) -> np.ndarray:
    """Máximo sobre bloques u^n de un arreglo n-dimensional."""
    n = arr.ndim
    shape = []
    for s in arr.shape:
        shape.extend([s // u, u])
    return arr.reshape(shape).max(axis=tuple(range(1, 2 * n, 2)))


def block_expand(arr: np.ndarray, u: int) -> np.ndarray:
    out = arr
    for ax in range(arr.ndim):
        out = np.repeat(out, u, axis=ax)
    return out


# ===== CALDERÓN-ZYGMUND =====

def _box_mean_exceeds(total, cells: int, lam: Fraction, exact: bool) -> bool:
    if exact:
        return int(total) * lam.denominator > lam.numerator * cells
    return float(total) > float(lam) * cells


def cz_select(density: np.ndarray, root: DyadicCube, lam, frame: DyadicFrame) -> List[DyadicCube]:
    """
    Cubos diádicos maximales P ⊂ Q0 con densidad media > λ, por descenso desde Q0.

    Args:
        density: Valor por celda fina en [0,1] (forma del marco o plano)
        root: Cubo Q0 de la retícula base
        lam: Altura λ en (0,1)

    Returns:
        Cubos seleccionados, ordenados por nivel e índice
    """
    lam = to_fraction(lam)
    if not 0 < lam < 1:
        raise ParameterError(f"La altura λ={lam} debe estar en (0,1)")
    if root.tag != 0:
        raise GeometryError("cz_select opera sobre cubos de la retícula base")
    dens = np.asarray(density).reshape(frame.shape)
    if dens.size and (dens.min() < 0 or dens.max() > 1):
        raise DomainError("La densidad debe tomar valores en [0,1]")
    exact = dens.dtype == bool or np.issubdtype(dens.dtype, np.integer)
    table = summed_table(dens.astype(np.int64) if exact else dens.astype(float))

    root_box = root.box(frame)
    root_total = box_sum(table, root_box.lo, root_box.hi)
    if _box_mean_exceeds(root_total, root_box.volume_units, lam, exact):
        raise HeightError(f"root exceeds height: media de Q0 > λ={lam}")

    selected: List[DyadicCube] = []
    stack = children(root, frame) if root.level < frame.depth else []
    while stack:
        cube = stack.pop()
        b = cube.box(frame)
        total = box_sum(table, b.lo, b.hi)
        if total == 0:
            continue
        if _box_mean_exceeds(total, b.volume_units, lam, exact):
            selected.append(cube)
        elif cube.level < frame.depth:
            stack.extend(children(cube, frame))
    selected.sort(key=DyadicCube.sort_key)
    logger.debug(f"cz_select: {len(selected)} cubos a altura {lam} bajo {root.index}@{root.level}")
    return selected


# ===== ESPARSIDAD =====

def verify_sparse(family: SparseFamily, frame: DyadicFrame, eta=None) -> SparsityCheck:
    """
    Comprueba |E_Q| >= η|Q| y la disyunción de los E_Q con aritmética exacta.

    Sin asignación explícita usa la canónica: E_Q = Q menos la unión de los cubos
    de la familia estrictamente contenidos en Q.
    """
    eta = family.eta if eta is None else to_fraction(eta)
    if not family.cubes:
        return SparsityCheck(passed=True, eta=eta)
    boxes = [frame.box(c) for c in family.cubes]
    if family.assignment is not None:
        return _verify_explicit(boxes, family.assignment, frame, eta)
    return _verify_canonical(boxes, eta)


def _verify_explicit(boxes: List[CellBox], assignment, frame: DyadicFrame, eta: Fraction) -> SparsityCheck:
    owner = np.full(frame.n_cells, -1, dtype=np.int64)
    min_ratio = None
    for pos, (box, cells) in enumerate(zip(boxes, assignment)):
        cells = np.unique(np.asarray(cells, dtype=np.int64))
        if cells.size:
            coords = np.unravel_index(cells, frame.shape)
            inside = np.ones(cells.size, dtype=bool)
            for ax, c in enumerate(coords):
                inside &= (c >= box.lo[ax]) & (c < box.hi[ax])
            if not inside.all():
                return SparsityCheck(passed=False, eta=eta, witness=pos, reason="E_Q no está contenido en Q")
            if (owner[cells] >= 0).any():
                return SparsityCheck(passed=False, eta=eta, witness=pos, reason="E_Q no es disjunto de un E anterior")
            owner[cells] = pos
        ratio = Fraction(int(cells.size), box.volume_units)
        min_ratio = ratio if min_ratio is None else min(min_ratio, ratio)
        if ratio < eta:
            return SparsityCheck(passed=False, eta=eta, min_ratio=min_ratio, witness=pos,
                                 reason=f"|E_Q|/|Q| = {ratio} < η")
    return SparsityCheck(passed=True, eta=eta, min_ratio=min_ratio)


def _verify_canonical(boxes: List[CellBox], eta: Fraction) -> SparsityCheck:
    unique: List[CellBox] = []
    first_pos = {}
    for pos, b in enumerate(boxes):
        if b not in first_pos:
            first_pos[b] = pos
            unique.append(b)
    lo = np.array([b.lo for b in unique])
    hi = np.array([b.hi for b in unique])
    vol = np.prod(hi - lo, axis=1)
    origin = lo.min(axis=0)
    owner = np.zeros(tuple(hi.max(axis=0) - origin), dtype=np.int32)

    min_ratio = None
    witness = None
    for i, b in enumerate(unique):
        inner = np.all(lo >= lo[i], axis=1) & np.all(hi <= hi[i], axis=1) & (vol < vol[i])
        mask = np.ones(b.sides, dtype=bool)
        for j in np.flatnonzero(inner):
            mask[tuple(slice(lo[j][a] - lo[i][a], hi[j][a] - lo[i][a]) for a in range(len(b.lo)))] = False
        region = tuple(slice(lo[i][a] - origin[a], hi[i][a] - origin[a]) for a in range(len(b.lo)))
        owner[region] += mask
        ratio = Fraction(int(mask.sum()), int(vol[i]))
        min_ratio = ratio if min_ratio is None else min(min_ratio, ratio)
        if ratio < eta and (witness is None or first_pos[b] < witness):
            witness = first_pos[b]
    if witness is not None:
        return SparsityCheck(passed=False, eta=eta, min_ratio=min_ratio, witness=witness,
                             reason="|E_Q| < η|Q| con la asignación canónica")
    if owner.max() > 1:
        return SparsityCheck(passed=False, eta=eta, min_ratio=min_ratio,
                             reason="la asignación canónica no es disjunta (familia no anidada)")
    return SparsityCheck(passed=True, eta=eta, min_ratio=min_ratio)


# ===== SERIALIZACIÓN =====

def dump_cube(cube: CubeLike) -> str:
    if isinstance(cube, DyadicCube):
        return " ".join(str(v) for v in (cube.tag, cube.level, *cube.index))
    return " ".join(["box", *map(str, cube.lo), *map(str, cube.hi)])


def parse_cube(line: str, n: int) -> CubeLike:
    parts = line.split()
    try:
        if parts[0] == "box":
            values = [int(v) for v in parts[1:]]
            if len(values) != 2 * n:
                raise GeometryError(f"Registro de caja con {len(values)} enteros, se esperaban {2 * n}")
            return CellBox(lo=tuple(values[:n]), hi=tuple(values[n:]))
        values = [int(v) for v in parts]
    except ValueError as e:
        raise GeometryError(f"Registro de cubo inválido: {line!r}") from e
    if len(values) != n + 2:
        raise GeometryError(f"Registro '{line}' no tiene la forma 'tag k m...' con n={n}")
    return DyadicCube(tag=values[0], level=values[1], index=tuple(values[2:]))


def dump_family(family: SparseFamily) -> str:
    lines = [f"eta={family.eta}"]
    lines.extend(dump_cube(c) for c in family.cubes)
    return "\n".join(lines) + "\n"


def load_family(text: str, n: int) -> SparseFamily:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if not lines or not lines[0].startswith("eta="):
        raise GeometryError("El fichero de familia debe empezar con 'eta=<racional>'")
    eta = to_fraction(lines[0].split("=", 1)[1])
    return SparseFamily(cubes=[parse_cube(ln, n) for ln in lines[1:]], eta=eta)


def centered_cube(frame: DyadicFrame, half_side) -> CellBox:
    """Cubo [-a, a)^n centrado en el origen, alineado con la malla fina."""
    a = to_fraction(half_side)
    lo = frame.point_to_units([-a] * frame.n)
    hi = frame.point_to_units([a] * frame.n)
    return CellBox(lo=lo, hi=hi)
