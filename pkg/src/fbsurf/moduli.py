"""Canonical six-hole models on the round sphere and their planar images.

A point ``(r1, r2, r3)`` of the moduli space describes the sphere with six
geodesic caps removed: two of radius ``r1`` about ``(+-1, 0, 0)``, two of
radius ``r2`` about ``(0, +-1, 0)`` and two of radius ``r3`` about
``(0, 0, +-1)``.  Computations happen in the plane after stereographic
projection from the north pole, where every boundary component is an exact
circle and the three coordinate reflections become

* ``rho1: z -> -conj(z)``
* ``rho2: z -> conj(z)``
* ``rho3: z -> 1 / conj(z)``  (inversion in the unit circle)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import NonPositiveRadius, OverlappingPair, PointOutsideDomain

GEOM_TOL = 1e-12

_AXES = np.eye(3)
# sphere frame (C, T1, T2) of each group; member 1 sits on the positive axis
_FRAMES = {
    1: (_AXES[0], _AXES[1], _AXES[2]),
    2: (_AXES[1], _AXES[0], _AXES[2]),
    3: (_AXES[2], _AXES[0], _AXES[1]),
}


@dataclass(frozen=True)
class ModuliPoint:
    r1: float
    r2: float
    r3: float

    @property
    def r(self) -> tuple[float, float, float]:
        return (float(self.r1), float(self.r2), float(self.r3))

    def __getitem__(self, i: int) -> float:
        """1-based access: ``p[1] == p.r1``."""
        return self.r[i - 1]

    def as_array(self) -> np.ndarray:
        return np.array(self.r, dtype=float)

    @classmethod
    def from_sequence(cls, r: Sequence[float]) -> "ModuliPoint":
        r = [float(x) for x in r]
        if len(r) != 3:
            raise ValueError("a moduli point has exactly three radii")
        return cls(*r)

    def replace(self, i: int, value: float) -> "ModuliPoint":
        r = list(self.r)
        r[i - 1] = float(value)
        return ModuliPoint(*r)

    def permuted(self, perm: Sequence[int]) -> "ModuliPoint":
        """Point whose k-th radius is ``self[perm[k]]`` (1-based indices)."""
        return ModuliPoint(*[self[j] for j in perm])

    def to_json(self) -> str:
        return json.dumps({"r": list(self.r)})

    @classmethod
    def from_json(cls, text: str) -> "ModuliPoint":
        return cls.from_sequence(json.loads(text)["r"])

    def boundary_margin(self) -> float:
        """Distance-like margin to the boundary of the moduli space."""
        r = self.r
        pair = min(math.pi / 2 - (r[i] + r[j]) for i, j in ((0, 1), (0, 2), (1, 2)))
        return min(min(r), pair)


def validate(p: ModuliPoint) -> None:
    """Raise unless ``p`` lies in the open moduli space."""
    r = p.r
    for i, ri in enumerate(r, start=1):
        if not ri > 0:
            raise NonPositiveRadius(i, ri)
    for i, j in ((1, 2), (1, 3), (2, 3)):
        total = r[i - 1] + r[j - 1]
        if not total < math.pi / 2:
            raise OverlappingPair(i, j, total)


def is_valid(p: ModuliPoint) -> bool:
    try:
        validate(p)
    except (NonPositiveRadius, OverlappingPair):
        return False
    return True


def stereo(X: np.ndarray) -> np.ndarray:
    """Stereographic projection from (0, 0, 1); ``X`` has shape (..., 3)."""
    X = np.asarray(X, dtype=float)
    return (X[..., 0] + 1j * X[..., 1]) / (1.0 - X[..., 2])


def inverse_stereo(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    n2 = np.abs(z) ** 2
    return np.stack([2 * z.real, 2 * z.imag, n2 - 1], axis=-1) / (1 + n2)[..., None]


def sphere_weight(z) -> np.ndarray:
    """Length density of the round metric relative to the plane, 2/(1+|z|^2)."""
    z = np.asarray(z)
    return 2.0 / (1.0 + np.abs(z) ** 2)


@dataclass(frozen=True)
class Circle:
    """A boundary circle of a planar domain.

    ``outer`` means the domain lies inside the circle.  When ``frame`` is set
    the circle is the image of a spherical cap boundary and is parametrized by
    the cap's own angle ``phi``; otherwise ``z = center + radius e^{i phi}``.
    """

    center: complex
    radius: float
    outer: bool = False
    group: int | None = None
    member: int | None = None
    frame: tuple | None = field(default=None, repr=False)

    def _sphere_points(self, phi):
        C, T1, T2, r = self.frame
        phi = np.asarray(phi, dtype=float)[..., None]
        X = math.cos(r) * C + math.sin(r) * (np.cos(phi) * T1 + np.sin(phi) * T2)
        dX = math.sin(r) * (-np.sin(phi) * T1 + np.cos(phi) * T2)
        return X, dX

    def point(self, phi) -> np.ndarray:
        if self.frame is None:
            return self.center + self.radius * np.exp(1j * np.asarray(phi, dtype=float))
        X, _ = self._sphere_points(phi)
        return stereo(X)

    def dpoint(self, phi) -> np.ndarray:
        """dz/dphi along the parametrization."""
        if self.frame is None:
            return 1j * self.radius * np.exp(1j * np.asarray(phi, dtype=float))
        X, dX = self._sphere_points(phi)
        den = 1.0 - X[..., 2]
        num = X[..., 0] + 1j * X[..., 1]
        dnum = dX[..., 0] + 1j * dX[..., 1]
        return dnum / den + num * dX[..., 2] / den**2

    def local_chart(self):
        """Moebius map ``zeta = (a z + b) / (c z + d)`` and radius ``t``.

        The chart sends this circle to ``|zeta| = t`` with the domain outside,
        and for sphere circles ``arg zeta`` is (up to sign) the angle
        parameter, so ``(t / zeta)^n`` restricts to a pure Fourier mode.
        """
        if self.frame is None:
            if self.outer:
                return np.array([[0, 1], [1, -self.center]], dtype=complex), 1.0 / self.radius
            return np.array([[1, -self.center], [0, 1]], dtype=complex), self.radius
        C, T1, T2, r = self.frame
        rows = np.array([T1, T2, -C])
        if np.linalg.det(rows) < 0:
            rows[1] = -rows[1]
        phi = np.array([0.3, 2.4, 4.4])
        zs = self.point(phi)
        ws = stereo(np.einsum("ij,kj->ki", rows, inverse_stereo(zs)))
        return _mobius_from_points(zs, ws), math.tan(r / 2.0)

    def normal(self, z) -> np.ndarray:
        """Unit normal pointing out of the domain, as a complex number."""
        d = (np.asarray(z) - self.center) / self.radius
        return d if self.outer else -d

    def sphere_radius(self) -> float | None:
        return None if self.frame is None else float(self.frame[3])

    def label(self) -> str:
        if self.group is None:
            return "outer" if self.outer else "inner"
        return f"gamma{self.member}^({self.group})"


def _to_standard(p):
    z1, z2, z3 = p
    return np.array([[z2 - z3, -z1 * (z2 - z3)], [z2 - z1, -z3 * (z2 - z1)]], dtype=complex)


def _mobius_from_points(zs, ws) -> np.ndarray:
    """Matrix of the Moebius map sending three points ``zs`` to ``ws``."""
    m = np.linalg.solve(_to_standard(ws), _to_standard(zs))
    return m / np.sqrt(np.linalg.det(m))


def sphere_circle(group: int, member: int, r: float, outer: bool = False) -> Circle:
    """Planar image of the cap of geodesic radius ``r`` for (group, member)."""
    C, T1, T2 = _FRAMES[group]
    sign = 1.0 if member == 1 else -1.0
    C = sign * C
    if group == 3:
        m = _AXES[0]
    else:
        m = _AXES[2] - (_AXES[2] @ C) * C
        m = m / np.linalg.norm(m)
    ends = stereo(np.array([math.cos(r) * C + math.sin(r) * m, math.cos(r) * C - math.sin(r) * m]))
    center = complex(0.5 * (ends[0] + ends[1]))
    radius = float(0.5 * abs(ends[0] - ends[1]))
    if abs(center) < GEOM_TOL:
        center = 0j
    return Circle(center, radius, outer, group, member, (C, T1, T2, float(r)))


class CircleDomain:
    """A planar domain bounded by one outer circle and disjoint inner circles."""

    def __init__(self, circles: Iterable[Circle]):
        circles = tuple(circles)
        if not circles or not circles[0].outer:
            raise ValueError("the first circle must be the outer boundary")
        if any(c.outer for c in circles[1:]):
            raise ValueError("only one outer circle is allowed")
        self.circles = circles

    @property
    def outer(self) -> Circle:
        return self.circles[0]

    @property
    def inners(self) -> tuple[Circle, ...]:
        return self.circles[1:]

    def __len__(self):
        return len(self.circles)

    def weight(self, z):
        return sphere_weight(z)

    def contains(self, z, tol: float = GEOM_TOL) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        ok = np.abs(z - self.outer.center) <= self.outer.radius + tol
        for c in self.inners:
            ok &= np.abs(z - c.center) >= c.radius - tol
        return ok

    def check_geometry(self, tol: float = GEOM_TOL) -> None:
        """Inner circles strictly inside the outer one and pairwise disjoint."""
        o = self.outer
        for c in self.inners:
            if abs(c.center - o.center) + c.radius >= o.radius - tol:
                raise ValueError(f"{c.label()} is not strictly inside the outer circle")
        for a in range(len(self.inners)):
            for b in range(a + 1, len(self.inners)):
                c1, c2 = self.inners[a], self.inners[b]
                if abs(c1.center - c2.center) <= c1.radius + c2.radius + tol:
                    raise ValueError(f"{c1.label()} and {c2.label()} intersect")

    def circle_list(self) -> list[dict]:
        return [
            {
                "center": [c.center.real, c.center.imag],
                "radius": c.radius,
                "outer": c.outer,
                "group": c.group,
                "member": c.member,
            }
            for c in self.circles
        ]

    def to_json(self) -> str:
        return json.dumps({"circles": self.circle_list()})


class PlanarModel(CircleDomain):
    """Stereographic image of a canonical model (possibly with groups dropped)."""

    def __init__(self, p: ModuliPoint, circles: Iterable[Circle]):
        super().__init__(circles)
        self.p = p
        self.component_labels = {
            k: (c.group, c.member) for k, c in enumerate(self.circles)
        }

    def group_indices(self, i: int) -> list[int]:
        """Indices of the circles of group ``i``, ordered by member."""
        idx = [k for k, c in enumerate(self.circles) if c.group == i]
        return sorted(idx, key=lambda k: self.circles[k].member)

    def index_of(self, group: int, member: int) -> int:
        for k, c in enumerate(self.circles):
            if c.group == group and c.member == member:
                return k
        raise KeyError((group, member))

    def groups(self) -> list[int]:
        return sorted({c.group for c in self.circles})

    def reflection_map(self, axis: int) -> list[tuple[int, float, float]]:
        """How ``rho_axis`` acts on each circle's angle parameter.

        Entry ``k`` is ``(target, s1, s2)``: the point at angle ``phi`` on
        circle ``k`` goes to the point on circle ``target`` whose angle
        satisfies ``cos phi' = s1 cos phi`` and ``sin phi' = s2 sin phi``.
        """
        out = []
        for c in self.circles:
            if c.group == axis:
                out.append((self.index_of(c.group, 3 - c.member), 1.0, 1.0))
            else:
                _, T1, T2, _ = c.frame
                out.append((self.index_of(c.group, c.member), 1.0 - 2.0 * T1[axis - 1], 1.0 - 2.0 * T2[axis - 1]))
        return out


@dataclass(frozen=True)
class ReflectionAction:
    axis: int

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        if self.axis == 1:
            return -np.conj(z)
        if self.axis == 2:
            return np.conj(z)
        if self.axis == 3:
            return z / np.abs(z) ** 2
        raise ValueError(f"axis must be 1, 2 or 3, got {self.axis}")

    def sphere_matrix(self) -> np.ndarray:
        m = np.eye(3)
        m[self.axis - 1, self.axis - 1] = -1.0
        return m


def _circles_for(r: Sequence[float], drop: Iterable[int] = ()) -> list[Circle]:
    drop = set(drop)
    if 3 in drop:
        raise ValueError("group 3 carries the outer circle and cannot be dropped")
    circles = [sphere_circle(3, 1, r[2], outer=True), sphere_circle(3, 2, r[2])]
    for g in (1, 2):
        if g in drop:
            continue
        circles += [sphere_circle(g, 1, r[g - 1]), sphere_circle(g, 2, r[g - 1])]
    return circles


def build_planar_model(p: ModuliPoint) -> PlanarModel:
    """Planar image of the canonical model at ``p`` (projection from the north pole).

    Circle order: outer (gamma_1^(3)), innermost (gamma_2^(3)), then the
    group 1 and group 2 pairs.
    """
    validate(p)
    return PlanarModel(p, _circles_for(p.r))


def limit_model(p: ModuliPoint, drop: int) -> PlanarModel:
    """Model with the circles of group ``drop`` (1 or 2) removed entirely."""
    r = list(p.r)
    r[drop - 1] = 0.0
    return PlanarModel(ModuliPoint(*r), _circles_for(p.r, drop=(drop,)))


def apply_reflection(model: CircleDomain, axis: int, z):
    z = np.asarray(z, dtype=complex)
    if not np.all(model.contains(z, tol=1e-9)):
        raise PointOutsideDomain("point outside the closed domain")
    return ReflectionAction(axis)(z)


def disk_domain(radius: float = 1.0) -> CircleDomain:
    return CircleDomain([Circle(0j, float(radius), outer=True)])


def annulus_domain(eps: float, radius: float = 1.0) -> CircleDomain:
    return CircleDomain([Circle(0j, float(radius), outer=True), Circle(0j, float(eps))])


def cap_domain(r: float) -> CircleDomain:
    """Geodesic cap of radius ``r`` about the south pole, as a disk in the plane."""
    return CircleDomain([Circle(0j, math.tan(r / 2.0), outer=True)])


def circle_gap(a: Circle, b: Circle) -> float:
    """Euclidean gap between two inner circles (negative when they overlap)."""
    return abs(a.center - b.center) - a.radius - b.radius
