"""Dirichlet-to-Neumann matrices and mixed Steklov-Neumann eigenproblems.

Traces on the Steklov circles are expanded in the L2(dphi)-orthonormal
Fourier basis ``1/sqrt(2 pi), cos(n phi)/sqrt(pi), sin(n phi)/sqrt(pi)``,
``n <= M``, of each circle's own angle.  In that basis the DtN quadratic form
is metric free (the flux ``d_n u |dz/dphi|`` is conformally invariant) and a
boundary metric enters only through the mass matrix.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (ConvergenceFailure, DegenerateMetric, ResidualAboveTolerance,
                     SymmetryDefect)
from .harmonic import (DEFAULT_TOL, BasisSpec, BoundaryTrace, _fourier_from_samples,
                       fourier_eval, get_solver)
from .moduli import CircleDomain, ModuliPoint, build_planar_model, limit_model, sphere_weight

DEFAULT_MODES = 24
SYMMETRY_TOL = 1e-6
EIG_TOL = 1e-8
MAX_ORDER = 112


# ---------------------------------------------------------------------------
# sectors


@dataclass(frozen=True)
class SectorLabel:
    """Parities under (rho1, rho2, rho3); +1 even, -1 odd."""

    signs: tuple

    @classmethod
    def parse(cls, text) -> "SectorLabel":
        if isinstance(text, SectorLabel):
            return text
        text = str(text).lower()
        if len(text) != 3 or set(text) - {"e", "o"}:
            raise ValueError(f"bad sector label {text!r}")
        return cls(tuple(1 if ch == "e" else -1 for ch in text))

    def __str__(self):
        return "".join("e" if s > 0 else "o" for s in self.signs)

    def parity(self, axis: int) -> int:
        return self.signs[axis - 1]


ALL_SECTORS = tuple(SectorLabel.parse("".join(t)) for t in itertools.product("eo", repeat=3))
ADMISSIBLE = tuple(SectorLabel.parse(s) for s in ("eeo", "eoe", "oee"))
EXCLUDED = tuple(s for s in ALL_SECTORS if s not in ADMISSIBLE)


def _label(sector) -> str:
    return "full" if sector is None or str(sector) == "full" else str(SectorLabel.parse(sector))


def odd_sector(i: int) -> SectorLabel:
    """Sector odd under rho_i and even under the other two reflections."""
    return SectorLabel(tuple(-1 if k == i else 1 for k in (1, 2, 3)))


# ---------------------------------------------------------------------------
# trace space helpers


def steklov_circles(domain: CircleDomain, i) -> tuple[int, ...]:
    """Circle indices of the Steklov part: a group number or explicit indices."""
    if isinstance(i, (int, np.integer)):
        idx = domain.group_indices(int(i))
        if not idx:
            raise ValueError(f"model has no circles in group {i}")
        return tuple(idx)
    return tuple(int(k) for k in i)


def mode_scale(M: int) -> np.ndarray:
    """Norms of 1, cos, sin, ... in L2(dphi); plain = orthonormal / scale."""
    s = np.full(2 * M + 1, math.sqrt(math.pi))
    s[0] = math.sqrt(2 * math.pi)
    return s


def orthonormal_samples(M: int, phi) -> np.ndarray:
    """Matrix (len(phi), 2M+1) of the orthonormal Fourier basis."""
    phi = np.asarray(phi, dtype=float)
    cols = [np.ones_like(phi)]
    for n in range(1, M + 1):
        cols += [np.cos(n * phi), np.sin(n * phi)]
    return np.stack(cols, axis=1) / mode_scale(M)


def _angle_action(M: int, s1: float, s2: float) -> np.ndarray:
    """Diagonal action of phi -> phi' (cos phi' = s1 cos phi, sin phi' = s2 sin phi)."""
    d = np.ones(2 * M + 1)
    for n in range(1, M + 1):
        d[2 * n - 1] = s1**n
        d[2 * n] = s1 ** (n + 1) * s2
    return d


def reflection_matrix(domain, circles: Sequence[int], axis: int, M: int) -> np.ndarray:
    """Matrix of ``f -> f o rho_axis`` on coefficient vectors over ``circles``.

    Works for plain and orthonormal coefficients alike (the action is diagonal
    per mode up to a circle permutation).
    """
    circles = tuple(circles)
    pos = {k: a for a, k in enumerate(circles)}
    nb = 2 * M + 1
    R = np.zeros((len(circles) * nb, len(circles) * nb))
    rmap = domain.reflection_map(axis)
    for a, k in enumerate(circles):
        t, s1, s2 = rmap[k]
        if t not in pos:
            raise ValueError("circle set is not invariant under the reflections")
        b = pos[t]
        R[a * nb:(a + 1) * nb, b * nb:(b + 1) * nb] = np.diag(_angle_action(M, s1, s2))
    return R


def sector_basis(domain, circles, label, M: int) -> np.ndarray:
    """Orthonormal basis (columns) of the sector ``label`` in coefficient space."""
    dim = len(circles) * (2 * M + 1)
    if label is None or str(label) == "full":
        return np.eye(dim)
    label = SectorLabel.parse(label)
    P = np.eye(dim)
    for axis in (1, 2, 3):
        R = reflection_matrix(domain, circles, axis, M)
        P = P @ (np.eye(dim) + label.parity(axis) * R) / 2
    # P is a diagonal-block permutation-sign projector; its range is spanned by
    # its nonzero columns after orthonormalization
    w, V = np.linalg.eigh((P + P.T) / 2)
    return V[:, w > 0.5]


def sector_project(trace: BoundaryTrace, label, domain) -> BoundaryTrace:
    """Average of the eight reflected copies of ``trace`` with sector signs."""
    label = SectorLabel.parse(label)
    M = trace.order
    dim = len(trace.circles) * (2 * M + 1)
    P = np.eye(dim)
    for axis in (1, 2, 3):
        R = reflection_matrix(domain, trace.circles, axis, M)
        P = P @ (np.eye(dim) + label.parity(axis) * R) / 2
    coeffs = (P @ trace.coeffs.ravel()).reshape(trace.coeffs.shape)
    return BoundaryTrace(trace.circles, coeffs, trace.metric, str(label))


def trace_from_orthonormal(domain, circles, x, M, metric="plane", sector=None) -> BoundaryTrace:
    plain = np.asarray(x).reshape(len(circles), 2 * M + 1) / mode_scale(M)
    return BoundaryTrace(tuple(circles), plain, metric, sector)


# ---------------------------------------------------------------------------
# boundary metrics


class BoundaryMetric:
    """Positive length density on a set of circles, relative to plane arclength.

    ``plane`` is the constant 1; the round metric is ``mu = 2/(1+|z|^2)``.
    Densities are stored as samples on an equispaced grid in each circle's
    angle and evaluated by trigonometric interpolation.
    """

    def __init__(self, domain, circles, samples, symmetric: bool = False, name: str = "custom"):
        self.domain = domain
        self.circles = tuple(circles)
        self.samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if self.samples.shape[0] != len(self.circles):
            raise ValueError("one sample row per circle is required")
        if not np.all(np.isfinite(self.samples)) or self.samples.min() <= 0:
            raise DegenerateMetric("metric density must be strictly positive")
        self.symmetric = symmetric
        self.name = name
        K = self.samples.shape[1]
        self._coeffs = _fourier_from_samples(self.samples, (K - 1) // 2)

    @classmethod
    def from_function(cls, domain, circles, fn: Callable, K: int = 256, symmetric=False, name="custom"):
        """``fn(k, phi, z)`` returns the density on circle ``k``."""
        phi = np.arange(K) * 2 * np.pi / K
        rows = []
        for k in circles:
            c = domain.circles[k]
            rows.append(np.broadcast_to(fn(k, phi, c.point(phi)), phi.shape))
        return cls(domain, circles, np.array(rows), symmetric, name)

    @classmethod
    def plane(cls, domain, circles, K: int = 64):
        return cls.from_function(domain, circles, lambda k, phi, z: np.ones_like(phi), K, True, "plane")

    @classmethod
    def sphere(cls, domain, circles, K: int = 256):
        return cls.from_function(domain, circles, lambda k, phi, z: sphere_weight(z), K, True, "sphere")

    @classmethod
    def from_sphere_density(cls, domain, circles, fn: Callable, K: int = 256, symmetric=False, name="custom"):
        """Density ``fn`` given relative to spherical arclength."""
        return cls.from_function(domain, circles, lambda k, phi, z: fn(k, phi, z) * sphere_weight(z),
                                 K, symmetric, name)

    def density(self, a: int, phi) -> np.ndarray:
        """Density on the ``a``-th circle of this metric at angles ``phi``."""
        return fourier_eval(self._coeffs[a], phi)

    def per_angle(self, a: int, phi) -> np.ndarray:
        """Length per unit angle, density times |dz/dphi|."""
        c = self.domain.circles[self.circles[a]]
        return self.density(a, phi) * np.abs(c.dpoint(phi))

    def scaled(self, factor: float) -> "BoundaryMetric":
        return BoundaryMetric(self.domain, self.circles, self.samples * factor, self.symmetric, self.name)

    def length(self, K: int = 512) -> float:
        phi = np.arange(K) * 2 * np.pi / K
        return float(sum(np.mean(self.per_angle(a, phi)) * 2 * np.pi for a in range(len(self.circles))))

    def mass_matrix(self, M: int, K: int | None = None) -> np.ndarray:
        K = K or max(4 * M, 2 * self.samples.shape[1], 64)
        phi = np.arange(K) * 2 * np.pi / K
        E = orthonormal_samples(M, phi)
        nb = 2 * M + 1
        B = np.zeros((len(self.circles) * nb,) * 2)
        for a in range(len(self.circles)):
            w = self.per_angle(a, phi) * (2 * np.pi / K)
            B[a * nb:(a + 1) * nb, a * nb:(a + 1) * nb] = E.T @ (E * w[:, None])
        return B


# ---------------------------------------------------------------------------
# DtN


@dataclass
class DtNOperator:
    domain: CircleDomain
    circles: tuple
    M: int
    sector: str
    matrix: np.ndarray
    full_matrix: np.ndarray
    basis: np.ndarray
    solver: object = field(repr=False)
    coef: np.ndarray = field(repr=False)
    residual: float = 0.0
    symmetry_defect: float = 0.0

    @property
    def dim(self):
        return self.matrix.shape[0]

    def restrict(self, sector) -> "DtNOperator":
        P = sector_basis(self.domain, self.circles, sector, self.M)
        return DtNOperator(self.domain, self.circles, self.M, _label(sector), P.T @ self.full_matrix @ P,
                           self.full_matrix, P, self.solver, self.coef, self.residual,
                           self.symmetry_defect)

    def extension_coefficients(self, x_full) -> np.ndarray:
        """Series coefficients of the harmonic extension of an orthonormal trace vector."""
        return self.coef @ np.asarray(x_full)

    def extension(self, x_full):
        from .harmonic import SeriesSolution
        return SeriesSolution(self.domain, self.solver.basis, self.extension_coefficients(x_full),
                              self.residual)


def _assemble(domain, circles, M, basis: BasisSpec, tol):
    kinds = ["D" if k in circles else "N" for k in range(len(domain))]
    nb = 2 * M + 1
    dim = len(circles) * nb
    order = basis.order
    while True:
        spec = BasisSpec(order, basis.oversampling)
        solver = get_solver(domain, kinds, spec)
        data = []
        for k in range(len(domain)):
            if k in circles:
                a = circles.index(k)

                def fn(phi, a=a):
                    out = np.zeros((len(phi), dim))
                    out[:, a * nb:(a + 1) * nb] = orthonormal_samples(M, phi)
                    return out
                data.append(fn)
            else:
                data.append(0.0)
        coef, res = solver.solve_coefficients(data)
        resid = float(np.max(res))
        if resid <= tol or order >= MAX_ORDER:
            break
        order += 16
    K = 4 * max(M, order)
    phi = np.arange(K) * 2 * np.pi / K
    E = orthonormal_samples(M, phi)
    A = np.zeros((dim, dim))
    for a, k in enumerate(circles):
        c = domain.circles[k]
        z = c.point(phi)
        _, D = solver.basis.matrices(z)
        flux = (D * c.normal(z)[:, None]).real * np.abs(c.dpoint(phi))[:, None]
        Q = flux @ coef
        A[a * nb:(a + 1) * nb, :] = E.T @ Q * (2 * np.pi / K)
    return A, solver, coef, resid


def dtn_matrix(model, i, sector="full", M: int = DEFAULT_MODES, basis: BasisSpec = BasisSpec(),
               tol: float = DEFAULT_TOL, check: bool = True) -> DtNOperator:
    """DtN operator on the Steklov circles ``i`` with Neumann 0 elsewhere.

    The basis order is raised in steps of 16 (up to a cap) until every column
    solve meets ``tol``.
    """
    circles = steklov_circles(model, i)
    if M > basis.order:
        raise ValueError("trace modes M must not exceed the basis order N")
    cache = model.__dict__.setdefault("_fbs_dtn_cache", {})
    key = (circles, M, basis.order, basis.oversampling, tol)
    if key not in cache:
        cache[key] = _assemble(model, circles, M, basis, tol)
    A, solver, coef, resid = cache[key]
    defect = float(np.max(np.abs(A - A.T)))
    if check and defect > SYMMETRY_TOL:
        raise SymmetryDefect(f"DtN asymmetry {defect:.3e} exceeds {SYMMETRY_TOL:.0e}")
    if check and resid > max(tol, 1e-7):
        raise ResidualAboveTolerance(resid, max(tol, 1e-7))
    Asym = (A + A.T) / 2
    full = DtNOperator(model, circles, M, "full", Asym, Asym, np.eye(len(Asym)), solver, coef,
                       resid, defect)
    return full if _label(sector) == "full" else full.restrict(sector)


# ---------------------------------------------------------------------------
# eigenproblems


@dataclass
class EigResult:
    sigma: float
    trace: BoundaryTrace
    sector: str
    sigma_L: float
    residual: float
    vector: np.ndarray = field(repr=False, default=None)
    index: int = 1


def _constant_vector(ncirc, M):
    x = np.zeros(ncirc * (2 * M + 1))
    x[:: 2 * M + 1] = math.sqrt(2 * math.pi)
    return x


def sn_eigen(model, i, metric: BoundaryMetric | None = None, sector="full", k: int = 1,
             M: int = DEFAULT_MODES, basis: BasisSpec = BasisSpec(), dtn: DtNOperator | None = None,
             tol: float = EIG_TOL) -> list[EigResult]:
    """The ``k`` smallest nonzero eigenpairs of A x = sigma B x on a sector.

    ``metric`` defaults to the round metric of the sphere.
    """
    circles = steklov_circles(model, i)
    if metric is None:
        metric = BoundaryMetric.sphere(model, circles)
    if tuple(metric.circles) != circles:
        raise DegenerateMetric("metric is defined on a different set of circles")
    if dtn is None:
        dtn = dtn_matrix(model, circles, sector, M, basis)
    elif dtn.sector != _label(sector):
        dtn = dtn.restrict(sector)
    M = dtn.M
    P = dtn.basis
    A = dtn.matrix
    Bfull = metric.mass_matrix(M)
    B = P.T @ Bfull @ P
    # remove constants (only sectors even under every reflection contain them)
    cvec = P.T @ _constant_vector(len(circles), M)
    if np.linalg.norm(cvec) > 1e-12:
        Bc = B @ cvec
        Q = sla.null_space(Bc[None, :])
        A, B, P = Q.T @ A @ Q, Q.T @ B @ Q, P @ Q
    else:
        Q = None
    wB, VB = np.linalg.eigh(B)
    if wB.min() <= 0:
        raise DegenerateMetric("mass matrix is not positive definite")
    Bih = (VB / np.sqrt(wB)) @ VB.T
    S = Bih @ A @ Bih
    S = (S + S.T) / 2
    try:
        w, Y = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    L = metric.length()
    out = []
    for j in range(min(k, len(w))):
        y = Bih @ Y[:, j]
        res = float(np.linalg.norm(A @ y - w[j] * (B @ y)) / np.linalg.norm(y))
        if res > tol * max(1.0, abs(w[j])):
            raise ConvergenceFailure(f"eigen residual {res:.3e}")
        xf = P @ y
        # fix sign for reproducibility
        piv = np.argmax(np.abs(xf))
        if xf[piv] < 0:
            xf, y = -xf, -y
        trace = trace_from_orthonormal(model, circles, xf, M, "plane", dtn.sector)
        out.append(EigResult(float(max(w[j], 0.0)), trace, dtn.sector, float(w[j] * L), res, xf, j + 1))
    return out


def sector_spectrum(model, i, metric=None, k: int = 2, M: int = DEFAULT_MODES,
                    basis: BasisSpec = BasisSpec(), sectors=ALL_SECTORS) -> dict:
    """Lowest ``k`` eigenvalues in each sector, sharing one DtN assembly."""
    full = dtn_matrix(model, i, "full", M, basis)
    out = {}
    for s in sectors:
        res = sn_eigen(model, i, metric, s, k, M, basis, dtn=full)
        out[str(s)] = res
    return out


def eigen_table_csv(path, rows: Iterable) -> None:
    """Rows of (i, sector, k, sigma, sigma_L)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "sector", "k", "sigma", "sigmaL"])
        for i, sector, kk, s, sl in rows:
            w.writerow([i, sector, kk, f"{s:.17g}", f"{sl:.17g}"])


def eigenvalue_bound(k: int, genus: int = 0, b: int = 6) -> float:
    """Topological upper bound 2 pi (k + genus + b - 1) for sigma_k L."""
    return 2 * math.pi * (k + genus + b - 1)


# ---------------------------------------------------------------------------
# asymptotic studies


def _perm_for_hole(i):
    # keep the hole in group 1 or 2 so the outer circle stays of finite size
    return (1, 2, 3) if i in (1, 2) else (3, 2, 1)


def _first_sigma(model, j, M, basis):
    return sn_eigen(model, j, None, "full", 1, M, basis)[0].sigma


@dataclass
class SensitivityTable:
    eps: np.ndarray
    sigma: dict
    limit: dict
    deficit: dict
    exponent: dict


def fit_power(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def neumann_hole_sensitivity(p: ModuliPoint, i: int, eps_list, M: int = DEFAULT_MODES,
                             basis: BasisSpec = BasisSpec()) -> SensitivityTable:
    """First (SN_j) eigenvalues, j != i, as the Neumann pair i shrinks to radius eps.

    The round metric is used on the Steklov circles; the deficit is measured
    against the model with the pair removed.
    """
    perm = _perm_for_hole(i)
    inv = {perm[k] - 1: k + 1 for k in range(3)}
    ii = inv[i - 1]
    js = [j for j in (1, 2, 3) if j != i]
    eps = np.asarray(list(eps_list), dtype=float)
    q = p.permuted(perm)
    lim = limit_model(q, ii)
    limit = {j: _first_sigma(lim, inv[j - 1], M, basis) for j in js}
    sigma = {j: [] for j in js}
    for e in eps:
        model = build_planar_model(q.replace(ii, e))
        for j in js:
            sigma[j].append(_first_sigma(model, inv[j - 1], M, basis))
    sigma = {j: np.array(v) for j, v in sigma.items()}
    deficit = {j: limit[j] - sigma[j] for j in js}
    exponent = {}
    for j in js:
        d = deficit[j]
        exponent[j] = fit_power(eps, d) if len(eps) > 1 and np.all(d > 0) else float("nan")
    return SensitivityTable(eps, sigma, limit, deficit, exponent)


@dataclass
class LogDecayTable:
    eps: np.ndarray
    sigma: np.ndarray
    product: np.ndarray

    @property
    def sup(self) -> float:
        return float(np.max(self.product))

    @property
    def variation(self) -> float:
        """Largest relative deviation of the product from its mean."""
        m = np.mean(self.product)
        return float(np.max(np.abs(self.product - m)) / m)


def log_decay_check(p: ModuliPoint, eps_list, M: int = DEFAULT_MODES,
                    basis: BasisSpec = BasisSpec()) -> LogDecayTable:
    """Table of eps * sigma_1^(1)(eps) * |log eps| with r1 = eps (round metric)."""
    eps = np.asarray(list(eps_list), dtype=float)
    sig = np.array([_first_sigma(build_planar_model(p.replace(1, e)), 1, M, basis) for e in eps])
    return LogDecayTable(eps, sig, eps * sig * np.abs(np.log(eps)))
