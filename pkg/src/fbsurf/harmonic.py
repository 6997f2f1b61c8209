"""Mixed Dirichlet/Neumann Laplace solves on circle domains.

Every harmonic field is written as ``u = Re F`` with

    F(z) = c0 + sum_k alpha_k log(z - z_k)
              + sum_k sum_n (a_kn - i b_kn) (t_k / zeta_k(z))^n

where ``zeta_k`` is the Moebius chart of circle ``k`` (see
``Circle.local_chart``).  For the outer circle this is a positive power
series about its center, for inner circles a negative one about a point in
the hole.  On sphere circles the chart is the rotated stereographic
coordinate, so a Fourier mode in the cap angle is a single basis function.  Only real log parts appear, so ``u`` is single valued and
exactly harmonic.
Coefficients are fitted by least squares at collocation points spread
uniformly in each circle's own angle parameter.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import IllConditioned, PointOutsideDomain, ResidualAboveTolerance
from .moduli import CircleDomain, sphere_weight

DEFAULT_ORDER = 32
DEFAULT_OVERSAMPLING = 3
DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class BasisSpec:
    order: int = DEFAULT_ORDER
    oversampling: int = DEFAULT_OVERSAMPLING

    def __post_init__(self):
        if int(self.order) < 1:
            raise ValueError("basis order must be >= 1")
        if int(self.oversampling) < 2:
            raise ValueError("oversampling must be >= 2")

    @property
    def points_per_circle(self) -> int:
        return self.oversampling * (2 * self.order + 1)


@dataclass(frozen=True)
class Dirichlet:
    """Prescribed value; a constant or a function of the circle angle."""

    value: float | Callable = 0.0


@dataclass(frozen=True)
class Neumann:
    """Prescribed outward plane normal derivative (default 0)."""

    flux: float | Callable = 0.0


def _eval_data(data, phi):
    if callable(data):
        return np.asarray(data(phi), dtype=float)
    return np.full(np.shape(phi), float(data))


class BoundaryCondition:
    def __init__(self, conditions: Sequence):
        self.conditions = tuple(conditions)
        for c in self.conditions:
            if not isinstance(c, (Dirichlet, Neumann)):
                raise TypeError(f"unknown boundary condition {c!r}")

    @classmethod
    def from_map(cls, domain: CircleDomain, mapping: dict) -> "BoundaryCondition":
        """Conditions from ``{circle index: condition}``; unlisted circles get Neumann 0."""
        return cls([mapping.get(k, Neumann()) for k in range(len(domain))])

    def kinds(self) -> tuple[str, ...]:
        return tuple("D" if isinstance(c, Dirichlet) else "N" for c in self.conditions)

    def __len__(self):
        return len(self.conditions)


# ---------------------------------------------------------------------------
# basis


class _Basis:
    """Column layout and evaluation of the complex basis functions F_j."""

    def __init__(self, domain: CircleDomain, order: int, with_constant: bool = True,
                 symmetry=None):
        self.domain = domain
        self.order = order
        self.with_constant = with_constant
        self.symmetry = None if symmetry is None else tuple(float(s) for s in symmetry)
        cols = []
        if with_constant:
            cols.append(("const", -1, 0, False))
        for k, c in enumerate(domain.circles):
            if not c.outer:
                cols.append(("log", k, 0, False))
            if self.symmetry is not None and getattr(c, "member", 1) != 1:
                continue
            for n in range(1, order + 1):
                cols.append(("pow", k, n, False))
                cols.append(("pow", k, n, True))
        self.cols = cols
        self.charts = [c.local_chart() for c in domain.circles]
        if self.symmetry is None:
            self.row_circles = tuple(range(len(domain)))
        else:
            self.row_circles = tuple(k for k, c in enumerate(domain.circles)
                                     if getattr(c, "member", 1) == 1)
            self._drop_vanishing()

    def _drop_vanishing(self):
        # columns whose symmetrization has zero real part carry no information
        phi = np.arange(64) * 2 * np.pi / 64
        z = np.concatenate([c.point(phi) for c in self.domain.circles])
        raw = np.linalg.norm(self._raw(z, False)[0].real, axis=0)
        sym = np.linalg.norm(self.matrices(z, False)[0].real, axis=0)
        keep = sym > 1e-8 * np.maximum(raw, 1e-300)
        self.cols = [c for c, k in zip(self.cols, keep) if k]

    @property
    def size(self):
        return len(self.cols)

    def matrices(self, z, derivative=True):
        """Return (F, F') with shape (len(z), ncols)."""
        z = np.asarray(z, dtype=complex).ravel()
        if self.symmetry is None:
            return self._raw(z, derivative)
        n = z.size
        ms, dms = [], []
        for axes, sigma, inv, rev in _GROUP:
            m = sigma / z if inv else sigma * z
            ms.append(np.conj(m) if rev else m)
            if derivative:
                dms.append(-sigma / z**2 if inv else np.full(n, sigma, dtype=complex))
        Fall, Dall = self._raw(np.concatenate(ms), derivative)
        F = np.zeros((n, self.size), dtype=complex)
        D = np.zeros_like(F) if derivative else None
        for g, (axes, sigma, inv, rev) in enumerate(_GROUP):
            chi = np.prod([self.symmetry[a - 1] for a in axes])
            Fg = Fall[g * n:(g + 1) * n]
            F += chi * (np.conj(Fg) if rev else Fg)
            if derivative:
                Dg = Dall[g * n:(g + 1) * n]
                D += chi * (np.conj(Dg) if rev else Dg) * dms[g][:, None]
        return F / 8, (D / 8 if derivative else None)

    def _layout(self):
        if getattr(self, "_layout_cols", None) is not self.cols:
            const, logs, pows = [], [], {}
            for j, (kind, k, n, imag) in enumerate(self.cols):
                if kind == "const":
                    const.append(j)
                elif kind == "log":
                    logs.append((j, k))
                else:
                    pows.setdefault(k, []).append((j, n, imag))
            pows = {k: (np.array([e[0] for e in v]), np.array([e[1] for e in v]),
                        np.where([e[2] for e in v], -1j, 1.0)) for k, v in pows.items()}
            self._layout_data = (const, logs, pows)
            self._layout_cols = self.cols
        return self._layout_data

    def _raw(self, z, derivative=True):
        const, logs, pows = self._layout()
        F = np.zeros((z.size, self.size), dtype=complex)
        D = np.zeros_like(F) if derivative else None
        F[:, const] = 1.0
        for j, k in logs:
            dz = z - self.domain.circles[k].center
            F[:, j] = np.log(dz)
            if derivative:
                D[:, j] = 1.0 / dz
        for k, (idx, n, f) in pows.items():
            mob, t = self.charts[k]
            den = mob[1, 0] * z + mob[1, 1]
            zeta = (mob[0, 0] * z + mob[0, 1]) / den
            w = t / zeta
            Fk = np.cumprod(np.broadcast_to(w[:, None], (w.size, n.max())), axis=1)[:, n - 1]
            F[:, idx] = Fk * f
            if derivative:
                dlog = (np.linalg.det(mob) / den**2) / zeta
                D[:, idx] = (-n * f)[None, :] * Fk * dlog[:, None]
        return F, D


# Klein four-group times the inversion: (axes, sign, inverted, orientation-reversing).
# g(z) = m(z) or conj(m(z)) with m(z) = sign*z or sign/z.
_GROUP = (
    ((), 1.0, False, False),
    ((1,), -1.0, False, True),
    ((2,), 1.0, False, True),
    ((3,), 1.0, True, True),
    ((1, 2), -1.0, False, False),
    ((1, 3), -1.0, True, False),
    ((2, 3), 1.0, True, False),
    ((1, 2, 3), -1.0, True, True),
)


def _rows(domain, basis, kinds, phi):
    """Stacked least-squares rows (values on D circles, s * d_n u on N circles)."""
    blocks = []
    for k in basis.row_circles:
        c, kind = domain.circles[k], kinds[k]
        z = c.point(phi)
        F, D = basis.matrices(z, derivative=(kind == "N"))
        if kind == "D":
            blocks.append(F.real)
        else:
            nrm = c.normal(z)
            blocks.append(c.radius * (D * nrm[:, None]).real)
    return np.vstack(blocks)


class MixedSolver:
    """Factorized collocation system for one boundary-type pattern.

    The factorization is reused for many right-hand sides, which is what the
    DtN assembly needs.
    """

    def __init__(self, domain: CircleDomain, kinds: Sequence[str], basis: BasisSpec = BasisSpec(),
                 symmetry=None):
        self.domain = domain
        self.kinds = tuple(kinds)
        self.spec = basis
        if len(self.kinds) != len(domain):
            raise ValueError("one boundary condition per circle is required")
        pure_neumann = all(k == "N" for k in self.kinds)
        self.basis = _Basis(domain, basis.order, with_constant=not pure_neumann, symmetry=symmetry)
        K = basis.points_per_circle
        self.phi = np.arange(K) * (2 * np.pi / K)
        self.phi_check = self.phi + np.pi / K
        A = _rows(domain, self.basis, self.kinds, self.phi)
        norms = np.linalg.norm(A, axis=0)
        if not np.all(np.isfinite(norms)) or np.any(norms == 0):
            raise IllConditioned("column equilibration failed (zero or non-finite column)")
        self.col_scale = 1.0 / norms
        Q, R, piv = sla.qr(A * self.col_scale, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > d[0] * 1e-14))
        self.Q, self.R, self.piv, self.rank = Q[:, :rank], R[:rank, :rank], piv[:rank], rank
        self._check_rows = None

    def _rhs(self, data, phi):
        cols = []
        for k in self.basis.row_circles:
            c, kind, d = self.domain.circles[k], self.kinds[k], data[k]
            v = _eval_data(d, phi)
            if kind == "N":
                v = c.radius * v
            cols.append(v if v.ndim == 2 else v[:, None])
        nrhs = max(c.shape[1] for c in cols)
        return np.vstack([np.broadcast_to(c, (c.shape[0], nrhs)) for c in cols])

    def solve_coefficients(self, data):
        """Coefficient matrix (ncols, nrhs) and per-rhs max residual."""
        b = self._rhs(data, self.phi)
        y = sla.solve_triangular(self.R, self.Q.T @ b)
        x = np.zeros((self.basis.size, b.shape[1]))
        x[self.piv] = y
        x *= self.col_scale[:, None]
        if self._check_rows is None:
            self._check_rows = _rows(self.domain, self.basis, self.kinds, self.phi_check)
        bc = self._rhs(data, self.phi_check)
        res = np.max(np.abs(self._check_rows @ x - bc), axis=0)
        scale = np.maximum(1.0, np.max(np.abs(b), axis=0))
        return x, res / scale

    def solution(self, coef, residual=0.0, tol=DEFAULT_TOL) -> "SeriesSolution":
        return SeriesSolution(self.domain, self.basis, np.asarray(coef, dtype=float), float(residual), tol)


def _solver_cache(domain):
    cache = getattr(domain, "_fbs_solver_cache", None)
    if cache is None:
        cache = {}
        try:
            domain._fbs_solver_cache = cache
        except AttributeError:
            pass
    return cache


def get_solver(domain: CircleDomain, kinds, basis: BasisSpec = BasisSpec(),
               symmetry=None) -> MixedSolver:
    """Cached solver.  ``symmetry`` gives the parity signs under the three
    reflections when the solution is known to have them; the basis is then
    symmetrized and only one circle per reflection orbit is collocated."""
    cache = _solver_cache(domain)
    sym = None if symmetry is None else tuple(float(v) for v in symmetry)
    key = (tuple(kinds), basis.order, basis.oversampling, sym)
    if key not in cache:
        cache[key] = MixedSolver(domain, kinds, basis, sym)
    return cache[key]


# ---------------------------------------------------------------------------
# solutions


@dataclass
class SeriesSolution:
    domain: CircleDomain
    basis: _Basis = field(repr=False)
    coef: np.ndarray = field(repr=False)
    residual: float = 0.0
    tol: float = DEFAULT_TOL

    def _check(self, z):
        z = np.asarray(z, dtype=complex)
        if not np.all(self.domain.contains(z, tol=1e-9)):
            raise PointOutsideDomain("evaluation point outside the closed domain")
        return z

    def F(self, z):
        """Analytic completion ``F`` with ``u = Re F`` (log branch unspecified)."""
        F, _ = self.basis.matrices(z, derivative=False)
        return F @ self.coef

    def dF(self, z):
        """Complex derivative ``F'``; the gradient is ``(Re F', -Im F')``."""
        _, D = self.basis.matrices(z)
        return D @ self.coef

    def value(self, z):
        z = np.asarray(z, dtype=complex)
        return self.F(z).real.reshape(z.shape)

    def gradient_complex(self, z):
        """Gradient as the complex number ``u_x + i u_y``."""
        z = np.asarray(z, dtype=complex)
        return np.conj(self.dF(z)).reshape(z.shape)

    # per-circle quantities in the circle's own angle parameter
    def trace_samples(self, k: int, phi, kind: str = "value", metric: str = "plane"):
        c = self.domain.circles[k]
        z = c.point(phi)
        if kind == "value":
            return self.value(z)
        dF = self.dF(z)
        if kind == "normal":
            out = (dF * c.normal(z)).real
        elif kind == "tangential":
            dz = c.dpoint(phi)
            out = (dF * dz).real / np.abs(dz)
        elif kind == "dphi":
            return (dF * c.dpoint(phi)).real
        elif kind == "flux":
            return (dF * c.normal(z)).real * np.abs(c.dpoint(phi))
        else:
            raise ValueError(f"unknown trace kind {kind!r}")
        if metric == "sphere":
            out = out / sphere_weight(z)
        elif metric != "plane":
            raise ValueError("metric must be 'plane' or 'sphere'")
        return out

    def to_dict(self) -> dict:
        return {
            "columns": [list(map(lambda v: v if not isinstance(v, np.generic) else v.item(), col))
                        for col in self.basis.cols],
            "coefficients": self.coef.tolist(),
            "order": self.basis.order,
            "residual": self.residual,
            "tol": self.tol,
            "circles": self.domain.circle_list(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def solve_mixed(domain: CircleDomain, bc: BoundaryCondition, basis: BasisSpec = BasisSpec(),
                tol: float = DEFAULT_TOL, check: bool = True, symmetry=None) -> SeriesSolution:
    """Least-squares solve of the mixed problem described by ``bc``.

    Neumann data is the outward plane normal derivative.  The reported residual
    is the max defect at off-grid boundary points (Neumann defects weighted by
    the circle radius), relative to ``max(1, |data|)``.
    """
    if len(bc) != len(domain):
        raise ValueError("bc must carry exactly one condition per circle")
    solver = get_solver(domain, bc.kinds(), basis, symmetry)
    data = [c.value if isinstance(c, Dirichlet) else c.flux for c in bc.conditions]
    x, res = solver.solve_coefficients(data)
    sol = solver.solution(x[:, 0], res[0], tol)
    if check and not res[0] <= tol:
        raise ResidualAboveTolerance(res[0], tol)
    return sol


def evaluate(sol: SeriesSolution, points):
    z = sol._check(points)
    return sol.value(z)


def evaluate_gradient(sol: SeriesSolution, points) -> np.ndarray:
    """Gradient ``(u_x, u_y)`` at ``points``; shape ``points.shape + (2,)``."""
    z = sol._check(points)
    g = sol.gradient_complex(z)
    return np.stack([g.real, g.imag], axis=-1)


# ---------------------------------------------------------------------------
# traces


def _fourier_from_samples(samples, M):
    """Real Fourier coefficients [a0, a1, b1, ..., aM, bM] of equispaced samples."""
    K = samples.shape[-1]
    c = np.fft.rfft(samples, axis=-1) / K
    out = np.zeros(samples.shape[:-1] + (2 * M + 1,))
    out[..., 0] = c[..., 0].real
    for n in range(1, M + 1):
        cn = c[..., n] if n < K / 2 else c[..., n] / 2
        out[..., 2 * n - 1] = 2 * cn.real
        out[..., 2 * n] = -2 * cn.imag
    return out


def fourier_eval(coeffs, phi):
    coeffs = np.asarray(coeffs)
    phi = np.asarray(phi, dtype=float)
    M = (coeffs.shape[-1] - 1) // 2
    out = np.full(phi.shape, coeffs[0], dtype=float)
    for n in range(1, M + 1):
        out = out + coeffs[2 * n - 1] * np.cos(n * phi) + coeffs[2 * n] * np.sin(n * phi)
    return out


@dataclass
class BoundaryTrace:
    """Per-circle real Fourier coefficients of a boundary function of angle."""

    circles: tuple
    coeffs: np.ndarray
    metric: str = "plane"
    sector: str | None = None

    @property
    def order(self) -> int:
        return (self.coeffs.shape[-1] - 1) // 2

    def __call__(self, k_local: int, phi):
        return fourier_eval(self.coeffs[k_local], phi)

    def samples(self, K: int) -> np.ndarray:
        phi = np.arange(K) * 2 * np.pi / K
        return np.array([fourier_eval(c, phi) for c in self.coeffs])

    def to_csv(self, path, K: int = 256) -> None:
        phi = np.arange(K) * 2 * np.pi / K
        vals = self.samples(K)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["circle", "angle", "value"])
            for k, row in zip(self.circles, vals):
                for a, v in zip(phi, row):
                    w.writerow([k, f"{a:.17g}", f"{v:.17g}"])


def _trace(sol, circles, kind, metric, M):
    if circles is None:
        circles = range(len(sol.domain))
    if isinstance(circles, int):
        circles = [circles]
    circles = tuple(circles)
    M = sol.basis.order if M is None else M
    K = max(4 * M, 64)
    phi = np.arange(K) * 2 * np.pi / K
    S = np.array([sol.trace_samples(k, phi, kind, metric) for k in circles])
    return BoundaryTrace(circles, _fourier_from_samples(S, M), metric)


def boundary_values(sol, circles=None, M=None) -> BoundaryTrace:
    return _trace(sol, circles, "value", "plane", M)


def normal_derivative(sol, circles=None, metric: str = "plane", M=None) -> BoundaryTrace:
    """Outward normal derivative on the given circles (all by default)."""
    return _trace(sol, circles, "normal", metric, M)


def tangential_derivative(sol, circles=None, metric: str = "plane", M=None) -> BoundaryTrace:
    """Arclength derivative along the circle parametrization direction."""
    return _trace(sol, circles, "tangential", metric, M)


def quad_points(order: int) -> np.ndarray:
    K = max(8 * order, 128)
    return np.arange(K) * 2 * np.pi / K


def dirichlet_energy(sol: SeriesSolution) -> float:
    """Boundary form of the Dirichlet energy, sum over circles of the integral of u d_n u ds."""
    phi = quad_points(sol.basis.order)
    total = 0.0
    for k in range(len(sol.domain)):
        u = sol.trace_samples(k, phi, "value")
        q = sol.trace_samples(k, phi, "flux")
        total += np.mean(u * q) * 2 * np.pi
    return float(total)


def area_energy(sol: SeriesSolution, n_radial: int = 200, n_angle: int = 256) -> float:
    """Area integral of |grad u|^2 for disk/annulus-like domains (test oracle).

    Only valid when every inner circle is concentric with the outer one.
    """
    o = sol.domain.outer
    inner = [c for c in sol.domain.inners]
    if any(abs(c.center - o.center) > 1e-14 for c in inner) or len(inner) > 1:
        raise ValueError("area quadrature needs a disk or a concentric annulus")
    r0 = inner[0].radius if inner else 0.0
    x, wx = np.polynomial.legendre.leggauss(n_radial)
    r = r0 + (o.radius - r0) * (x + 1) / 2
    wr = wx * (o.radius - r0) / 2
    th = np.arange(n_angle) * 2 * np.pi / n_angle
    z = o.center + r[:, None] * np.exp(1j * th[None, :])
    g = np.abs(sol.gradient_complex(z)) ** 2
    return float(np.sum(g * r[:, None] * wr[:, None]) * 2 * np.pi / n_angle)


def solve_refined(domain: CircleDomain, bc: BoundaryCondition, basis: BasisSpec = BasisSpec(),
                  target: float = 1e-11, max_order: int = 128, tol: float = DEFAULT_TOL,
                  step: int = 16, symmetry=None) -> SeriesSolution:
    """``solve_mixed`` with the basis order raised until the residual meets ``target``.

    Raises only if the final residual is above ``tol``.
    """
    order = basis.order
    while True:
        sol = solve_mixed(domain, bc, BasisSpec(order, basis.oversampling), tol, check=False,
                          symmetry=symmetry)
        if sol.residual <= target or order + step > max_order:
            break
        order += step
    if not sol.residual <= tol:
        raise ResidualAboveTolerance(sol.residual, tol)
    return sol
