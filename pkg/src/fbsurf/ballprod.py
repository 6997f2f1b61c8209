"""Free boundary minimal surfaces in a product of three balls.

For a moduli point ``p`` and each group ``i`` we minimize the Dirichlet energy
of maps ``U: M_p -> R^3`` that are equivariant (``U o rho_k = rho_k o U``),
have ``|U| = 1`` on Gamma_i and are free (Neumann) on the other circles.
Only traces on Gamma_i matter: the energy of the harmonic extension is the
DtN quadratic form.  Traces are represented by their values on an equispaced
grid of ``K = 2M`` angles per circle; the trigonometric interpolant of the
samples has modes ``<= M`` and the grid is invariant under the reflections,
so equivariance is a linear condition on the samples and the unit-norm
constraint makes the feasible set a product of spheres.

``Ê(p) = sum_i a_i^2 E(U_i)`` is the maximal normalized first eigenvalue over
symmetric boundary metrics of the conformal class; its maximum over moduli
space gives a surface in ``B^3(a_1) x B^3(a_2) x B^3(a_3)``.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import (BoundaryAttracted, NoConvergence, NotMaximal, RankCollapse,
                     ValidationError)
from .harmonic import BasisSpec, SeriesSolution
from .moduli import ModuliPoint, build_planar_model, sphere_weight, validate
from .prism import MARGIN, PrismConfig, project_to_moduli
from .steklov import (DEFAULT_MODES, BoundaryMetric, DtNOperator, dtn_matrix, odd_sector,
                      orthonormal_samples, sn_eigen, steklov_circles)
from .surface import SurfaceSample, boundary_vertex_sets, map_sample

GRAD_STOP = 1e-8
STATIONARITY_TOL = 1e-6
MAX_ITER = 20000
ARMIJO = 1e-4
N_STARTS = 8
RANK_TOL = 1e-6
NEWTON_SWITCH = 1e-3
NEWTON_EVERY = 50
NEWTON_STEPS = 8


# ---------------------------------------------------------------------------
# sample grid on Gamma_i


class TraceGrid:
    """Equispaced samples on the two circles of Gamma_i and the reflection action on them."""

    def __init__(self, model, i: int, M: int = DEFAULT_MODES):
        if M % 2:
            raise ValidationError("trace modes M must be even (grid size 2M divisible by 4)")
        self.model = model
        self.i = i
        self.circles = steklov_circles(model, i)
        self.M = M
        self.K = K = 2 * M
        self.phi = np.arange(K) * 2 * np.pi / K
        self.z = np.array([model.circles[k].point(self.phi) for k in self.circles])
        self.speed = np.array([np.abs(model.circles[k].dpoint(self.phi)) for k in self.circles]).ravel()
        self.weights = self.speed * (2 * np.pi / K)       # plane arclength quadrature
        E = orthonormal_samples(M, self.phi)
        # minimum-norm interpolation drops sin(M phi), which vanishes on the grid
        Winv = np.linalg.pinv(E)
        nb = 2 * M + 1
        self.W = np.zeros((len(self.circles) * nb, len(self.circles) * K))
        for a in range(len(self.circles)):
            self.W[a * nb:(a + 1) * nb, a * K:(a + 1) * K] = Winv
        self.perms = {axis: self._perm(axis) for axis in (1, 2, 3)}
        self._sym = None

    @property
    def n(self) -> int:
        return len(self.circles) * self.K

    def _perm(self, axis):
        rmap = self.model.reflection_map(axis)
        out = np.empty(self.n, dtype=int)
        for a, k in enumerate(self.circles):
            t, s1, s2 = rmap[k]
            b = self.circles.index(t)
            phi2 = np.arctan2(s2 * np.sin(self.phi), s1 * np.cos(self.phi))
            m2 = np.round(phi2 * self.K / (2 * np.pi)).astype(int) % self.K
            out[a * self.K:(a + 1) * self.K] = b * self.K + m2
        return out

    def reflect(self, V, axis):
        """(rho V o rho) on samples; V has shape (n, 3) or (n,) for scalars."""
        W = V[self.perms[axis]].copy()
        if W.ndim == 2:
            W[:, axis - 1] *= -1
        return W

    def symmetrize(self, V):
        for axis in (1, 2, 3):
            V = 0.5 * (V + self.reflect(V, axis))
        return V

    def symmetrizer(self) -> np.ndarray:
        """Matrix of ``symmetrize`` acting on row-major flattened (n, 3) arrays."""
        if self._sym is None:
            n = len(self.circles) * self.K
            E = np.eye(3 * n)
            self._sym = np.array([self.symmetrize(E[k].reshape(n, 3)).ravel() for k in range(3 * n)]).T
        return self._sym

    def equivariance_defect(self, V) -> float:
        return float(max(np.max(np.abs(V - self.reflect(V, a))) for a in (1, 2, 3)))

    def coeffs(self, v) -> np.ndarray:
        """Orthonormal trace coefficients of the interpolant of samples ``v``."""
        return self.W @ v

    def integrate(self, f) -> float:
        return float(np.sum(np.asarray(f) * self.weights))

    def circle_rows(self, f):
        return np.asarray(f).reshape(len(self.circles), self.K)


def _normalize(V):
    return V / np.linalg.norm(V, axis=1)[:, None]


def _retraction_step(V, g, t):
    """normalize(V - t g) - V for unit rows V and tangent g, as (D, a, b) with D = a V - b g."""
    q = t * t * np.sum(g * g, axis=1)
    s = np.sqrt(1.0 + q)
    a, b = -q / (s * (s + 1.0)), t / s
    return a[:, None] * V - b[:, None] * g, a, b


def _energy_change(Q, D, a, b, c, g2):
    """E(V + D) - E(V) with the first-order term split as 2QV = g + c V.

    Writing it this way avoids the round-off leak of the large normal part of
    the gradient into the tiny tangential one.
    """
    return float(np.sum(a * c - b * g2) + np.sum(D * (Q @ D)))


def _tangent(V, G):
    return G - np.sum(G * V, axis=1)[:, None] * V


def _tangent_frames(V):
    """Orthonormal tangent frames (n, 3, 2) of the unit rows of V."""
    e = np.eye(3)[np.argmin(np.abs(V), axis=1)]
    b1 = _normalize(e - np.sum(e * V, axis=1)[:, None] * V)
    b2 = np.cross(V, b1)
    return np.stack([b1, b2], axis=2)


def _restricted_hessian(Q, V, grid):
    """Tangent basis, gradient and eigenpairs of the Hessian on equivariant tangent directions."""
    n = V.shape[0]
    G = 2 * Q @ V
    c = np.sum(G * V, axis=1)
    F = _tangent_frames(V)
    B = np.zeros((3 * n, 2 * n))
    for k in range(n):
        B[3 * k:3 * k + 3, 2 * k:2 * k + 2] = F[k]
    grad = B.T @ G.ravel()
    wp, Z = np.linalg.eigh(B.T @ grid.symmetrizer() @ B)
    Z = Z[:, wp > 0.5]
    H = Z.T @ (B.T @ np.kron(2 * Q, np.eye(3)) @ B - np.diag(np.repeat(c, 2))) @ Z
    w, Y = np.linalg.eigh(0.5 * (H + H.T))
    return B, grad, w, Z @ Y


def _move(V, B, x, grid):
    return _normalize(grid.symmetrize(_normalize(V + (B @ x).reshape(V.shape))))


def newton_polish(Q, V, grid, gtol: float = GRAD_STOP, steps: int = NEWTON_STEPS):
    """Riemannian Newton iterations with the exact Hessian on the product of spheres.

    Only equivariant tangent directions are used.  Near-null Hessian directions
    (the rotations acting on a rank-3 map) are skipped by a pseudo-inverse, and
    each step is backtracked until the energy drops, or, once energy changes
    are at round-off level, until the gradient drops.  Returns ``(V, gn)``
    after any progress (``gn`` may still exceed ``gtol``) and ``None`` when no
    step was taken, e.g. at a clearly negative eigenvalue.
    """
    scale = grid.K / (2 * np.pi)
    moved = False
    E = float(np.sum(V * (Q @ V)))
    gn = math.inf
    for _ in range(steps):
        B, grad, w, Y = _restricted_hessian(Q, V, grid)
        gn = math.sqrt(float(grad @ grad) * scale)
        if gn < gtol:
            return V, gn
        wmax = max(np.max(np.abs(w)), 1e-300)
        if w.min() < -1e-8 * wmax:
            break
        keep = w > 1e-10 * wmax
        x = -Y[:, keep] @ ((Y[:, keep].T @ grad) / w[keep])
        tol = 1e-13 * max(abs(E), 1.0)
        for t in 2.0 ** -np.arange(0, 16):
            Vn = _move(V, B, t * x, grid)
            En = float(np.sum(Vn * (Q @ Vn)))
            if En < E - tol:
                break
            if En <= E + tol:
                gnew = math.sqrt(float(np.sum(_tangent(Vn, 2 * Q @ Vn) ** 2)) * scale)
                if gnew < gn:
                    break
        else:
            break
        V, E, moved = Vn, En, True
    if not moved:
        return None
    return V, math.sqrt(float(np.sum(_tangent(V, 2 * Q @ V) ** 2)) * scale)


def curvature_escape(Q, V, grid):
    """Step along the most negative equivariant Hessian direction, or ``None``.

    Gradient descent leaves a near-saddle only at the rate of its small negative
    curvature; a direct line search along the eigenvector skips that phase.
    """
    B, grad, w, Y = _restricted_hessian(Q, V, grid)
    if w[0] >= -1e-8 * max(np.max(np.abs(w)), 1e-300):
        return None
    d = Y[:, 0] * (-1.0 if Y[:, 0] @ grad > 0 else 1.0)
    d *= math.sqrt(V.shape[0])
    E0 = float(np.sum(V * (Q @ V)))
    best, Ebest = None, E0
    for t in 2.0 ** -np.arange(0, 12):
        Vn = _move(V, B, t * d, grid)
        En = float(np.sum(Vn * (Q @ Vn)))
        if En < Ebest:
            best, Ebest = Vn, En
    return best


# ---------------------------------------------------------------------------
# constrained minimization


@dataclass
class DescentResult:
    V: np.ndarray
    energy: float
    grad_norm: float
    iterations: int
    history: list


def riemannian_descent(Q: np.ndarray, V0: np.ndarray, grid: TraceGrid, gtol: float = GRAD_STOP,
                       max_iter: int = MAX_ITER) -> DescentResult:
    """Minimize trace(V^T Q V) over rows of V on the unit sphere.

    Projected gradient with retraction by row normalization, Barzilai-Borwein
    trial steps and monotone Armijo backtracking.  Once the gradient is small
    a Newton polish is attempted periodically, with a negative-curvature step
    when the polish finds the iterate near a saddle.  The gradient norm is the
    L2(dphi) norm of the pointwise tangential gradient.
    """
    V = grid.symmetrize(_normalize(V0))
    V = _normalize(V)
    scale = grid.K / (2 * np.pi)

    def f(V):
        return float(np.sum(V * (Q @ V)))

    E = f(V)
    g = _tangent(V, 2 * Q @ V)
    gn = math.sqrt(np.sum(g * g) * scale)
    history = [E]
    alpha = 1.0 / max(np.linalg.norm(Q, 2), 1e-300)
    it = 0
    while gn >= gtol:
        if it and it % 500 == 0:
            E = f(V)   # resynchronize the accumulated energy
        if it >= max_iter:
            raise NoConvergence(it, f"projected gradient norm {gn:.3e}")
        if gn < NEWTON_SWITCH and it % NEWTON_EVERY == 0:
            polished = newton_polish(Q, V, grid, gtol)
            if polished is not None and polished[1] < gtol:
                V, gn = polished
                E = f(V)
                history.append(E)
                return DescentResult(V, E, gn, it, history)
            moved = polished[0] if polished is not None else curvature_escape(Q, V, grid)
            if moved is not None:
                V, E = moved, f(moved)
                history.append(E)
                g = _tangent(V, 2 * Q @ V)
                gn = math.sqrt(np.sum(g * g) * scale)
                alpha = 1.0 / max(np.linalg.norm(Q, 2), 1e-300)
                if gn < gtol:
                    return DescentResult(V, E, gn, it, history)
        gg = float(np.sum(g * g))
        g2 = np.sum(g * g, axis=1)
        c = np.sum(2 * (Q @ V) * V, axis=1)
        t = alpha
        while True:
            D, a, b = _retraction_step(V, g, t)
            dE = _energy_change(Q, D, a, b, c, g2)
            if dE <= -ARMIJO * t * gg:
                break
            t *= 0.5
            if t < 1e-16:
                # no further decrease is representable; the point is stationary to round-off
                return DescentResult(V, E, gn, it, history)
        Vn = _normalize(grid.symmetrize(V + D))
        En = E + dE
        gnew = _tangent(Vn, 2 * Q @ Vn)
        s, y = Vn - V, gnew - g
        sy = float(np.sum(s * y))
        alpha = float(np.sum(s * s)) / sy if sy > 0 else 10 * t
        alpha = min(max(alpha, 1e-10), 1e10)
        V, E, g = Vn, En, gnew
        gn = math.sqrt(np.sum(g * g) * scale)
        history.append(E)
        it += 1
    return DescentResult(V, E, gn, it, history)


@dataclass
class ConstrainedMap:
    """Energy-minimizing equivariant map with |U| = 1 on Gamma_i."""

    p: ModuliPoint
    i: int
    grid: TraceGrid = field(repr=False)
    dtn: DtNOperator = field(repr=False)
    V: np.ndarray = field(repr=False)          # samples (n, 3)
    coeffs: np.ndarray = field(repr=False)     # orthonormal trace coefficients (3, dim)
    energy: float
    lam: np.ndarray = field(repr=False)        # multiplier U . nu(U), plane density
    stationarity: float
    constraint: float
    equivariance: float
    rank: int
    grad_norm: float
    iterations: int
    seed_energy: float
    start_energies: list
    history: list = field(repr=False, default_factory=list)
    eigen_check: dict = field(default_factory=dict)

    def component(self, j: int) -> SeriesSolution:
        """Harmonic extension of the ``j``-th component (1-based)."""
        return self.dtn.extension(self.coeffs[j - 1])

    def metric(self) -> BoundaryMetric:
        return BoundaryMetric(self.grid.model, self.grid.circles, self.grid.circle_rows(self.lam),
                              symmetric=True, name=f"lambda_U{self.i}")

    @property
    def lambda_length(self) -> float:
        """Integral of lambda over Gamma_i; equals E(U) since |U| = 1 there."""
        return self.grid.integrate(self.lam)

    @property
    def energy_spread(self) -> float:
        return float(max(self.start_energies) - min(self.start_energies))

    def to_dict(self) -> dict:
        return {
            "p": list(self.p.r), "i": self.i, "energy": self.energy,
            "lambda_length": self.lambda_length, "stationarity": self.stationarity,
            "constraint": self.constraint, "equivariance": self.equivariance, "rank": self.rank,
            "grad_norm": self.grad_norm, "iterations": self.iterations,
            "seed_energy": self.seed_energy, "start_energies": list(self.start_energies),
            "eigen_check": self.eigen_check,
        }


def seed_samples(grid: TraceGrid) -> np.ndarray:
    """The odd-potential trace: +e_i on gamma_1^(i), -e_i on gamma_2^(i)."""
    V = np.zeros((grid.n, 3))
    for a, k in enumerate(grid.circles):
        V[a * grid.K:(a + 1) * grid.K, grid.i - 1] = 1.0 if grid.model.circles[k].member == 1 else -1.0
    return V


def random_samples(grid: TraceGrid, rng) -> np.ndarray:
    V = grid.symmetrize(rng.standard_normal((grid.n, 3)))
    return _normalize(V)


def _multiplier(grid, dtn, coeffs, V):
    """nu(U) at the samples (plane metric) from the harmonic extensions."""
    nu = np.zeros_like(V)
    for j in range(3):
        sol = dtn.extension(coeffs[j])
        nu[:, j] = np.concatenate([sol.trace_samples(k, grid.phi, "normal") for k in grid.circles])
    return nu


def _eigen_check(model, i, dtn, metric, coeffs, active, M):
    """Eigenvalue-1 test of the components for the metric lambda."""
    B = metric.mass_matrix(M)
    A = dtn.full_matrix
    out = {"sector_sigma": {}, "equation_residual": 0.0}
    worst = 0.0
    for j in active:
        x = coeffs[j - 1]
        r = float(np.linalg.norm(A @ x - B @ x) / np.linalg.norm(B @ x))
        s = sn_eigen(model, i, metric, odd_sector(j), 1, M, dtn=dtn)[0].sigma
        out["sector_sigma"][str(odd_sector(j))] = s
        out["equation_residual"] = max(out["equation_residual"], r)
        worst = max(worst, r, abs(s - 1.0))
    out["sigma_full"] = sn_eigen(model, i, metric, "full", 1, M, dtn=dtn)[0].sigma
    out["residual"] = worst
    return out


def minimize_constrained(p: ModuliPoint, i: int, M: int = DEFAULT_MODES, starts: int = N_STARTS,
                         seed: int = 0, basis: BasisSpec = BasisSpec(), model=None,
                         gtol: float = GRAD_STOP, eigen_check: bool = True) -> ConstrainedMap:
    """Minimize E(U) over equivariant maps with |U| = 1 on the samples of Gamma_i.

    Runs the odd-potential seed plus ``starts`` random equivariant starts and
    keeps the lowest energy (ties broken by lexicographic sample order).
    """
    validate(p)
    model = model or build_planar_model(p)
    dtn = dtn_matrix(model, i, "full", M, basis)
    grid = TraceGrid(model, i, M)
    Q = grid.W.T @ dtn.full_matrix @ grid.W
    Q = 0.5 * (Q + Q.T)
    rng = np.random.default_rng(seed)
    inits = [seed_samples(grid)] + [random_samples(grid, rng) for _ in range(starts)]
    runs = [riemannian_descent(Q, V0, grid, gtol) for V0 in inits]
    seed_energy = float(np.sum(inits[0] * (Q @ inits[0])))
    best = min(runs, key=lambda r: (round(r.energy, 12), tuple(np.round(r.V.ravel(), 12))))
    V = best.V
    coeffs = np.array([grid.coeffs(V[:, j]) for j in range(3)])
    nu = _multiplier(grid, dtn, coeffs, V)
    lam = np.sum(V * nu, axis=1)
    r = nu - lam[:, None] * V
    stationarity = float(np.max(np.linalg.norm(r, axis=1)) / max(1.0, np.max(np.abs(nu))))
    constraint = float(np.max(np.abs(np.sum(V * V, axis=1) - 1.0)))
    norms = np.linalg.norm(V, axis=0)
    active = [j + 1 for j in range(3) if norms[j] > RANK_TOL * norms.max()]
    rank = len(active)
    if rank < 3:
        warnings.warn(f"U_{i} at {p.r} has effective rank {rank}", RankCollapse, stacklevel=2)
    cm = ConstrainedMap(p, i, grid, dtn, V, coeffs, best.energy, lam, stationarity, constraint,
                        grid.equivariance_defect(V), rank, best.grad_norm, best.iterations,
                        seed_energy, [r.energy for r in runs], best.history)
    if eigen_check:
        if lam.min() <= 0:
            cm.eigen_check = {"residual": math.inf, "lambda_min": float(lam.min())}
        else:
            cm.eigen_check = _eigen_check(model, i, dtn, cm.metric(), coeffs, active, M)
    return cm


# ---------------------------------------------------------------------------
# conformal-class maximum


def random_symmetric_metric(grid: TraceGrid, rng, modes: int = 4, amplitude: float = 0.5) -> BoundaryMetric:
    """Positive metric on Gamma_i invariant under the reflections (density in the round metric)."""
    h = np.zeros(grid.n)
    for a in range(len(grid.circles)):
        row = np.zeros(grid.K)
        for n in range(1, modes + 1):
            c, s = rng.standard_normal(2) * amplitude / n
            row += c * np.cos(n * grid.phi) + s * np.sin(n * grid.phi)
        h[a * grid.K:(a + 1) * grid.K] = row
    h = grid.symmetrize(h)
    dens = np.exp(h) * sphere_weight(grid.z.ravel())
    return BoundaryMetric(grid.model, grid.circles, grid.circle_rows(dens), symmetric=True,
                          name="random")


def normalized_sigma(model, i, metric, dtn, M) -> float:
    """L_g(Gamma_i) sigma_1(g) over the whole trace space."""
    return metric.length() * sn_eigen(model, i, metric, "full", 1, M, dtn=dtn)[0].sigma


@dataclass
class ConformalMax:
    p: ModuliPoint
    cfg: PrismConfig
    maps: dict = field(repr=False)
    E_hat: float = 0.0
    certificate: dict = field(default_factory=dict)

    @property
    def min_slack(self) -> float:
        vals = [s for c in self.certificate.values() for s in c["slack"]]
        return float(min(vals)) if vals else math.inf

    def to_dict(self) -> dict:
        return {"p": list(self.p.r), "a": list(self.cfg.a), "E_hat": self.E_hat,
                "terms": {i: self.cfg.a[i - 1] ** 2 * m.energy for i, m in self.maps.items()},
                "certificate": self.certificate,
                "maps": {i: m.to_dict() for i, m in self.maps.items()}}


def conformal_max_energy(p: ModuliPoint, cfg: PrismConfig = PrismConfig(), M: int = DEFAULT_MODES,
                         n_metrics: int = 10, seed: int = 0, basis: BasisSpec = BasisSpec(),
                         starts: int = N_STARTS, eigen_check: bool = True) -> ConformalMax:
    """Ê(p) = sum a_i^2 E(U_i) with the inequality L_g sigma_1(g) <= int lambda for random metrics."""
    validate(p)
    model = build_planar_model(p)
    rng = np.random.default_rng(seed)
    maps, cert = {}, {}
    for i in (1, 2, 3):
        cm = minimize_constrained(p, i, M, starts, seed, basis, model, eigen_check=eigen_check)
        maps[i] = cm
        bound = cm.lambda_length
        vals = [normalized_sigma(model, i, random_symmetric_metric(cm.grid, rng), cm.dtn, M)
                for _ in range(n_metrics)]
        cert[i] = {"bound": bound, "values": vals, "slack": [bound - v for v in vals]}
    E_hat = float(sum(cfg.a[i - 1] ** 2 * maps[i].energy for i in (1, 2, 3)))
    return ConformalMax(p, cfg, maps, E_hat, cert)


def conformal_max_value(p: ModuliPoint, cfg: PrismConfig = PrismConfig(), M: int = DEFAULT_MODES,
                        seed: int = 0, basis: BasisSpec = BasisSpec(), starts: int = N_STARTS) -> float:
    """Ê(p) without certificates."""
    validate(p)
    model = build_planar_model(p)
    return float(sum(cfg.a[i - 1] ** 2 *
                     minimize_constrained(p, i, M, starts, seed, basis, model, eigen_check=False).energy
                     for i in (1, 2, 3)))


def stability_check(cm: ConstrainedMap, n: int = 10, seed: int = 0) -> float:
    """min over random equivariant V with V.U = 0 on Gamma_i of
    (int |grad V|^2 - int |V|^2 lambda) / int |V|^2 lambda."""
    grid = cm.grid
    Q = grid.W.T @ cm.dtn.full_matrix @ grid.W
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(n):
        Vt = grid.symmetrize(rng.standard_normal((grid.n, 3)))
        Vt = _tangent(cm.V, Vt)
        rhs = grid.integrate(np.sum(Vt * Vt, axis=1) * cm.lam)
        lhs = float(np.sum(Vt * (Q @ Vt)))
        worst = min(worst, (lhs - rhs) / rhs)
    return worst


# ---------------------------------------------------------------------------
# maximization over moduli space


@dataclass
class ModuliMax:
    p: ModuliPoint
    E_hat: float
    diameter: float
    margin: float
    evaluations: int
    grid_values: list = field(default_factory=list, repr=False)
    log: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"p": list(self.p.r), "E_hat": self.E_hat, "simplex_diameter": self.diameter,
                "boundary_margin": self.margin, "evaluations": self.evaluations}


def default_grid(n: int = 3):
    vals = np.linspace(0.15, 0.65, n)
    pts = []
    for r in itertools.product(vals, repeat=3):
        if r[0] + r[1] < math.pi / 2 - 0.05 and r[0] + r[2] < math.pi / 2 - 0.05 \
                and r[1] + r[2] < math.pi / 2 - 0.05:
            pts.append(tuple(float(x) for x in r))
    return pts


def maximize_over_moduli(cfg: PrismConfig = PrismConfig(), grid=None, M: int = DEFAULT_MODES,
                         xatol: float = 1e-6, step: float = 0.05, max_eval: int = 600,
                         seed: int = 0, starts: int = N_STARTS, log=None) -> ModuliMax:
    """Nelder-Mead maximization of Ê from the best grid point, iterates projected into M."""
    log = [] if log is None else log
    cache = {}

    def value(x):
        y = project_to_moduli(np.asarray(x, float))
        key = tuple(np.round(y, 14))
        if key not in cache:
            v = conformal_max_value(ModuliPoint(*y), cfg, M, seed, starts=starts)
            cache[key] = v
            log.append({"p": list(map(float, y)), "E_hat": v})
        return cache[key]

    grid = default_grid() if grid is None else [tuple(g) for g in grid]
    gvals = [(value(g), g) for g in grid]
    x0 = np.array(max(gvals)[1], float)
    simplex = [x0] + [x0 + step * e for e in np.eye(3)]
    res = optimize.minimize(lambda x: -value(x), x0, method="Nelder-Mead",
                            options={"initial_simplex": np.array(simplex), "xatol": xatol,
                                     "fatol": 1e-13, "maxfev": max_eval})
    sim = res.final_simplex[0]
    diam = float(max(np.linalg.norm(a - b) for a in sim for b in sim))
    x = project_to_moduli(res.x)
    p = ModuliPoint(*x)
    if not diam < 10 * xatol:
        raise NoConvergence(res.nit, f"simplex diameter {diam:.3e}")
    margin = p.boundary_margin()
    if margin < MARGIN:
        raise BoundaryAttracted(f"maximizer {p.r} is within {margin:.2e} of the boundary")
    return ModuliMax(p, value(x), diam, margin, len(cache), gvals, log)


def check_maximal(p: ModuliPoint, cfg: PrismConfig = PrismConfig(), M: int = DEFAULT_MODES,
                  h: float = 1e-3, seed: int = 0) -> float:
    """Largest increase of Ê over coordinate neighbours at distance h (<= 0 at a maximum)."""
    E0 = conformal_max_value(p, cfg, M, seed)
    worst = -math.inf
    for k in range(3):
        for s in (1, -1):
            r = list(p.r)
            r[k] += s * h
            q = ModuliPoint(*r)
            if q.boundary_margin() <= 0:
                continue
            worst = max(worst, conformal_max_value(q, cfg, M, seed) - E0)
    return worst


# ---------------------------------------------------------------------------
# product surface


@dataclass
class ProductSurface:
    sample: SurfaceSample
    energies: dict
    ranks: dict
    residuals: dict

    @property
    def factors_through_r3(self) -> bool:
        return all(r == 1 for r in self.ranks.values())

    def to_ply(self, path) -> None:
        self.sample.to_ply(path)

    def to_dict(self) -> dict:
        return {"energies": self.energies, "ranks": self.ranks,
                "factors_through_r3": self.factors_through_r3, "residuals": self.residuals}


def assemble_product_surface(p: ModuliPoint, cfg: PrismConfig = PrismConfig(), h: float = 0.04,
                             M: int = DEFAULT_MODES, seed: int = 0, maps: dict | None = None,
                             gate: bool = True, gate_tol: float = 1e-9) -> ProductSurface:
    """Mesh the nine-component map (a_1 U_1, a_2 U_2, a_3 U_3) and measure residuals.

    With ``gate`` the point must not be improvable by coordinate steps of 1e-3
    (``NotMaximal`` otherwise).
    """
    validate(p)
    if gate:
        inc = check_maximal(p, cfg, M, seed=seed)
        if inc > gate_tol * max(1.0, conformal_max_value(p, cfg, M, seed)):
            raise NotMaximal(f"Ê increases by {inc:.3e} at a neighbouring point")
    model = build_planar_model(p)
    if maps is None:
        maps = {i: minimize_constrained(p, i, M, seed=seed, model=model, eigen_check=False)
                for i in (1, 2, 3)}
    comps = []
    for i in (1, 2, 3):
        for j in (1, 2, 3):
            sol = maps[i].component(j)
            sol = SeriesSolution(model, sol.basis, sol.coef * cfg.a[i - 1], sol.residual, sol.tol)
            comps.append((sol, odd_sector(j).signs))
    ms = map_sample(model, comps, h)
    hopf = ms.hopf()
    sphere = 0.0
    for k, idx in boundary_vertex_sets(model, ms.z).items():
        i = model.circles[k].group
        vals = ms.values[idx][:, 3 * (i - 1):3 * i]
        sphere = max(sphere, float(np.max(np.abs(np.linalg.norm(vals, axis=1) - cfg.a[i - 1]))))
    direct = np.array([c.value(ms.plane) for c, _ in comps]).T
    res = {
        "conformality": float(np.max(hopf)),
        "sphere_constraint": sphere,
        "sample_constraint": max(m.constraint for m in maps.values()),
        "stationarity": max(m.stationarity for m in maps.values()),
        "g_symmetry": float(np.max(np.abs(direct - ms.points))),
        "genus": ms.topology.genus,
        "boundary_loops": ms.topology.boundary_loops,
    }
    attrs = {"conformal_factor": ms.full(ms.energy_density()), "hopf_residual": ms.full(hopf)}
    sample = SurfaceSample(ms.plane, ms.points, ms.triangles, attrs, ms.topology, res)
    energies = {i: maps[i].energy for i in (1, 2, 3)}
    ranks = {i: maps[i].rank for i in (1, 2, 3)}
    return ProductSurface(sample, energies, ranks, res)


def write_log(path, log) -> None:
    with open(path, "w") as fh:
        for row in log:
            fh.write(json.dumps(row) + "\n")


__all__ = [
    "TraceGrid", "riemannian_descent", "ConstrainedMap", "minimize_constrained",
    "seed_samples", "random_samples", "random_symmetric_metric", "normalized_sigma", "ConformalMax",
    "conformal_max_energy", "conformal_max_value", "stability_check", "ModuliMax",
    "maximize_over_moduli", "check_maximal", "ProductSurface", "assemble_product_surface",
]
