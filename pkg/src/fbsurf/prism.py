"""Free boundary minimal surfaces in a rectangular prism.

For a moduli point ``p`` and half-sides ``a`` let ``u_i`` be harmonic with
``u_i = a_i`` on gamma_1^(i), ``-a_i`` on gamma_2^(i) and Neumann elsewhere.
The extremal odd metric on Gamma_i is ``lambda_i = nu u_i`` (taken with the
sign that makes it positive), ``L_i`` its length and

    E(p) = sum_i a_i L_i = sum_i Dirichlet energy of u_i.

The gradient of ``E`` over moduli space is a boundary integral of the stress
energy tensor; a critical point gives a conformal harmonic map
``u = (u_1, u_2, u_3)`` meeting the prism faces orthogonally.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import (DegenerateMesh, LeftModuliSpace, NoConvergence, NonPositiveMetric,
                     NotCritical, PeriodDefect, ValidationError)
from .harmonic import (BasisSpec, BoundaryCondition, Dirichlet, SeriesSolution, solve_mixed,
                       solve_refined)
from .moduli import ModuliPoint, build_planar_model, inverse_stereo, stereo, validate
from .steklov import (BoundaryMetric, fit_power, odd_sector, sector_spectrum)
from .surface import SurfaceSample, boundary_loop_labels, boundary_vertex_sets, map_sample

R0 = math.pi / 8
PRISM_TARGET = 1e-11
PRISM_MAX_ORDER = 192
EPS_MIN = 0.01
HESS_STEP = 1e-4
GRAD_TOL = 1e-6
MARGIN = 1e-3


@dataclass(frozen=True)
class PrismConfig:
    a1: float = 1.0
    a2: float = 1.0
    a3: float = 1.0

    def __post_init__(self):
        for k, v in enumerate(self.a, start=1):
            if not (v > 0 and math.isfinite(v)):
                raise ValidationError(f"prism half-side a{k} must be positive, got {v!r}")

    @property
    def a(self) -> tuple[float, float, float]:
        return (float(self.a1), float(self.a2), float(self.a3))

    def permuted(self, perm) -> "PrismConfig":
        return PrismConfig(*[self.a[j - 1] for j in perm])

    def c0(self) -> float:
        """Upper bound (16 sqrt 2 / pi) sum a_i^2 for E on r_i <= pi/4."""
        return 16 * math.sqrt(2) / math.pi * sum(x * x for x in self.a)


# ---------------------------------------------------------------------------
# odd data


def _unit_potential(model, i, basis, target=PRISM_TARGET):
    """Harmonic u with u = +1 on gamma_1^(i), -1 on gamma_2^(i), Neumann elsewhere (cached)."""
    cache = model.__dict__.setdefault("_fbs_potentials", {})
    key = (i, basis.order, basis.oversampling, target)
    if key not in cache:
        k1, k2 = model.group_indices(i)
        bc = BoundaryCondition.from_map(model, {k1: Dirichlet(1.0), k2: Dirichlet(-1.0)})
        parity = tuple(-1.0 if a == i else 1.0 for a in (1, 2, 3))
        cache[key] = solve_refined(model, bc, basis, target, max_order=PRISM_MAX_ORDER,
                                   symmetry=parity)
    return cache[key]


def _scaled(sol: SeriesSolution, a: float) -> SeriesSolution:
    return SeriesSolution(sol.domain, sol.basis, sol.coef * a, sol.residual, sol.tol)


@dataclass
class OddData:
    p: ModuliPoint
    cfg: PrismConfig
    model: object = field(repr=False)
    u: dict = field(repr=False)
    lam: dict = field(repr=False)
    L: dict
    energies: dict

    @property
    def E(self) -> float:
        return float(sum(a * self.L[i] for i, a in zip((1, 2, 3), self.cfg.a)))

    def solution_order(self) -> int:
        return max(s.basis.order for s in self.u.values())


def _flux_on(sol, k, phi):
    return sol.trace_samples(k, phi, "flux")


def odd_data(p: ModuliPoint, cfg: PrismConfig = PrismConfig(), basis: BasisSpec = BasisSpec(),
             model=None) -> OddData:
    validate(p)
    model = model or build_planar_model(p)
    u, lam, L, En = {}, {}, {}, {}
    for i, a in zip((1, 2, 3), cfg.a):
        sol = _scaled(_unit_potential(model, i, basis), a)
        k1, k2 = model.group_indices(i)
        phi = trace_points(sol.basis.order)
        # plane-relative density of lambda_i ds_sphere is |nu_plane u|; u_i is a
        # maximum on gamma_1 and a minimum on gamma_2
        s1 = sol.trace_samples(k1, phi, "normal")
        s2 = -sol.trace_samples(k2, phi, "normal")
        smin = min(s1.min(), s2.min())
        if smin <= 0:
            raise NonPositiveMetric(f"lambda_{i} is not positive (min {smin:.3e})")
        lam[i] = BoundaryMetric(model, (k1, k2), np.array([s1, s2]), symmetric=True,
                                name=f"lambda{i}")
        # rho_i exchanges the two circles at equal angle and the flux per unit
        # angle is conformally invariant, so one circle gives the length
        L[i] = float(2 * np.mean(s1 * np.abs(model.circles[k1].dpoint(phi))) * 2 * np.pi)
        u[i] = sol
        # u_i = +-a_i on Gamma_i and is Neumann elsewhere, so D(u_i) = a_i L_i
        En[i] = a * L[i]
    return OddData(p, cfg, model, u, lam, L, En)


def trace_points(order: int) -> np.ndarray:
    K = max(4 * order, 128)
    return np.arange(K) * 2 * np.pi / K


def parity_defect(data: OddData, n: int = 64, seed: int = 0) -> float:
    """Max violation of u_i o rho_k = -/+ u_i at random interior points."""
    from .moduli import ReflectionAction
    rng = np.random.default_rng(seed)
    model = data.model
    o = model.outer
    z = []
    while len(z) < n:
        w = (rng.uniform(-1, 1) + 1j * rng.uniform(-1, 1)) * o.radius
        if model.contains(w, tol=-1e-3) and abs(w) > 1e-3:
            z.append(w)
    z = np.array(z)
    worst = 0.0
    for i in (1, 2, 3):
        for k in (1, 2, 3):
            s = -1.0 if k == i else 1.0
            zr = ReflectionAction(k)(z)
            worst = max(worst, float(np.max(np.abs(data.u[i].value(zr) - s * data.u[i].value(z)))))
    return worst


# ---------------------------------------------------------------------------
# energy and gradient


def energy(p: ModuliPoint, cfg: PrismConfig = PrismConfig(), basis: BasisSpec = BasisSpec(),
           check: bool = False) -> float:
    d = odd_data(p, cfg, basis)
    E = d.E
    if check:
        E2 = sum(d.energies.values())
        if abs(E - E2) > 1e-8 * max(1.0, abs(E)):
            raise ValueError(f"boundary-energy identity violated: {E} vs {E2}")
    return E


def gradient_from_data(d: OddData) -> np.ndarray:
    model = d.model
    phi = trace_points(d.solution_order())
    g = np.zeros(3)
    for i in (1, 2, 3):
        # both circles of Gamma_i contribute equally (rho_i symmetry)
        k = model.group_indices(i)[0]
        integrand = _flux_on(d.u[i], k, phi) ** 2
        for j in (1, 2, 3):
            if j != i:
                integrand = integrand - d.u[j].trace_samples(k, phi, "dphi") ** 2
        g[i - 1] = 2 * np.mean(integrand) * 2 * np.pi / math.sin(model.circles[k].sphere_radius())
    return g


def energy_gradient(p: ModuliPoint, cfg: PrismConfig = PrismConfig(),
                    basis: BasisSpec = BasisSpec()) -> np.ndarray:
    """Exact gradient of E: per Gamma_i, (nu u_i)^2 minus the squared tangential
    derivatives of the other potentials, in round-metric arclength."""
    return gradient_from_data(odd_data(p, cfg, basis))


def energy_and_gradient(p, cfg=PrismConfig(), basis=BasisSpec()):
    d = odd_data(p, cfg, basis)
    return d.E, gradient_from_data(d)


def fd_hessian(p: ModuliPoint, cfg: PrismConfig = PrismConfig(), basis: BasisSpec = BasisSpec(),
               h: float = HESS_STEP) -> np.ndarray:
    x = p.as_array()
    H = np.zeros((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        gp = energy_gradient(ModuliPoint(*(x + e)), cfg, basis)
        gm = energy_gradient(ModuliPoint(*(x - e)), cfg, basis)
        H[:, k] = (gp - gm) / (2 * h)
    return (H + H.T) / 2


def signature(H: np.ndarray, tol: float = 1e-8) -> tuple[int, int, int]:
    """(n_positive, n_negative, n_zero) eigenvalue counts."""
    w = np.linalg.eigvalsh(H)
    scale = max(1.0, np.max(np.abs(w)))
    return (int(np.sum(w > tol * scale)), int(np.sum(w < -tol * scale)),
            int(np.sum(np.abs(w) <= tol * scale)))


# ---------------------------------------------------------------------------
# critical point search


def project_to_moduli(x, margin: float = MARGIN) -> np.ndarray:
    """Nearest-ish point with r_i >= margin and r_i + r_j <= pi/2 - margin."""
    x = np.array(x, dtype=float)
    for _ in range(50):
        x = np.maximum(x, margin)
        moved = False
        for i, j in ((0, 1), (0, 2), (1, 2)):
            excess = x[i] + x[j] - (math.pi / 2 - margin)
            if excess > 0:
                x[i] -= excess / 2
                x[j] -= excess / 2
                moved = True
        if not moved and np.all(x >= margin):
            break
    return x


def _interior(x, margin=MARGIN):
    return np.all(x >= margin) and all(x[i] + x[j] <= math.pi / 2 - margin
                                       for i, j in ((0, 1), (0, 2), (1, 2)))


@dataclass
class CriticalPoint:
    p: ModuliPoint
    E: float
    grad: np.ndarray
    grad_norm: float
    hessian: np.ndarray
    signature: tuple
    strategy: str
    iterations: int
    log: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "p": list(self.p.r),
            "E": self.E,
            "grad": self.grad.tolist(),
            "grad_norm": self.grad_norm,
            "hessian": self.hessian.tolist(),
            "signature": list(self.signature),
            "strategy": self.strategy,
            "iterations": self.iterations,
        }


def _finish(x, cfg, basis, strategy, it, log, gtol):
    p = ModuliPoint(*x)
    E, g = energy_and_gradient(p, cfg, basis)
    H = fd_hessian(p, cfg, basis)
    gn = float(np.linalg.norm(g))
    if not gn < gtol:
        raise NoConvergence(it, f"|grad E| = {gn:.3e}")
    return CriticalPoint(p, E, g, gn, H, signature(H), strategy, it, log)


def _diagonal(cfg, basis, gtol):
    lo, hi = 0.05, math.pi / 4 - 0.01
    log = []

    def f(t):
        E = energy(ModuliPoint(t, t, t), cfg, basis)
        log.append({"p": [t, t, t], "E": E})
        return -E

    res = optimize.minimize_scalar(f, bracket=(lo, 0.5 * (lo + hi), hi), method="golden",
                                   options={"xtol": 1e-6})
    t0 = float(res.x)
    if not lo < t0 < hi:
        raise NoConvergence(res.nit, "diagonal maximum not interior")

    def dg(t):
        return float(np.sum(energy_gradient(ModuliPoint(t, t, t), cfg, basis)))

    a, b = t0 - 0.01, t0 + 0.01
    if dg(a) * dg(b) > 0:
        raise NoConvergence(res.nit, "derivative does not change sign near the diagonal maximum")
    t = optimize.brentq(dg, a, b, xtol=1e-15, rtol=1e-15, maxiter=200)
    return np.array([t, t, t]), res.nit, log


def newton_search(x0, cfg, basis, gtol=GRAD_TOL, max_iter: int = 60, radius: float = 0.05,
                  xtol: float = 1e-10):
    """Trust-region Newton iteration on grad E = 0 with projection into moduli space."""
    x = project_to_moduli(np.asarray(x0, float))
    g = energy_gradient(ModuliPoint(*x), cfg, basis)
    log = []
    for it in range(1, max_iter + 1):
        gn = float(np.linalg.norm(g))
        log.append({"iteration": it, "p": x.tolist(), "grad": g.tolist()})
        H = fd_hessian(ModuliPoint(*x), cfg, basis)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, g, rcond=None)[0]
        # keep polishing below gtol until the Newton step is negligible
        if gn < gtol and (np.linalg.norm(step) < xtol or gn < 1e-3 * gtol):
            return x, it, log
        while True:
            s = step if np.linalg.norm(step) <= radius else step * (radius / np.linalg.norm(step))
            xn = project_to_moduli(x + s)
            gnew = energy_gradient(ModuliPoint(*xn), cfg, basis)
            if np.linalg.norm(gnew) < gn:
                if np.linalg.norm(s) >= 0.99 * radius:
                    radius = min(2 * radius, 0.2)
                x, g = xn, gnew
                break
            radius /= 4
            if radius < 1e-14:
                if gn < gtol:
                    return x, it, log
                raise NoConvergence(it, "trust region collapsed")
    raise NoConvergence(max_iter, f"|grad E| = {np.linalg.norm(g):.3e}")


def _corner(i, delta):
    x = np.full(3, delta)
    x[i - 1] = math.pi / 2 - 2 * delta
    return x


def _path_endpoints(pair=(1, 2), delta=0.12):
    return _corner(pair[0], delta), _corner(pair[1], delta)


def default_pair(cfg: PrismConfig) -> tuple[int, int]:
    """Corner regions of the two largest half-sides (ties broken by index)."""
    order = sorted((1, 2, 3), key=lambda i: (-cfg.a[i - 1], i))
    return tuple(sorted(order[:2]))


def mountain_pass(cfg, basis, nodes: int = 33, iterations: int = 150, start=None, log=None,
                  pair=(1, 2)):
    """Discrete min-max over paths joining two high-energy corner regions.

    The corner regions are superlevel sets of E, so the relevant critical
    value is sup over paths of the path minimum.  Each sweep moves the lowest
    interior node uphill along the gradient component normal to the path
    (step bounded by half the distance to the moduli boundary) and then
    redistributes nodes uniformly in arclength.
    """
    A, B = _path_endpoints(pair)
    mid = np.asarray(start, float) if start is not None else 0.5 * (A + B) - 0.1
    s = np.linspace(0, 1, nodes)
    path = np.array([A + (mid - A) * 2 * t if t <= 0.5 else mid + (B - mid) * (2 * t - 1) for t in s])
    vals = np.array([energy(ModuliPoint(*project_to_moduli(x)), cfg, basis) for x in path])
    log = [] if log is None else log
    step = 0.05
    for it in range(iterations):
        k = 1 + int(np.argmin(vals[1:-1]))
        x = path[k]
        _, g = energy_and_gradient(ModuliPoint(*x), cfg, basis)
        tan = path[k + 1] - path[k - 1]
        tan /= np.linalg.norm(tan)
        gperp = g - (g @ tan) * tan
        dist = min(x.min(), *(math.pi / 2 - x[i] - x[j] for i, j in ((0, 1), (0, 2), (1, 2))))
        n = np.linalg.norm(gperp)
        log.append({"iteration": it, "node": k, "p": x.tolist(), "E": float(vals[k]),
                    "grad_perp": float(n)})
        if n < 1e-4:
            break
        move = gperp / n * min(step, 0.5 * dist, n)
        xn = project_to_moduli(x + move)
        En = energy(ModuliPoint(*xn), cfg, basis)
        if En > vals[k]:
            path[k], vals[k] = xn, En
            step = min(step * 1.5, 0.1)
        else:
            step *= 0.5
            if step < 1e-6:
                break
        # reparametrize by arclength
        seg = np.r_[0, np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))]
        target = np.linspace(0, seg[-1], nodes)
        newp = np.array([np.interp(target, seg, path[:, c]) for c in range(3)]).T
        changed = np.linalg.norm(newp - path, axis=1) > 1e-3
        path = newp
        for j in np.nonzero(changed)[0]:
            vals[j] = energy(ModuliPoint(*project_to_moduli(path[j])), cfg, basis)
    k = 1 + int(np.argmin(vals[1:-1]))
    return path[k], path, vals, log


def find_critical_point(cfg: PrismConfig = PrismConfig(), strategy: str = "newton", start=None,
                        basis: BasisSpec = BasisSpec(), gtol: float = GRAD_TOL) -> CriticalPoint:
    """Locate a critical point of E; returns point, gradient norm and Hessian signature."""
    if start is not None:
        validate(start if isinstance(start, ModuliPoint) else ModuliPoint(*start))
    if strategy == "diagonal":
        x, it, log = _diagonal(cfg, basis, gtol)
    elif strategy == "newton":
        x0 = np.array((start.r if isinstance(start, ModuliPoint) else start) or (0.5, 0.5, 0.5), float)
        x, it, log = newton_search(x0, cfg, basis, gtol)
    elif strategy == "minmax":
        log = []
        x0, _, _, log = mountain_pass(cfg, basis, start=start, log=log, pair=default_pair(cfg))
        x, it, nlog = newton_search(x0, cfg, basis, gtol)
        log += nlog
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    if not _interior(x, MARGIN):
        raise LeftModuliSpace(f"critical point {x} is within {MARGIN} of the moduli boundary")
    return _finish(x, cfg, basis, strategy, it, log, gtol)


def write_log(path, log) -> None:
    with open(path, "w") as fh:
        for row in log:
            fh.write(json.dumps(row) + "\n")


# ---------------------------------------------------------------------------
# V_delta certificate


def geodesic_circle_mean(sol: SeriesSolution, center_axis: int, radius: float, n: int = 256) -> float:
    """Average of ``sol`` over the geodesic circle of given radius about +e_axis."""
    from .moduli import _FRAMES, stereo
    C, T1, T2 = _FRAMES[center_axis]
    phi = np.arange(n) * 2 * np.pi / n
    X = math.cos(radius) * C + math.sin(radius) * (np.cos(phi)[:, None] * T1 + np.sin(phi)[:, None] * T2)
    return float(np.mean(sol.value(stereo(X))))


def _perm_to_axis1(i):
    """Axis permutation bringing group i to position 1 while keeping the outer circle finite."""
    return {1: (1, 2, 3), 2: (2, 1, 3), 3: (3, 2, 1)}[i]


def mean_value_h(i: int, r_other, basis: BasisSpec = BasisSpec()):
    """Return t -> average over the r0-circle about the center of gamma_1^(i) of u_i / a_i, r_i = t."""
    perm = _perm_to_axis1(i)
    others = [j for j in (1, 2, 3) if j != i]

    def mean(t):
        r = [0.0, 0.0, 0.0]
        r[i - 1] = t
        for j, v in zip(others, r_other):
            r[j - 1] = v
        m = build_planar_model(ModuliPoint(*r).permuted(perm))
        return geodesic_circle_mean(_unit_potential(m, 1, basis), 1, R0)

    return mean


def h_function(i: int, r_other, basis: BasisSpec = BasisSpec(), xtol: float = 1e-10) -> float:
    """h_i(r_j, r_k): the radius r_i in (0, r0) at which that average equals 1/2.

    The threshold a_i / 2 for u_i is 1/2 for u_i / a_i, so h does not depend on a.
    """
    mean = mean_value_h(i, r_other, basis)
    lo, hi = 1e-8, R0 - 1e-3
    if mean(lo) >= 0.5:
        return lo
    if mean(hi) <= 0.5:
        return hi
    return float(optimize.brentq(lambda t: mean(t) - 0.5, lo, hi, xtol=xtol))


def h_is_monotone(i: int, r_other, ts=None, basis: BasisSpec = BasisSpec()) -> tuple[bool, np.ndarray]:
    """Sample t -> mean of u_i over the r0-circle and report whether it increases."""
    ts = np.linspace(0.005, R0 - 0.005, 12) if ts is None else np.asarray(ts, float)
    mean = mean_value_h(i, r_other, basis)
    vals = np.array([mean(t) for t in ts])
    return bool(np.all(np.diff(vals) > 0)), vals


def _below_delta(i, r_other, delta, basis):
    """True when h_i(r_other) < delta, i.e. the mean at r_i = delta exceeds 1/2."""
    return mean_value_h(i, r_other, basis)(delta) > 0.5


def lemma_holds(delta: float, eps: float, basis: BasisSpec = BasisSpec(), samples: int = 5) -> bool:
    """Check h_i < delta on the segments r_j + r_k = pi/2 - 2 eps (r_j, r_k <= pi/4)."""
    s = math.pi / 2 - 2 * eps
    for i in (1, 2, 3):
        lo = max(s - math.pi / 4, 1e-3)
        for rj in np.linspace(lo, s - lo, samples):
            if not _below_delta(i, (rj, s - rj), delta, basis):
                return False
    return True


def lemma_epsilon(delta: float, basis: BasisSpec = BasisSpec(), samples: int = 5,
                  steps: int = 8) -> float:
    """Largest eps (found by bisection) with h_i < delta whenever r_j + r_k > pi/2 - 2 eps.

    The segment r_j + r_k = s is sampled inside r_j, r_k <= pi/4; h_i decreases
    as the other two circles approach tangency, so checking the segment suffices.
    """
    def ok(s):
        return lemma_holds(delta, (math.pi / 2 - s) / 2, basis, samples)

    hi = math.pi / 2 - 2 * EPS_MIN   # closest resolved approach to tangency
    lo = math.pi / 4
    if not ok(hi):
        raise NoConvergence(0, f"h_i >= delta even at eps = {EPS_MIN}")
    if ok(lo):
        return (math.pi / 2 - lo) / 2
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return (math.pi / 2 - hi) / 2


@dataclass
class FaceReport:
    face: str
    samples: int
    passed: int
    worst: float
    points: list = field(default_factory=list, repr=False)
    values: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.passed == self.samples


@dataclass
class VDeltaReport:
    delta: float
    eps: float
    faces: list
    h_monotone: bool

    @property
    def passed(self) -> bool:
        return self.h_monotone and all(f.ok for f in self.faces)

    def to_dict(self) -> dict:
        return {"delta": self.delta, "eps": self.eps, "h_monotone": self.h_monotone,
                "passed": self.passed,
                "faces": [{"face": f.face, "samples": f.samples, "passed": f.passed,
                           "worst": f.worst} for f in self.faces]}


def vdelta_certificate(cfg: PrismConfig = PrismConfig(), delta: float = 0.05, samples: int = 20,
                       seed: int = 0, basis: BasisSpec = BasisSpec(), eps: float | None = None) -> VDeltaReport:
    """Sign checks of the gradient on the six boundary faces of V_delta.

    Faces r_i = eps_i(r_j, r_k) = min(delta, h_i) need dE/dr_i > 0; faces
    r_j + r_k = pi/2 - eps need dE/dr_j < 0 and dE/dr_k < 0.  ``worst`` is the
    least favourable signed value (positive means the check holds).

    By default ``eps = delta`` once the h-lemma is verified there, otherwise
    the bisection value of ``lemma_epsilon``; any smaller eps also satisfies
    the lemma, and the sign argument on the tangency faces needs eps small.
    """
    rng = np.random.default_rng(seed)
    if eps is None:
        eps = delta if lemma_holds(delta, delta, basis) else lemma_epsilon(delta, basis)
    faces = []
    top = math.pi / 4
    lim = math.pi / 2 - eps
    for i in (1, 2, 3):
        j, k = [a for a in (1, 2, 3) if a != i]
        vals, pts = [], []
        while len(vals) < samples:
            rj, rk = rng.uniform(delta, top, 2)
            if rj + rk >= lim:
                continue
            # eps_i = min(delta, h_i); h_i < delta exactly when the mean at delta exceeds 1/2
            ri = h_function(i, (rj, rk), basis) if _below_delta(i, (rj, rk), delta, basis) else delta
            r = [0.0, 0.0, 0.0]
            r[i - 1], r[j - 1], r[k - 1] = ri, rj, rk
            g = energy_gradient(ModuliPoint(*r), cfg, basis)
            vals.append(g[i - 1])
            pts.append(r)
        vals = np.array(vals)
        faces.append(FaceReport(f"r{i}=eps{i}", samples, int(np.sum(vals > 0)), float(vals.min()), pts,
                                vals.tolist()))
    for i in (1, 2, 3):
        j, k = [a for a in (1, 2, 3) if a != i]
        vals, pts = [], []
        while len(vals) < samples:
            rj = rng.uniform(lim - top, top)
            rk = lim - rj
            # the point must satisfy the other two pair constraints of V_delta
            ri = rng.uniform(delta, min(top, lim - max(rj, rk)))
            r = [0.0, 0.0, 0.0]
            r[i - 1], r[j - 1], r[k - 1] = ri, rj, rk
            g = energy_gradient(ModuliPoint(*r), cfg, basis)
            vals.append(-max(g[j - 1], g[k - 1]))
            pts.append(r)
        vals = np.array(vals)
        faces.append(FaceReport(f"r{j}+r{k}=pi/2-eps", samples, int(np.sum(vals > 0)),
                                float(vals.min()), pts, vals.tolist()))
    mono, _ = h_is_monotone(1, (0.5, 0.5), basis=basis)
    return VDeltaReport(delta, eps, faces, mono)


@dataclass
class DecayFit:
    r1: np.ndarray
    integrals: dict
    exponent: dict


def tangential_decay(r_other=(0.5, 0.5), r1_list=(0.001, 0.002, 0.005, 0.01, 0.02),
                     cfg: PrismConfig = PrismConfig(), basis: BasisSpec = BasisSpec()) -> DecayFit:
    """Fit the power of r_1 in the integral of (u_j')^2 over gamma_1^(1), j = 2, 3."""
    r1 = np.asarray(r1_list, float)
    vals = {2: [], 3: []}
    for t in r1:
        d = odd_data(ModuliPoint(t, *r_other), cfg, basis)
        k = d.model.group_indices(1)[0]
        phi = trace_points(d.solution_order())
        for j in (2, 3):
            du = d.u[j].trace_samples(k, phi, "dphi")
            # (du/ds)^2 ds with ds = sin r_1 dphi on the sphere
            vals[j].append(float(np.mean(du ** 2) * 2 * np.pi / math.sin(t)))
    vals = {j: np.array(v) for j, v in vals.items()}
    return DecayFit(r1, vals, {j: fit_power(r1, v) for j, v in vals.items()})


# ---------------------------------------------------------------------------
# cylinder model


@dataclass
class CylinderReport:
    p: ModuliPoint
    periods: dict
    gamma1_period: float
    neumann_period_max: float
    odd_sigma: float
    even_sigma: dict

    @property
    def odd_is_lowest(self) -> bool:
        return self.odd_sigma < min(self.even_sigma.values())

    def to_dict(self) -> dict:
        return {"p": list(self.p.r), "periods": {str(k): v for k, v in self.periods.items()},
                "gamma1_period": self.gamma1_period,
                "neumann_period_max": self.neumann_period_max,
                "odd_sigma": self.odd_sigma, "even_sigma": self.even_sigma,
                "odd_is_lowest": self.odd_is_lowest}


def conjugate_period(sol: SeriesSolution, k: int, n: int | None = None) -> float:
    """Period of the harmonic conjugate around circle ``k``: integral of Im(F' dz).

    The circle is traversed with the domain on the left, so the period equals
    the outward flux.
    """
    c = sol.domain.circles[k]
    n = n or trace_points(sol.basis.order).size
    phi = np.arange(n) * 2 * np.pi / n
    z = c.point(phi)
    dz = c.dpoint(phi)
    # orientation: tangent i * outward normal keeps the domain on the left
    orient = np.sign(np.mean((np.conj(dz) * 1j * c.normal(z)).real))
    return float(orient * np.mean((sol.dF(z) * dz).imag) * 2 * np.pi)


def cylinder_model_diagnostic(p: ModuliPoint, basis: BasisSpec = BasisSpec(), M: int = 24,
                              period_tol: float = 1e-8) -> CylinderReport:
    """Potential t with flux 2 pi on gamma_1^(1), its conjugate periods, and the
    odd versus even first eigenvalues of (SN_1) for the metric lambda_1."""
    validate(p)
    model = build_planar_model(p)
    u1 = _unit_potential(model, 1, basis)
    k1 = model.group_indices(1)[0]
    flux = conjugate_period(u1, k1)
    t = SeriesSolution(model, u1.basis, u1.coef * (2 * math.pi / flux), u1.residual, u1.tol)
    periods = {k: conjugate_period(t, k) for k in range(len(model))}
    neumann = [abs(v) for k, v in periods.items() if model.circles[k].group != 1]
    gmax = max(neumann)
    if gmax > period_tol:
        raise PeriodDefect(gmax)
    if abs(periods[k1] - 2 * math.pi) > period_tol:
        raise PeriodDefect(periods[k1] - 2 * math.pi)
    data = odd_data(p, PrismConfig(1.0, 1.0, 1.0), basis, model)
    lam = data.lam[1]
    order = max(basis.order, data.solution_order())
    spec = sector_spectrum(model, 1, lam, 1, M, BasisSpec(order, basis.oversampling),
                           sectors=[odd_sector(1), "eee", "eeo", "eoe", "eoo"])
    odd = spec[str(odd_sector(1))][0].sigma
    even = {s: spec[s][0].sigma for s in ("eee", "eeo", "eoe", "eoo")}
    return CylinderReport(p, periods, periods[k1], gmax, odd, even)


# ---------------------------------------------------------------------------
# surface assembly


def _parity(i):
    return tuple(-1.0 if a == i else 1.0 for a in (1, 2, 3))


def potentials(p: ModuliPoint, cfg: PrismConfig = PrismConfig(), order: int | None = None,
               basis: BasisSpec = BasisSpec(), model=None):
    """The three scaled potentials, refined adaptively or at a fixed ``order``."""
    model = model or build_planar_model(p)
    out = {}
    for i, a in zip((1, 2, 3), cfg.a):
        if order is None:
            sol = _unit_potential(model, i, basis)
        else:
            k1, k2 = model.group_indices(i)
            bc = BoundaryCondition.from_map(model, {k1: Dirichlet(1.0), k2: Dirichlet(-1.0)})
            sol = solve_mixed(model, bc, BasisSpec(order, basis.oversampling), check=False,
                              symmetry=_parity(i))
        out[i] = _scaled(sol, a)
    return model, out


def _sphere_permutation_defect(u, z, perm):
    """max_j min_{k, s} |u_j(P X) - s u_k(X)| for the coordinate permutation ``perm``."""
    X = inverse_stereo(z)
    zp = stereo(X[:, list(perm)])
    here = np.array([u[k].value(z) for k in (1, 2, 3)])
    there = np.array([u[j].value(zp) for j in (1, 2, 3)])
    worst = 0.0
    for j in range(3):
        best = min(np.max(np.abs(there[j] - s * here[k])) for k in range(3) for s in (1, -1))
        worst = max(worst, best)
    return float(worst)


def _config_permutations(p: ModuliPoint, cfg: PrismConfig, tol=1e-12):
    out = []
    for perm in itertools.permutations(range(3)):
        if perm == (0, 1, 2):
            continue
        if all(abs(p.r[perm[k]] - p.r[k]) < tol and abs(cfg.a[perm[k]] - cfg.a[k]) < tol
               for k in range(3)):
            out.append(perm)
    return out


def assemble_surface(p: ModuliPoint, cfg: PrismConfig = PrismConfig(), h: float = 0.04,
                     order: int | None = None, scale_half: bool = False, gtol: float = GRAD_TOL,
                     basis: BasisSpec = BasisSpec(), grad_norm: float | None = None) -> SurfaceSample:
    """Mesh the image of ``u = (u_1, u_2, u_3)`` at a critical point and measure residuals.

    Residuals (all dimensionless):

    * ``hopf``: max over vertices of |sum F_j'^2| / sum |F_j'|^2, where
      ``F_j' = d(u_j)/dz``; zero for a conformal map.
    * ``orthogonality``: on Gamma_i, sine of the angle between the conormal
      ``nu u`` and the face normal e_i.
    * ``eigenfunction``: on Gamma_i, | |nu u_i| / |d_s u| - 1 |, i.e. the
      Steklov condition d_eta x_i = x_i / a_i in the induced metric.
    * ``g_symmetry``/``permutation``: equivariance defects of the sampled map.
    * ``face_margin``: min over loops of the distance of the loop image to the
      edges of its face.
    """
    validate(p)
    if grad_norm is None:
        grad_norm = float(np.linalg.norm(energy_gradient(p, cfg, basis)))
    if not grad_norm < gtol:
        raise NotCritical(f"|grad E| = {grad_norm:.3e} is not below {gtol:.1e}")
    model, u = potentials(p, cfg, order, basis)
    comps = [(u[i], _parity(i)) for i in (1, 2, 3)]
    ms = map_sample(model, comps, h)
    top = ms.topology
    if top.boundary_loops != 6 or top.genus != 0:
        raise DegenerateMesh(f"mesh has genus {top.genus} and {top.boundary_loops} boundary loops")

    hopf = ms.hopf()
    dens = ms.energy_density()
    # |du|^2 = 2 sum |F'|^2 and the induced metric is (|du|^2 / 2) |dz|^2
    conformal = dens

    orth = np.zeros(ms.z.size)
    eig = np.zeros(ms.z.size)
    on_gamma = np.zeros(ms.z.size, dtype=bool)
    for k, idx in boundary_vertex_sets(model, ms.z).items():
        c = model.circles[k]
        i = c.group
        zb = ms.z[idx]
        n = (zb - c.center) / c.radius
        # for holomorphic F with u = Re F, the derivative of u along w is Re(F' w)
        nu = np.real(ms.derivs[idx] * n[:, None])
        tang = np.real(ms.derivs[idx] * (1j * n)[:, None])
        norm_nu = np.linalg.norm(nu, axis=1)
        others = [j for j in range(3) if j != i - 1]
        orth[idx] = np.linalg.norm(nu[:, others], axis=1) / norm_nu
        eig[idx] = np.abs(np.abs(nu[:, i - 1]) / np.linalg.norm(tang, axis=1) - 1.0)
        on_gamma[idx] = True

    # each loop lies on one circle; its image should sit inside one face
    loops = {}
    faces = set()
    margin = np.inf
    for loop, (g, m) in zip(top.loops, boundary_loop_labels(model, ms.plane, top.loops)):
        P = ms.points[loop]
        i = g - 1
        side = int(np.sign(np.median(P[:, i])))
        others = [j for j in range(3) if j != i]
        mg = float(np.min(np.array(cfg.a)[others] - np.abs(P[:, others])))
        off = float(np.max(np.abs(np.abs(P[:, i]) - cfg.a[i])))
        loops[(g, m)] = {"face": (g, side), "margin": mg, "off_face": off,
                         "margin_rel": mg / cfg.a[i]}
        faces.add((g, side))
        margin = min(margin, mg / cfg.a[i])

    # equivariance of the sampled map
    direct = np.array([u[i].value(ms.plane) for i in (1, 2, 3)]).T
    g_def = float(np.max(np.abs(direct - ms.points)))
    perm_def = 0.0
    for perm in _config_permutations(p, cfg):
        perm_def = max(perm_def, _sphere_permutation_defect(u, ms.z, perm))

    res = {
        "hopf": float(np.max(hopf)),
        "orthogonality": float(np.max(orth)),
        "eigenfunction": float(np.max(eig[on_gamma])) if on_gamma.any() else 0.0,
        "g_symmetry": g_def,
        "permutation": perm_def,
        "face_margin": float(margin),
        "distinct_faces": len(faces),
        "grad_norm": grad_norm,
        "order": max(s.basis.order for s in u.values()),
        "solve_residual": max(s.residual for s in u.values()),
    }
    attrs = {
        "conformal_factor": ms.full(conformal),
        "hopf_residual": ms.full(hopf),
        "orthogonality_residual": ms.full(orth),
        "eigenfunction_residual": ms.full(eig),
    }
    surf = SurfaceSample(ms.plane, ms.points, ms.triangles, attrs, top, res, loops)
    return surf.scaled(0.5) if scale_half else surf
