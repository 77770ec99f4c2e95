"""Minimization of eps * E_kin + v_ee over couplings with fixed one-body marginals.

The primal iteration works on psi = sqrt(P): the kinetic term is then a
positive quadratic form and clamping psi at zero preserves nonnegativity for
free. One outer iteration is (1) a backtracking gradient step on psi,
(2) cyclic multiplicative marginal repair (one exact axis rescale per
particle), (3) optional symmetrization over particle permutations, which by
convexity and permutation invariance never increases the objective. A step
is accepted only if the energy of the fully repaired, symmetrized candidate
drops, so the recorded energy trace is nonincreasing by construction.

The dual side bounds the optimum from below for any one-body potential u:
since every feasible coupling integrates sum_i u(x_i) to N * integral(u mu),
the optimum is at least min over unit-mass densities of the u-tilted energy,
a smallest-eigenvalue problem for the discrete Schroedinger operator
-4 eps Lap + (v_ee - sum_i u(x_i)).
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CapRequiredError, ConstraintError, DomainError, DualSolveError
from .functionals import CostSpec, EnergyBreakdown, fisher_information, vee_field
from .grids import (GridSpec, NBodyDensity, OneBodyDensity, integrate,
                    marginal_residual, marginal_values, normalized)


# ---------------------------------------------------------------------------
# Configuration and reports
# ---------------------------------------------------------------------------

@dataclass
class SolverConfig:
    """Knobs for minimize_levy_lieb; defaults follow the desk-scale regime."""

    eps: float
    max_outer_iters: int | None = None
    step_initial: float | None = None
    step_shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    tol_marginal: float = 1e-8
    tol_energy: float = 1e-10
    symmetrize_each_iter: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.eps <= 0:
            raise DomainError(f"eps must be positive, got {self.eps}")
        if self.tol_marginal <= 0 or self.tol_energy <= 0:
            raise DomainError("tolerances must be positive")

    def resolved_max_iters(self) -> int:
        if self.max_outer_iters is not None:
            return self.max_outer_iters
        # iteration budget tracks the stiffening of the problem as eps drops
        return 100 * int(np.ceil(1.0 / np.sqrt(self.eps)))


@dataclass
class SolveReport:
    energy: EnergyBreakdown
    eps: float
    marginal_residual: float
    iterations: int
    converged: bool
    wall_time: float
    energy_trace: tuple
    dual_lower_bound: float | None = None
    duality_gap: float | None = None

    @property
    def total(self) -> float:
        return self.energy.total_at(self.eps)


@dataclass(frozen=True)
class OneBodyPotential:
    """Lagrange-multiplier field u(x) on the one-body grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.shape != self.grid.one_body_shape:
            raise ConstraintError("potential shape does not match the one-body grid")
        if not np.all(np.isfinite(vals)):
            raise ConstraintError("potential must have finite entries")
        object.__setattr__(self, "values", vals)
        vals.setflags(write=False)


# ---------------------------------------------------------------------------
# Discrete operators
# ---------------------------------------------------------------------------

def stiffness_apply(psi: np.ndarray) -> np.ndarray:
    """L psi with psi^T L psi = sum over axes/edges of (forward difference)^2."""
    out = np.zeros_like(psi)
    for ax in range(psi.ndim):
        g = np.diff(psi, axis=ax)
        pad = [(0, 0)] * psi.ndim
        pad[ax] = (1, 1)
        gp = np.pad(g, pad)
        n = psi.shape[ax]
        lo = [slice(None)] * psi.ndim
        hi = [slice(None)] * psi.ndim
        lo[ax] = slice(0, n)
        hi[ax] = slice(1, n + 1)
        out += gp[tuple(lo)] - gp[tuple(hi)]
    return out


def ipfp_repair(values: np.ndarray, grid: GridSpec, mu_values: np.ndarray,
                tol: float, max_sweeps: int = 60):
    """Cycle exact one-marginal rescalings until the TV residual drops under tol."""
    nd = grid.d * grid.N
    resid = marginal_residual(values, grid, mu_values)
    sweeps = 0
    while resid > tol and sweeps < max_sweeps:
        for i in range(1, grid.N + 1):
            Pi = marginal_values(values, grid, [i])
            ratio = np.divide(mu_values, Pi, out=np.zeros_like(Pi), where=Pi > 0)
            shape = [1] * nd
            for ax in grid.block_axes(i):
                shape[ax] = grid.M
            values = values * ratio.reshape(shape)
        sweeps += 1
        resid = marginal_residual(values, grid, mu_values)
    return values, resid, sweeps


def symmetrize_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Average over all particle-block permutations."""
    if grid.N == 1:
        return values
    out = np.zeros_like(values)
    count = 0
    for perm in itertools.permutations(range(grid.N)):
        axes = [perm[i] * grid.d + r for i in range(grid.N) for r in range(grid.d)]
        out += np.transpose(values, axes)
        count += 1
    return out / count


def random_feasible_coupling(mu: OneBodyDensity, seed: int,
                             tol: float = 1e-10) -> np.ndarray:
    """A random coupling with (numerically) the prescribed marginals."""
    grid = mu.grid
    rng = np.random.default_rng(seed)
    vals = np.exp(rng.normal(size=grid.joint_shape))
    vals = normalized(vals, grid.h)
    vals, _, _ = ipfp_repair(vals, grid, mu.values, tol, max_sweeps=300)
    return vals


# ---------------------------------------------------------------------------
# Primal solver
# ---------------------------------------------------------------------------

def _energy_of(values, grid, eps, vee):
    nd = grid.d * grid.N
    kin = fisher_information(values, grid)
    inter = float((values * vee).sum() * grid.h ** nd)
    return eps * kin + inter, kin, inter


def minimize_levy_lieb(mu: OneBodyDensity, cost: CostSpec, cfg: SolverConfig,
                       initial: np.ndarray | NBodyDensity | None = None):
    """Minimize eps * E_kin + v_ee over couplings of mu; returns (P, report).

    Starts from the product coupling (feasible and deterministic; the problem
    is convex so restarts are unnecessary) unless a warm start is provided.
    The returned density satisfies the marginal constraint to cfg.tol_marginal
    and its energy never exceeds the product coupling's.
    """
    grid = mu.grid
    eps = cfg.eps
    nd = grid.d * grid.N
    h = grid.h
    t0 = time.perf_counter()

    vee = vee_field(grid, cost)
    if np.isinf(vee).any():
        raise CapRequiredError(
            "solver iterates carry mass on coincident pairs; configure a "
            "coincidence cap on the cost (cost.cap.scale)")

    if initial is None:
        vals = np.array(1.0)
        for _ in range(grid.N):
            vals = np.multiply.outer(vals, mu.values)
        vals = normalized(vals.reshape(grid.joint_shape), h)
    elif isinstance(initial, NBodyDensity):
        vals = initial.values.copy()
    else:
        vals = np.array(initial, dtype=np.float64)
    vals, resid, _ = ipfp_repair(vals, grid, mu.values, cfg.tol_marginal)
    if cfg.symmetrize_each_iter:
        vals = symmetrize_values(vals, grid)

    E, kin, inter = _energy_of(vals, grid, eps, vee)
    trace = [E]

    vmax = float(vee.max()) if vee.size else 0.0
    lipschitz = 8.0 * eps * 4.0 * nd / h ** 2 + 2.0 * vmax
    t = cfg.step_initial if cfg.step_initial is not None else 1.0 / lipschitz
    t_floor = t * 1e-14

    max_iters = cfg.resolved_max_iters()
    it = 0
    converged = False
    while it < max_iters:
        it += 1
        psi = np.sqrt(vals)
        g = (8.0 * eps / h ** 2) * stiffness_apply(psi) + 2.0 * vee * psi
        gnorm2 = float((g * g).sum())
        if gnorm2 * h ** nd <= 1e-300:
            converged = resid <= cfg.tol_marginal
            break
        accepted = False
        tk = t
        while tk >= t_floor:
            trial = np.maximum(psi - tk * g, 0.0)
            tv = trial * trial
            mass = integrate(tv, h)
            if mass > 0:
                tv = tv / mass
                tv, tresid, _ = ipfp_repair(tv, grid, mu.values, cfg.tol_marginal)
                if cfg.symmetrize_each_iter:
                    tv = symmetrize_values(tv, grid)
                E_t, kin_t, inter_t = _energy_of(tv, grid, eps, vee)
                if E_t <= E - cfg.sufficient_decrease * tk * gnorm2 * h ** nd:
                    accepted = True
                    break
            tk *= cfg.step_shrink
        if not accepted:
            converged = resid <= cfg.tol_marginal
            break
        drop = E - E_t
        vals, E, kin, inter, resid = tv, E_t, kin_t, inter_t, tresid
        trace.append(E)
        t = min(tk * 2.0, 1e6 / lipschitz)
        if drop <= cfg.tol_energy * max(abs(E), 1e-300) and resid <= cfg.tol_marginal:
            converged = True
            break

    # final repair pass; iterates were kept repaired, so this is a no-op unless
    # the loop exited on the iteration budget with a stale residual
    if resid > cfg.tol_marginal:
        vals, resid, _ = ipfp_repair(vals, grid, mu.values, cfg.tol_marginal,
                                     max_sweeps=500)
        if cfg.symmetrize_each_iter:
            vals = symmetrize_values(vals, grid)
        E, kin, inter = _energy_of(vals, grid, eps, vee)

    vals = normalized(np.maximum(vals, 0.0), h)
    P = NBodyDensity(grid, vals, symmetric=cfg.symmetrize_each_iter and grid.N > 1)
    report = SolveReport(
        energy=EnergyBreakdown(kinetic=kin, interaction=inter),
        eps=eps,
        marginal_residual=resid,
        iterations=it,
        converged=converged,
        wall_time=time.perf_counter() - t0,
        energy_trace=tuple(trace),
    )
    return P, report


def minimize_levy_lieb_pgd(mu: OneBodyDensity, cost: CostSpec, eps: float,
                           max_iters: int = 4000, tol_energy: float = 1e-12,
                           tol_marginal: float = 1e-8):
    """Plain projected-gradient method acting on P directly (cross-check solver).

    Additive step on the density followed by clipping and marginal repair.
    Slower and cruder than the psi-form iteration; kept deliberately
    independent of it so the two can be compared on small instances.
    """
    grid = mu.grid
    nd = grid.d * grid.N
    h = grid.h
    vee = vee_field(grid, cost)
    vals = np.array(1.0)
    for _ in range(grid.N):
        vals = np.multiply.outer(vals, mu.values)
    vals = normalized(vals.reshape(grid.joint_shape), h)
    E, _, _ = _energy_of(vals, grid, eps, vee)
    trace = [E]
    t = 1.0 / (8.0 * eps * 4.0 * nd / h ** 2 + 2.0 * float(vee.max()) + 1.0)
    floor = 1e-18
    for _ in range(max_iters):
        psi = np.sqrt(np.maximum(vals, floor))
        gkin = (4.0 / h ** 2) * stiffness_apply(psi) / psi
        g = eps * gkin + vee
        accepted = False
        tk = t
        for _ in range(60):
            tv = np.maximum(vals - tk * g, 0.0)
            mass = integrate(tv, h)
            if mass > 0:
                tv = tv / mass
                tv, _, _ = ipfp_repair(tv, grid, mu.values, tol_marginal)
                tv = symmetrize_values(tv, grid)
                E_t, _, _ = _energy_of(tv, grid, eps, vee)
                if E_t < E:
                    accepted = True
                    break
            tk *= 0.5
        if not accepted:
            break
        drop = E - E_t
        vals, E = tv, E_t
        trace.append(E)
        t = tk * 2.0
        if drop <= tol_energy * max(abs(E), 1e-300):
            break
    vals, resid, _ = ipfp_repair(vals, grid, mu.values, tol_marginal, max_sweeps=300)
    return normalized(np.maximum(vals, 0.0), h), E, resid, trace


# ---------------------------------------------------------------------------
# Dual lower bound
# ---------------------------------------------------------------------------

_DENSE_EIG_CUTOFF = 2500


def _tilted_field(grid: GridSpec, vee: np.ndarray, u_values: np.ndarray) -> np.ndarray:
    """v_ee - sum_i u(x_i) on the joint grid."""
    nd = grid.d * grid.N
    W = vee.copy()
    for i in range(1, grid.N + 1):
        shape = [1] * nd
        for ax in grid.block_axes(i):
            shape[ax] = grid.M
        W = W - u_values.reshape(shape)
    return W


def _dense_ground_state(grid, eps, W):
    M, nd = grid.M, grid.d * grid.N
    K1 = np.zeros((M, M))
    idx = np.arange(M)
    K1[idx, idx] = 2.0
    K1[0, 0] = K1[-1, -1] = 1.0
    K1[idx[:-1], idx[:-1] + 1] = -1.0
    K1[idx[:-1] + 1, idx[:-1]] = -1.0
    n = M ** nd
    L = np.zeros((n, n))
    for ax in range(nd):
        op = np.array([[1.0]])
        for k in range(nd):
            op = np.kron(op, K1 if k == ax else np.eye(M))
        L += op
    A = (4.0 * eps / grid.h ** 2) * L + np.diag(W.ravel())
    evals, evecs = np.linalg.eigh(A)
    v = evecs[:, 0]
    rho = float(evals[0])
    r = float(np.linalg.norm(A @ v - rho * v))
    return rho, r, np.abs(v).reshape(W.shape)


def _iterative_ground_state(grid, eps, W, tol=1e-10, max_outer=60):
    h2 = grid.h ** 2

    def apply_A(x):
        return (4.0 * eps / h2) * stiffness_apply(x) + W * x

    def cg(shift, b, x0, it_max, rtol=1e-12):
        x = x0.copy()
        r = b - (apply_A(x) - shift * x)
        p = r.copy()
        rs = float((r * r).sum())
        b2 = float((b * b).sum())
        for _ in range(it_max):
            Ap = apply_A(p) - shift * p
            denom = float((p * Ap).sum())
            if denom <= 0:
                break
            a = rs / denom
            x += a * p
            r -= a * Ap
            rs_new = float((r * r).sum())
            if rs_new <= rtol * rtol * b2:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        return x

    x = np.ones_like(W)
    x /= np.linalg.norm(x)
    shift = float(W.min()) - 1.0
    last_r = np.inf
    for _ in range(max_outer):
        x = cg(shift, x, x, it_max=min(2000, x.size))
        nx = np.linalg.norm(x)
        if nx == 0:
            raise DualSolveError("inverse iteration produced the zero vector")
        x /= nx
        Ax = apply_A(x)
        rho = float((x * Ax).sum())
        r = float(np.linalg.norm(Ax - rho * x))
        if r <= tol * (1.0 + abs(rho)):
            return rho, r, np.abs(x)
        # rho - 2r sits certifiably below the eigenvalue, so the shifted
        # operator stays positive definite while the shift tightens
        shift = rho - 2.0 * max(r, 1e-14)
        last_r = r
    raise DualSolveError(f"inverse power iteration stagnated, residual {last_r:.3e}")


def ground_state(grid: GridSpec, eps: float, W: np.ndarray):
    """Smallest eigenpair of -4 eps Lap_h + W; returns (certified_lb, phi).

    phi is L2-normalized in the h^{dN}-weighted norm and nonnegative (ground
    states of operators with nonpositive off-diagonal coupling can be chosen
    so). The returned value is rho - ||residual||, a lower bound on the true
    smallest eigenvalue for this symmetric operator.
    """
    n = W.size
    if n <= _DENSE_EIG_CUTOFF:
        rho, r, v = _dense_ground_state(grid, eps, W)
    else:
        rho, r, v = _iterative_ground_state(grid, eps, W)
    v = v / np.sqrt(integrate(v * v, grid.h))
    return rho - r, v

def dual_lower_bound(mu: OneBodyDensity, u: OneBodyPotential, eps: float,
                     cost: CostSpec, vee: np.ndarray | None = None) -> float:
    """Certified lower bound on the constrained optimum from the potential u.

    bound(u) = lambda_min(-4 eps Lap + v_ee - sum_i u(x_i)) + N integral(u mu).
    Weak duality holds exactly in the discrete sums for every u.
    """
    grid = mu.grid
    if u.grid != grid:
        raise ConstraintError("potential and marginal live on different grids")
    if vee is None:
        vee = vee_field(grid, cost)
    if np.isinf(vee).any():
        raise CapRequiredError("dual bound needs a capped cost (cost.cap.scale)")
    W = _tilted_field(grid, vee, u.values)
    lam, _ = ground_state(grid, eps, W)
    linear = grid.N * float((u.values * mu.values).sum() * grid.h ** grid.d)
    return lam + linear


def dual_ascent(mu: OneBodyDensity, eps: float, cost: CostSpec, steps: int = 50,
                step_size: float | None = None, u0: OneBodyPotential | None = None):
    """Supergradient ascent on the dual; returns (best_u, best_bound, trace).

    The ascent direction at u is N mu - sum_i marginal_i(phi^2) with phi the
    current ground state: the dual pushes the untilted ground state's
    marginals toward the prescribed one.
    """
    grid = mu.grid
    vee = vee_field(grid, cost)
    u_vals = np.zeros(grid.one_body_shape) if u0 is None else u0.values.copy()
    s = step_size if step_size is not None else 1.0 / grid.N
    best_u, best_val = u_vals.copy(), -np.inf
    trace = []
    for _ in range(steps):
        W = _tilted_field(grid, vee, u_vals)
        lam, phi = ground_state(grid, eps, W)
        val = lam + grid.N * float((u_vals * mu.values).sum() * grid.h ** grid.d)
        trace.append(val)
        if val > best_val:
            best_val, best_u = val, u_vals.copy()
        phi2 = phi * phi
        marg_sum = np.zeros(grid.one_body_shape)
        for i in range(1, grid.N + 1):
            marg_sum += marginal_values(phi2, grid, [i])
        u_vals = u_vals + s * (grid.N * mu.values - marg_sum)
    return OneBodyPotential(grid, best_u), best_val, trace


# ---------------------------------------------------------------------------
# Stationarity validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StationarityReport:
    marginal_residual: float
    worst_slope: float
    energy_total: float
    baseline_total: float
    slope_threshold: float

    @property
    def stationary(self) -> bool:
        return self.worst_slope >= self.slope_threshold

    @property
    def beats_baseline(self) -> bool:
        return self.energy_total <= self.baseline_total + 1e-12


def validate_minimizer(P: NBodyDensity, mu: OneBodyDensity, eps: float,
                       cost: CostSpec, n_directions: int = 200, seed: int = 0,
                       tau: float = 1e-3) -> StationarityReport:
    """First-order check of P against random feasible directions.

    Directions are Q - P for random feasible couplings Q, so P + t (Q - P)
    stays feasible for t in [0, 1]. By convexity the measured slope at tau
    upper-bounds the slope at 0+, so a clearly negative value certifies
    non-minimality while values above the threshold support stationarity.
    """
    grid = P.grid
    if marginal_residual(P.values, grid, mu.values) > 1e-6:
        raise ConstraintError("validate_minimizer expects a feasible P (residual 1e-6)")
    vee = vee_field(grid, cost)
    nd = grid.d * grid.N
    E0, _, _ = _energy_of(P.values, grid, eps, vee)
    worst = np.inf
    for k in range(n_directions):
        Q = random_feasible_coupling(mu, seed=seed * 100003 + k)
        trial = (1.0 - tau) * P.values + tau * Q
        E_t, _, _ = _energy_of(trial, grid, eps, vee)
        slope = (E_t - E0) / tau
        worst = min(worst, slope)
    base = np.array(1.0)
    for _ in range(grid.N):
        base = np.multiply.outer(base, mu.values)
    base = normalized(base.reshape(grid.joint_shape), grid.h)
    E_base, _, _ = _energy_of(base, grid, eps, vee)
    return StationarityReport(
        marginal_residual=marginal_residual(P.values, grid, mu.values),
        worst_slope=float(worst),
        energy_total=E0,
        baseline_total=E_base,
        slope_threshold=-1e-6 * max(abs(E0), 1e-300),
    )
