"""Doubling-point machinery and the off-diagonal decay pipeline.

The chain implemented here, on a computed minimizer P:

  1. hypothesis check: concentration of the marginal at scale beta, the
     admissible diagonal width alpha, and the smallness of eps N^2;
  2. existence of doubling points: any probability density admits a point
     where the (1+delta)-dilated ball carries at most (1+delta)^{dN}/C_r
     times the mass of the original ball, C_r being the mass retained on the
     eroded reference set (found here by exhaustive scan);
  3. one-step decay: near the diagonal, the mass of a shrunk ball is a
     definite factor below the mass of the full ball, the factor coming from
     comparing the swap competitor's energy with the minimizer's;
  4. iteration: running step 3 across geometrically shrinking radii and
     averaging over the enlarged diagonal compresses its mass by
     exp(-sqrt(A)/6) with A = alpha^2 m(2 alpha) / (8 eps).

All dN exponents generalize the three-dimensional setting; d = 3 reproduces
the reference constants verbatim and other d are labeled as generalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .competitor import BumpProfile, SwapState, make_bumps, swap_competitor
from .errors import (ConstraintError, DomainError, DoublingScanError,
                     HypothesisError)
from .functionals import CostSpec, c1_field
from .grids import (GridSpec, NBodyDensity, OneBodyDensity, ball_mass,
                    ball_mass_field, diagonal_indicator, diagonal_mass, erode,
                    kappa)

SMALLNESS_FACTOR_DEFAULT = 0.01  # quantifies "much smaller than"


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

def C_delta(delta: float, d: int, N: int) -> float:
    """(1+delta)^2 (2 (1+delta)^{dN} - 1) / delta^2, the cutoff-cost constant."""
    if delta <= 0:
        raise DomainError(f"delta must be positive, got {delta}")
    dn = d * N
    return (1.0 + delta) ** 2 * (2.0 * (1.0 + delta) ** dn - 1.0) / delta ** 2


def _largest_alpha_with_m_at_least(cost: CostSpec, threshold: float,
                                   tol: float = 1e-13) -> float:
    """Largest alpha with m(2 alpha) >= threshold, by bisection on decreasing m."""
    if threshold <= 0:
        raise DomainError("threshold must be positive")
    lo = 1e-15
    if cost.m(2 * lo) < threshold:
        raise HypothesisError(
            "cost lower envelope m does not diverge at zero separation; "
            "the decay hypotheses cannot be met")
    hi = lo
    for _ in range(200):
        hi *= 2.0
        if cost.m(2 * hi) < threshold:
            break
    else:
        raise HypothesisError("m never drops below the threshold; alpha unbounded")
    while hi - lo > tol * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if cost.m(2 * mid) >= threshold:
            lo = mid
        else:
            hi = mid
    return lo


def alpha0_threshold(beta: float, eps: float, N: int, d: int, cost: CostSpec) -> float:
    """Largest admissible diagonal width: m(2 alpha0) >= 8 max{(N-1) M(beta/2),
    850 eps N^2 / beta^2}. For the Coulomb profile this is 1/(2 threshold).

    d only labels the report; the 850 shortcut constant absorbs the cutoff
    cost at its near-optimal delta and is dimension-free as written.
    """
    if beta <= 0 or eps <= 0:
        raise DomainError("beta and eps must be positive")
    threshold = 8.0 * max((N - 1) * float(cost.M(beta / 2.0)),
                          850.0 * eps * N * N / (beta * beta))
    return _largest_alpha_with_m_at_least(cost, threshold)


def alpha_max_general(beta: float, N: int, cost: CostSpec) -> float:
    """Largest alpha with m(2 alpha) >= 8 (N-1) M(beta/2) (eps-free part)."""
    threshold = 8.0 * (N - 1) * float(cost.M(beta / 2.0))
    return _largest_alpha_with_m_at_least(cost, threshold)


# ---------------------------------------------------------------------------
# Hypothesis record
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HypothesisCheck:
    """Raw numbers and verdict flags for the localization hypotheses."""

    family: str
    N: int
    d: int
    beta: float
    alpha: float
    eps: float
    kappa_value: float
    smallness_factor: float
    kappa_ok: bool
    alpha_ok: bool
    eps_ok: bool

    @property
    def in_regime(self) -> bool:
        return self.kappa_ok and self.alpha_ok and self.eps_ok

    def failed(self) -> list:
        names = []
        if not self.kappa_ok:
            names.append(f"kappa(mu, beta) = {self.kappa_value:.6g} "
                         f"> 1/(4(N-1)) = {1.0 / (4 * (self.N - 1)):.6g}")
        if not self.alpha_ok:
            names.append("alpha exceeds the admissible diagonal width")
        if not self.eps_ok:
            names.append("eps N^2 is not small against the interaction scale")
        return names


def hypothesis_check(mu: OneBodyDensity, eps: float, alpha: float, beta: float,
                     cost: CostSpec,
                     smallness_factor: float = SMALLNESS_FACTOR_DEFAULT) -> HypothesisCheck:
    """Evaluate the concentration / width / smallness flags (boundary cases pass)."""
    grid = mu.grid
    N, d = grid.N, grid.d
    if N < 2:
        raise ConstraintError("localization hypotheses need N >= 2")
    if alpha <= 0 or beta <= 0 or eps <= 0:
        raise DomainError("alpha, beta, eps must be positive")
    kv = kappa(mu, beta)
    kappa_ok = kv <= 1.0 / (4.0 * (N - 1)) + 1e-12
    if cost.family == "coulomb":
        alpha_ok = alpha <= beta / (32.0 * N) + 1e-15
        eps_ok = eps * N * N <= smallness_factor * alpha / 16.0
    else:
        alpha_ok = float(cost.m(2 * alpha)) >= 8.0 * (N - 1) * float(cost.M(beta / 2.0))
        eps_ok = eps * N * N <= smallness_factor * alpha * alpha * float(cost.m(2 * alpha))
    return HypothesisCheck(family=cost.family, N=N, d=d, beta=beta, alpha=alpha,
                           eps=eps, kappa_value=kv,
                           smallness_factor=smallness_factor,
                           kappa_ok=bool(kappa_ok), alpha_ok=bool(alpha_ok),
                           eps_ok=bool(eps_ok))


# ---------------------------------------------------------------------------
# Doubling points
# ---------------------------------------------------------------------------

def find_doubling_point(P: NBodyDensity, omega: np.ndarray, r: float, delta: float):
    """Exhaustive scan for a node y in omega with
    mass(B(y, (1+delta) r)) <= [(1+delta)^{dN} / C_{delta r}] mass(B(y, r)).

    C_{delta r} is the P-mass retained on omega eroded by delta r. Returns the
    minimizing node's coordinates and its measured ratio.
    """
    grid = P.grid
    if delta <= 0 or r <= 0:
        raise DomainError("r and delta must be positive")
    omega = np.asarray(omega, dtype=bool)
    if omega.shape != grid.joint_shape:
        raise ConstraintError("omega indicator shape mismatch")
    nd = grid.d * grid.N
    eroded = erode(omega, grid.h, delta * r)
    c_mass = float(P.values[eroded].sum() * grid.h ** nd)
    if c_mass <= 0:
        raise HypothesisError("no mass on the eroded reference set (C_{delta r} = 0)")
    bound = (1.0 + delta) ** nd / c_mass
    num = ball_mass_field(P.values, grid.h, (1.0 + delta) * r)
    den = ball_mass_field(P.values, grid.h, r)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0),
                         np.where(num > 0, np.inf, 0.0))
    ratio = np.where(omega, ratio, np.inf)
    flat = int(np.argmin(ratio))
    best = float(ratio.ravel()[flat])
    if not best <= bound * (1.0 + 1e-12):
        raise DoublingScanError(
            f"no node beats the doubling bound {bound:.6g}; best ratio {best:.6g}")
    idx = np.unravel_index(flat, grid.joint_shape)
    return grid.node_point(idx), best


@dataclass(frozen=True)
class ExdoublingReport:
    """Doubling point near the swap target plus the interaction bound check."""

    z: np.ndarray
    doubling_ratio: float
    doubling_bound: float
    eroded_mass: float
    mass_lower_bound: float
    c1_integral: float
    c1_bound: float
    state: SwapState

    @property
    def passed(self) -> bool:
        return (self.doubling_ratio <= self.doubling_bound * (1 + 1e-12)
                and self.c1_integral <= self.c1_bound * (1 + 1e-9))


def exdoubling_near_swap(P: NBodyDensity, mu: OneBodyDensity, y, beta: float,
                         r1: float, r2: float, delta: float,
                         cost: CostSpec) -> ExdoublingReport:
    """Find a swap target z far from y's particles that is a doubling point.

    The admissible set keeps the first coordinate of z away from every
    particle of y and vice versa, so the recombined products only ever pay
    interactions at separation >= beta - r1 - 2 r2; the retained mass on its
    erosion is at least 1 - 2(N-1) kappa(mu, beta) >= 1/2, which makes the
    doubling constant 2 (1+delta)^{dN}.
    """
    grid = P.grid
    N, d = grid.N, grid.d
    if N < 2:
        raise ConstraintError("need N >= 2")
    kv = kappa(mu, beta)
    if kv > 1.0 / (4.0 * (N - 1)) + 1e-12:
        raise HypothesisError(
            f"kappa(mu, beta) = {kv:.6g} exceeds 1/(4(N-1)) = {1 / (4 * (N - 1)):.6g}")
    if not r1 + 2 * r2 < beta:
        raise HypothesisError(f"need r1 + 2 r2 < beta, got {r1 + 2 * r2} vs {beta}")
    y = np.asarray(y, dtype=float)
    margin = delta * r2 / (1.0 + delta)
    cut = beta - margin

    pts = grid.one_body_points()
    y_blocks = [y[(i - 1) * d:i * d] for i in range(1, N + 1)]
    # first block: far from every other particle of y
    mask_first = np.ones(len(pts), dtype=bool)
    for i in range(2, N + 1):
        dist = np.linalg.norm(pts - y_blocks[i - 1], axis=1)
        mask_first &= dist >= cut
    # remaining blocks: far from y's first particle
    dist1 = np.linalg.norm(pts - y_blocks[0], axis=1)
    mask_rest = dist1 >= cut
    one_shape = (grid.M,) * d
    nd = d * N
    omega = np.ones(grid.joint_shape, dtype=bool)
    for i in range(1, N + 1):
        shape = [1] * nd
        for ax in grid.block_axes(i):
            shape[ax] = grid.M
        block_mask = (mask_first if i == 1 else mask_rest).reshape(one_shape)
        omega = omega & block_mask.reshape(shape)

    eroded = erode(omega, grid.h, margin)
    eroded_mass = float(P.values[eroded].sum() * grid.h ** nd)
    mass_lb = 1.0 - 2.0 * (N - 1) * kv
    if eroded_mass + 1e-10 < mass_lb:
        raise HypothesisError(
            f"eroded admissible set keeps mass {eroded_mass:.6g} < {mass_lb:.6g}")
    if eroded_mass < 0.5:
        raise HypothesisError(
            f"eroded admissible set keeps mass {eroded_mass:.6g} < 1/2")

    z, ratio = find_doubling_point(P, omega, r2 / (1.0 + delta), delta)
    state = make_bumps(P, y, z, r1, r2, profile=BumpProfile("prop-decay", delta))
    swap_competitor(state, P)
    C1 = c1_field(grid, cost)
    c1_int = float(((state.P1 + state.P2) * C1).sum() * grid.h ** nd)
    c1_bound = 2.0 * (N - 1) * float(cost.M(beta - r1 - 2 * r2)) * state.m
    if c1_int > c1_bound * (1 + 1e-9):
        raise ConstraintError(
            f"interaction bound violated: {c1_int:.6g} > {c1_bound:.6g}")
    return ExdoublingReport(z=z, doubling_ratio=ratio,
                            doubling_bound=2.0 * (1.0 + delta) ** nd,
                            eroded_mass=eroded_mass, mass_lower_bound=mass_lb,
                            c1_integral=c1_int, c1_bound=c1_bound, state=state)


# ---------------------------------------------------------------------------
# One-step decay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OneStepDecayReport:
    y: np.ndarray
    r1: float
    delta: float
    factor: float
    lhs: float
    rhs: float
    tol: float
    preconditions: dict

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + self.tol) + 1e-15

    @property
    def in_regime(self) -> bool:
        return all(self.preconditions.values())


def _min_pair_distance(grid: GridSpec, y: np.ndarray) -> float:
    blocks = y.reshape(grid.N, grid.d)
    best = np.inf
    for i in range(grid.N):
        for j in range(i + 1, grid.N):
            best = min(best, float(np.linalg.norm(blocks[i] - blocks[j])))
    return best


def one_step_decay_check(P: NBodyDensity, eps: float, alpha: float, delta: float,
                         r1: float, cost: CostSpec, y, beta: float,
                         tol: float = 0.05,
                         enforce_regime: bool = True) -> OneStepDecayReport:
    """Measure mass(B(y, r1/(1+delta))) against the decay factor times
    mass(B(y, r1)).

    The factor 1 / (delta^2 r1^2 m(2 alpha) / (2 (1+delta)^2 eps) + 1) is what
    minimality forces on true minimizers near the diagonal. Preconditions
    (y within alpha of the diagonal, r1 <= alpha/2, and the cutoff-cost
    smallness of eps) raise individually unless enforce_regime is False, in
    which case they are recorded and the inequality is still measured.
    """
    grid = P.grid
    if delta <= 0 or r1 <= 0 or alpha <= 0 or eps <= 0 or beta <= 0:
        raise DomainError("alpha, delta, r1, eps, beta must be positive")
    y = np.asarray(y, dtype=float)
    pre = {
        "y_in_diagonal": _min_pair_distance(grid, y) <= alpha,
        "r1_at_most_half_alpha": r1 <= alpha / 2.0 + 1e-15,
        "eps_small_for_delta": float(cost.m(2 * alpha))
                               > 256.0 * eps * C_delta(delta, grid.d, grid.N) / beta ** 2,
    }
    if enforce_regime:
        for name, ok in pre.items():
            if not ok:
                raise HypothesisError(f"one-step decay precondition failed: {name}")
    factor = 1.0 / (delta ** 2 * r1 ** 2 * float(cost.m(2 * alpha))
                    / (2.0 * (1.0 + delta) ** 2 * eps) + 1.0)
    lhs = ball_mass(P, y, r1 / (1.0 + delta))
    rhs = factor * ball_mass(P, y, r1)
    return OneStepDecayReport(y=y, r1=r1, delta=delta, factor=factor,
                              lhs=lhs, rhs=rhs, tol=tol, preconditions=pre)


# ---------------------------------------------------------------------------
# Iterated decay and the theorem verdict
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayLevel:
    k: int
    radius: float
    next_radius: float
    measured_ratio: float
    allowed_factor: float


@dataclass(frozen=True)
class DecayReport:
    A: float
    delta: float
    k0: int
    levels: tuple
    diag_mass_half: float
    diag_mass_2alpha: float
    measured_ratio: float
    bound: float
    coulomb_exponent_match: float | None

    @property
    def passed(self) -> bool:
        return self.diag_mass_half <= self.bound * self.diag_mass_2alpha + 1e-15

    @property
    def levels_ok(self) -> bool:
        return all(lv.measured_ratio <= lv.allowed_factor + 1e-12 for lv in self.levels)


def decay_exponent(alpha: float, eps: float, cost: CostSpec) -> float:
    """(1/6) sqrt(alpha^2 m(2 alpha) / (8 eps)), the decay rate in the bound."""
    return math.sqrt(alpha * alpha * float(cost.m(2 * alpha)) / (8.0 * eps)) / 6.0


def iterate_decay(P: NBodyDensity, eps: float, alpha: float, cost: CostSpec,
                  n_multiple: float | None = None,
                  smallness_factor: float = SMALLNESS_FACTOR_DEFAULT) -> DecayReport:
    """Run the shrinking-radius cascade and compare the diagonal masses.

    delta solves delta^2 A = e^2 and the level count k0 is bracketed by
    (1+delta)^{2 k0 + 2} <= e^2 <= (1+delta)^{2 k0 + 4}. Per-level ratios are
    measured in the integrated sense: ball masses are averaged (Lebesgue) over
    centers in the enlarged diagonal, exactly the averaging the final step of
    the cascade uses. Radii below one cell are not resolvable and stop the
    cascade early.
    """
    grid = P.grid
    if alpha <= 0 or eps <= 0:
        raise DomainError("alpha and eps must be positive")
    A = alpha * alpha * float(cost.m(2 * alpha)) / (8.0 * eps)
    required = (n_multiple if n_multiple is not None
                else 1.0 / (8.0 * smallness_factor)) * grid.N ** 2
    if A < required:
        raise HypothesisError(
            f"A = {A:.6g} below the required multiple {required:.6g} of N^2")
    delta = math.e / math.sqrt(A)
    k0 = max(0, math.floor(1.0 / math.log1p(delta) - 1.0))

    coulomb_match = None
    if cost.family == "coulomb":
        general = decay_exponent(alpha, eps, cost)
        closed = math.sqrt(alpha / eps) / 24.0
        coulomb_match = abs(general - closed) / closed
        if coulomb_match > 1e-14:
            raise ConstraintError(
                f"coulomb exponent identity broken: relative gap {coulomb_match:.3e}")

    diag = diagonal_indicator(grid, alpha)
    nd = grid.d * grid.N
    levels = []
    prev_mass = None
    prev_radius = alpha / 2.0
    for k in range(k0 + 1):
        radius = (alpha / 2.0) * (1.0 + delta) ** (-k)
        nxt = (alpha / 2.0) * (1.0 + delta) ** (-(k + 1))
        if nxt < grid.h:
            break
        if prev_mass is None or prev_radius != radius:
            field_k = ball_mass_field(P.values, grid.h, radius)
            prev_mass = float(field_k[diag].sum())
        field_k1 = ball_mass_field(P.values, grid.h, nxt)
        mass_k1 = float(field_k1[diag].sum())
        ratio = mass_k1 / prev_mass if prev_mass > 0 else 0.0
        allowed = (1.0 + delta) ** (2 * k + 2) / math.e ** 2
        levels.append(DecayLevel(k=k, radius=radius, next_radius=nxt,
                                 measured_ratio=ratio, allowed_factor=allowed))
        prev_mass, prev_radius = mass_k1, nxt

    mass_half = diagonal_mass(P, alpha / 2.0)
    mass_2a = diagonal_mass(P, 2.0 * alpha)
    bound = math.exp(-math.sqrt(A) / 6.0)
    measured = mass_half / mass_2a if mass_2a > 0 else 0.0
    return DecayReport(A=A, delta=delta, k0=k0, levels=tuple(levels),
                       diag_mass_half=mass_half, diag_mass_2alpha=mass_2a,
                       measured_ratio=measured, bound=bound,
                       coulomb_exponent_match=coulomb_match)


@dataclass(frozen=True)
class VerdictRecord:
    """Both sides of the boxed localization bound, gated by the hypotheses."""

    hypothesis: HypothesisCheck
    diag_mass: float
    bound: float
    A: float
    d_generalized: bool

    @property
    def in_regime(self) -> bool:
        return self.hypothesis.in_regime

    @property
    def bound_holds(self) -> bool:
        return self.diag_mass <= self.bound + 1e-15

    @property
    def verdict(self) -> str:
        word = "pass" if self.bound_holds else "fail"
        return word if self.in_regime else f"out-of-regime-{word}"


def theorem_verdict(mu: OneBodyDensity, eps: float, alpha: float, beta: float,
                    cost: CostSpec, P: NBodyDensity,
                    smallness_factor: float = SMALLNESS_FACTOR_DEFAULT) -> VerdictRecord:
    """Record diag mass vs the localization bound; never raises on regime failure."""
    hyp = hypothesis_check(mu, eps, alpha, beta, cost, smallness_factor)
    A = alpha * alpha * float(cost.m(2 * alpha)) / (8.0 * eps)
    bound = math.exp(-decay_exponent(alpha, eps, cost))
    dm = diagonal_mass(P, alpha)
    return VerdictRecord(hypothesis=hyp, diag_mass=dm, bound=bound, A=A,
                         d_generalized=(mu.grid.d != 3))
