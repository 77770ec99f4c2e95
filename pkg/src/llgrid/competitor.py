"""Trial couplings built by swapping first-particle marginals of two bumps.

Two disjoint bump cutoffs are centered at joint configurations y and z and
scaled so both carry the same mass m under P. The pieces eta_i * P are
marginalized onto particle 1 and onto particles 2..N, recombined as products
with the particle-1 factors exchanged, and reinserted:

    Pbar = P - eta1 P - eta2 P + (rho1 of piece 2)(rest of piece 1)/m
                               + (rho1 of piece 1)(rest of piece 2)/m.

Because the recombination reuses exact discrete marginals, Pbar keeps every
one-body marginal of P exactly (in the node sums, not just asymptotically),
stays nonnegative whenever eta1 + eta2 <= 1, and changes the interaction
energy only through pairs involving particle 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (CapRequiredError, ConstraintError, CutoffDegeneracyError,
                     DegenerateInputError, DomainError)
from .functionals import (CostSpec, c1_field, cutoff_penalty, fisher_information,
                          interaction_energy, vee_field)
from .grids import GridSpec, NBodyDensity, dist_sq_field, integrate, marginal_values


# ---------------------------------------------------------------------------
# Bump profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BumpProfile:
    """Radial cutoff on the unit ball of the joint space.

    "prop-decay": eta(x) = min((1+delta)(1-|x|)_+/delta, 1)^2, identically 1
    inside radius 1/(1+delta) with |grad sqrt(eta)| = (1+delta)/delta on the
    outer annulus. "smooth-c1": a C1 cubic hat, 1 inside radius 1/2.
    """

    shape: str = "prop-decay"
    delta: float = 0.5

    def __post_init__(self):
        if self.shape not in ("prop-decay", "smooth-c1"):
            raise DomainError(f"unknown bump profile {self.shape!r}")
        if self.shape == "prop-decay" and not 0 < self.delta <= 1:
            raise DomainError(f"prop-decay needs delta in (0, 1], got {self.delta}")

    def sqrt_radial(self, t):
        """sqrt(eta) at scaled radius t = |x| / r."""
        t = np.asarray(t, dtype=float)
        if self.shape == "prop-decay":
            return np.clip((1.0 + self.delta) * np.maximum(1.0 - t, 0.0) / self.delta,
                           0.0, 1.0)
        u = np.clip((1.0 - t) / 0.5, 0.0, 1.0)
        return np.sqrt(u * u * (3.0 - 2.0 * u))

    def radial(self, t):
        s = self.sqrt_radial(t)
        return s * s

    @property
    def plateau_radius(self) -> float:
        return 1.0 / (1.0 + self.delta) if self.shape == "prop-decay" else 0.5

    def field(self, grid: GridSpec, center, r: float) -> np.ndarray:
        """Unscaled bump on the joint grid, centered at a configuration."""
        nd = grid.d * grid.N
        t = np.sqrt(dist_sq_field(grid, np.asarray(center, float), nd)) / r
        return self.radial(t)


# ---------------------------------------------------------------------------
# Swap state
# ---------------------------------------------------------------------------

@dataclass
class SwapState:
    """All intermediates of the swap construction (products filled lazily)."""

    grid: GridSpec
    y: np.ndarray
    z: np.ndarray
    r1: float
    r2: float
    profile: BumpProfile
    lam1: float
    lam2: float
    m: float
    eta1: np.ndarray
    eta2: np.ndarray
    rho1_1: np.ndarray | None = None
    rho1_2: np.ndarray | None = None
    rhohat1_1: np.ndarray | None = None
    rhohat1_2: np.ndarray | None = None
    P1: np.ndarray | None = None
    P2: np.ndarray | None = None
    Pbar: np.ndarray | None = None

    def scalars(self) -> dict:
        """JSON-friendly scalar summary."""
        return {
            "y": [float(v) for v in self.y],
            "z": [float(v) for v in self.z],
            "r1": self.r1,
            "r2": self.r2,
            "lam1": self.lam1,
            "lam2": self.lam2,
            "m": self.m,
            "profile": self.profile.shape,
            "profile_delta": self.profile.delta,
        }


def make_bumps(P: NBodyDensity, y, z, r1: float, r2: float,
               profile: BumpProfile | None = None, max_scale: float = 1.0) -> SwapState:
    """Equal-mass bump pair around y and z with disjoint supports.

    The scale of the heavier bump is fixed at min(1, mass ratio) * max_scale
    and the other follows by linearity of the bump mass in its scale, so the
    equal-mass condition needs one division, no iteration.
    """
    grid = P.grid
    if grid.N < 2:
        raise ConstraintError("the swap construction needs at least two particles")
    if profile is None:
        profile = BumpProfile()
    if r1 <= 0 or r2 <= 0:
        raise DomainError("bump radii must be positive")
    if not 0 < max_scale <= 1:
        raise DomainError(f"max_scale must be in (0, 1], got {max_scale}")
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    gap = float(np.linalg.norm(y - z))
    if r1 + r2 >= gap:
        raise ConstraintError(
            f"bump supports overlap: r1 + r2 = {r1 + r2} >= |y - z| = {gap}")
    e1 = profile.field(grid, y, r1)
    e2 = profile.field(grid, z, r2)
    raw1 = integrate(e1 * P.values, grid.h)
    raw2 = integrate(e2 * P.values, grid.h)
    if raw1 <= 0.0:
        raise DegenerateInputError(f"ball around y={y.tolist()} carries no mass")
    if raw2 <= 0.0:
        raise DegenerateInputError(f"ball around z={z.tolist()} carries no mass")
    lam1 = min(1.0, raw2 / raw1) * max_scale
    lam2 = lam1 * raw1 / raw2
    eta1 = lam1 * e1
    eta2 = lam2 * e2
    m = lam1 * raw1
    if abs(lam1 * raw1 - lam2 * raw2) > 1e-12:
        raise ConstraintError("equal-mass tuning failed beyond 1e-12")
    if float((eta1 + eta2).max()) > 1.0 + 1e-12:
        raise ConstraintError("eta1 + eta2 exceeds 1 despite disjoint supports")
    return SwapState(grid=grid, y=y, z=z, r1=r1, r2=r2, profile=profile,
                     lam1=lam1, lam2=lam2, m=m, eta1=eta1, eta2=eta2)


def swap_competitor(state: SwapState, P: NBodyDensity) -> NBodyDensity:
    """Assemble Pbar from a validated SwapState; fills the state's products."""
    grid = state.grid
    if grid != P.grid:
        raise ConstraintError("swap state and density live on different grids")
    if state.m <= 0:
        raise DegenerateInputError("swap state has zero common mass")
    rest = list(range(2, grid.N + 1))
    piece1 = state.eta1 * P.values
    piece2 = state.eta2 * P.values
    state.rho1_1 = marginal_values(piece1, grid, [1])
    state.rho1_2 = marginal_values(piece2, grid, [1])
    state.rhohat1_1 = marginal_values(piece1, grid, rest)
    state.rhohat1_2 = marginal_values(piece2, grid, rest)
    state.P1 = np.multiply.outer(state.rho1_2, state.rhohat1_1) / state.m
    state.P2 = np.multiply.outer(state.rho1_1, state.rhohat1_2) / state.m
    pbar = P.values - piece1 - piece2 + state.P1 + state.P2
    floor = float(pbar.min())
    if floor < -1e-15 * max(float(pbar.max()), 1.0):
        raise ConstraintError(f"competitor density went negative: min {floor:.3e}")
    state.Pbar = np.maximum(pbar, 0.0)
    return NBodyDensity(grid, state.Pbar)


# ---------------------------------------------------------------------------
# Energy comparison of the swap
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SwapEnergyReport:
    """Both sides of the kinetic bound and of the exact interaction identity."""

    kinetic_lhs: float
    kinetic_rhs: float
    vee_lhs: float
    vee_rhs: float

    @property
    def kinetic_slack(self) -> float:
        return self.kinetic_rhs - self.kinetic_lhs

    @property
    def vee_residual(self) -> float:
        return abs(self.vee_lhs - self.vee_rhs) / max(abs(self.vee_lhs), 1.0)

    def as_dict(self) -> dict:
        return {"kinetic_lhs": self.kinetic_lhs, "kinetic_rhs": self.kinetic_rhs,
                "vee_lhs": self.vee_lhs, "vee_rhs": self.vee_rhs,
                "kinetic_slack": self.kinetic_slack,
                "vee_residual": self.vee_residual}


def lemma_swap_energy_check(P: NBodyDensity, state: SwapState, eps: float,
                            cost: CostSpec, vee_rel_tol: float = 1e-10) -> SwapEnergyReport:
    """Compare the competitor's energies against the cutoff-penalty bound.

    The interaction identity is pointwise algebra and must hold to rounding;
    it is asserted at vee_rel_tol. The kinetic side combines exact discrete
    subadditivity and marginal splits with a localization step whose discrete
    defect is O(h), so its slack is reported, not assumed nonnegative.
    """
    grid = state.grid
    if state.Pbar is None:
        swap_competitor(state, P)
    eta3 = 1.0 - state.eta1 - state.eta2
    _check_cutoff_degeneracy(eta3)

    pen = (cutoff_penalty(P.values, state.eta1, grid)
           + cutoff_penalty(P.values, state.eta2, grid)
           + cutoff_penalty(P.values, eta3, grid))
    kinetic_lhs = fisher_information(state.Pbar, grid)
    kinetic_rhs = fisher_information(P.values, grid) + pen

    C1 = c1_field(grid, cost)
    vee = vee_field(grid, cost)
    if np.isinf(C1).any() or np.isinf(vee).any():
        raise CapRequiredError("swap energy check needs a capped cost")
    nd = grid.d * grid.N
    hk = grid.h ** nd
    vee_lhs = float((state.Pbar * vee).sum() * hk)
    removed = float((P.values * (state.eta1 + state.eta2) * C1).sum() * hk)
    added = float(((state.P1 + state.P2) * C1).sum() * hk)
    vee_rhs = float((P.values * vee).sum() * hk) - removed + added

    report = SwapEnergyReport(kinetic_lhs=kinetic_lhs, kinetic_rhs=kinetic_rhs,
                              vee_lhs=vee_lhs, vee_rhs=vee_rhs)
    if report.vee_residual > vee_rel_tol:
        raise ConstraintError(
            f"interaction swap identity violated: relative residual "
            f"{report.vee_residual:.3e} exceeds {vee_rel_tol}")
    return report


def _check_cutoff_degeneracy(eta3: np.ndarray, tol: float = 1e-12):
    """Reject partitions whose leftover piece vanishes with nonzero slope."""
    for ax in range(eta3.ndim):
        g = np.diff(eta3, axis=ax)
        left = [slice(None)] * eta3.ndim
        left[ax] = slice(0, eta3.shape[ax] - 1)
        right = [slice(None)] * eta3.ndim
        right[ax] = slice(1, eta3.shape[ax])
        bad_left = (eta3[tuple(left)] <= tol) & (np.abs(g) > 1e-10)
        bad_right = (eta3[tuple(right)] <= tol) & (np.abs(g) > 1e-10)
        if bad_left.any() or bad_right.any():
            raise CutoffDegeneracyError(
                "eta1 + eta2 reaches 1 where the cutoff gradients do not vanish; "
                "shrink the bump scales (max_scale < 1)")
