"""Tensor grids and discrete one-body / N-body probability densities.

Everything downstream works on an isotropic tensor grid: each of the N
particles lives on the same d-dimensional box [a, b]^d sampled with M
points per axis, so a joint density is an array of shape (M,) * (d * N)
with particle i occupying the contiguous axis block [i*d, (i+1)*d).

Discrete integrals are plain node sums times h**ndim (rectangle rule,
boundary nodes weighted equally; the O(h) quadrature bias is accepted).
Set membership (balls, the enlarged diagonal, erosions) is decided by
node centers: a node belongs to a set iff its center does.

Densities are immutable after construction and all operations here are
pure functions, so concurrent use is safe. Reductions go through numpy's
deterministic pairwise summation, which keeps results reproducible
run-to-run on a fixed platform.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ConstraintError, DomainError, NormalizationError

DEFAULT_MAX_STATES = 10_000_000

ONE_BODY_MASS_TOL = 1e-12
N_BODY_MASS_TOL = 1e-10


# ---------------------------------------------------------------------------
# Grid specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Isotropic tensor discretization of ([a, b]^d)^N.

    d: spatial dimension per particle; N: particle count (N = 1 only for
    sanity runs); M: nodes per axis; h = (b - a) / (M - 1).
    """

    d: int
    N: int
    a: float
    b: float
    M: int
    max_states: int = field(default=DEFAULT_MAX_STATES, compare=False)

    def __post_init__(self):
        if self.d < 1 or self.N < 1:
            raise ConstraintError(f"need d >= 1 and N >= 1, got d={self.d}, N={self.N}")
        if self.M < 2:
            raise ConstraintError(f"need at least 2 nodes per axis, got M={self.M}")
        if not self.b > self.a:
            raise ConstraintError(f"empty box [{self.a}, {self.b}]")
        if self.state_count > self.max_states:
            raise BudgetError(
                f"grid has {self.state_count} joint states, budget is {self.max_states}"
            )

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.M - 1)

    @property
    def state_count(self) -> int:
        return self.M ** (self.d * self.N)

    @property
    def one_body_shape(self) -> tuple:
        return (self.M,) * self.d

    @property
    def joint_shape(self) -> tuple:
        return (self.M,) * (self.d * self.N)

    @property
    def axis(self) -> np.ndarray:
        """Node coordinates along one axis."""
        return np.linspace(self.a, self.b, self.M)

    @property
    def diameter(self) -> float:
        """Largest distance between two one-body grid points."""
        return (self.b - self.a) * np.sqrt(self.d)

    def block_axes(self, i: int) -> tuple:
        """Array axes carrying particle i (1-based)."""
        if not 1 <= i <= self.N:
            raise ConstraintError(f"particle index {i} outside 1..{self.N}")
        return tuple(range((i - 1) * self.d, i * self.d))

    def node_point(self, idx) -> np.ndarray:
        """Coordinates in R^{dN} of the joint node with multi-index idx."""
        ax = self.axis
        return np.array([ax[k] for k in idx], dtype=float)

    def one_body_points(self) -> np.ndarray:
        """All one-body nodes as an (M^d, d) array in C (row-major) order."""
        grids = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack(grids, axis=-1).reshape(-1, self.d)


def pair_distance_sq(grid: GridSpec) -> np.ndarray:
    """Squared Euclidean distances between all one-body node pairs, (M^d, M^d)."""
    pts = grid.one_body_points()
    diff = pts[:, None, :] - pts[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


# ---------------------------------------------------------------------------
# Density containers
# ---------------------------------------------------------------------------

def integrate(values: np.ndarray, h: float) -> float:
    """Node sum times h**ndim."""
    return float(values.sum() * h ** values.ndim)


def tv_distance(p: np.ndarray, q: np.ndarray, h: float) -> float:
    """Total-variation distance (1/2) * integral |p - q| between densities."""
    return 0.5 * float(np.abs(p - q).sum() * h ** p.ndim)


def _validate_density(values: np.ndarray, shape, h: float, mass_tol: float, what: str):
    if values.shape != tuple(shape):
        raise ConstraintError(f"{what}: expected shape {tuple(shape)}, got {values.shape}")
    if np.any(values < 0):
        raise NormalizationError(f"{what}: negative values (min {values.min():.3e})")
    mass = integrate(values, h)
    if abs(mass - 1.0) > mass_tol:
        raise NormalizationError(f"{what}: mass {mass!r} deviates from 1 beyond {mass_tol}")


@dataclass(frozen=True)
class OneBodyDensity:
    """Normalized one-body marginal on grid^d (the rho/N convention)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        _validate_density(vals, self.grid.one_body_shape, self.grid.h,
                          ONE_BODY_MASS_TOL, "one-body density")
        vals.setflags(write=False)


@dataclass(frozen=True)
class NBodyDensity:
    """Joint probability density on grid^{dN} (the |psi|^2 object)."""

    grid: GridSpec
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        _validate_density(vals, self.grid.joint_shape, self.grid.h,
                          N_BODY_MASS_TOL, "N-body density")
        if self.symmetric:
            _check_symmetry(self.grid, vals)
        vals.setflags(write=False)


def _check_symmetry(grid: GridSpec, vals: np.ndarray, samples: int = 128):
    """Spot-check block-permutation invariance on random index tuples."""
    if grid.N == 1:
        return
    rng = np.random.default_rng(20230517)
    scale = float(vals.max()) or 1.0
    for _ in range(samples):
        idx = tuple(rng.integers(0, grid.M, size=grid.d * grid.N))
        perm = rng.permutation(grid.N)
        pidx = tuple(idx[perm[i] * grid.d + k] for i in range(grid.N) for k in range(grid.d))
        if abs(vals[idx] - vals[pidx]) > 1e-10 * scale:
            raise ConstraintError(
                f"density marked symmetric but values differ at {idx} vs {pidx}"
            )


@dataclass(frozen=True)
class IndexSet:
    """Nonempty sorted subset of particle labels {1, ..., N}."""

    members: tuple

    def __post_init__(self):
        mem = tuple(int(i) for i in self.members)
        object.__setattr__(self, "members", mem)
        if not mem:
            raise ConstraintError("index set must be nonempty")
        if any(b <= a for a, b in zip(mem, mem[1:])):
            raise ConstraintError(f"index set must be strictly increasing, got {mem}")
        if mem[0] < 1:
            raise ConstraintError(f"particle labels start at 1, got {mem}")

    def validate_for(self, N: int):
        if self.members[-1] > N:
            raise ConstraintError(f"index set {self.members} exceeds N={N}")

    def complement(self, N: int) -> "IndexSet":
        rest = tuple(i for i in range(1, N + 1) if i not in self.members)
        if not rest:
            raise ConstraintError(f"complement of {self.members} in 1..{N} is empty")
        return IndexSet(rest)


# ---------------------------------------------------------------------------
# Marginals and the coupling constraint
# ---------------------------------------------------------------------------

def marginal(P: NBodyDensity, I: IndexSet) -> np.ndarray:
    """Push-forward of P onto the particles in I (sum out the rest, times h^{d|I^c|})."""
    grid = P.grid
    I.validate_for(grid.N)
    drop = [ax for i in range(1, grid.N + 1) if i not in I.members
            for ax in grid.block_axes(i)]
    if not drop:
        return P.values.copy()
    return P.values.sum(axis=tuple(drop)) * grid.h ** len(drop)


def marginal_values(values: np.ndarray, grid: GridSpec, keep_blocks) -> np.ndarray:
    """marginal() for a raw array; keep_blocks are 1-based particle labels."""
    keep = set(keep_blocks)
    drop = [ax for i in range(1, grid.N + 1) if i not in keep for ax in grid.block_axes(i)]
    if not drop:
        return values.copy()
    return values.sum(axis=tuple(drop)) * grid.h ** len(drop)


@dataclass(frozen=True)
class MarginalReport:
    """Residuals of the fixed-marginal constraint, one TV distance per particle."""

    residuals: tuple
    tol: float

    @property
    def max_residual(self) -> float:
        return max(self.residuals)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol


def check_in_Pi_N(P: NBodyDensity, mu: OneBodyDensity, tol: float = 1e-8) -> MarginalReport:
    """TV distance of every one-body marginal of P from mu."""
    if P.grid != mu.grid:
        raise ConstraintError("P and mu live on different grids")
    res = tuple(
        tv_distance(marginal(P, IndexSet((i,))), mu.values, P.grid.h)
        for i in range(1, P.grid.N + 1)
    )
    return MarginalReport(res, tol)


def marginal_residual(values: np.ndarray, grid: GridSpec, mu_values: np.ndarray) -> float:
    """max-over-particles TV residual for a raw (unwrapped) joint array."""
    return max(
        tv_distance(marginal_values(values, grid, [i]), mu_values, grid.h)
        for i in range(1, grid.N + 1)
    )


# ---------------------------------------------------------------------------
# Balls, concentration, the enlarged diagonal, erosion
# ---------------------------------------------------------------------------

def _ball_offsets(ndim: int, r_cells: float):
    """Integer offset vectors o with |o| <= r_cells, as slicing-ready tuples."""
    K = int(np.floor(r_cells))
    if K < 0:
        return []
    if (2 * K + 1) ** ndim > 20_000_000:
        raise BudgetError(f"ball kernel of radius {r_cells} cells in {ndim}D too large")
    rng = range(-K, K + 1)
    r2 = r_cells * r_cells
    return [o for o in itertools.product(rng, repeat=ndim)
            if sum(c * c for c in o) <= r2]


def _shift_view(arr: np.ndarray, offset):
    """(target, source) slice pairs adding arr shifted by offset with zero fill."""
    tgt, src = [], []
    for o, n in zip(offset, arr.shape):
        if o >= 0:
            tgt.append(slice(0, n - o))
            src.append(slice(o, n))
        else:
            tgt.append(slice(-o, n))
            src.append(slice(0, n + o))
    return tuple(tgt), tuple(src)


def shifted_accumulate(values: np.ndarray, offsets) -> np.ndarray:
    """sum_{o in offsets} values[x + o], zero outside the grid."""
    out = np.zeros_like(values)
    for off in offsets:
        tgt, src = _shift_view(values, off)
        out[tgt] += values[src]
    return out


def dist_sq_field(grid: GridSpec, point: np.ndarray, ndim: int) -> np.ndarray:
    """Squared distance from each node of grid^{ndim axes} to a point in R^ndim."""
    point = np.asarray(point, dtype=float)
    if point.shape != (ndim,):
        raise ConstraintError(f"point must have {ndim} coordinates, got {point.shape}")
    ax_sq = [(grid.axis - point[a]) ** 2 for a in range(ndim)]
    d2 = np.zeros((grid.M,) * ndim)
    for a in range(ndim):
        shape = [1] * ndim
        shape[a] = grid.M
        d2 += ax_sq[a].reshape(shape)
    return d2


def ball_mass(P: NBodyDensity, y, r: float) -> float:
    """P-mass of the closed Euclidean ball B(y, r) in the joint space."""
    if r <= 0:
        raise DomainError(f"ball radius must be positive, got {r}")
    grid = P.grid
    d2 = dist_sq_field(grid, y, grid.d * grid.N)
    return float(P.values[d2 <= r * r].sum() * grid.h ** (grid.d * grid.N))


def ball_mass_field(values: np.ndarray, h: float, r: float) -> np.ndarray:
    """Ball mass around every node at once: (sum of values over B(., r)) * h^ndim."""
    offs = _ball_offsets(values.ndim, r / h)
    return shifted_accumulate(values, offs) * h ** values.ndim


def kappa(mu: OneBodyDensity, r: float) -> float:
    """Concentration function: largest mu-mass of any radius-r ball centered at a node."""
    if r <= 0:
        raise DomainError(f"kappa radius must be positive, got {r}")
    masses = ball_mass_field(mu.values, mu.grid.h, r)
    return float(masses.max())


def diagonal_indicator(grid: GridSpec, alpha: float) -> np.ndarray:
    """Boolean field marking joint nodes where some pair sits within alpha."""
    if grid.N < 2:
        return np.zeros(grid.joint_shape, dtype=bool)
    d2 = pair_distance_sq(grid)
    close = d2 <= alpha * alpha
    nd = grid.d * grid.N
    ind = np.zeros(grid.joint_shape, dtype=bool)
    one_shape = (grid.M,) * grid.d
    for i in range(1, grid.N + 1):
        for j in range(i + 1, grid.N + 1):
            shape = [1] * nd
            for ax in grid.block_axes(i) + grid.block_axes(j):
                shape[ax] = grid.M
            ind = ind | close.reshape(one_shape + one_shape).reshape(shape)
    return ind


def diagonal_mass(P: NBodyDensity, alpha: float) -> float:
    """P-mass of the enlarged diagonal {some |x_i - x_j| <= alpha}."""
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    grid = P.grid
    ind = diagonal_indicator(grid, alpha)
    return float(P.values[ind].sum() * grid.h ** (grid.d * grid.N))


def erode(indicator: np.ndarray, h: float, r: float) -> np.ndarray:
    """Nodes whose whole radius-r node neighborhood lies inside the set."""
    if r < 0:
        raise DomainError(f"erosion radius must be nonnegative, got {r}")
    ind = np.asarray(indicator, dtype=bool)
    if r == 0:
        return ind.copy()
    offs = _ball_offsets(ind.ndim, r / h)
    outside = ~ind
    hit = shifted_accumulate(outside.astype(np.int64), offs)
    return hit == 0


# ---------------------------------------------------------------------------
# Stock densities
# ---------------------------------------------------------------------------

def normalized(values: np.ndarray, h: float) -> np.ndarray:
    mass = integrate(values, h)
    if mass <= 0:
        raise NormalizationError("cannot normalize a field with nonpositive mass")
    return values / mass


def uniform_density(grid: GridSpec) -> OneBodyDensity:
    vals = np.ones(grid.one_body_shape)
    return OneBodyDensity(grid, normalized(vals, grid.h))


def gaussian_density(grid: GridSpec, sigma: float, center=None) -> OneBodyDensity:
    """Isotropic Gaussian truncated to the box and renormalized."""
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if center is None:
        center = np.full(grid.d, 0.5 * (grid.a + grid.b))
    d2 = dist_sq_field(grid, np.asarray(center, dtype=float), grid.d)
    vals = np.exp(-d2 / (2.0 * sigma * sigma))
    return OneBodyDensity(grid, normalized(vals, grid.h))


def product_coupling(mu: OneBodyDensity, N: int | None = None) -> NBodyDensity:
    """Independent coupling mu^(x)N, the canonical feasible point."""
    grid = mu.grid
    N = grid.N if N is None else N
    if N != grid.N:
        raise ConstraintError(f"grid expects N={grid.N}, asked for {N}")
    vals = np.array(1.0)
    for _ in range(N):
        vals = np.multiply.outer(vals, mu.values)
    vals = vals.reshape(grid.joint_shape)
    return NBodyDensity(grid, normalized(vals, grid.h), symmetric=True)


def random_density(grid: GridSpec, seed: int, smooth: int = 0) -> NBodyDensity:
    """Random normalized joint density; smooth > 0 applies that many local averagings."""
    rng = np.random.default_rng(seed)
    vals = rng.random(grid.joint_shape) + 1e-3
    for _ in range(smooth):
        acc = vals.copy()
        for ax in range(vals.ndim):
            acc = acc + np.roll(vals, 1, axis=ax) + np.roll(vals, -1, axis=ax)
        vals = acc / (1 + 2 * vals.ndim)
    return NBodyDensity(grid, normalized(vals, grid.h))


# ---------------------------------------------------------------------------
# Density file format
# ---------------------------------------------------------------------------

FORMAT_TAG = "llgrid"
FORMAT_VERSION = "v1"


def save_density(path, dens):
    """Write `llgrid v1 d N M a b` and the row-major values (round-trip floats)."""
    grid = dens.grid
    N = grid.N if isinstance(dens, NBodyDensity) else 1
    with open(path, "w") as f:
        f.write(f"{FORMAT_TAG} {FORMAT_VERSION} {grid.d} {N} {grid.M} "
                f"{grid.a!r} {grid.b!r}\n")
        flat = dens.values.ravel()
        for start in range(0, flat.size, 8):
            f.write(" ".join(repr(v) for v in flat[start:start + 8]) + "\n")


def with_particle_count(mu: OneBodyDensity, N: int) -> OneBodyDensity:
    """Rebind a one-body density to a grid announcing N particles (file N is 1)."""
    g = mu.grid
    return OneBodyDensity(GridSpec(g.d, N, g.a, g.b, g.M, max_states=g.max_states),
                          mu.values.copy())


def load_density(path, max_states: int = DEFAULT_MAX_STATES):
    """Read a density file; returns OneBodyDensity when N = 1, else NBodyDensity."""
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 7 or header[0] != FORMAT_TAG or header[1] != FORMAT_VERSION:
            raise NormalizationError(f"{path}: not a {FORMAT_TAG} {FORMAT_VERSION} file")
        d, N, M = int(header[2]), int(header[3]), int(header[4])
        a, b = float(header[5]), float(header[6])
        body = f.read().split()
    grid = GridSpec(d=d, N=N, a=a, b=b, M=M, max_states=max_states)
    expected = M ** (d * N)
    if len(body) != expected:
        raise NormalizationError(f"{path}: expected {expected} values, found {len(body)}")
    vals = np.array([float(v) for v in body]).reshape((M,) * (d * N))
    if N == 1:
        return OneBodyDensity(grid, vals)
    return NBodyDensity(grid, vals)
