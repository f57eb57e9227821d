"""Ground-truth layer: closed forms for uniform values, Monte Carlo
estimators, and a brute-force solver for the game induced when the seller
re-optimizes against reported bid distributions.

For values uniform on [lo, hi] the optimal transform of a truthful report is
2v - hi, and a bidder shading linearly by alpha reports Uniform[0, alpha], so
the seller's best response treats bids through 2b - alpha. The grid solver
iterates simultaneous best responses of linear-shading coefficients on a
Monte Carlo utility matrix built with common random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

__all__ = [
    "UniformSpec",
    "uniform_virtual_value",
    "uniform_virtual_value_inverse",
    "mc_utility",
    "MCEstimate",
    "induced_utility",
    "induced_utility_matrix",
    "InducedGameGrid",
    "grid_best_response_dynamics",
    "BestResponseResult",
]


@dataclass(frozen=True)
class UniformSpec:
    """Uniform value distribution on [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.hi > self.lo >= 0.0):
            raise ConfigError(f"need hi > lo >= 0, got lo={self.lo}, hi={self.hi}")

    @property
    def density(self):
        return 1.0 / (self.hi - self.lo)

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size=size)

    def scaled(self, factor):
        return UniformSpec(self.lo, self.hi * factor)


def uniform_virtual_value(spec, v):
    """v - (1 - F(v)) / f(v) for the uniform family: equals 2v - hi."""
    arr = np.asarray(v, dtype=np.float64)
    if np.any(arr < spec.lo - 1e-12) or np.any(arr > spec.hi + 1e-12):
        raise InputError(f"value {v} outside support [{spec.lo}, {spec.hi}]")
    out = 2.0 * arr - spec.hi
    return float(out) if arr.ndim == 0 else out


def uniform_virtual_value_inverse(spec, w):
    """Inverse of the uniform virtual value: (w + hi) / 2."""
    arr = np.asarray(w, dtype=np.float64)
    out = (arr + spec.hi) / 2.0
    return float(out) if arr.ndim == 0 else out


# ---------------------------------------------------------------------------
# Monte Carlo utilities and revenue
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo mean with its standard error."""

    mean: float
    stderr: float
    n_samples: int


def _collect(run_batch, bids, values):
    alloc, pay = run_batch(bids)
    utilities = alloc * values - pay
    revenue = pay.sum(axis=1)
    return utilities, revenue


def mc_utility(strategies, run_batch, specs, n_samples, seed):
    """Unbiased Monte Carlo estimate of per-bidder utilities and revenue.

    `strategies` maps values to bids per bidder (callables), `run_batch`
    produces (alloc, payments) for a (B, n) bid matrix. Returns a list of
    per-bidder MCEstimates and one revenue MCEstimate.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    n = len(specs)
    values = np.column_stack([spec.sample(rng, n_samples) for spec in specs])
    bids = np.column_stack([strategies[i](values[:, i]) for i in range(n)])
    utilities, revenue = _collect(run_batch, bids, values)
    per_bidder = [
        MCEstimate(
            float(utilities[:, i].mean()),
            float(utilities[:, i].std(ddof=1) / np.sqrt(n_samples)),
            n_samples,
        )
        for i in range(n)
    ]
    rev = MCEstimate(
        float(revenue.mean()), float(revenue.std(ddof=1) / np.sqrt(n_samples)), n_samples
    )
    return per_bidder, rev


# ---------------------------------------------------------------------------
# Induced game for linear shading
# ---------------------------------------------------------------------------


def _induced_outcome(alpha_own, alpha_others, v_own, v_others):
    """Win indicator and payment for the focal bidder when every bidder
    shades linearly and the seller runs the mechanism that is optimal for
    the reported Uniform[0, alpha] distributions (virtual value 2b - alpha).

    Shapes broadcast: alpha_own may carry a leading grid axis.
    """
    w_own = np.asarray(alpha_own) * (2.0 * v_own - 1.0)
    rival = np.full(np.shape(v_own)[-1], -np.inf)
    for a, v in zip(alpha_others, v_others):
        rival = np.maximum(rival, a * (2.0 * v - 1.0))
    price_stat = np.maximum(0.0, rival)
    win = (w_own > price_stat) & (w_own > 0.0)
    payment = (price_stat + np.asarray(alpha_own)) / 2.0
    return win, payment


def induced_utility(alpha_i, alpha_others, n_samples=100_000, seed=0):
    """Monte Carlo utility of the focal bidder in the induced game at the
    given linear-shading profile (standard uniform values)."""
    if alpha_i <= 0 or any(a <= 0 for a in alpha_others):
        raise ConfigError("shading coefficients must be positive")
    rng = np.random.default_rng(seed)
    v_own = rng.uniform(0.0, 1.0, n_samples)
    v_others = [rng.uniform(0.0, 1.0, n_samples) for _ in alpha_others]
    win, payment = _induced_outcome(alpha_i, alpha_others, v_own, v_others)
    return float(np.mean(win * (v_own - payment)))


def induced_utility_matrix(grid, n_samples=100_000, seed=0):
    """U[row, col]: focal bidder plays grid[row] against one opponent playing
    grid[col]; common random numbers across all cells.

    The opponent dimension is Monte Carlo; the focal bidder's own value is
    integrated in closed form given the opponent's price statistic t: the
    focal wins for v above theta = t / (2 alpha) + 1/2 and pays (t + alpha)/2,
    so the conditional utility is (1 - theta)(1 + theta - t - alpha)/2 with
    theta clipped at 1. Integrating the smooth dimension keeps per-column
    argmaxes free of sample jitter, which the best-response solver relies on.
    """
    grid = np.asarray(grid, dtype=np.float64)
    rng = np.random.default_rng(seed)
    v_opp = rng.uniform(0.0, 1.0, n_samples)
    # t = max(0, a_opp * (2u - 1)) has an atom at zero exactly on u <= 1/2;
    # above it, t = a_opp * s with s = 2u - 1 > 0 shared across columns
    s = np.sort(2.0 * v_opp[v_opp > 0.5] - 1.0)
    m_hot = s.size
    zero_frac = 1.0 - m_hot / n_samples
    # conditional utility is quadratic in t while t < alpha and zero above:
    # q(alpha, t) = (3/8 - alpha/4) - t/(4 alpha) - t^2 (1-2 alpha)/(8 alpha^2)
    p1 = np.concatenate([[0.0], np.cumsum(s)])
    p2 = np.concatenate([[0.0], np.cumsum(s * s)])
    at_zero = 3.0 / 8.0 - grid / 4.0
    matrix = np.empty((grid.size, grid.size))
    for col, a_opp in enumerate(grid):
        counts = np.searchsorted(s, grid / a_opp, side="left")
        s1 = a_opp * p1[counts]
        s2 = a_opp * a_opp * p2[counts]
        hot_mean = (
            counts * at_zero - s1 / (4.0 * grid) - s2 * (1.0 - 2.0 * grid) / (8.0 * grid**2)
        ) / m_hot
        matrix[:, col] = zero_frac * at_zero + (1.0 - zero_frac) * hot_mean
    return matrix


@dataclass(frozen=True)
class InducedGameGrid:
    """Shading grid plus the focal bidder's utility matrix over it.

    Symmetric two-player readout: utility of player 1 at (x, y) is
    matrix[ix, iy]; player 2's utility there is matrix[iy, ix].
    """

    grid: np.ndarray
    matrix: np.ndarray

    @classmethod
    def build(cls, lo=0.05, hi=1.5, resolution=0.005, n_samples=100_000, seed=0):
        if resolution <= 0:
            raise ConfigError("grid resolution must be positive")
        steps = int(round((hi - lo) / resolution))
        grid = lo + resolution * np.arange(steps + 1)
        return cls(grid, induced_utility_matrix(grid, n_samples, seed))

    def nearest_index(self, alpha):
        return int(np.argmin(np.abs(self.grid - alpha)))


@dataclass(frozen=True)
class BestResponseResult:
    """Fixed point (or quantization cycle average) of best-response dynamics."""

    alphas: tuple
    iterations: int
    converged: bool
    cycle: tuple | None  # visited states of a detected cycle, when any


def grid_best_response_dynamics(game, start, max_iters=200):
    """Iterate simultaneous best responses on the utility matrix.

    Stops at a fixed point. A cycle whose states all sit within one grid
    step of each other is grid quantization around a fixed point of the
    continuous dynamics; it is reported as converged at the cycle average.
    Wider cycles return converged=False with the cycle states attached.
    """
    grid, matrix = game.grid, game.matrix
    state = (game.nearest_index(start[0]), game.nearest_index(start[1]))
    seen = {state: 0}
    history = [state]
    for it in range(1, max_iters + 1):
        i1, i2 = state
        nxt = (int(np.argmax(matrix[:, i2])), int(np.argmax(matrix[:, i1])))
        if nxt == state:
            return BestResponseResult(
                (float(grid[nxt[0]]), float(grid[nxt[1]])), it, True, None
            )
        if nxt in seen:
            cycle = history[seen[nxt]:]
            states = np.array([[grid[a], grid[b]] for a, b in cycle])
            diameter = np.ptp(states, axis=0).max()
            center = tuple(states.mean(axis=0))
            tight = bool(diameter <= (grid[1] - grid[0]) + 1e-12)
            return BestResponseResult(
                center, it, tight, tuple((float(grid[a]), float(grid[b])) for a, b in cycle)
            )
        seen[nxt] = len(history)
        history.append(nxt)
        state = nxt
    return BestResponseResult(
        (float(grid[state[0]]), float(grid[state[1]])), max_iters, False,
        tuple((float(grid[a]), float(grid[b])) for a, b in history[-10:]),
    )
