"""Strategy-update algorithms for bidders.

Three learners share one interface:

* naive: ascend the relaxed own utility, treating everyone else as frozen.
* lola: ascend the utility after everyone else takes one predicted
  naive step, differentiating through those predictions (the shaping terms
  are Jacobian-vector products approximated by central finite differences).
* pg: zeroth order. For each of K' perturbation directions, retrain a cloned
  mechanism for T steps against the perturbed strategy (the other bidders
  held fixed), evaluate the realized hard utility under the retrained
  mechanism, and step along the direction whose utility-per-unit-step is the
  largest positive value.

All randomness comes from per-round generator substreams handed in by the
caller, and candidate evaluations share common random numbers.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import bidders as bd
from . import diffcore as dc
from . import mechanisms as mech
from .errors import ConfigError, NumericError

__all__ = [
    "LearnerConfig",
    "LearnerContext",
    "DirectionHistory",
    "naive_step",
    "lola_step",
    "inner_loop",
    "sample_direction",
    "pseudo_gradient",
    "pg_step",
    "make_learner",
    "NaiveLearner",
    "LolaLearner",
    "PGLearner",
    "profile_bids",
    "hard_utilities",
    "run_mechanism",
]

LEARNER_KINDS = ("naive", "lola", "pg")


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters shared by the update rules.

    `lookahead_rate` (the predicted step size of the other agents and the
    inner retraining rate) defaults to the seller's actual training rate.
    `step_bound` is the perturbation/update norm for a one-dimensional
    strategy and is scaled by sqrt(dim) for multi-dimensional ones.
    `discount` is recorded for completeness; the updates operate in the
    converged-mechanism limit where it drops out.
    """

    kind: str
    learning_rate: float = 1.0
    lookahead_rate: float | None = None
    inner_steps: int = 100
    directions: int = 8
    direction_memory: int = 3
    similarity_bound: float = 0.0
    step_bound: float = 0.05
    discount: float = 0.99
    batch_size: int = 2048
    inner_batch_size: int = 128
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ConfigError(f"unknown learner kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.lookahead_rate is not None and self.lookahead_rate < 0:
            raise ConfigError("lookahead_rate must be nonnegative")
        if self.inner_steps < 1 or self.directions < 1:
            raise ConfigError("inner_steps and directions must be >= 1")
        if self.direction_memory < 0:
            raise ConfigError("direction_memory must be >= 0")
        if self.step_bound <= 0:
            raise ConfigError("step_bound must be positive")
        if not 0 < self.discount <= 1:
            raise ConfigError("discount must be in (0, 1]")
        if self.batch_size < 1 or self.inner_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")


@dataclass
class LearnerContext:
    """Everything one bidder observes and uses during its round-t update."""

    bidder: int
    strategies: list
    seller: object
    theta: object  # announced MechanismParams, or None for first-price
    specs: list
    observed_bids: np.ndarray
    observed_own_values: np.ndarray
    observe_opponents: bool
    tau_alloc: float
    tau_sort: float
    rng: np.random.Generator

    @property
    def n_bidders(self):
        return len(self.strategies)

    def lookahead(self, config):
        if config.lookahead_rate is not None:
            return config.lookahead_rate
        rate = getattr(self.seller, "learning_rate", None)
        if rate is None:
            raise ConfigError(
                "lookahead_rate must be set explicitly for non-trainable sellers"
            )
        return rate


# ---------------------------------------------------------------------------
# Shared evaluation helpers
# ---------------------------------------------------------------------------


def profile_bids(strategies, values):
    """Hard bids of every bidder on a (B, n) value batch."""
    return np.column_stack(
        [bd.apply_strategy(s, values[:, i]) for i, s in enumerate(strategies)]
    )


def run_mechanism(seller, theta, bids):
    """(alloc, payments) under explicit params when available, else the
    seller's fixed rule."""
    if theta is not None and isinstance(theta, mech.MechanismParams):
        return mech.run_auction_batch(theta, bids)
    return seller.run_batch(bids)


def hard_utilities(strategies, seller, theta, values):
    """Realized mean utilities per bidder and mean revenue on a value batch."""
    bids = profile_bids(strategies, values)
    alloc, pay = run_mechanism(seller, theta, bids)
    utilities = (alloc * values - pay).mean(axis=0)
    return utilities, float(pay.sum(axis=1).mean())


def _draw_values(ctx, config, size):
    return np.column_stack([spec.sample(ctx.rng, size) for spec in ctx.specs])


def _soft_utility_grad(
    ctx,
    config,
    param_agent,
    utility_agent,
    values,
    strategies=None,
    theta=None,
):
    """Gradient of `utility_agent`'s relaxed utility w.r.t. `param_agent`.

    `param_agent` is a bidder index or "seller"; everyone else enters as
    hard-bid constants. Returns (mean utility value, flat gradient).
    """
    strategies = strategies if strategies is not None else ctx.strategies
    theta = theta if theta is not None else ctx.theta
    tape = dc.Tape()
    n = ctx.n_bidders

    if param_agent == "seller":
        leaves = {k: tape.leaf(v) for k, v in theta.nets.segments().items()}
        net_parts = [
            (leaves[f"log_slope_{k}"], leaves[f"intercept_{k}"]) for k in range(n)
        ]
        ordered_leaves = [leaves[name] for name in theta.nets.names]
    else:
        segs = bd.strategy_segments(strategies[param_agent])
        leaves = {k: tape.leaf(v) for k, v in segs.items()}
        ordered_leaves = list(leaves.values())
        net_parts = [theta.net(k) for k in range(n)] if theta is not None else None

    bids_cols = []
    for k in range(n):
        if param_agent == k:
            col = bd.bid_graph(strategies[k], leaves, values[:, k], ctx.tau_sort)
        else:
            col = bd.apply_strategy(strategies[k], values[:, k])
        bids_cols.append(col)

    if theta is None:  # first-price seller
        per_sample = mech.first_price_soft_utility_graph(
            bids_cols, utility_agent, values[:, utility_agent], ctx.tau_alloc
        )
    else:
        per_sample = mech.soft_utility_graph(
            net_parts,
            theta.reserve_virtual,
            bids_cols,
            utility_agent,
            values[:, utility_agent],
            ctx.tau_alloc,
            ctx.tau_sort,
        )
    utility = dc.vmean(per_sample)
    tape.backward(utility)
    grads = []
    for leaf in ordered_leaves:
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        grads.append(np.asarray(g).reshape(-1))
    flat = np.concatenate(grads)
    if not np.isfinite(flat).all():
        raise NumericError("non-finite utility gradient")
    return float(utility.value), flat


def _soft_revenue_grad(ctx, config, values, strategies=None):
    """Seller's relaxed-revenue gradient over its flat parameters."""
    strategies = strategies if strategies is not None else ctx.strategies
    theta = ctx.theta
    bids = profile_bids(strategies, values)
    tape = dc.Tape()
    leaves = {k: tape.leaf(v) for k, v in theta.nets.segments().items()}
    net_parts = [
        (leaves[f"log_slope_{k}"], leaves[f"intercept_{k}"])
        for k in range(ctx.n_bidders)
    ]
    loss = mech._soft_revenue_graph(
        net_parts, theta.reserve_virtual, bids, ctx.tau_alloc, ctx.tau_sort
    )
    tape.backward(loss)
    grads = []
    for name in theta.nets.names:
        leaf = leaves[name]
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        grads.append(np.asarray(g).reshape(-1))
    return np.concatenate(grads)


def _project(strategy, flat):
    """Keep updated parameters inside the feasible strategy space (bids must
    stay nonnegative, so shading coefficients cannot cross zero)."""
    if strategy.kind == "linear":
        return np.maximum(flat, 1e-3)
    return flat


def _bounded_step(flat, grad, eta, bound):
    step = eta * grad
    norm = float(np.linalg.norm(step))
    if norm > bound:
        step = step * (bound / norm)
    return flat + step


def effective_step_bound(config, dim):
    return config.step_bound * np.sqrt(dim) if dim > 1 else config.step_bound


def naive_step(ctx, config):
    """One ascent step on the bidder's relaxed utility, others frozen."""
    own = ctx.strategies[ctx.bidder]
    if not own.trainable:
        raise ConfigError(f"strategy kind {own.kind!r} is not trainable")
    if config.learning_rate == 0.0:
        return own
    values, strategies = _gradient_values(ctx, config)
    _, grad = _soft_utility_grad(
        ctx, config, ctx.bidder, ctx.bidder, values, strategies=strategies
    )
    flat = own.flat_params()
    bound = effective_step_bound(config, flat.size)
    return own.with_flat(
        _project(own, _bounded_step(flat, grad, config.learning_rate, bound))
    )


def _gradient_values(ctx, config):
    """Value matrix and effective strategy profile for gradient batches.

    Without observable opponent strategies, opponents appear as their
    observed bids read truthfully: the value column carries the bid and the
    effective strategy is truthful, which reproduces the bid as a constant.
    """
    i = ctx.bidder
    if ctx.observe_opponents:
        return _draw_values(ctx, config, config.batch_size), ctx.strategies
    rows = ctx.rng.integers(0, ctx.observed_bids.shape[0], size=config.batch_size)
    values = np.empty((config.batch_size, ctx.n_bidders))
    values[:, i] = ctx.observed_own_values[rows]
    strategies = list(ctx.strategies)
    for j in range(ctx.n_bidders):
        if j != i:
            values[:, j] = ctx.observed_bids[rows, j]
            strategies[j] = bd.Truthful()
    return values, strategies


def _predicted_moves(ctx, config, values, own_strategy):
    """One predicted naive step for every other agent, as flat deltas."""
    eta_hat = ctx.lookahead(config)
    strategies = list(ctx.strategies)
    strategies[ctx.bidder] = own_strategy
    moves = {}
    for j, s in enumerate(strategies):
        if j == ctx.bidder or not s.trainable:
            continue
        _, g = _soft_utility_grad(ctx, config, j, j, values, strategies=strategies)
        moves[j] = eta_hat * g
    if ctx.theta is not None and getattr(ctx.seller, "trainable", False):
        moves["seller"] = eta_hat * _soft_revenue_grad(
            ctx, config, values, strategies=strategies
        )
    return moves


def _apply_moves(ctx, moves):
    """Shifted copies of the opponents and mechanism after predicted moves."""
    strategies = list(ctx.strategies)
    for j, delta in moves.items():
        if j == "seller":
            continue
        s = strategies[j]
        strategies[j] = s.with_flat(s.flat_params() + delta)
    theta = ctx.theta
    if "seller" in moves and theta is not None:
        theta = replace(theta, nets=theta.nets.with_values(theta.nets.values + moves["seller"]))
    return strategies, theta


def lola_step(ctx, config):
    """Ascend the utility after one predicted naive step of the others,
    differentiating through the predictions.

    The direct term is the own-utility gradient evaluated at the shifted
    opponents and mechanism. The shaping terms contract the sensitivity of
    each predicted move to the bidder's own parameters (central differences,
    common random numbers) against the utility gradient w.r.t. that agent.
    With a zero lookahead rate everything collapses to the naive update on
    the same batch.
    """
    i = ctx.bidder
    own = ctx.strategies[i]
    if not own.trainable:
        raise ConfigError(f"strategy kind {own.kind!r} is not trainable")
    if not ctx.observe_opponents:
        raise ConfigError("lola requires observable opponent strategies")
    values, _ = _gradient_values(ctx, config)
    flat = own.flat_params()
    bound = effective_step_bound(config, flat.size)

    moves = _predicted_moves(ctx, config, values, own)
    shifted_strategies, shifted_theta = _apply_moves(ctx, moves)
    _, direct = _soft_utility_grad(
        ctx, config, i, i, values, strategies=shifted_strategies, theta=shifted_theta
    )
    if ctx.lookahead(config) == 0.0:
        return own.with_flat(
            _project(own, _bounded_step(flat, direct, config.learning_rate, bound))
        )

    # utility gradients w.r.t. each other agent, at the current point
    partials = {}
    for j in moves:
        if j == "seller":
            _, partials[j] = _soft_utility_grad(ctx, config, "seller", i, values)
        else:
            _, partials[j] = _soft_utility_grad(ctx, config, j, i, values)

    shaping = np.zeros_like(flat)
    h = config.fd_step
    for k in range(flat.size):
        up = own.with_flat(flat + h * np.eye(flat.size)[k])
        down = own.with_flat(flat - h * np.eye(flat.size)[k])
        moves_up = _predicted_moves(ctx, config, values, up)
        moves_down = _predicted_moves(ctx, config, values, down)
        for j, partial in partials.items():
            jac_col = (moves_up[j] - moves_down[j]) / (2 * h)
            shaping[k] += float(jac_col @ partial)
    grad = direct + shaping
    if not np.isfinite(grad).all():
        raise NumericError("non-finite lookahead gradient")
    return own.with_flat(
        _project(own, _bounded_step(flat, grad, config.learning_rate, bound))
    )


# ---------------------------------------------------------------------------
# Pseudo-gradient machinery
# ---------------------------------------------------------------------------


@dataclass
class DirectionHistory:
    """Rolling window of the last `memory` accepted perturbations."""

    memory: int
    entries: deque = field(default_factory=deque)

    def add(self, delta):
        if self.memory > 0:
            self.entries.append(np.asarray(delta, dtype=np.float64))
            while len(self.entries) > self.memory:
                self.entries.popleft()

    def state_dict(self):
        return {"memory": self.memory, "entries": [e.tolist() for e in self.entries]}

    @classmethod
    def from_state_dict(cls, state):
        hist = cls(state["memory"])
        for e in state["entries"]:
            hist.entries.append(np.asarray(e, dtype=np.float64))
        return hist


def sample_direction(history, dim, step_norm, similarity_bound, rng, max_tries=1000):
    """Sphere-uniform perturbation of norm `step_norm` whose inner product
    with each remembered direction stays below `similarity_bound`."""
    for _ in range(max_tries):
        g = rng.standard_normal(dim)
        norm = np.linalg.norm(g)
        if norm == 0.0:
            continue
        delta = step_norm * g / norm
        if all(float(delta @ h) < similarity_bound for h in history.entries):
            history.add(delta)
            return delta
    raise ConfigError(
        "could not sample a direction satisfying the similarity constraint; "
        "raise similarity_bound or lower direction_memory"
    )


def _inner_value_stream(ctx, config):
    """Shared per-step value batches for the simulated retraining."""
    return [
        _draw_values(ctx, config, config.inner_batch_size)
        for _ in range(config.inner_steps)
    ]


def _inner_bid_batches(ctx, config, candidates, value_stream):
    """Bid batches (steps x candidates x batch x bidders) for cloned
    retraining: the candidate strategy varies, rivals are held fixed."""
    i = ctx.bidder
    n = ctx.n_bidders
    batches = []
    for values in value_stream:
        base = np.empty((len(candidates), values.shape[0], n))
        if ctx.observe_opponents:
            for j in range(n):
                if j != i:
                    base[:, :, j] = bd.apply_strategy(ctx.strategies[j], values[:, j])
        else:
            rows = ctx.rng.integers(0, ctx.observed_bids.shape[0], size=values.shape[0])
            for j in range(n):
                if j != i:
                    base[:, :, j] = ctx.observed_bids[rows, j]
        for c, cand in enumerate(candidates):
            base[c, :, i] = bd.apply_strategy(cand, values[:, i])
        batches.append(base)
    return batches


def inner_loop(ctx, config, candidate, value_stream=None):
    """Retrain a cloned mechanism for T steps against the candidate strategy
    (rivals frozen); the live mechanism is never touched. Non-trainable
    sellers return their announced mechanism unchanged."""
    if not getattr(ctx.seller, "trainable", False):
        return ctx.theta
    if value_stream is None:
        value_stream = _inner_value_stream(ctx, config)
    batches = _inner_bid_batches(ctx, config, [candidate], value_stream)
    return ctx.seller.simulate_training([b[0] for b in batches])


def _eval_rival_columns(ctx, config, values):
    """Rival bid columns for hard-utility evaluation, shared across all
    candidates in one outer step (common random numbers)."""
    i = ctx.bidder
    cols = np.zeros_like(values)
    if ctx.observe_opponents:
        for j, s in enumerate(ctx.strategies):
            if j != i:
                cols[:, j] = bd.apply_strategy(s, values[:, j])
    else:
        rows = ctx.rng.integers(0, ctx.observed_bids.shape[0], size=values.shape[0])
        for j in range(ctx.n_bidders):
            if j != i:
                cols[:, j] = ctx.observed_bids[rows, j]
    return cols


def _hard_utility_under(ctx, own_strategy, theta, values, rival_cols):
    i = ctx.bidder
    bids = rival_cols.copy()
    bids[:, i] = bd.apply_strategy(own_strategy, values[:, i])
    alloc, pay = run_mechanism(ctx.seller, theta, bids)
    return float((alloc[:, i] * values[:, i] - pay[:, i]).mean())


def pseudo_gradient(ctx, config, delta, value_stream=None, eval_values=None):
    """Finite difference of converged-mechanism utility per unit step:
    the candidate is evaluated under the mechanism the seller would retrain
    to, the incumbent under today's mechanism, on common random numbers."""
    own = ctx.strategies[ctx.bidder]
    candidate = own.with_flat(own.flat_params() + delta)
    theta_hat = inner_loop(ctx, config, candidate, value_stream)
    if eval_values is None:
        eval_values = _draw_values(ctx, config, config.batch_size)
    rival_cols = _eval_rival_columns(ctx, config, eval_values)
    u_candidate = _hard_utility_under(ctx, candidate, theta_hat, eval_values, rival_cols)
    u_base = _hard_utility_under(ctx, own, ctx.theta, eval_values, rival_cols)
    return (u_candidate - u_base) / float(np.linalg.norm(delta))


def pg_step(ctx, config, history):
    """One outer pseudo-gradient update (K' directions, batched clones)."""
    i = ctx.bidder
    own = ctx.strategies[i]
    if not own.trainable:
        raise ConfigError(f"strategy kind {own.kind!r} is not trainable")
    flat = own.flat_params()
    bound = effective_step_bound(config, flat.size)

    deltas = [
        sample_direction(history, flat.size, bound, config.similarity_bound, ctx.rng)
        for _ in range(config.directions)
    ]
    candidates = [own.with_flat(flat + d) for d in deltas]

    eval_values = _draw_values(ctx, config, config.batch_size)
    rival_cols = _eval_rival_columns(ctx, config, eval_values)
    u_base = _hard_utility_under(ctx, own, ctx.theta, eval_values, rival_cols)

    if getattr(ctx.seller, "trainable", False):
        value_stream = _inner_value_stream(ctx, config)
        batches = _inner_bid_batches(ctx, config, candidates, value_stream)
        theta_hats = ctx.seller.simulate_training_stacked(batches)
    else:
        theta_hats = [ctx.theta] * len(candidates)

    best_grad = 0.0
    best_delta = None
    for delta, candidate, theta_hat in zip(deltas, candidates, theta_hats):
        u_candidate = _hard_utility_under(ctx, candidate, theta_hat, eval_values, rival_cols)
        grad = (u_candidate - u_base) / bound
        if grad > best_grad:
            best_grad = grad
            best_delta = delta
    if best_delta is None:
        return own
    # realized displacement: learning rate times the pseudo-gradient along
    # the winning unit direction, never more than the step bound itself
    size = min(config.learning_rate * best_grad, bound)
    return own.with_flat(_project(own, flat + size * (best_delta / bound)))


# ---------------------------------------------------------------------------
# Stateful wrappers used by the arena
# ---------------------------------------------------------------------------


class NaiveLearner:
    kind = "naive"

    def __init__(self, config):
        self.config = config

    def step(self, ctx):
        return naive_step(ctx, self.config)

    def state_dict(self):
        return {}

    def load_state_dict(self, state):
        pass


class LolaLearner:
    kind = "lola"

    def __init__(self, config):
        self.config = config

    def step(self, ctx):
        return lola_step(ctx, self.config)

    def state_dict(self):
        return {}

    def load_state_dict(self, state):
        pass


class PGLearner:
    kind = "pg"

    def __init__(self, config):
        self.config = config
        self.history = DirectionHistory(config.direction_memory)

    def step(self, ctx):
        return pg_step(ctx, self.config, self.history)

    def state_dict(self):
        return {"history": self.history.state_dict()}

    def load_state_dict(self, state):
        self.history = DirectionHistory.from_state_dict(state["history"])


def make_learner(config):
    cls = {"naive": NaiveLearner, "lola": LolaLearner, "pg": PGLearner}[config.kind]
    return cls(config)
