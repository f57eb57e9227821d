"""Seller side: monotone virtual-value networks and auction execution.

Each bidder's bid is mapped through a max-min network of strictly increasing
affine pieces, w = max_j min_k (e^gamma_jk * b + beta_jk), so monotonicity
holds by construction and the inverse map is exact (min_j max_k of the piece
inverses). The item goes to the highest virtual value above the reserve, and
the winner pays the smallest bid that would still have won. Training ascends
a relaxed revenue objective in which the allocation argmax becomes a softmax
and the price-setting second-highest statistic comes from a relaxed sort row.

Hard execution is used for every realized outcome; the relaxations exist only
on gradient paths.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore as dc
from . import softsort as ss
from .diffcore import ParamVector
from .errors import ConfigError, InnerLoopError, NumericError

__all__ = [
    "MechanismParams",
    "Outcome",
    "TemperatureSchedule",
    "virtual_value",
    "virtual_value_inverse",
    "run_auction",
    "run_auction_batch",
    "ic_invariance_check",
    "soft_revenue",
    "seller_update",
    "seller_train_steps",
    "baseline_auction",
    "baseline_auction_batch",
    "MyersonNetSeller",
    "StaticSeller",
    "mechanism_to_text",
    "mechanism_from_text",
]

NO_RESERVE = -np.inf


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def _seg_names(i):
    return f"log_slope_{i}", f"intercept_{i}"


@dataclass(frozen=True)
class MechanismParams:
    """Per-bidder virtual-value nets plus a virtual-space reserve.

    `nets` holds segments log_slope_i and intercept_i of shape (J, K) for
    each bidder i; implied slopes e^log_slope are strictly positive, which
    makes every virtual value strictly increasing in the bid.
    """

    nets: ParamVector
    reserve_virtual: float = 0.0

    @property
    def n_bidders(self):
        return sum(1 for n in self.nets.names if n.startswith("log_slope_"))

    @property
    def pieces(self):
        return self.nets.segment("log_slope_0").shape

    def net(self, i):
        g, b = _seg_names(i)
        return self.nets.segment(g), self.nets.segment(b)

    def digest(self):
        """Short stable fingerprint of the parameters, for round records."""
        h = hashlib.sha256(self.nets.values.tobytes())
        h.update(np.float64(self.reserve_virtual).tobytes())
        return h.hexdigest()[:16]

    @classmethod
    def random_init(cls, n_bidders, pieces=(5, 5), sigma=0.1, seed=0, reserve=0.0):
        """Near-identity start: log-slopes and intercepts ~ N(0, sigma^2)."""
        rng = np.random.default_rng(seed)
        segs = []
        for i in range(n_bidders):
            g, b = _seg_names(i)
            segs.append((g, rng.normal(0.0, sigma, size=pieces)))
            segs.append((b, rng.normal(0.0, sigma, size=pieces)))
        return cls(ParamVector.from_segments(segs), reserve)

    @classmethod
    def from_affine(cls, slopes, intercepts, reserve=0.0):
        """Single-piece nets w_i = slopes[i] * b + intercepts[i]; slopes > 0."""
        slopes = np.asarray(slopes, dtype=np.float64)
        intercepts = np.asarray(intercepts, dtype=np.float64)
        if np.any(slopes <= 0):
            raise ConfigError("affine virtual-value slopes must be positive")
        segs = []
        for i, (s, c) in enumerate(zip(slopes, intercepts)):
            g, b = _seg_names(i)
            segs.append((g, np.full((1, 1), np.log(s))))
            segs.append((b, np.full((1, 1), c)))
        return cls(ParamVector.from_segments(segs), reserve)

    @classmethod
    def identity(cls, n_bidders, reserve=0.0):
        return cls.from_affine(np.ones(n_bidders), np.zeros(n_bidders), reserve)


@dataclass(frozen=True)
class Outcome:
    """Realized allocation, payments, and revenue of one auction."""

    allocation: np.ndarray
    payments: np.ndarray
    revenue: float

    def __post_init__(self):
        alloc = np.asarray(self.allocation)
        pay = np.asarray(self.payments)
        if alloc.sum() > 1:
            raise ConfigError("at most one bidder may win")
        if np.any(pay[alloc == 0] != 0.0):
            raise ConfigError("losers must pay zero")
        if not np.isclose(pay.sum(), self.revenue):
            raise ConfigError("revenue must equal the sum of payments")


# ---------------------------------------------------------------------------
# Virtual values: forward and inverse (graph-capable)
# ---------------------------------------------------------------------------


def _lift_pieces(params_like):
    """(..., J, K) -> (..., 1, J, K) so pieces broadcast against a batch axis."""
    shp = np.shape(dc._val(params_like))
    return dc.reshape(params_like, shp[:-2] + (1,) + shp[-2:])


def _vv_graph(log_slope, intercept, bids):
    """w = max_j min_k (e^g * b + c). `bids` (..., B), params (..., J, K)."""
    bshape = np.shape(dc._val(bids))
    b = dc.reshape(bids, bshape + (1, 1))
    pieces = dc.add(dc.mul(dc.exp(_lift_pieces(log_slope)), b), _lift_pieces(intercept))
    return dc.amax(dc.amin(pieces, axis=-1), axis=-1)


def _vv_inverse_graph(log_slope, intercept, w):
    """b = min_j max_k e^-g * (w - c): exact inverse of the forward map."""
    wshape = np.shape(dc._val(w))
    ww = dc.reshape(w, wshape + (1, 1))
    pieces = dc.mul(dc.exp(dc.neg(_lift_pieces(log_slope))), dc.sub(ww, _lift_pieces(intercept)))
    return dc.amin(dc.amax(pieces, axis=-1), axis=-1)


def virtual_value(theta, bidder, bids):
    """Virtual value of `bids` (scalar or array) for one bidder's net."""
    g, b = theta.net(bidder)
    arr = np.asarray(bids, dtype=np.float64)
    out = _vv_graph(g, b, arr.reshape(-1))
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def virtual_value_inverse(theta, bidder, w):
    """Bid whose virtual value equals `w`; round-trips within float error."""
    g, b = theta.net(bidder)
    arr = np.asarray(w, dtype=np.float64)
    out = _vv_inverse_graph(g, b, arr.reshape(-1))
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _virtual_values_batch(theta, bids):
    """(B, n) bids -> (B, n) virtual values, vectorized over bidders."""
    n = theta.n_bidders
    gs = np.stack([theta.net(i)[0] for i in range(n)])  # (n, J, K)
    cs = np.stack([theta.net(i)[1] for i in range(n)])
    pieces = np.exp(gs)[None] * bids[:, :, None, None] + cs[None]
    return pieces.min(axis=-1).max(axis=-1)


# ---------------------------------------------------------------------------
# Hard auction execution
# ---------------------------------------------------------------------------


def _auction_core(w, reserve, inverse_fns):
    """Allocate to the highest virtual value above the reserve; winner pays
    the inverse of the runner-up statistic. Ties break to the lowest index."""
    batch, n = w.shape
    winner = np.argmax(w, axis=1)
    rows = np.arange(batch)
    wmax = w[rows, winner]
    sold = wmax > reserve
    others = w.copy()
    others[rows, winner] = -np.inf
    price_stat = np.maximum(reserve, others.max(axis=1))
    alloc = np.zeros((batch, n))
    pay = np.zeros((batch, n))
    for i in range(n):
        mask = sold & (winner == i)
        if np.any(mask):
            alloc[mask, i] = 1.0
            pay[mask, i] = inverse_fns[i](price_stat[mask])
    return alloc, pay


def run_auction_batch(theta, bids):
    """Vectorized hard auction: (B, n) bids -> (alloc, payments), both (B, n)."""
    bids = np.asarray(bids, dtype=np.float64)
    if bids.ndim != 2 or bids.shape[1] != theta.n_bidders:
        raise ConfigError(
            f"bids must be (batch, {theta.n_bidders}), got {bids.shape}"
        )
    w = _virtual_values_batch(theta, bids)
    inverses = [
        (lambda x, i=i: virtual_value_inverse(theta, i, x))
        for i in range(theta.n_bidders)
    ]
    return _auction_core(w, theta.reserve_virtual, inverses)


def run_auction(theta, bids):
    """Hard auction for one bid profile."""
    bids = np.asarray(bids, dtype=np.float64)
    alloc, pay = run_auction_batch(theta, bids[None, :])
    return Outcome(alloc[0].astype(int), pay[0], float(pay[0].sum()))


def ic_invariance_check(theta, q, q_inverse, bid_sample, payment_atol=1e-9):
    """True iff composing a strictly increasing q (q(0) = 0) over every
    virtual-value net leaves allocations and payments unchanged on the sample.
    """
    if abs(float(q(0.0))) > 1e-12:
        raise ConfigError("q must fix zero (q(0) = 0)")
    bids = np.atleast_2d(np.asarray(bid_sample, dtype=np.float64))
    alloc, pay = run_auction_batch(theta, bids)

    w = q(_virtual_values_batch(theta, bids))
    inverses = [
        (lambda x, i=i: virtual_value_inverse(theta, i, q_inverse(x)))
        for i in range(theta.n_bidders)
    ]
    alloc_q, pay_q = _auction_core(w, float(q(theta.reserve_virtual)), inverses)
    return bool(
        np.array_equal(alloc, alloc_q)
        and np.allclose(pay, pay_q, atol=payment_atol, rtol=0.0)
    )


# ---------------------------------------------------------------------------
# Relaxed revenue objective and training
# ---------------------------------------------------------------------------


def _stack_nets(net_parts):
    """Per-bidder (log_slope, intercept) pairs -> two (..., n, J, K) stacks."""
    gs = dc.stack([g for g, _ in net_parts], axis=-3)
    cs = dc.stack([c for _, c in net_parts], axis=-3)
    return gs, cs


def _vv_all_graph(gs, cs, bids):
    """Virtual values of all bidders at once: bids (..., B, n) -> (..., B, n)."""
    bshape = np.shape(dc._val(bids))
    b = dc.reshape(bids, bshape + (1, 1))
    pshape = np.shape(dc._val(gs))
    lift = pshape[:-3] + (1,) + pshape[-3:]
    pieces = dc.add(dc.mul(dc.exp(dc.reshape(gs, lift)), b), dc.reshape(cs, lift))
    return dc.amax(dc.amin(pieces, axis=-1), axis=-1)


def _vv_inverse_all_graph(gs, cs, stat):
    """Per-bidder inverse of a price statistic: stat (..., B) or (..., B, n)."""
    sshape = np.shape(dc._val(stat))
    pshape = np.shape(dc._val(gs))
    per_bidder = len(sshape) == len(pshape) - 1  # (..., B, n) vs (..., B)
    if per_bidder:
        s = dc.reshape(stat, sshape + (1, 1))
    else:
        s = dc.reshape(stat, sshape + (1, 1, 1))
    lift = pshape[:-3] + (1,) + pshape[-3:]
    pieces = dc.mul(dc.exp(dc.neg(dc.reshape(gs, lift))), dc.sub(s, dc.reshape(cs, lift)))
    return dc.amin(dc.amax(pieces, axis=-1), axis=-1)


def _rival_top(ws, bidder, reserve, lead, tau_sort):
    """Relaxed price statistic for one bidder: top of rivals plus reserve.

    When the bidder wins this equals the second-highest augmented virtual
    value, which is exactly the hard payment statistic; relaxing it over
    rivals only keeps the statistic independent of the bidder's own bid.
    """
    rivals = [dc.take(ws, j, axis=-1) for j in range(np.shape(dc._val(ws))[-1]) if j != bidder]
    if reserve != NO_RESERVE:
        rivals = rivals + [np.full(lead, reserve)]
    if len(rivals) == 1:
        return rivals[0]
    rival_stack = dc.stack(rivals, axis=-1)
    return dc.vsum(
        dc.mul(ss.neural_sort_row(rival_stack, 0, tau_sort), rival_stack), axis=-1
    )


def _soft_revenue_graph(net_parts, reserve, bids, tau_alloc, tau_sort,
                        price_stat="shared_second"):
    """Mean relaxed revenue. `net_parts` is a list of (log_slope, intercept)
    per bidder (Vars or arrays, optionally with a leading clone axis), and
    `bids` an array shaped (..., B, n).

    The allocation weights are softmax(w / tau_alloc) over the virtual values
    augmented with a reserve slot. The relaxed price statistic is either the
    relaxed second-highest of the augmented vector (shared across bidders) or
    each bidder's relaxed rivals-plus-reserve top; both converge to the hard
    payment statistic as the temperatures vanish.
    """
    if price_stat not in ("shared_second", "rival_top"):
        raise ConfigError(f"unknown price_stat {price_stat!r}")
    n = len(net_parts)
    gs, cs = _stack_nets(net_parts)
    ws = _vv_all_graph(gs, cs, bids)  # (..., B, n)
    lead = np.shape(dc._val(ws))[:-1]
    augmented = dc.concat([ws, np.full(lead + (1,), reserve)], axis=-1)
    alloc = dc.softmax(dc.mul(augmented, 1.0 / tau_alloc), axis=-1)
    if price_stat == "shared_second":
        stat = dc.vsum(
            dc.mul(ss.neural_sort_row(augmented, 1, tau_sort), augmented), axis=-1
        )
    else:
        stat = dc.stack(
            [_rival_top(ws, i, reserve, lead, tau_sort) for i in range(n)], axis=-1
        )
    prices = _vv_inverse_all_graph(gs, cs, stat)  # (..., B, n)
    revenue = dc.vsum(dc.mul(dc.narrow(alloc, -1, 0, n), prices), axis=-1)
    return dc.vsum(dc.vmean(revenue, axis=-1))


def soft_revenue(theta, bids_batch, tau_alloc=0.05, tau_sort=0.065,
                 price_stat="shared_second"):
    """Value of the relaxed revenue objective on a bid batch."""
    bids = np.asarray(bids_batch, dtype=np.float64)
    parts = [theta.net(i) for i in range(theta.n_bidders)]
    return float(
        _soft_revenue_graph(
            parts, theta.reserve_virtual, bids, tau_alloc, tau_sort, price_stat
        )
    )


def _seller_step_arrays(segs, reserve, bids, lr, tau_alloc, tau_sort):
    """One ascent step on the relaxed revenue; `segs` maps segment name to
    array, optionally with a leading clone axis shared with `bids`."""
    n = sum(1 for k in segs if k.startswith("log_slope_"))
    tape = dc.Tape()
    leaves = {k: tape.leaf(v) for k, v in segs.items()}
    parts = [(leaves[_seg_names(i)[0]], leaves[_seg_names(i)[1]]) for i in range(n)]
    loss = _soft_revenue_graph(parts, reserve, bids, tau_alloc, tau_sort)
    tape.backward(loss)
    out = {}
    for k, leaf in leaves.items():
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite revenue gradient for segment {k!r}")
        out[k] = leaf.value + lr * grad
    return out


def seller_train_steps(theta, bid_batches, lr, tau_alloc=0.05, tau_sort=0.065):
    """Replayable revenue-ascent run: one step per batch, returns new params.

    This is the exact computation the live seller performs, so training a
    deep copy on the same batches reproduces the seller's own trajectory.
    """
    segs = {k: v for k, v in theta.nets.segments().items()}
    for k_step, bids in enumerate(bid_batches):
        try:
            segs = _seller_step_arrays(
                segs, theta.reserve_virtual, np.asarray(bids), lr, tau_alloc, tau_sort
            )
        except NumericError as err:
            raise InnerLoopError(str(err), k_step) from err
    flat = np.concatenate([segs[name].reshape(-1) for name in theta.nets.names])
    return replace(theta, nets=theta.nets.with_values(flat))


def seller_train_steps_stacked(theta, bid_batches, lr, tau_alloc=0.05, tau_sort=0.065):
    """Train C independent clones at once: `bid_batches` yields (C, B, n)
    arrays; returns a list of C MechanismParams. Arithmetic per clone is
    identical to `seller_train_steps` on that clone's own batches."""
    first = None
    segs = None
    for k_step, bids in enumerate(bid_batches):
        bids = np.asarray(bids)
        if segs is None:
            first = bids.shape[0]
            segs = {
                k: np.broadcast_to(v, (first,) + v.shape).copy()
                for k, v in theta.nets.segments().items()
            }
        try:
            segs = _seller_step_arrays(
                segs, theta.reserve_virtual, bids, lr, tau_alloc, tau_sort
            )
        except NumericError as err:
            raise InnerLoopError(str(err), k_step) from err
    if segs is None:
        raise ConfigError("stacked training needs at least one batch")
    out = []
    for c in range(first):
        flat = np.concatenate(
            [segs[name][c].reshape(-1) for name in theta.nets.names]
        )
        out.append(replace(theta, nets=theta.nets.with_values(flat)))
    return out


def seller_update(theta, bids_batch, lr, tau_alloc=0.05, tau_sort=0.065):
    """One plain gradient-ascent step on the relaxed revenue."""
    if lr == 0.0:
        return theta
    return seller_train_steps(theta, [np.asarray(bids_batch)], lr, tau_alloc, tau_sort)


# ---------------------------------------------------------------------------
# Relaxed per-bidder utility (gradient paths for bidder learning)
# ---------------------------------------------------------------------------


def soft_utility_graph(net_parts, reserve, bids_cols, bidder, values, tau_alloc, tau_sort):
    """Per-sample relaxed utility of one bidder: alloc_i * (v_i - price_i).

    The price statistic excludes the bidder's own virtual value (payments in
    this mechanism never depend on the winner's own bid), so gradient signal
    reaches the bidder only through its allocation weight.
    """
    ws_list = [_vv_graph(g, c, b) for (g, c), b in zip(net_parts, bids_cols)]
    ws = dc.stack(ws_list, axis=-1)
    lead = np.shape(dc._val(ws))[:-1]
    if reserve == NO_RESERVE:
        augmented = ws
    else:
        augmented = dc.concat([ws, np.full(lead + (1,), reserve)], axis=-1)
    alloc_i = dc.take(dc.softmax(dc.mul(augmented, 1.0 / tau_alloc), axis=-1), bidder, axis=-1)
    g, c = net_parts[bidder]
    price = _vv_inverse_graph(g, c, _rival_top(ws, bidder, reserve, lead, tau_sort))
    return dc.mul(alloc_i, dc.sub(values, price))


def first_price_soft_utility_graph(bids_cols, bidder, values, tau_alloc):
    """Relaxed first-price utility: alloc_i * (v_i - own bid)."""
    stackv = dc.stack(list(bids_cols), axis=-1)
    alloc_i = dc.take(dc.softmax(dc.mul(stackv, 1.0 / tau_alloc), axis=-1), bidder, axis=-1)
    return dc.mul(alloc_i, dc.sub(values, bids_cols[bidder]))


# ---------------------------------------------------------------------------
# Baseline mechanisms
# ---------------------------------------------------------------------------

BASELINE_KINDS = ("first_price", "second_price", "analytic_myerson")


def _uniform_hi(spec):
    hi = getattr(spec, "hi", None)
    lo = getattr(spec, "lo", None)
    if hi is None and isinstance(spec, (tuple, list)) and len(spec) == 2:
        lo, hi = spec
    if hi is None:
        raise ConfigError(
            "analytic_myerson needs uniform-family specs with lo/hi bounds"
        )
    return float(hi)


def baseline_auction_batch(kind, bids, specs=None):
    """Vectorized baseline auctions: (B, n) bids -> (alloc, payments)."""
    bids = np.asarray(bids, dtype=np.float64)
    batch, n = bids.shape
    if kind == "first_price":
        winner = np.argmax(bids, axis=1)
        rows = np.arange(batch)
        alloc = np.zeros((batch, n))
        pay = np.zeros((batch, n))
        alloc[rows, winner] = 1.0
        pay[rows, winner] = bids[rows, winner]
        return alloc, pay
    if kind == "second_price":
        inverses = [lambda x: x] * n
        return _auction_core(bids, NO_RESERVE, inverses)
    if kind == "analytic_myerson":
        if specs is None or len(specs) != n:
            raise ConfigError("analytic_myerson needs one distribution spec per bidder")
        his = [_uniform_hi(s) for s in specs]
        w = 2.0 * bids - np.asarray(his)[None, :]
        inverses = [(lambda x, hi=hi: (x + hi) / 2.0) for hi in his]
        return _auction_core(w, 0.0, inverses)
    raise ConfigError(f"unknown baseline kind {kind!r}; expected {BASELINE_KINDS}")


def baseline_auction(kind, bids, specs=None):
    """Baseline auction for one bid profile."""
    bids = np.asarray(bids, dtype=np.float64)
    alloc, pay = baseline_auction_batch(kind, bids[None, :], specs)
    return Outcome(alloc[0].astype(int), pay[0], float(pay[0].sum()))


# ---------------------------------------------------------------------------
# Seller agents for the repeated-auction loop
# ---------------------------------------------------------------------------


@dataclass
class TemperatureSchedule:
    """Relaxation temperatures, halved every `halve_every` seller updates
    down to per-channel floors. tau_alloc is the allocation softmax
    temperature (its reciprocal is the sharpness) and tau_sort drives the
    relaxed price statistic. The wide start keeps gradient signal on bidders
    whose virtual values sit far below the reserve; the floors locate the
    stationary point of the relaxed objective.
    """

    tau_sort: float = 0.065
    tau_alloc: float = 0.2
    halve_every: int = 25
    floor_sort: float = 0.065
    floor_alloc: float = 0.05

    def at(self, iteration):
        scale = 0.5 ** (iteration // self.halve_every)
        return (
            max(self.tau_alloc * scale, self.floor_alloc),
            max(self.tau_sort * scale, self.floor_sort),
        )


class MyersonNetSeller:
    """Trainable seller: announces its mechanism, ascends relaxed revenue."""

    kind = "myerson_net"
    trainable = True

    def __init__(self, params, learning_rate, steps_per_round=1, schedule=None):
        if learning_rate <= 0:
            raise ConfigError("seller learning rate must be positive")
        self.params = params
        self.learning_rate = learning_rate
        self.steps_per_round = int(steps_per_round)
        self.schedule = schedule or TemperatureSchedule()
        self.iteration = 0

    def temperatures(self):
        return self.schedule.at(self.iteration)

    def announce(self):
        return self.params

    def observe_and_update(self, bids):
        for _ in range(self.steps_per_round):
            tau_alloc, tau_sort = self.temperatures()
            self.params = seller_update(
                self.params, bids, self.learning_rate, tau_alloc, tau_sort
            )
            self.iteration += 1

    def simulate_training(self, bid_batches):
        """Clone-and-train without touching live state (single candidate)."""
        tau_alloc, tau_sort = self.temperatures()
        return seller_train_steps(
            self.params, bid_batches, self.learning_rate, tau_alloc, tau_sort
        )

    def simulate_training_stacked(self, bid_batches):
        """Clone-and-train C candidates at once; see seller_train_steps_stacked."""
        tau_alloc, tau_sort = self.temperatures()
        return seller_train_steps_stacked(
            self.params, bid_batches, self.learning_rate, tau_alloc, tau_sort
        )

    def run_batch(self, bids):
        return run_auction_batch(self.params, bids)

    def state_dict(self):
        return {
            "kind": self.kind,
            "params": mechanism_to_text(self.params),
            "learning_rate": self.learning_rate,
            "steps_per_round": self.steps_per_round,
            "iteration": self.iteration,
            "schedule": {
                "tau_sort": self.schedule.tau_sort,
                "tau_alloc": self.schedule.tau_alloc,
                "halve_every": self.schedule.halve_every,
                "floor_sort": self.schedule.floor_sort,
                "floor_alloc": self.schedule.floor_alloc,
            },
        }

    @classmethod
    def from_state_dict(cls, state):
        seller = cls(
            mechanism_from_text(state["params"]),
            state["learning_rate"],
            state["steps_per_round"],
            TemperatureSchedule(**state["schedule"]),
        )
        seller.iteration = state["iteration"]
        return seller


class StaticSeller:
    """Fixed-rule seller (first-price, second-price, or analytic optimum)."""

    trainable = False

    def __init__(self, kind, specs=None):
        if kind not in BASELINE_KINDS:
            raise ConfigError(f"unknown seller kind {kind!r}")
        self.kind = kind
        self.specs = list(specs) if specs is not None else None
        self.iteration = 0

    def temperatures(self):
        # a fixed rule is fully converged; report the schedule floors
        sched = TemperatureSchedule()
        return sched.floor_alloc, sched.floor_sort

    def announce(self):
        if self.kind == "analytic_myerson":
            his = [_uniform_hi(s) for s in self.specs]
            return MechanismParams.from_affine(
                2.0 * np.ones(len(his)), -np.asarray(his), reserve=0.0
            )
        if self.kind == "second_price":
            n = len(self.specs) if self.specs is not None else 2
            return MechanismParams.identity(n, reserve=NO_RESERVE)
        return None  # first-price has no virtual-value form

    def observe_and_update(self, bids):
        self.iteration += 1

    def refresh_specs(self, specs):
        self.specs = list(specs)

    def run_batch(self, bids):
        return baseline_auction_batch(self.kind, bids, self.specs)

    def state_dict(self):
        return {"kind": self.kind, "iteration": self.iteration}


# ---------------------------------------------------------------------------
# Checkpoint text format
# ---------------------------------------------------------------------------

MECHANISM_FORMAT_VERSION = 1


def mechanism_to_text(theta):
    head = f"mechanism {MECHANISM_FORMAT_VERSION}\nreserve {repr(float(theta.reserve_virtual))}\n"
    return head + theta.nets.to_text()


def mechanism_from_text(text):
    lines = text.splitlines()
    if not lines or not lines[0].startswith("mechanism "):
        raise ConfigError("not a mechanism checkpoint (missing header)")
    if lines[0].split()[1] != str(MECHANISM_FORMAT_VERSION):
        raise ConfigError(f"unsupported mechanism format version: {lines[0]}")
    if not lines[1].startswith("reserve "):
        raise ConfigError("mechanism checkpoint missing reserve line")
    reserve = float(lines[1].split()[1])
    nets = ParamVector.from_text("\n".join(lines[2:]))
    return MechanismParams(nets, reserve)
