"""Bidding strategies: truthful, linear and affine shading, and a monotone
bid network clamped at the bidder's value.

The bid network feeds the value through positive-weight layers (weights are
exponentials of free parameters, activations softplus), applies a softplus
head so the raw bid stays nonnegative, and finally takes min(raw, value).
That construction makes the bid increasing in the value and keeps it inside
[0, v] for every parameter setting, so individual rationality can never be
violated during training. On gradient paths the final min becomes the smooth
two-argument soft min.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import diffcore as dc
from . import softsort as ss
from .diffcore import ParamVector
from .errors import ConfigError, InputError

__all__ = [
    "Truthful",
    "LinearShading",
    "AffineShading",
    "BidNet",
    "bidnet_init",
    "apply_strategy",
    "strategy_to_text",
    "strategy_from_text",
]


@dataclass(frozen=True)
class Truthful:
    kind = "truthful"
    trainable = False

    def flat_params(self):
        return np.zeros(0)

    def summary(self):
        return "truthful"


@dataclass(frozen=True)
class LinearShading:
    """bid = alpha * v, deliberately unclamped."""

    alpha: float
    kind = "linear"
    trainable = True

    def flat_params(self):
        return np.array([self.alpha])

    def with_flat(self, flat):
        return replace(self, alpha=float(flat[0]))

    def summary(self):
        return f"alpha={self.alpha:.6f}"


@dataclass(frozen=True)
class AffineShading:
    """bid = alpha * v + shift (static profile, unclamped)."""

    alpha: float
    shift: float
    kind = "affine"
    trainable = False

    def flat_params(self):
        return np.array([self.alpha, self.shift])

    def summary(self):
        return f"alpha={self.alpha:.6f},shift={self.shift:.6f}"


@dataclass(frozen=True)
class BidNet:
    """Monotone network bid, clamped at the value."""

    params: ParamVector
    v_max: float = 1.0
    kind = "bidnet"
    trainable = True

    def flat_params(self):
        return self.params.values.copy()

    def with_flat(self, flat):
        return replace(self, params=self.params.with_values(flat))

    def summary(self):
        return f"|params|={float(np.linalg.norm(self.params.values)):.6f}"

    @property
    def n_layers(self):
        return sum(1 for n in self.params.names if n.startswith("log_w"))


def bidnet_init(hidden_widths=(10,), seed=0, v_max=1.0, headroom=0.9):
    """Random monotone bid network.

    Weights start near 1/fan_in (log-space noise), and the head bias is
    calibrated so the raw bid at v_max/2 equals headroom * v_max/2: the value
    clamp starts marginally active, which keeps both the clamp and the inner
    network responsive to parameter perturbations.
    """
    widths = tuple(int(w) for w in hidden_widths)
    if not widths or any(w < 1 for w in widths):
        raise ConfigError(f"hidden widths must all be >= 1, got {hidden_widths}")
    rng = np.random.default_rng(seed)
    segs = []
    fan_in = 1
    for layer, width in enumerate(widths):
        segs.append(
            (f"log_w{layer}", rng.normal(-np.log(fan_in), 0.25, size=(width, fan_in)))
        )
        segs.append((f"bias{layer}", rng.normal(0.0, 0.25, size=width)))
        fan_in = width
    segs.append(("log_head", rng.normal(-np.log(fan_in), 0.25, size=fan_in)))
    segs.append(("head_bias", np.zeros(1)))
    params = ParamVector.from_segments(segs)
    strategy = BidNet(params, float(v_max))

    v_mid = np.array([v_max / 2.0])
    raw = _bidnet_raw(params.segments(), v_mid)[0]
    target = headroom * v_max / 2.0
    # softplus^-1(target) shifts the head so raw(v_mid) == target exactly
    pre = np.log(np.expm1(target)) - (np.log(np.expm1(raw)))
    flat = params.values.copy()
    segs_d = dict(params.segments())
    shift_index = params.size - 1
    flat[shift_index] = segs_d["head_bias"][0] + pre
    return replace(strategy, params=params.with_values(flat))


def _bidnet_raw(segs, v):
    """Raw (pre-clamp) bid: positive-weight layers, softplus head."""
    h = dc.reshape(v, np.shape(dc._val(v)) + (1,))
    layer = 0
    while f"log_w{layer}" in segs:
        w, b = segs[f"log_w{layer}"], segs[f"bias{layer}"]
        hx = dc.reshape(h, np.shape(dc._val(h))[:-1] + (1, np.shape(dc._val(h))[-1]))
        h = dc.softplus(dc.add(dc.vsum(dc.mul(dc.exp(w), hx), axis=-1), b))
        layer += 1
    y = dc.add(dc.vsum(dc.mul(dc.exp(segs["log_head"]), h), axis=-1), segs["head_bias"])
    return dc.softplus(y)


def bid_graph(strategy, segs, v, soft_tau):
    """Differentiable bid for a trainable strategy.

    `segs` maps the strategy's segment names to diffcore Vars (or arrays);
    `v` is the value batch. The bid-network clamp uses the smooth min at
    temperature `soft_tau`.
    """
    if strategy.kind == "linear":
        return dc.mul(segs["alpha"], v)
    if strategy.kind == "bidnet":
        raw = _bidnet_raw(segs, v)
        return ss.soft_min2(raw, v, soft_tau)
    raise ConfigError(f"strategy kind {strategy.kind!r} has no gradient path")


def strategy_segments(strategy):
    """Named parameter segments for building gradient leaves."""
    if strategy.kind == "linear":
        return {"alpha": np.array([strategy.alpha])}
    if strategy.kind == "bidnet":
        return dict(strategy.params.segments())
    raise ConfigError(f"strategy kind {strategy.kind!r} is not trainable")


def apply_strategy(strategy, v, soft_tau=None):
    """Bid for values `v` (scalar or array). Hard mode unless `soft_tau` is
    given, in which case the bid-network clamp is smoothed for gradient use.
    """
    arr = np.asarray(v, dtype=np.float64)
    if np.any(arr < 0):
        raise InputError("values must be nonnegative")
    flat = arr.reshape(-1)
    kind = strategy.kind
    if kind == "truthful":
        out = flat
    elif kind == "linear":
        out = strategy.alpha * flat
    elif kind == "affine":
        out = strategy.alpha * flat + strategy.shift
    elif kind == "bidnet":
        raw = _bidnet_raw(strategy.params.segments(), flat)
        if soft_tau is None:
            out = np.maximum(0.0, np.minimum(raw, flat))
        else:
            out = ss.soft_min2(raw, flat, soft_tau)
    else:
        raise ConfigError(f"unknown strategy kind {kind!r}")
    out = np.asarray(out)
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


# ---------------------------------------------------------------------------
# Checkpoint text format
# ---------------------------------------------------------------------------

STRATEGY_FORMAT_VERSION = 1


def strategy_to_text(strategy):
    head = f"strategy {STRATEGY_FORMAT_VERSION}\nkind {strategy.kind}\n"
    if strategy.kind == "truthful":
        return head
    if strategy.kind == "linear":
        return head + f"alpha {repr(float(strategy.alpha))}\n"
    if strategy.kind == "affine":
        return head + (
            f"alpha {repr(float(strategy.alpha))}\nshift {repr(float(strategy.shift))}\n"
        )
    if strategy.kind == "bidnet":
        return head + f"v_max {repr(float(strategy.v_max))}\n" + strategy.params.to_text()
    raise ConfigError(f"unknown strategy kind {strategy.kind!r}")


def strategy_from_text(text):
    lines = text.splitlines()
    if not lines or not lines[0].startswith("strategy "):
        raise ConfigError("not a strategy checkpoint (missing header)")
    if lines[0].split()[1] != str(STRATEGY_FORMAT_VERSION):
        raise ConfigError(f"unsupported strategy format version: {lines[0]}")
    kind = lines[1].split()[1]
    fields = {}
    rest = 2
    for line in lines[2:]:
        parts = line.split()
        if parts and parts[0] in ("alpha", "shift", "v_max"):
            fields[parts[0]] = float(parts[1])
            rest += 1
        else:
            break
    if kind == "truthful":
        return Truthful()
    if kind == "linear":
        return LinearShading(fields["alpha"])
    if kind == "affine":
        return AffineShading(fields["alpha"], fields["shift"])
    if kind == "bidnet":
        params = ParamVector.from_text("\n".join(lines[rest:]))
        return BidNet(params, fields["v_max"])
    raise ConfigError(f"unknown strategy kind {kind!r}")
