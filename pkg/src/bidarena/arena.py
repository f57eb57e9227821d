"""The repeated-auction loop: each round the seller announces its mechanism,
values are drawn, hard bids produce realized outcomes, then every learning
bidder updates on the announced mechanism and the seller retrains last on the
realized bids.

Randomness is derived per agent and per round from the master seed (no shared
mutable generator), so trajectories replay bit-identically and full state can
be checkpointed at any round boundary.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bidders as bd
from . import learners as ln
from . import mechanisms as mech
from .analysis import UniformSpec
from .errors import ConfigError

__all__ = [
    "ValueSpec",
    "SellerConfig",
    "BidderSpec",
    "EnvironmentConfig",
    "RoundRecord",
    "Arena",
    "run_experiment",
    "config_to_dict",
    "config_from_dict",
]

_ENV_STREAM = 101
_LEARNER_STREAM = 202
_SELLER_INIT_STREAM = 303
_BIDNET_INIT_STREAM = 404


def _check_keys(mapping, allowed, where):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")


@dataclass(frozen=True)
class ValueSpec:
    """Value distribution of one bidder: uniform, or uniform whose upper end
    scales by (round / total_rounds + 1) as the experiment progresses."""

    kind: str
    lo: float
    hi: float

    def __post_init__(self):
        if self.kind not in ("uniform", "scheduled_uniform"):
            raise ConfigError(f"unknown value distribution kind {self.kind!r}")
        if not (self.hi > self.lo >= 0.0):
            raise ConfigError(
                f"value distribution needs hi > lo >= 0, got lo={self.lo} hi={self.hi}"
            )

    def resolve(self, round_index, total_rounds):
        if self.kind == "uniform":
            return UniformSpec(self.lo, self.hi)
        scale = round_index / max(total_rounds, 1) + 1.0
        return UniformSpec(self.lo, self.hi * scale)

    @property
    def max_support(self):
        return self.hi * (2.0 if self.kind == "scheduled_uniform" else 1.0)


@dataclass(frozen=True)
class SellerConfig:
    kind: str = "myerson_net"
    learning_rate: float = 1.0
    pieces: tuple = (1, 5)
    reserve: float = 0.0
    init_sigma: float = 0.1
    steps_per_round: int = 1

    def __post_init__(self):
        kinds = ("myerson_net",) + mech.BASELINE_KINDS
        if self.kind not in kinds:
            raise ConfigError(f"seller kind must be one of {kinds}, got {self.kind!r}")
        if self.kind == "myerson_net" and self.learning_rate <= 0:
            raise ConfigError("seller learning_rate must be positive")
        if self.steps_per_round < 1:
            raise ConfigError("steps_per_round must be >= 1")


@dataclass(frozen=True)
class BidderSpec:
    strategy: dict
    learner: ln.LearnerConfig | None = None

    _STRATEGY_KEYS = {
        "truthful": {"kind"},
        "linear": {"kind", "alpha"},
        "affine": {"kind", "alpha", "shift"},
        "bidnet": {"kind", "hidden", "v_max"},
    }

    def __post_init__(self):
        kind = self.strategy.get("kind")
        if kind not in self._STRATEGY_KEYS:
            raise ConfigError(f"unknown strategy kind {kind!r}")
        _check_keys(self.strategy, self._STRATEGY_KEYS[kind], f"{kind} strategy")
        if self.learner is not None and kind in ("truthful", "affine"):
            raise ConfigError(f"{kind} strategies are not trainable")

    def build_strategy(self, bidder_index, master_seed, v_max):
        kind = self.strategy["kind"]
        if kind == "truthful":
            return bd.Truthful()
        if kind == "linear":
            return bd.LinearShading(float(self.strategy["alpha"]))
        if kind == "affine":
            return bd.AffineShading(
                float(self.strategy["alpha"]), float(self.strategy["shift"])
            )
        seed = int(
            np.random.SeedSequence(
                [master_seed, _BIDNET_INIT_STREAM, bidder_index]
            ).generate_state(1)[0]
        )
        hidden = tuple(self.strategy.get("hidden", (10,)))
        return bd.bidnet_init(
            hidden, seed=seed, v_max=float(self.strategy.get("v_max", v_max))
        )


@dataclass(frozen=True)
class EnvironmentConfig:
    values: tuple
    bidders: tuple
    seller: SellerConfig = SellerConfig()
    rounds: int = 400
    batch_size: int = 2048
    master_seed: int = 0
    observe_opponent_strategies: bool = True

    def __post_init__(self):
        if len(self.values) != len(self.bidders):
            raise ConfigError("need exactly one value distribution per bidder")
        if len(self.bidders) < 2:
            raise ConfigError("need at least 2 bidders")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @property
    def n_bidders(self):
        return len(self.bidders)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    theta_digest: str
    strategy_summaries: tuple
    utilities: tuple
    revenue: float
    wall_time: float


def _learner_rng(master_seed, bidder, round_index):
    return np.random.default_rng(
        np.random.SeedSequence([master_seed, _LEARNER_STREAM + bidder, round_index])
    )


def _env_rng(master_seed, round_index):
    return np.random.default_rng(
        np.random.SeedSequence([master_seed, _ENV_STREAM, round_index])
    )


class Arena:
    """Mutable experiment state; run_round advances one auction round."""

    def __init__(self, config):
        self.config = config
        self.round_index = 0
        v_max = max(v.max_support for v in config.values)
        self.strategies = [
            spec.build_strategy(i, config.master_seed, v_max)
            for i, spec in enumerate(config.bidders)
        ]
        self.learners = [
            ln.make_learner(spec.learner) if spec.learner is not None else None
            for spec in config.bidders
        ]
        self.seller = self._build_seller()

    def _build_seller(self):
        cfg = self.config.seller
        if cfg.kind == "myerson_net":
            seed = int(
                np.random.SeedSequence(
                    [self.config.master_seed, _SELLER_INIT_STREAM]
                ).generate_state(1)[0]
            )
            params = mech.MechanismParams.random_init(
                self.config.n_bidders,
                pieces=cfg.pieces,
                sigma=cfg.init_sigma,
                seed=seed,
                reserve=cfg.reserve,
            )
            return mech.MyersonNetSeller(
                params, cfg.learning_rate, steps_per_round=cfg.steps_per_round
            )
        return mech.StaticSeller(cfg.kind, self._specs_at(0))

    def _specs_at(self, round_index):
        return [
            v.resolve(round_index, self.config.rounds) for v in self.config.values
        ]

    def run_round(self, batch_size=None):
        """One announced-mechanism auction round plus all agent updates."""
        t0 = time.perf_counter()
        cfg = self.config
        t = self.round_index
        batch = batch_size or cfg.batch_size
        specs = self._specs_at(t)
        if isinstance(self.seller, mech.StaticSeller):
            self.seller.refresh_specs(specs)
        theta = self.seller.announce()
        digest = theta.digest() if theta is not None else cfg.seller.kind

        rng = _env_rng(cfg.master_seed, t)
        values = np.column_stack([s.sample(rng, batch) for s in specs])
        bids = ln.profile_bids(self.strategies, values)
        alloc, pay = ln.run_mechanism(self.seller, theta, bids)
        utilities = (alloc * values - pay).mean(axis=0)
        revenue = float(pay.sum(axis=1).mean())

        tau_alloc, tau_sort = self.seller.temperatures()
        new_strategies = list(self.strategies)
        for i, learner in enumerate(self.learners):
            if learner is None:
                continue
            ctx = ln.LearnerContext(
                bidder=i,
                strategies=list(self.strategies),
                seller=self.seller,
                theta=theta,
                specs=specs,
                observed_bids=bids,
                observed_own_values=values[:, i],
                observe_opponents=cfg.observe_opponent_strategies,
                tau_alloc=tau_alloc,
                tau_sort=tau_sort,
                rng=_learner_rng(cfg.master_seed, i, t),
            )
            new_strategies[i] = learner.step(ctx)
        self.strategies = new_strategies
        self.seller.observe_and_update(bids)

        self.round_index += 1
        return RoundRecord(
            round=t,
            theta_digest=digest,
            strategy_summaries=tuple(s.summary() for s in self.strategies),
            utilities=tuple(float(u) for u in utilities),
            revenue=revenue,
            wall_time=time.perf_counter() - t0,
        )

    def run(self, progress=None):
        records = []
        for _ in range(self.config.rounds - self.round_index):
            records.append(self.run_round())
            if progress is not None:
                progress(records[-1])
        return records

    # -- checkpoint / restore ------------------------------------------------

    def state_dict(self):
        return {
            "round_index": self.round_index,
            "config": config_to_dict(self.config),
            "strategies": [bd.strategy_to_text(s) for s in self.strategies],
            "learners": [
                (l.state_dict() if l is not None else None) for l in self.learners
            ],
            "seller": self.seller.state_dict(),
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.state_dict(), f, indent=1)

    @classmethod
    def from_state_dict(cls, state):
        arena = cls(config_from_dict(state["config"]))
        arena.round_index = state["round_index"]
        arena.strategies = [bd.strategy_from_text(s) for s in state["strategies"]]
        for learner, lstate in zip(arena.learners, state["learners"]):
            if learner is not None and lstate is not None:
                learner.load_state_dict(lstate)
        seller_state = state["seller"]
        if seller_state["kind"] == "myerson_net":
            arena.seller = mech.MyersonNetSeller.from_state_dict(seller_state)
        else:
            arena.seller = mech.StaticSeller(
                seller_state["kind"], arena._specs_at(arena.round_index)
            )
            arena.seller.iteration = seller_state["iteration"]
        return arena

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_state_dict(json.load(f))


def run_experiment(config, progress=None):
    """Fresh arena, full trajectory; deterministic given the master seed."""
    return Arena(config).run(progress=progress)


# ---------------------------------------------------------------------------
# Config (de)serialization
# ---------------------------------------------------------------------------

_ENV_KEYS = {
    "values",
    "bidders",
    "seller",
    "rounds",
    "batch_size",
    "master_seed",
    "observe_opponent_strategies",
}
_SELLER_KEYS = {"kind", "learning_rate", "pieces", "reserve", "init_sigma", "steps_per_round"}
_BIDDER_KEYS = {"strategy", "learner"}
_VALUE_KEYS = {"kind", "lo", "hi"}
_LEARNER_KEYS = {
    "kind",
    "learning_rate",
    "lookahead_rate",
    "inner_steps",
    "directions",
    "direction_memory",
    "similarity_bound",
    "step_bound",
    "discount",
    "batch_size",
    "inner_batch_size",
    "fd_step",
}


def config_to_dict(config):
    out = asdict(config)
    out["values"] = [asdict(v) for v in config.values]
    out["seller"] = asdict(config.seller)
    out["seller"]["pieces"] = list(config.seller.pieces)
    out["bidders"] = [
        {
            "strategy": dict(spec.strategy),
            "learner": asdict(spec.learner) if spec.learner is not None else None,
        }
        for spec in config.bidders
    ]
    return out


def config_from_dict(data):
    _check_keys(data, _ENV_KEYS, "environment config")
    for required in ("values", "bidders"):
        if required not in data:
            raise ConfigError(f"environment config is missing {required!r}")
    values = []
    for i, v in enumerate(data["values"]):
        _check_keys(v, _VALUE_KEYS, f"values[{i}]")
        values.append(ValueSpec(**v))
    seller_data = dict(data.get("seller", {}))
    _check_keys(seller_data, _SELLER_KEYS, "seller config")
    if "pieces" in seller_data:
        seller_data["pieces"] = tuple(seller_data["pieces"])
    seller = SellerConfig(**seller_data)
    bidders = []
    for i, b in enumerate(data["bidders"]):
        _check_keys(b, _BIDDER_KEYS, f"bidders[{i}]")
        learner = b.get("learner")
        if learner is not None:
            _check_keys(learner, _LEARNER_KEYS, f"bidders[{i}].learner")
            learner = ln.LearnerConfig(**learner)
        bidders.append(BidderSpec(strategy=dict(b["strategy"]), learner=learner))
    extras = {
        k: data[k]
        for k in ("rounds", "batch_size", "master_seed", "observe_opponent_strategies")
        if k in data
    }
    return EnvironmentConfig(
        values=tuple(values), bidders=tuple(bidders), seller=seller, **extras
    )
