"""Node bookkeeping and weighted group-leader election.

A node's fitness to lead combines three terms: how much it moves, how much
battery it has left, and how well it has behaved so far.  The election
picks the candidate with the *smallest* combined weight, so by default the
battery and trust terms are inverted (1 - value) before weighting: a slow,
well-charged, well-behaved node scores low and wins.  ``invert_battery_trust``
can be switched off to weight the raw values instead, and ``mobility_scale``
divides the mobility term when the caller wants it normalised against a
reference speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

Position = tuple[float, float]

_WEIGHT_SUM_TOL = 1e-9

TRUST_DELTAS = {
    "forwarded": 0.01,
    "dropped": -0.05,
    "malformed": -0.20,
    "heartbeat_missed": -0.10,
}


def mobility(trace: Sequence[Position]) -> float:
    """Mean per-step displacement along a position trace.

    A single-sample trace has no displacement evidence and scores 0, which
    keeps newborn nodes electable.
    """
    if len(trace) == 0:
        raise ValueError("trace must contain at least one sample")
    for x, y in trace:
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError("trace coordinates must be finite")
    if len(trace) == 1:
        return 0.0
    steps = len(trace) - 1
    total = 0.0
    for (x0, y0), (x1, y1) in zip(trace, trace[1:]):
        total += math.hypot(x1 - x0, y1 - y0)
    return total / steps


@dataclass(frozen=True)
class NodeAttributes:
    node: str
    mobility_m: float
    battery_b: float
    trust_t: float

    def __post_init__(self):
        for name in ("mobility_m", "battery_b", "trust_t"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "battery_b", min(1.0, max(0.0, self.battery_b)))
        object.__setattr__(self, "trust_t", min(1.0, max(0.0, self.trust_t)))


@dataclass(frozen=True)
class WeightConfig:
    w0: float
    w1: float
    w2: float
    invert_battery_trust: bool = True
    mobility_scale: Optional[float] = None

    def __post_init__(self):
        if min(self.w0, self.w1, self.w2) < 0:
            raise ValueError("weight factors must be non-negative")
        if abs(self.w0 + self.w1 + self.w2 - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError("weight factors must satisfy w0 + w1 + w2 = 1")


def weight(attrs: NodeAttributes, cfg: WeightConfig) -> float:
    """Combined election weight; smaller is better."""
    m = attrs.mobility_m
    if cfg.mobility_scale:
        m = m / cfg.mobility_scale
    b = 1.0 - attrs.battery_b if cfg.invert_battery_trust else attrs.battery_b
    t = 1.0 - attrs.trust_t if cfg.invert_battery_trust else attrs.trust_t
    return cfg.w0 * m + cfg.w1 * b + cfg.w2 * t


def elect_leader(candidates: Sequence[NodeAttributes], cfg: WeightConfig) -> str:
    """Pick the candidate with minimal weight; ties go to the smallest id."""
    if not candidates:
        raise ValueError("cannot elect from an empty candidate set")
    best = min(candidates, key=lambda a: (weight(a, cfg), a.node))
    return best.node


def update_trust(current: float, observation: str, deltas: Optional[dict] = None) -> float:
    """Additive trust update, clamped to [0, 1]."""
    table = deltas if deltas is not None else TRUST_DELTAS
    if observation not in table:
        raise ValueError(f"unknown observation {observation!r}")
    return min(1.0, max(0.0, current + table[observation]))


@dataclass
class GroupState:
    group_id: str
    leader: str
    members: set = field(default_factory=set)
    capacity: int = 16

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        self.members = set(self.members)
        self.members.add(self.leader)


def admit_capacity_check(state: GroupState) -> bool:
    """True while the group can still take one more member."""
    return len(state.members) < state.capacity
