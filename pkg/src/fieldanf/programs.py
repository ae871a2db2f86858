"""Field programs: distributed HyperANF, harmonic centrality, leader election."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import ParameterError
from .field_runtime import Context
from .hll import Counter, CounterKind, counter_init, union_all

DEFAULT_KIND = CounterKind.hyperloglog(8, 0)


@dataclass(frozen=True)
class AnfOutput:
    """Counters c_0..c_H and their estimates, largest radius first"""

    counters: tuple[Counter, ...]
    estimates: tuple[float, ...]

    @property
    def H(self) -> int:
        return len(self.counters) - 1

    def estimate_at(self, h: int) -> float:
        return self.estimates[self.H - h]

    def summary(self) -> dict:
        return {"estimates": list(self.estimates)}


@dataclass(frozen=True)
class LeaderClaim:
    best_strength: float
    best_uid: int
    hops_to_best: int

    @property
    def key(self) -> tuple[float, int]:
        return (self.best_strength, self.best_uid)

    def relayed(self) -> "LeaderClaim":
        return LeaderClaim(self.best_strength, self.best_uid, self.hops_to_best + 1)


@dataclass(frozen=True)
class ElectionOutput:
    is_leader: bool
    strength: float
    claim: LeaderClaim
    anf: AnfOutput

    def summary(self) -> dict:
        return {
            "leader": self.is_leader,
            "strength": self.strength,
            "best_uid": self.claim.best_uid,
            "hops_to_best": self.claim.hops_to_best,
            "estimates": list(self.anf.estimates),
        }


def hyperanf_field(
    ctx: Context,
    H: int,
    kind: CounterKind = DEFAULT_KIND,
    source: Optional[bool] = None,
) -> AnfOutput:
    """HyperANF as a field program.

    c_0 holds this device's uid when it is a source; c_i is the union of this
    device's c_{i-1} and every neighbour's exported c_{i-1}. Slot `c<i>` exports
    c_i for i = 0..H. `source` overrides the `source` sensor when given.
    """
    if H < 0:
        raise ParameterError(f"radius must be non-negative, got {H}")
    if source is None:
        source = bool(ctx.sensor("source", False))
    counters = [
        ctx.branch(
            source,
            "source",
            lambda: counter_init(kind, ctx.uid),
            lambda: counter_init(kind),
        )
    ]
    for i in range(H + 1):
        observed = ctx.nbr(f"c{i}", counters[i])
        if i < H:
            counters.append(union_all(observed.values(), kind))
    estimates = tuple(counter.estimate() for counter in reversed(counters))
    return AnfOutput(tuple(counters), estimates)


def harmonic_centrality(estimates: Sequence[float]) -> float:
    """head(n) / (length(n) - 1) + harmonic_centrality(tail(n)), 0 for length <= 1.

    With estimates ordered largest radius first this is the sum over
    h = 1..H of est_h / h; est_0 never contributes.
    """
    total = 0.0
    length = len(estimates)
    for i in reversed(range(length - 1)):
        total = estimates[i] / (length - 1 - i) + total
    return total


def vulnerability_index(estimates: Sequence[float]) -> float:
    """1 - est_1 / est_H: close to 1 for devices with few close and many far neighbours"""
    if len(estimates) < 2 or estimates[0] <= 0:
        return 0.0
    return 1.0 - estimates[-2] / estimates[0]


def _best_claim(own: LeaderClaim, observed: dict[int, LeaderClaim], uid: int, grain: int) -> LeaderClaim:
    best = own
    for sender, claim in observed.items():
        candidate = claim if sender == uid else claim.relayed()
        if candidate.hops_to_best > grain:
            continue
        if candidate.key > best.key or (
            candidate.key == best.key and candidate.hops_to_best < best.hops_to_best
        ):
            best = candidate
    return best


def elect(
    ctx: Context,
    grain: int,
    hmax: int,
    kind: CounterKind = DEFAULT_KIND,
    metric: str = "hops",
    sources_from_sensor: bool = False,
) -> ElectionOutput:
    """Centrality-weighted symmetry breaking within `grain` hops.

    Strength is the harmonic centrality of this device's HyperANF estimates.
    Claims are relayed one hop per layer for `grain` layers; each layer keeps
    the lexicographically greatest (strength, uid), so the last layer holds the
    best claim within `grain` hops.
    """
    if grain < 1:
        raise ParameterError(f"grain must be at least 1, got {grain}")
    if hmax < 1:
        raise ParameterError(f"hmax must be at least 1, got {hmax}")
    if metric != "hops":
        raise ParameterError(f"only the hop-count metric is supported, got {metric!r}")
    with ctx.scope("anf"):
        anf = hyperanf_field(ctx, hmax, kind, None if sources_from_sensor else True)
    strength = harmonic_centrality(anf.estimates)
    claim = LeaderClaim(strength, ctx.uid, 0)
    own = claim
    for i in range(1, grain + 1):
        observed = ctx.nbr(f"claim{i - 1}", claim)
        claim = _best_claim(own, observed, ctx.uid, grain)
    return ElectionOutput(claim.best_uid == ctx.uid, strength, claim, anf)


def leader_election(
    ctx: Context,
    grain: int,
    hmax: int,
    kind: CounterKind = DEFAULT_KIND,
    metric: str = "hops",
) -> bool:
    return elect(ctx, grain, hmax, kind, metric).is_leader


@dataclass(frozen=True)
class HyperAnfProgram:
    hmax: int
    kind: CounterKind = DEFAULT_KIND

    def __call__(self, ctx: Context) -> AnfOutput:
        return hyperanf_field(ctx, self.hmax, self.kind)


@dataclass(frozen=True)
class LeaderElectionProgram:
    grain: int
    hmax: int
    kind: CounterKind = DEFAULT_KIND
    metric: str = "hops"
    sources_from_sensor: bool = False

    def __call__(self, ctx: Context) -> ElectionOutput:
        return elect(ctx, self.grain, self.hmax, self.kind, self.metric, self.sources_from_sensor)
