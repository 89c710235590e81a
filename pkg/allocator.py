"""
Joint RB and Power Allocation
Per-relay rounds of utility evaluation, stable matching and power update,
synchronized across relays by an exchange barrier, plus the direct D2D
reference scheme the relay-aided allocation is compared against
"""
import csv
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from config import SIMULATION_CONFIG, EXPERIMENT_CONFIG
from logger import logger, ExperimentError
from channel import ChannelState
from matching import (
    Matching, PreferenceProfiles, Quota, StabilityReport,
    allocate_rbs, build_preferences, compute_quota, verify_stable
)
from power import PowerAllocation, cap_matrix, initial_levels, update_levels
from rates import (
    RateContext, ConstraintReport, check_constraints, direct_rate_matrix,
    interference_hop1, qos_targets, rate_matrix, ue_rates
)
from scenario import NetworkConfig, Topology


@dataclass(frozen=True)
class UtilityMatrix:
    """Worst-case rates (bit/s) of a relay's UEs (rows, global ids in members) on every RB"""
    relay: int
    members: np.ndarray
    entries: np.ndarray

    @property
    def shape(self):
        return self.entries.shape


@dataclass
class RelayState:
    """Outcome of one relay round"""
    relay: int
    members: np.ndarray
    utility: UtilityMatrix
    rebuilt_utility: UtilityMatrix
    quota: Quota
    profiles: PreferenceProfiles
    matching: Matching
    x_rows: np.ndarray
    levels_rows: np.ndarray
    p1_rows: np.ndarray
    power: Optional[PowerAllocation]
    sum_rate: float
    messages_matching: int
    messages_x2: int
    stability: StabilityReport


@dataclass(frozen=True)
class IterationState:
    """Snapshot every relay reads during iteration t (the values exchanged at the last barrier)"""
    t: int
    cfg: NetworkConfig
    channel: ChannelState
    x: np.ndarray
    p1: np.ndarray
    levels: np.ndarray
    relays: Dict[int, RelayState] = field(default_factory=dict)

    @property
    def context(self) -> RateContext:
        return RateContext(self.cfg, self.channel, self.x, self.p1)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    relay: int
    sum_rate_bps: float
    messages_matching: int
    messages_x2: int

    def as_row(self) -> dict:
        return {
            'iteration': self.iteration,
            'relay': self.relay,
            'sum_rate_bps': self.sum_rate_bps,
            'messages_matching': self.messages_matching,
            'messages_x2': self.messages_x2
        }


@dataclass
class NetworkResult:
    """Final allocation of a run and its per-iteration history"""
    cfg: NetworkConfig
    channel: ChannelState
    x: np.ndarray
    p1: np.ndarray
    levels: np.ndarray
    relays: Dict[int, RelayState]
    ue_rates: np.ndarray
    trace: List[TraceRecord]
    iterations: int
    converged: bool

    @property
    def context(self) -> RateContext:
        return RateContext(self.cfg, self.channel, self.x, self.p1)

    @property
    def sum_rate(self) -> float:
        return float(np.sum(self.ue_rates))

    @property
    def messages_matching(self) -> int:
        return sum(r.messages_matching for r in self.trace)

    @property
    def messages_x2(self) -> int:
        return sum(r.messages_x2 for r in self.trace)

    def relay_trace(self, relay: int) -> List[float]:
        """Sum-rate history R_l(t) of one relay"""
        return [r.sum_rate_bps for r in self.trace if r.relay == relay]

    def constraints(self, mode: str = 'robust', enforce_qos: bool = False) -> ConstraintReport:
        return check_constraints(self.context, mode, enforce_qos)


def build_utility_matrix(ctx: RateContext, relay: int, levels: Optional[np.ndarray] = None) -> UtilityMatrix:
    """
    Worst-case per-RB rates of a relay's UEs

    Args:
        ctx: Exchanged allocation (interference from other relays)
        relay: Relay index
        levels: Powers to evaluate each pair at (defaults to the context's p1)

    Returns:
        UtilityMatrix of shape (U_l, N)
    """
    members = ctx.channel.members(relay)
    rates = rate_matrix(ctx, 'robust', levels)
    return UtilityMatrix(relay=relay, members=members, entries=rates[members])


def _empty_round(state: IterationState, relay: int) -> RelayState:
    N = state.channel.num_rbs
    members = np.array([], dtype=int)
    empty = UtilityMatrix(relay, members, np.zeros((0, N)))
    quota = Quota(kappa=np.zeros(0, dtype=int), infeasible=np.zeros(0, dtype=bool))
    profiles = build_preferences(empty)
    matching = allocate_rbs(profiles, quota)
    return RelayState(
        relay=relay, members=members, utility=empty, rebuilt_utility=empty,
        quota=quota, profiles=profiles, matching=matching,
        x_rows=np.zeros((0, N)), levels_rows=np.zeros((0, N)), p1_rows=np.zeros((0, N)),
        power=None, sum_rate=0.0, messages_matching=0, messages_x2=0,
        stability=StabilityReport()
    )


def relay_round(state: IterationState, relay: int) -> RelayState:
    """
    One round of a relay against the exchanged snapshot

    Args:
        state: Iteration snapshot (read only)
        relay: Relay index

    Returns:
        RelayState with the new rows of x, bid levels and p1 for the relay's UEs
    """
    cfg, cs = state.cfg, state.channel
    members = cs.members(relay)
    if members.size == 0:
        return _empty_round(state, relay)

    ctx = state.context
    utility = build_utility_matrix(ctx, relay, state.levels)
    quota = compute_quota(utility, qos_targets(cfg, cs)[members])
    for row in np.flatnonzero(quota.infeasible):
        logger.debug(
            f"Relay {relay}, t={state.t}: rate target of UE {members[row]} unreachable, quota set to {cs.num_rbs}"
        )

    profiles = build_preferences(utility)
    matching = allocate_rbs(profiles, quota)

    x = state.x.copy()
    x[members] = matching.to_binary()
    allocated = ctx.with_allocation(x, state.p1)
    power = update_levels(allocated, members, utility.entries, quota.kappa, state.levels)

    final = ctx.with_allocation(x, power.p1)
    rebuilt = build_utility_matrix(final, relay, power.levels)
    sum_rate = float(np.sum(x[members] * rebuilt.entries))

    return RelayState(
        relay=relay,
        members=members,
        utility=utility,
        rebuilt_utility=rebuilt,
        quota=quota,
        profiles=profiles,
        matching=matching,
        x_rows=x[members],
        levels_rows=power.levels[members],
        p1_rows=power.p1[members],
        power=power,
        sum_rate=sum_rate,
        messages_matching=matching.proposals,
        messages_x2=1,
        stability=verify_stable(matching, profiles, quota)
    )


def _run_relays(state: IterationState, parallel: bool) -> Dict[int, RelayState]:
    relays = range(state.channel.num_relays)
    if not parallel:
        return {relay: relay_round(state, relay) for relay in relays}

    results = {}
    with ThreadPoolExecutor(max_workers=SIMULATION_CONFIG['max_workers']) as executor:
        future_to_relay = {executor.submit(relay_round, state, relay): relay for relay in relays}
        for future in as_completed(future_to_relay):
            results[future_to_relay[future]] = future.result()
    return results


def run_network(cfg: NetworkConfig, topology: Topology, channel: ChannelState,
                t_max: Optional[int] = None, parallel: Optional[bool] = None) -> NetworkResult:
    """
    Iterate relay rounds until every relay's sum rate settles

    Args:
        cfg: Network configuration (T_max, epsilon, caps)
        topology: Node placement (only its association is read through the channel)
        channel: Channel snapshot the allocator believes in
        t_max: Override of cfg.t_max
        parallel: Run the relays of one iteration in worker threads

    Returns:
        NetworkResult with the final allocation, robust per-UE rates and the trace
    """
    t_max = cfg.t_max if t_max is None else t_max
    parallel = SIMULATION_CONFIG['parallel_relays'] if parallel is None else parallel
    if topology.num_ues != channel.num_ues:
        raise ExperimentError(f"topology has {topology.num_ues} UEs, channel has {channel.num_ues}")

    U, N = channel.num_ues, channel.num_rbs
    ctx = RateContext(cfg, channel, np.zeros((U, N)), np.zeros((U, N)))
    x, p1, levels = ctx.x, ctx.p1, initial_levels(ctx)

    trace: List[TraceRecord] = []
    relays: Dict[int, RelayState] = {}
    previous: Optional[Dict[int, float]] = None
    converged = False
    t = 0

    while t < t_max:
        t += 1
        state = IterationState(t, cfg, channel, x, p1, levels, relays)
        relays = _run_relays(state, parallel)

        x, p1, levels = x.copy(), p1.copy(), levels.copy()
        for relay, rs in sorted(relays.items()):
            x[rs.members] = rs.x_rows
            p1[rs.members] = rs.p1_rows
            levels[rs.members] = rs.levels_rows
            trace.append(TraceRecord(t, relay, rs.sum_rate, rs.messages_matching, rs.messages_x2))
            logger.debug(
                f"t={t} relay {relay}: R_l={rs.sum_rate:.1f} bit/s, "
                f"proposals={rs.messages_matching}, stable={rs.stability.stable}"
            )

        current = {relay: rs.sum_rate for relay, rs in relays.items()}
        if previous is not None and all(abs(current[l] - previous[l]) < cfg.epsilon for l in current):
            converged = True
            break
        previous = current

    final = ctx.with_allocation(x, p1)
    rates = ue_rates(final, 'robust')
    logger.log_allocation(t, converged, t_max, float(np.sum(rates)))
    return NetworkResult(
        cfg=cfg, channel=channel, x=x, p1=p1, levels=levels, relays=relays,
        ue_rates=rates, trace=trace, iterations=t, converged=converged
    )


def write_trace(result: NetworkResult, path: Path) -> Path:
    """Write the per-iteration, per-relay sum rates and message counts as CSV"""
    path = Path(path)
    try:
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=EXPERIMENT_CONFIG['trace_columns'])
            writer.writeheader()
            for record in result.trace:
                writer.writerow(record.as_row())
    except OSError as e:
        raise ExperimentError(f"cannot write trace {path}: {e}") from e
    logger.debug(f"Trace written: {path}")
    return path


@dataclass
class ReferenceResult:
    """Allocation where D2D pairs bypass the relay and reuse CUE RBs directly"""
    x: np.ndarray
    p1: np.ndarray
    ue_rates: np.ndarray
    refrained: List[int]
    refused: List[tuple]

    @property
    def sum_rate(self) -> float:
        return float(np.sum(self.ue_rates))


def _d2d_power(cfg: NetworkConfig, proposed: NetworkResult, ue: int, num_rbs: int) -> float:
    held = proposed.x[ue] > 0
    if held.any():
        return float(np.mean(proposed.p1[ue, held]))
    return cfg.p_max_ue_w / num_rbs


def reference_direct(cfg: NetworkConfig, topology: Topology, channel: ChannelState,
                     proposed: NetworkResult) -> ReferenceResult:
    """
    Direct D2D scheme on top of the proposed CUE allocation

    Each relay matches its D2D pairs onto RBs held by its own CUEs (at most
    one pair per RB). The CUE raises its power so the relay still sees its
    old SINR; when that exceeds the CUE's caps the RB is refused. A pair whose
    direct rate stays below its target refrains and the CUE boosts are undone.

    Returns:
        ReferenceResult with CUE rates carried over and direct D2D rates
    """
    cs = channel
    if topology.num_ues != cs.num_ues:
        raise ExperimentError(f"topology has {topology.num_ues} UEs, channel has {cs.num_ues}")
    N = cs.num_rbs
    sigma2 = cfg.sigma2
    x = proposed.x.copy()
    p1 = proposed.p1.copy()
    x[cs.is_d2d] = 0.0
    p1[cs.is_d2d] = 0.0

    base = RateContext(cfg, cs, x, p1)
    interference = interference_hop1(base, realized=False)
    p_hat_max, varpi = cap_matrix(base)
    d2d_power = {d: _d2d_power(cfg, proposed, d, N) for d in np.flatnonzero(cs.is_d2d)}

    boosts: Dict[int, List[tuple]] = {d: [] for d in d2d_power}
    refused = []
    for relay in range(cs.num_relays):
        members = cs.members(relay)
        cues = members[~cs.is_d2d[members]]
        pairs = members[cs.is_d2d[members]]
        owner = {int(n): int(c) for c in cues for n in np.flatnonzero(x[c] > 0)}
        if pairs.size == 0 or not owner:
            continue

        bids = p1.copy()
        for d in pairs:
            bids[d] = d2d_power[d]
        direct = direct_rate_matrix(base, bids)[pairs]
        usable = np.zeros(N, dtype=bool)
        usable[list(owner)] = True
        utility = np.where(usable[None, :], direct, 0.0)

        quota = compute_quota(utility, cfg.q_min_d2d_bps)
        matching = allocate_rbs(build_preferences(utility), quota)

        for row, n in matching.pairs:
            d, c = int(pairs[row]), owner[n]
            gain = cs.ue_relay[d, relay, n]
            boosted = p1[c, n] * (interference[c, n] + gain * d2d_power[d] + sigma2) / (interference[c, n] + sigma2)
            if boosted > min(p_hat_max[c, n], varpi[c, n]):
                refused.append((d, n))
                logger.warning(f"Relay {relay}: CUE {c} cannot protect itself from D2D pair {d} on RB {n}")
                continue
            boosts[d].append((c, n, p1[c, n]))
            p1[c, n] = boosted
            x[d, n] = 1.0
            p1[d, n] = d2d_power[d]

    rates = np.sum(x * direct_rate_matrix(base.with_allocation(x, p1)), axis=1)
    refrained = []
    for d in d2d_power:
        if x[d].sum() > 0 and rates[d] >= cfg.q_min_d2d_bps:
            continue
        refrained.append(int(d))
        for c, n, previous in boosts[d]:
            p1[c, n] = previous
        x[d] = 0.0
        p1[d] = 0.0
    if refrained:
        logger.debug(f"D2D pairs refraining in the direct scheme: {refrained}")

    final = base.with_allocation(x, p1)
    result_rates = proposed.ue_rates.copy()
    d2d = cs.is_d2d
    result_rates[d2d] = np.sum(x * direct_rate_matrix(final), axis=1)[d2d]
    return ReferenceResult(x=x, p1=p1, ue_rates=result_rates, refrained=refrained, refused=refused)
