"""
Brute-Force Oracle
Exhaustive search over RB assignments and grid powers of one relay, and
exhaustive enumeration of matchings, for tiny instances only
"""
import itertools
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np

from config import ORACLE_CONFIG, SIMULATION_CONFIG
from logger import logger, InfeasibleError, OracleSizeError
from channel import ChannelState, NO_VICTIM
from matching import Matching, PreferenceProfiles, Quota, utility_entries, verify_stable
from power import cap_matrix
from rates import RateContext, hop1_sinr_matrix, qos_targets, validate_mode
from scenario import NetworkConfig

UNASSIGNED = -1


def state_count(num_ues: int, num_rbs: int, grid_levels: int) -> int:
    """Number of (assignment, power) candidates: each RB is idle or one of U UEs at one of G levels"""
    return (1 + num_ues * grid_levels) ** num_rbs


def check_guard(num_ues: int, num_rbs: int, grid_levels: int = ORACLE_CONFIG['grid_levels']):
    """
    Raises:
        OracleSizeError: The enumeration would exceed the configured state budget
    """
    states = state_count(num_ues, num_rbs, grid_levels)
    if states > ORACLE_CONFIG['max_states']:
        raise OracleSizeError(
            f"oracle enumeration of {num_ues} UEs x {num_rbs} RBs x {grid_levels} levels "
            f"has {states} states (limit {ORACLE_CONFIG['max_states']})"
        )


@dataclass(frozen=True, eq=False)
class OracleInstance:
    """
    One relay's allocation problem with every other relay frozen at `background`.
    Candidate powers are log-spaced below each pair's cap unless an absolute grid is given.
    """
    cfg: NetworkConfig
    channel: ChannelState
    relay: int
    members: np.ndarray
    background: RateContext
    grid_levels: int
    grid_span: float
    power_grid: Optional[np.ndarray] = None

    @property
    def num_ues(self) -> int:
        return len(self.members)

    @property
    def num_rbs(self) -> int:
        return self.channel.num_rbs

    @property
    def levels(self) -> int:
        return len(self.power_grid) if self.power_grid is not None else self.grid_levels

    @property
    def states(self) -> int:
        return state_count(self.num_ues, self.num_rbs, self.levels)


@dataclass(frozen=True)
class Candidate:
    """One enumerated allocation (global-shaped x and p1; only the relay's rows vary)"""
    x: np.ndarray
    p1: np.ndarray
    ue_rates: np.ndarray
    sum_rate: float
    feasible: bool


@dataclass(frozen=True)
class OracleResult:
    best_rate: float
    x: np.ndarray
    p1: np.ndarray
    ue_rates: np.ndarray
    candidates: int
    feasible: int


def build_instance(cfg: NetworkConfig, channel: ChannelState, relay: int = 0,
                   background: Optional[RateContext] = None,
                   grid_levels: int = ORACLE_CONFIG['grid_levels'],
                   grid_span: float = ORACLE_CONFIG['grid_span'],
                   power_grid: Optional[Sequence[float]] = None) -> OracleInstance:
    """
    Set up the exhaustive search of one relay

    Args:
        cfg: Network configuration
        channel: Channel snapshot
        relay: Relay whose UEs are enumerated
        background: Allocation of the other relays (defaults to silence)
        grid_levels: Power levels per allocated pair
        grid_span: Ratio between the highest and lowest level
        power_grid: Absolute power levels (W) replacing the cap-relative grid

    Raises:
        OracleSizeError: The instance exceeds the state guard
    """
    U, N = channel.num_ues, channel.num_rbs
    members = channel.members(relay)
    if background is None:
        background = RateContext(cfg, channel, np.zeros((U, N)), np.zeros((U, N)))
    x, p1 = background.x.copy(), background.p1.copy()
    x[members] = 0.0
    p1[members] = 0.0

    grid = None if power_grid is None else np.asarray(power_grid, dtype=float)
    check_guard(len(members), N, len(grid) if grid is not None else grid_levels)
    return OracleInstance(
        cfg=cfg, channel=channel, relay=relay, members=members,
        background=background.with_allocation(x, p1),
        grid_levels=grid_levels, grid_span=grid_span, power_grid=grid
    )


def _within(lhs: np.ndarray, rhs: float) -> np.ndarray:
    return rhs - lhs >= -SIMULATION_CONFIG['constraint_tolerance'] * abs(rhs)


class _PatternEvaluator:
    """Vectorized rates and constraint checks of every grid point of one RB assignment"""

    def __init__(self, inst: OracleInstance, mode: str, enforce_qos: bool):
        validate_mode(mode)
        self.inst = inst
        self.robust = mode == 'robust'
        self.enforce_qos = enforce_qos
        cs = inst.channel
        ones = np.ones((cs.num_ues, cs.num_rbs))
        # own power does not enter the interference, so SINR scales linearly with it
        self.gamma = hop1_sinr_matrix(inst.background, mode, ones)[inst.members]
        self.ratio = (cs.hop_ratio if self.robust else cs.realized_hop_ratio)[inst.members]
        refs = cs.references
        self.hop1_user = refs.hop1_user[inst.members]
        self.hop1_gain = (refs.hop1_gain if self.robust else cs.realized_hop1_reference)[inst.members]
        self.hop2_user = refs.hop2_user[inst.relay]
        self.hop2_gain = refs.hop2_gain[inst.relay]
        self.targets = qos_targets(inst.cfg, cs)[inst.members]

    def grids(self, pattern: np.ndarray, x_global: np.ndarray) -> List[np.ndarray]:
        inst = self.inst
        assigned = np.flatnonzero(pattern != UNASSIGNED)
        if inst.power_grid is not None:
            return [inst.power_grid for _ in assigned]
        p_hat_max, varpi = cap_matrix(inst.background.with_allocation(x_global, inst.background.p1))
        cap = np.minimum(p_hat_max, varpi)[inst.members]
        if inst.grid_levels == 1:
            scale = np.ones(1)
        else:
            scale = inst.grid_span ** -np.linspace(1.0, 0.0, inst.grid_levels)
        return [cap[pattern[n], n] * scale for n in assigned]

    def evaluate(self, pattern: np.ndarray):
        """
        Returns:
            (x_global, powers (C, N), ue_rates (C, U_l), sum_rate (C,), feasible (C,))
        """
        inst, cfg = self.inst, self.inst.cfg
        bounds = inst.channel.bounds
        U_l, N = inst.num_ues, inst.num_rbs
        assigned = np.flatnonzero(pattern != UNASSIGNED)
        owners = pattern[assigned]

        x_local = np.zeros((U_l, N))
        x_local[owners, assigned] = 1.0
        x_global = inst.background.x.copy()
        x_global[inst.members] = x_local

        grids = self.grids(pattern, x_global)
        if assigned.size:
            index = np.indices(tuple(len(g) for g in grids)).reshape(assigned.size, -1).T
        else:
            index = np.zeros((1, 0), dtype=int)
        powers = np.zeros((len(index), N))
        for j, n in enumerate(assigned):
            powers[:, n] = grids[j][index[:, j]]

        bandwidth = cfg.rb_bandwidth_hz
        rb_rates = np.zeros_like(powers)
        rb_rates[:, assigned] = 0.5 * bandwidth * np.log2(1.0 + powers[:, assigned] * self.gamma[owners, assigned])
        ue_rates = np.zeros((len(index), U_l))
        for u in range(U_l):
            ue_rates[:, u] = rb_rates[:, pattern == u].sum(axis=1)
        sum_rate = rb_rates.sum(axis=1)

        feasible = np.ones(len(index), dtype=bool)
        for u in range(U_l):
            feasible &= _within(powers[:, pattern == u].sum(axis=1), cfg.p_max_ue_w)

        ratio = self.ratio[owners, assigned]
        relay_load = powers[:, assigned] @ ratio
        if self.robust:
            relay_load = relay_load + bounds.xi2[inst.relay] * np.linalg.norm(powers, axis=1)
        feasible &= _within(relay_load, cfg.p_max_relay_w)

        for j, n in enumerate(assigned):
            u = owners[j]
            if self.hop1_user[u, n] != NO_VICTIM:
                lhs = self.hop1_gain[u, n] * powers[:, n]
                if self.robust:
                    lhs = lhs + bounds.xi3[inst.relay, n] * powers[:, n]
                feasible &= _within(lhs, cfg.i_th1_w)
            if self.hop2_user[n] != NO_VICTIM:
                lhs = ratio[j] * powers[:, n] * self.hop2_gain[n]
                if self.robust:
                    lhs = lhs + bounds.xi4[inst.relay, n] * powers[:, n]
                feasible &= _within(lhs, cfg.i_th2_w)

        if self.enforce_qos:
            feasible &= np.all(ue_rates >= self.targets[None, :], axis=1)

        return x_global, powers, ue_rates, sum_rate, feasible


def _patterns(num_ues: int, num_rbs: int) -> Iterator[np.ndarray]:
    for pattern in itertools.product(range(UNASSIGNED, num_ues), repeat=num_rbs):
        yield np.array(pattern, dtype=int)


def enumerate_allocations(inst: OracleInstance, mode: str = 'robust',
                          enforce_qos: bool = False) -> Iterator[Candidate]:
    """
    Every RB assignment crossed with every grid power, tagged feasible or not

    Yields:
        Candidate; idle RBs always carry zero power
    """
    evaluator = _PatternEvaluator(inst, mode, enforce_qos)
    for pattern in _patterns(inst.num_ues, inst.num_rbs):
        x_global, powers, ue_rates, sum_rate, feasible = evaluator.evaluate(pattern)
        for c in range(len(powers)):
            p1 = inst.background.p1.copy()
            p1[inst.members] = x_global[inst.members] * powers[c]
            yield Candidate(x=x_global, p1=p1, ue_rates=ue_rates[c],
                            sum_rate=float(sum_rate[c]), feasible=bool(feasible[c]))


def optimal_rate(inst: OracleInstance, mode: str = 'robust', enforce_qos: bool = False) -> OracleResult:
    """
    Best feasible sum rate of the relay's UEs over the whole enumeration

    Raises:
        InfeasibleError: No candidate satisfies the constraints
    """
    evaluator = _PatternEvaluator(inst, mode, enforce_qos)
    best = None
    total = feasible_count = 0

    for pattern in _patterns(inst.num_ues, inst.num_rbs):
        x_global, powers, ue_rates, sum_rate, feasible = evaluator.evaluate(pattern)
        total += len(powers)
        feasible_count += int(feasible.sum())
        if not feasible.any():
            continue
        c = int(np.argmax(np.where(feasible, sum_rate, -np.inf)))
        if best is None or sum_rate[c] > best[0]:
            p1 = inst.background.p1.copy()
            p1[inst.members] = x_global[inst.members] * powers[c]
            best = (float(sum_rate[c]), x_global, p1, ue_rates[c].copy())

    if best is None:
        raise InfeasibleError(f"no feasible allocation among {total} candidates of relay {inst.relay}")

    logger.debug(f"Oracle relay {inst.relay}: best {best[0]:.1f} bit/s, {feasible_count}/{total} feasible")
    return OracleResult(best_rate=best[0], x=best[1], p1=best[2], ue_rates=best[3],
                        candidates=total, feasible=feasible_count)


def enumerate_matchings(num_ues: int, num_rbs: int, kappa) -> Iterator[Matching]:
    """Every assignment of RBs to at most one UE that respects the quotas"""
    kappa = np.broadcast_to(np.asarray(kappa, dtype=int), (num_ues,))
    owner: List[Optional[int]] = [None] * num_rbs
    load = [0] * num_ues

    def extend(n: int):
        if n == num_rbs:
            yield Matching.from_pairs(num_ues, num_rbs, [(u, rb) for rb, u in enumerate(owner) if u is not None])
            return
        owner[n] = None
        yield from extend(n + 1)
        for u in range(num_ues):
            if load[u] < kappa[u]:
                owner[n], load[u] = u, load[u] + 1
                yield from extend(n + 1)
                owner[n], load[u] = None, load[u] - 1

    yield from extend(0)


def stable_set(profiles: PreferenceProfiles, quota: Quota) -> List[Matching]:
    """All stable matchings, found by filtering the exhaustive enumeration"""
    check_guard(profiles.num_ues, profiles.num_rbs, 1)
    return [
        m for m in enumerate_matchings(profiles.num_ues, profiles.num_rbs, quota.kappa)
        if verify_stable(m, profiles, quota).stable
    ]


def dominating_matchings(utility, matching: Matching) -> List[Matching]:
    """
    Matchings that give every UE a strictly higher rate than `matching`
    at fixed per-pair rates (utility entries)
    """
    entries = utility_entries(utility)
    U, N = entries.shape
    if U == 0:
        return []
    check_guard(U, N, 1)
    current = np.array([entries[u, rbs].sum() for u, rbs in enumerate(matching.ue_rbs)])

    patterns = np.array(list(itertools.product(range(UNASSIGNED, U), repeat=N)), dtype=int).reshape(-1, N)
    rates = np.stack([np.sum(np.where(patterns == u, entries[u][None, :], 0.0), axis=1) for u in range(U)], axis=1)
    better = np.all(rates > current[None, :], axis=1)

    return [
        Matching.from_pairs(U, N, [(int(u), n) for n, u in enumerate(patterns[i]) if u != UNASSIGNED])
        for i in np.flatnonzero(better)
    ]
