"""
Rate and Feasibility Evaluation
Nominal and worst-case SINRs, per-RB and end-to-end rates, direct D2D rates,
and the constraint checks every allocation is judged by
"""
import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional

import numpy as np

from config import SIMULATION_CONFIG
from logger import DomainError, ValidationError
from channel import ChannelState, NormalizedGain, NO_VICTIM, normalized_gain
from scenario import NetworkConfig

MODES = ('nominal', 'robust')

RB_EXCLUSIVITY = 'rb_exclusivity'
UE_POWER = 'ue_power'
RELAY_POWER = 'relay_power'
INTERFERENCE_HOP1 = 'interference_hop1'
INTERFERENCE_HOP2 = 'interference_hop2'
QOS = 'qos'
NONNEGATIVITY = 'nonnegativity'


@dataclass(frozen=True, eq=False)
class RateContext:
    """
    Everything a rate evaluation needs: the binary allocation x[u, n], the
    first-hop powers p1[u, n] of all UEs and the channel snapshot.
    Rows of other relays hold the values last exchanged between relays.
    """
    cfg: NetworkConfig
    channel: ChannelState
    x: np.ndarray
    p1: np.ndarray

    def __post_init__(self):
        shape = (self.channel.num_ues, self.channel.num_rbs)
        for name in ('x', 'p1'):
            if np.shape(getattr(self, name)) != shape:
                raise ValidationError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")

    @cached_property
    def normalized(self) -> NormalizedGain:
        return normalized_gain(self.channel, self.cfg.sigma2)

    @property
    def transmit(self) -> np.ndarray:
        """S[u, n] = x * P, the power actually radiated"""
        return self.x * self.p1

    @property
    def p2(self) -> np.ndarray:
        """Second-hop power under the equal-hop condition P2 = H * P1"""
        return self.channel.realized_hop_ratio * self.transmit

    def with_allocation(self, x: np.ndarray, p1: np.ndarray) -> 'RateContext':
        return dataclasses.replace(self, x=x, p1=p1)


def validate_mode(mode: str):
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")


def qos_targets(cfg: NetworkConfig, channel: ChannelState) -> np.ndarray:
    """Minimum rate Q[u] of every UE by class (bit/s)"""
    return np.where(channel.is_d2d, cfg.q_min_d2d_bps, cfg.q_min_cue_bps).astype(float)


def interference_hop1(ctx: RateContext, realized: bool = True) -> np.ndarray:
    """I1[u, n] = Σ over UEs j of other relays of S[j, n] * g[j -> relay of u, n]"""
    cs = ctx.channel
    S = ctx.transmit
    interference = np.einsum('ju,jn,jun->un', cs.other_relay, S, cs.cross_gain)
    if realized and cs.delta_f is not None:
        interference = interference + cs.h1 * np.einsum('ujn,jn->un', cs.delta_f, S)
    return interference


def other_power_norm(ctx: RateContext) -> np.ndarray:
    """sqrt(Σ S[j, n]^2) over UEs j of other relays"""
    S = ctx.transmit
    return np.sqrt(np.einsum('ju,jn->un', ctx.channel.other_relay, S ** 2))


def interference_hop2(ctx: RateContext) -> np.ndarray:
    """
    I2[u, n] from other relays forwarding on RB n.
    CUE victims (the eNB) only see relays forwarding D2D traffic; relays
    forwarding CUE traffic to the eNB use orthogonal channels.
    """
    cs = ctx.channel
    P2 = ctx.p2
    to_dest = cs.relay_dest[cs.serving]  # (j, u, n): relay of j -> destination of u
    to_enb = (cs.is_d2d[:, None] * cs.relay_enb[cs.serving])[:, None, :]
    gain = np.where(cs.is_d2d[None, :, None], to_dest, to_enb)
    return np.einsum('ju,jn,jun->un', cs.other_relay, P2, gain)


def hop1_sinr_matrix(ctx: RateContext, mode: str = 'nominal', power: Optional[np.ndarray] = None) -> np.ndarray:
    """
    SINR of every (UE, RB) pair at the given first-hop powers.

    nominal: realized gains (nominal plus deviations on a perturbed state).
    robust: nominal gains plus the worst-case interference margin h * ξ1 * ||S_other||.
    """
    validate_mode(mode)
    cs = ctx.channel
    power = ctx.p1 if power is None else power
    if mode == 'robust':
        interference = interference_hop1(ctx, realized=False) + cs.h1 * cs.bounds.xi1 * other_power_norm(ctx)
    else:
        interference = interference_hop1(ctx, realized=True)
    return power * cs.h1 / (interference + ctx.cfg.sigma2)


def rate_matrix(ctx: RateContext, mode: str = 'nominal', power: Optional[np.ndarray] = None) -> np.ndarray:
    """½ B log2(1 + SINR) for every (UE, RB) pair (bit/s)"""
    sinr = hop1_sinr_matrix(ctx, mode, power)
    return 0.5 * ctx.cfg.rb_bandwidth_hz * np.log2(1.0 + sinr)


def unit_sinr(ctx: RateContext, ue: int, rb: int, hop: int) -> float:
    """Unit-power SINR (1/W) of a UE's link on one RB"""
    cs = ctx.channel
    if hop == 1:
        interference = interference_hop1(ctx)[ue, rb]
        return float(cs.h1[ue, rb] / (interference + ctx.cfg.sigma2))
    if hop == 2:
        interference = interference_hop2(ctx)[ue, rb]
        return float(cs.h2[ue, rb] / (interference + ctx.cfg.sigma2))
    raise ValueError(f"hop must be 1 or 2, got {hop}")


def e2e_rb_rate(ctx: RateContext, ue: int, rb: int) -> float:
    """End-to-end rate ½ B log2(1 + P γ1) with the second hop at P2 = H P1"""
    gamma1 = unit_sinr(ctx, ue, rb, 1)
    return float(0.5 * ctx.cfg.rb_bandwidth_hz * np.log2(1.0 + ctx.p1[ue, rb] * gamma1))


def raw_two_hop_rate(ctx: RateContext, ue: int, rb: int, p2: Optional[float] = None) -> float:
    """
    ½ min(r1, r2) from both hops' rates.

    Without an explicit p2 the second hop transmits at the exact equal-hop
    power (γ1 / γ2) P1, which makes the result equal e2e_rb_rate.
    """
    B = ctx.cfg.rb_bandwidth_hz
    p1 = ctx.p1[ue, rb]
    gamma1 = unit_sinr(ctx, ue, rb, 1)
    gamma2 = unit_sinr(ctx, ue, rb, 2)
    if p2 is None:
        p2 = gamma1 / gamma2 * p1
    r1 = B * np.log2(1.0 + p1 * gamma1)
    r2 = B * np.log2(1.0 + p2 * gamma2)
    return float(0.5 * min(r1, r2))


def robust_rb_rate(ctx: RateContext, ue: int, rb: int, power: Optional[float] = None) -> float:
    """Worst-case rate of one (UE, RB) pair under the interference uncertainty ball"""
    powers = None
    if power is not None:
        powers = ctx.p1.copy()
        powers[ue, rb] = power
    return float(rate_matrix(ctx, 'robust', powers)[ue, rb])


def direct_rate_matrix(ctx: RateContext, power: Optional[np.ndarray] = None) -> np.ndarray:
    """
    B log2(1 + P γ̃) of every UE talking directly to its destination.
    Interference comes from every other UE transmitting on the same RB.
    """
    cs = ctx.channel
    power = ctx.p1 if power is None else power
    S = ctx.transmit
    direct = np.einsum('uun->un', cs.ue_dest)
    others = ~np.eye(cs.num_ues, dtype=bool)
    interference = np.einsum('ju,jn,jun->un', others, S, cs.ue_dest)
    gamma = direct / (interference + ctx.cfg.sigma2)
    return ctx.cfg.rb_bandwidth_hz * np.log2(1.0 + power * gamma)


def direct_d2d_rate(ctx: RateContext, d2d_ue: int, rb: int, power: Optional[float] = None) -> float:
    """
    Rate of a D2D pair communicating without a relay (no half factor)

    Raises:
        DomainError: The UE is not a D2D transmitter
    """
    if not ctx.channel.is_d2d[d2d_ue]:
        raise DomainError(f"UE {d2d_ue} is not a D2D transmitter")
    powers = None
    if power is not None:
        powers = ctx.p1.copy()
        powers[d2d_ue, rb] = power
    return float(direct_rate_matrix(ctx, powers)[d2d_ue, rb])


def ue_rates(ctx: RateContext, mode: str = 'robust') -> np.ndarray:
    """R[u] = Σ_n x R[u, n] at the context's powers"""
    return np.sum(ctx.x * rate_matrix(ctx, mode), axis=1)


@dataclass(frozen=True)
class ConstraintCheck:
    """One constraint instance: lhs <= rhs"""
    family: str
    index: tuple
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.slack >= -SIMULATION_CONFIG['constraint_tolerance'] * abs(self.rhs)


@dataclass
class ConstraintReport:
    """Per-constraint pass/fail and slack of one allocation"""
    mode: str
    enforce_qos: bool = False
    checks: List[ConstraintCheck] = field(default_factory=list)

    def add(self, family: str, index: tuple, lhs: float, rhs: float):
        self.checks.append(ConstraintCheck(family, index, float(lhs), float(rhs)))

    def family(self, name: str) -> List[ConstraintCheck]:
        return [c for c in self.checks if c.family == name]

    def family_passed(self, name: str) -> bool:
        return all(c.passed for c in self.family(name))

    def slack(self, name: str) -> float:
        """Smallest slack of a constraint family"""
        return min((c.slack for c in self.family(name)), default=float('inf'))

    def slacks(self) -> Dict[str, float]:
        """Smallest slack of every family counted toward `passed`"""
        families = dict.fromkeys(c.family for c in self.checks if self.enforce_qos or c.family != QOS)
        return {name: self.slack(name) for name in families}

    def failures(self) -> List[ConstraintCheck]:
        return [c for c in self.checks if not c.passed]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if self.enforce_qos or c.family != QOS)

    def signature(self) -> list:
        return [(c.family, c.index, c.lhs, c.rhs, c.passed) for c in self.checks]


def check_constraints(ctx: RateContext, mode: str = 'nominal', enforce_qos: bool = False) -> ConstraintReport:
    """
    Evaluate every constraint family of an allocation

    Args:
        ctx: Allocation and channel
        mode: 'nominal' judges the realized gains; 'robust' judges nominal gains
              plus the worst-case deviation terms
        enforce_qos: Count the minimum-rate constraints toward `passed`

    Returns:
        ConstraintReport (report-only, never raises on violation)
    """
    validate_mode(mode)
    cfg, cs = ctx.cfg, ctx.channel
    refs, bounds = cs.references, cs.bounds
    robust = mode == 'robust'
    x, S = ctx.x, ctx.transmit
    ratio = cs.hop_ratio if robust else cs.realized_hop_ratio
    hop1_gain = refs.hop1_gain if robust else cs.realized_hop1_reference
    report = ConstraintReport(mode=mode, enforce_qos=enforce_qos)

    for relay in range(cs.num_relays):
        members = cs.members(relay)
        if members.size == 0:
            continue
        for n in range(cs.num_rbs):
            report.add(RB_EXCLUSIVITY, (relay, n), np.sum(x[members, n]), 1.0)

        lhs = np.sum(ratio[members] * S[members])
        if robust:
            lhs += bounds.xi2[relay] * np.linalg.norm(S[members])
        report.add(RELAY_POWER, (relay,), lhs, cfg.p_max_relay_w)

        for n in range(cs.num_rbs):
            active = members[refs.hop1_user[members, n] != NO_VICTIM]
            lhs = np.sum(hop1_gain[active, n] * S[active, n])
            if robust and active.size:
                lhs += bounds.xi3[relay, n] * np.linalg.norm(S[active, n])
            report.add(INTERFERENCE_HOP1, (relay, n), lhs, cfg.i_th1_w)

            lhs = 0.0
            if refs.hop2_user[relay, n] != NO_VICTIM:
                lhs = np.sum(ratio[members, n] * S[members, n]) * refs.hop2_gain[relay, n]
                if robust:
                    lhs += bounds.xi4[relay, n] * np.linalg.norm(S[members, n])
            report.add(INTERFERENCE_HOP2, (relay, n), lhs, cfg.i_th2_w)

    targets = qos_targets(cfg, cs)
    achieved = ue_rates(ctx, mode)
    for u in range(cs.num_ues):
        report.add(UE_POWER, (u,), np.sum(S[u]), cfg.p_max_ue_w)
        # R >= Q written as Q - R <= 0
        report.add(QOS, (u,), targets[u] - achieved[u], 0.0)
        report.add(NONNEGATIVITY, (u,), max(0.0, -float(np.min(ctx.p1[u]))), 0.0)
        report.add(NONNEGATIVITY, (u, 'binary'), np.count_nonzero((x[u] != 0) & (x[u] != 1)), 0.0)

    return report
