"""
Distributed Power Control
Per-RB power caps from the budgets and interference thresholds, and the
target-rate power update each UE applies after RB allocation
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from channel import NO_VICTIM
from rates import RateContext, qos_targets


@dataclass(frozen=True)
class PowerAllocation:
    """
    levels[u, n]: bid power each UE would use on RB n (utilities are evaluated here)
    p1[u, n]: first-hop transmit power, x * levels
    p_hat_max, varpi: caps of the last update (NaN for UEs without RBs)
    """
    levels: np.ndarray
    p1: np.ndarray
    hop_ratio: np.ndarray
    p_hat_max: np.ndarray
    varpi: np.ndarray

    @property
    def p2(self) -> np.ndarray:
        """Second-hop power P2 = H * P1"""
        return self.hop_ratio * self.p1


def initial_levels(ctx: RateContext) -> np.ndarray:
    """Uniform start: P_max_ue / N on every RB"""
    cs = ctx.channel
    return np.full((cs.num_ues, cs.num_rbs), ctx.cfg.p_max_ue_w / cs.num_rbs)


def cap_matrix(ctx: RateContext) -> Tuple[np.ndarray, np.ndarray]:
    """
    Caps of every (UE, RB) pair under the context's allocation x.

    p_hat_max = min(P_ue / Σ_n x_u, P_relay / ((H + ξ2) Σ_u Σ_n x))
    varpi = min(I_th1 / (g1* + ξ3), I_th2 / (H g2* + ξ4)), a term without victim is inactive

    Returns:
        (p_hat_max, varpi), both NaN on rows of UEs holding no RB
    """
    cfg, cs = ctx.cfg, ctx.channel
    refs, bounds = cs.references, cs.bounds
    U, N = cs.num_ues, cs.num_rbs
    p_hat_max = np.full((U, N), np.nan)
    varpi = np.full((U, N), np.nan)

    for relay in range(cs.num_relays):
        members = cs.members(relay)
        relay_load = ctx.x[members].sum()
        for u in members:
            ue_load = ctx.x[u].sum()
            if ue_load == 0:
                continue
            ue_cap = cfg.p_max_ue_w / ue_load
            relay_cap = cfg.p_max_relay_w / ((cs.hop_ratio[u] + bounds.xi2[relay]) * relay_load)
            p_hat_max[u] = np.minimum(ue_cap, relay_cap)

            with np.errstate(divide='ignore'):
                hop1 = np.where(
                    refs.hop1_user[u] == NO_VICTIM, np.inf,
                    cfg.i_th1_w / (refs.hop1_gain[u] + bounds.xi3[relay])
                )
                hop2 = np.where(
                    refs.hop2_user[relay] == NO_VICTIM, np.inf,
                    cfg.i_th2_w / (cs.hop_ratio[u] * refs.hop2_gain[relay] + bounds.xi4[relay])
                )
            varpi[u] = np.minimum(hop1, hop2)

    return p_hat_max, varpi


def power_caps(ctx: RateContext, ue: int, rb: int) -> Optional[Tuple[float, float]]:
    """
    (p_hat_max, varpi) of one pair, or None when the UE holds no RB (it does not transmit)
    """
    if ctx.x[ue].sum() == 0:
        return None
    p_hat_max, varpi = cap_matrix(ctx)
    return float(p_hat_max[ue, rb]), float(varpi[ue, rb])


def per_rb_target(q_min: float, kappa: int, bandwidth: float) -> float:
    """Rate target of one RB in bit/s/Hz: the UE's target split evenly over its quota"""
    return q_min / (kappa * bandwidth)


def target_power(target: float, prev_rate: float, prev_p: float) -> float:
    """
    Λ = (2^Q - 1) / (2^R - 1) * P, rates in bit/s/Hz.
    Undefined for a non-positive previous rate, reported as infinity.
    """
    if prev_rate <= 0:
        return float('inf')
    with np.errstate(over='ignore'):
        return float(np.expm1(target * np.log(2)) / np.expm1(prev_rate * np.log(2)) * prev_p)


def select_power(lam: float, p_hat_max: float, varpi: float, p_tilde: Optional[float] = None) -> float:
    """
    Λ when it fits under p_hat_max (clamped to varpi for interference safety),
    otherwise min(P̃, min(p_hat_max, varpi)) with P̃ = p_hat_max by default
    """
    if lam <= p_hat_max:
        return min(lam, varpi)
    p_tilde = p_hat_max if p_tilde is None else p_tilde
    return min(p_tilde, min(p_hat_max, varpi))


def update_power(ctx: RateContext, ue: int, rb: int, prev_rate: float, prev_p: float,
                 target: Optional[float] = None) -> float:
    """
    New power of one allocated pair

    Args:
        ctx: Context carrying the fresh allocation x
        ue: UE index
        rb: RB index
        prev_rate: Rate at prev_p in the previous iteration (bit/s/Hz)
        prev_p: Previous power (W)
        target: Per-RB target (bit/s/Hz); defaults to Q split over the UE's allocated RBs

    Returns:
        Updated power (W); zero when the UE holds no RB
    """
    caps = power_caps(ctx, ue, rb)
    if caps is None:
        return 0.0
    if target is None:
        q_min = qos_targets(ctx.cfg, ctx.channel)[ue]
        target = per_rb_target(q_min, int(ctx.x[ue].sum()), ctx.cfg.rb_bandwidth_hz)
    lam = target_power(target, prev_rate, prev_p)
    return select_power(lam, *caps)


def update_levels(ctx: RateContext, members, utility: np.ndarray, kappa: np.ndarray,
                  levels: np.ndarray) -> PowerAllocation:
    """
    Apply the power update to every RB of every relay member holding at least one RB.

    Args:
        ctx: Context carrying the fresh allocation x
        members: Global UE indices of the relay
        utility: Utility rows of the members at the current levels (bit/s)
        kappa: Quotas of the members
        levels: Current bid levels of all UEs

    Returns:
        PowerAllocation of all UEs with the members' rows updated
    """
    cfg, cs = ctx.cfg, ctx.channel
    bandwidth = cfg.rb_bandwidth_hz
    q_min = qos_targets(cfg, cs)
    p_hat_max, varpi = cap_matrix(ctx)
    new_levels = levels.copy()

    for row, u in enumerate(members):
        if ctx.x[u].sum() == 0:
            continue
        target = per_rb_target(q_min[u], int(kappa[row]), bandwidth)
        for n in range(cs.num_rbs):
            lam = target_power(target, utility[row, n] / bandwidth, levels[u, n])
            new_levels[u, n] = select_power(lam, p_hat_max[u, n], varpi[u, n])

    return PowerAllocation(
        levels=new_levels,
        p1=ctx.x * new_levels,
        hop_ratio=cs.hop_ratio,
        p_hat_max=p_hat_max,
        varpi=varpi
    )
