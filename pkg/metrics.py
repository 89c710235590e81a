"""
Evaluation Metrics
Average rate, rate gain, efficiency against the oracle and signalling overhead
"""
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from logger import UndefinedMetricError, ValidationError


@dataclass(frozen=True)
class OverheadFigures:
    """Matching messages of one round (omega) and the bound over T iterations (omega_max)"""
    omega: int
    omega_max: int


@dataclass(frozen=True)
class MetricsReport:
    """Metrics of one (sweep value, mode, realization) run"""
    avg_rate: float
    sum_rate: float
    d2d_avg_rate: Optional[float] = None
    rate_gain: Optional[float] = None
    efficiency: Optional[float] = None
    iterations: Optional[int] = None
    messages_matching: Optional[int] = None
    messages_x2: Optional[int] = None
    converged: Optional[bool] = None
    constraint_slack: Optional[Dict[str, float]] = None

    def to_row(self, sweep_value, mode: str, realization) -> dict:
        return {
            'sweep_value': sweep_value,
            'mode': mode,
            'realization': realization,
            'r_avg_bps': self.avg_rate,
            'r_sum_bps': self.sum_rate,
            'rate_gain_pct': self.rate_gain,
            'efficiency': self.efficiency,
            'iterations': self.iterations,
            'messages_matching': self.messages_matching,
            'messages_x2': self.messages_x2,
            # kept for summaries and run reports, not part of the emitted columns
            'r_d2d_avg_bps': self.d2d_avg_rate,
            'converged': self.converged,
            'constraint_slack': self.constraint_slack
        }


def average_rate(rates: Iterable[float], num_ues: int) -> float:
    """R_avg = Σ R_u / (C + D)"""
    if num_ues < 1:
        raise ValidationError(f"num_ues must be >= 1, got {num_ues}")
    return float(np.sum(np.fromiter(rates, dtype=float))) / num_ues


def rate_gain(r_prop: float, r_ref: float) -> float:
    """
    Relative gain of the proposed scheme in percent

    Raises:
        UndefinedMetricError: The reference rate is not positive
    """
    if r_ref <= 0:
        raise UndefinedMetricError(f"rate gain undefined for reference rate {r_ref}")
    return (r_prop - r_ref) / r_ref * 100.0


def efficiency(r: float, r_optm: float) -> float:
    """
    η = R / R_optm

    Raises:
        UndefinedMetricError: The optimum is not positive
    """
    if r_optm <= 0:
        raise UndefinedMetricError(f"efficiency undefined for optimum {r_optm}")
    return r / r_optm


def signalling_overhead(num_rbs: int, num_ues: int, iterations: int) -> OverheadFigures:
    """
    Matching messages of one relay round and the total bound over T iterations,
    counting one proposal per tentative RB offer plus one X2 exchange per iteration.
    With fewer RBs than UEs only N UEs can hold an RB, which reduces to the N = U count.
    """
    N, U, T = num_rbs, num_ues, iterations
    for name, value in (('num_rbs', N), ('num_ues', U), ('iterations', T)):
        if value < 1:
            raise ValidationError(f"{name} must be >= 1, got {value}")

    if N <= U:
        omega = N * (N + 1) // 2
        omega_max = T * (N * N + N + 2) // 2
    else:
        omega = (N + 1) * U - U * (U + 1) // 2
        omega_max = T * (2 * (N + 1) * U - U * (U + 1) + 2) // 2
    return OverheadFigures(omega=omega, omega_max=omega_max)


def measured_overhead(result) -> Dict[int, Tuple[int, int]]:
    """Counted (matching, X2) messages per relay over a whole run"""
    totals: Dict[int, Tuple[int, int]] = {}
    for record in result.trace:
        matching, x2 = totals.get(record.relay, (0, 0))
        totals[record.relay] = (matching + record.messages_matching, x2 + record.messages_x2)
    return totals


def summarize(values: Iterable[Optional[float]]) -> Tuple[Optional[float], Optional[float]]:
    """Mean and population standard deviation, ignoring missing values"""
    present = [v for v in values if v is not None]
    if not present:
        return None, None
    array = np.asarray(present, dtype=float)
    return float(np.mean(array)), float(np.std(array))


def d2d_average(rates: np.ndarray, d2d: Optional[np.ndarray]) -> Optional[float]:
    """Average rate of the D2D UEs, None when there are none"""
    if d2d is None or not np.any(d2d):
        return None
    return float(np.mean(np.asarray(rates, dtype=float)[np.asarray(d2d, dtype=bool)]))


def build_report(rates: np.ndarray, num_ues: int, result=None, r_ref_d2d: Optional[float] = None,
                 r_optm: Optional[float] = None, d2d: Optional[np.ndarray] = None,
                 slack: Optional[Dict[str, float]] = None) -> MetricsReport:
    """
    Assemble the metrics of one run

    Args:
        rates: Per-UE rates of the run (bit/s)
        num_ues: C + D
        result: NetworkResult of a proposed run (iterations and messages), if any
        r_ref_d2d: Average D2D rate of the reference scheme; the rate gain compares D2D averages
        r_optm: Oracle sum rate for the efficiency
        d2d: Mask of the D2D UEs
        slack: Smallest worst-case slack per constraint family of the allocation

    Returns:
        MetricsReport; metrics whose reference is zero or missing are left empty
    """
    avg = average_rate(rates, num_ues)
    total = float(np.sum(rates))
    d2d_avg = d2d_average(rates, d2d)

    gain = None
    if r_ref_d2d is not None and d2d_avg is not None:
        try:
            gain = rate_gain(d2d_avg, r_ref_d2d)
        except UndefinedMetricError:
            gain = None

    eta = None
    if r_optm is not None:
        try:
            eta = efficiency(total, r_optm)
        except UndefinedMetricError:
            eta = None

    return MetricsReport(
        avg_rate=avg,
        sum_rate=total,
        d2d_avg_rate=d2d_avg,
        rate_gain=gain,
        efficiency=eta,
        iterations=None if result is None else result.iterations,
        messages_matching=None if result is None else result.messages_matching,
        messages_x2=None if result is None else result.messages_x2,
        converged=None if result is None else getattr(result, 'converged', None),
        constraint_slack=slack
    )
