"""
RB Allocation by Stable Matching
Many-to-one matching of RBs to UEs with quotas, and stability verification
"""
import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Set, Tuple

import numpy as np


def utility_entries(utility) -> np.ndarray:
    """Accept a UtilityMatrix-like object (with .entries) or a plain array"""
    return np.asarray(getattr(utility, 'entries', utility), dtype=float)


@dataclass(frozen=True)
class PreferenceProfiles:
    """
    Both sides' ordered lists, most preferred first, acceptable partners only
    (a pair is acceptable when its utility is positive).
    ue_rank[u, n] / rb_rank[n, u] give list positions; unacceptable pairs rank last.
    """
    ue_prefs: Tuple[Tuple[int, ...], ...]
    rb_prefs: Tuple[Tuple[int, ...], ...]
    ue_rank: np.ndarray
    rb_rank: np.ndarray

    @property
    def num_ues(self) -> int:
        return len(self.ue_prefs)

    @property
    def num_rbs(self) -> int:
        return len(self.rb_prefs)

    def acceptable(self, ue: int, rb: int) -> bool:
        return self.ue_rank[ue, rb] < len(self.ue_prefs[ue])


@dataclass(frozen=True)
class Quota:
    """Maximum number of RBs per UE; infeasible marks UEs whose rate target exceeds their whole row"""
    kappa: np.ndarray
    infeasible: np.ndarray

    def __len__(self):
        return len(self.kappa)


@dataclass
class Matching:
    """RB -> UE assignment (None when unmatched) and its inverse"""
    rb_owner: List[Optional[int]]
    ue_rbs: List[List[int]]
    proposals: int = 0
    unmet_quota: List[int] = field(default_factory=list)
    pruned: Set[Tuple[int, int]] = field(default_factory=set)

    @classmethod
    def from_pairs(cls, num_ues: int, num_rbs: int, pairs) -> 'Matching':
        rb_owner = [None] * num_rbs
        ue_rbs = [[] for _ in range(num_ues)]
        for ue, rb in pairs:
            rb_owner[rb] = ue
            ue_rbs[ue].append(rb)
        return cls(rb_owner=rb_owner, ue_rbs=[sorted(r) for r in ue_rbs])

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return [(ue, rb) for rb, ue in enumerate(self.rb_owner) if ue is not None]

    def to_binary(self) -> np.ndarray:
        """The x[u, n] indicator matrix"""
        x = np.zeros((len(self.ue_rbs), len(self.rb_owner)))
        for ue, rb in self.pairs:
            x[ue, rb] = 1.0
        return x

    def is_consistent(self) -> bool:
        forward = {(ue, rb) for rb, ue in enumerate(self.rb_owner) if ue is not None}
        backward = {(ue, rb) for ue, rbs in enumerate(self.ue_rbs) for rb in rbs}
        return forward == backward


@dataclass
class StabilityReport:
    blocking_pairs: List[Tuple[int, int]] = field(default_factory=list)
    rationality_violations: List[Tuple[int, int]] = field(default_factory=list)
    quota_violations: List[int] = field(default_factory=list)

    @property
    def stable(self) -> bool:
        return not (self.blocking_pairs or self.rationality_violations or self.quota_violations)


def compute_quota(utility, q_min) -> Quota:
    """
    Smallest number of RBs whose best utilities reach each UE's rate target

    Args:
        utility: U x N utility matrix (bit/s)
        q_min: Rate target per UE (bit/s), scalar or length-U

    Returns:
        Quota, capped at N with the infeasible flag set when the target is unreachable
    """
    entries = utility_entries(utility)
    U, N = entries.shape
    targets = np.broadcast_to(np.asarray(q_min, dtype=float), (U,))
    best_first = -np.sort(-entries, axis=1)
    reach = np.cumsum(best_first, axis=1) >= targets[:, None]
    reachable = reach.any(axis=1)
    kappa = np.where(reachable, np.argmax(reach, axis=1) + 1, N)
    return Quota(kappa=kappa.astype(int), infeasible=~reachable)


def build_preferences(utility) -> PreferenceProfiles:
    """
    Sort each row (UE side) and column (RB side) of the utility matrix, best first.
    Ties go to the lower index.
    """
    entries = utility_entries(utility)
    U, N = entries.shape
    ue_order = np.argsort(-entries, axis=1, kind='stable')
    rb_order = np.argsort(-entries.T, axis=1, kind='stable')

    ue_prefs = tuple(tuple(int(n) for n in ue_order[u] if entries[u, n] > 0) for u in range(U))
    rb_prefs = tuple(tuple(int(u) for u in rb_order[n] if entries[u, n] > 0) for n in range(N))

    ue_rank = np.full((U, N), N, dtype=int)
    for u, prefs in enumerate(ue_prefs):
        ue_rank[u, list(prefs)] = np.arange(len(prefs))
    rb_rank = np.full((N, U), U, dtype=int)
    for n, prefs in enumerate(rb_prefs):
        rb_rank[n, list(prefs)] = np.arange(len(prefs))

    return PreferenceProfiles(ue_prefs, rb_prefs, ue_rank, rb_rank)


def allocate_rbs(profiles: PreferenceProfiles, quota: Quota) -> Matching:
    """
    RB-proposing stable matching with UE quotas.

    Unmatched RBs propose, in queue order, to the next UE on their list. A UE
    over quota revokes its least preferred RB; a UE exactly at quota drops
    every RB it ranks below its least preferred held RB, and those RBs skip it.

    Args:
        profiles: Preference lists of both sides
        quota: Maximum RBs per UE

    Returns:
        Stable Matching with the proposal count and any unmet quotas
    """
    U, N = profiles.num_ues, profiles.num_rbs
    kappa = quota.kappa
    queue = deque(n for n in range(N) if profiles.rb_prefs[n])
    next_choice = [0] * N
    cutoff = [N] * U  # ranks >= cutoff were pruned from the UE's list
    held = [[] for _ in range(U)]  # max-heap on rank via negation
    rb_owner: List[Optional[int]] = [None] * N
    pruned: Set[Tuple[int, int]] = set()
    proposals = 0

    while queue:
        n = queue.popleft()
        prefs = profiles.rb_prefs[n]
        while next_choice[n] < len(prefs) and profiles.ue_rank[prefs[next_choice[n]], n] >= cutoff[prefs[next_choice[n]]]:
            next_choice[n] += 1
        if next_choice[n] >= len(prefs):
            continue

        u = prefs[next_choice[n]]
        proposals += 1
        rb_owner[n] = u
        heapq.heappush(held[u], (-profiles.ue_rank[u, n], n))

        if len(held[u]) > kappa[u]:
            _, worst = heapq.heappop(held[u])
            rb_owner[worst] = None
            next_choice[worst] += 1
            queue.append(worst)

        if len(held[u]) == kappa[u]:
            worst_rank = -held[u][0][0]
            ue_list = profiles.ue_prefs[u]
            for rank in range(worst_rank + 1, min(cutoff[u], len(ue_list))):
                pruned.add((u, ue_list[rank]))
            cutoff[u] = min(cutoff[u], worst_rank + 1)

    ue_rbs = [sorted(n for _, n in held[u]) for u in range(U)]
    unmet = [u for u in range(U) if len(ue_rbs[u]) < kappa[u]]
    return Matching(rb_owner=rb_owner, ue_rbs=ue_rbs, proposals=proposals,
                    unmet_quota=unmet, pruned=pruned)


def verify_stable(m: Matching, profiles: PreferenceProfiles, quota: Quota) -> StabilityReport:
    """
    List every blocking pair and individual-rationality violation.

    (u, n) blocks when n prefers u to its current owner and either u prefers n
    to some RB it holds, or u is under quota and n is acceptable to u.
    """
    report = StabilityReport()
    U, N = profiles.num_ues, profiles.num_rbs

    for u in range(U):
        if len(m.ue_rbs[u]) > quota.kappa[u]:
            report.quota_violations.append(u)
        for n in m.ue_rbs[u]:
            if not profiles.acceptable(u, n):
                report.rationality_violations.append((u, n))

    for u in range(U):
        held = m.ue_rbs[u]
        worst_held = max((profiles.ue_rank[u, n] for n in held), default=-1)
        under_quota = len(held) < quota.kappa[u]
        for n in range(N):
            if m.rb_owner[n] == u or not profiles.acceptable(u, n):
                continue
            owner = m.rb_owner[n]
            rb_prefers = owner is None or profiles.rb_rank[n, u] < profiles.rb_rank[n, owner]
            ue_prefers = profiles.ue_rank[u, n] < worst_held or under_quota
            if rb_prefers and ue_prefers:
                report.blocking_pairs.append((u, n))

    return report
