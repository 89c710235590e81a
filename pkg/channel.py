"""
Channel Model
Samples nominal link gains, derives normalized and hop-ratio quantities,
selects reference users and draws bounded perturbations inside the uncertainty balls
"""
import csv
import dataclasses
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from config import PROPAGATION_CONFIG
from logger import logger, ChannelError
from scenario import NetworkConfig, Topology

# Reference-user sentinel: no interference victim exists, the cap is inactive
NO_VICTIM = -1

DUMP_COLUMNS = ['link', 'hop', 'rb', 'gain']


class PropagationModel:
    """Distance-dependent path loss with log-normal shadowing and Rayleigh fading"""

    @staticmethod
    def log_distance(distance, path_loss_exponent=3.0,
                     reference_distance: float = PROPAGATION_CONFIG['reference_distance_m'],
                     reference_loss: float = PROPAGATION_CONFIG['reference_loss_db']):
        """
        Log-distance path loss model

        Args:
            distance: Distance in meters (scalar or array)
            path_loss_exponent: Path loss exponent (scalar or array broadcastable to distance)
            reference_distance: Reference distance in meters
            reference_loss: Path loss at reference distance in dB

        Returns:
            Path loss in dB
        """
        distance = np.maximum(np.asarray(distance, dtype=float), reference_distance)
        return reference_loss + 10 * np.asarray(path_loss_exponent) * np.log10(distance / reference_distance)

    @staticmethod
    def link_gains(rng: np.random.Generator, distance, path_loss_exponent, rb_count: int,
                   shadowing_std: float = PROPAGATION_CONFIG['shadowing_std_db']) -> np.ndarray:
        """Linear gains per link per RB: one shadowing draw per link, unit-mean exponential fading per RB"""
        distance = np.asarray(distance, dtype=float)
        path_loss = PropagationModel.log_distance(distance, path_loss_exponent)
        shadowing = rng.normal(0.0, shadowing_std, size=distance.shape)
        fading = rng.exponential(1.0, size=distance.shape + (rb_count,))
        return (10.0 ** (-(path_loss + shadowing) / 10.0))[..., None] * fading


@dataclass(frozen=True)
class ReferenceGains:
    """Reference users (worst-case victims) and their gains, per UE/relay and RB"""
    hop1_user: np.ndarray  # (U, N) other relay receiving the most interference from u
    hop1_gain: np.ndarray  # (U, N)
    hop2_user: np.ndarray  # (L, N) D2D UE of another relay most exposed to relay l
    hop2_gain: np.ndarray  # (L, N)


@dataclass(frozen=True)
class UncertaintyBounds:
    """Absolute radii of the uncertainty balls"""
    xi1: np.ndarray  # (U, N) normalized interference gains of u on RB n
    xi2: np.ndarray  # (L,) hop ratios of the relay's UEs over all RBs
    xi3: np.ndarray  # (L, N) hop-1 reference gains of the relay's UEs on RB n
    xi4: np.ndarray  # (L, N) hop ratio times hop-2 reference gain on RB n


@dataclass(frozen=True, eq=False)
class ChannelState:
    """
    Snapshot of every link gain of one realization.

    Gain arrays:
        ue_relay[u, l, n]   UE u -> relay l, hop 1 (direct when l serves u, interference otherwise)
        relay_enb[l, n]     relay l -> eNB, hop 2
        relay_dest[l, u, n] relay l -> hop-2 destination of u (D2D receiver, or eNB for a CUE)
        ue_dest[j, u, n]    UE j transmitter -> destination of u, used by direct D2D links

    A perturbed realization keeps the nominal arrays and carries the deviations
    delta_f[u, j, n] (normalized interference), delta_h[u, n] (hop ratio) and
    delta_g1[u, n] (hop-1 reference gain).
    """
    ue_relay: np.ndarray
    relay_enb: np.ndarray
    relay_dest: np.ndarray
    ue_dest: np.ndarray
    serving: np.ndarray
    is_d2d: np.ndarray
    xi: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    xi_mode: str = 'relative'
    perturbation_mode: str = 'interior'
    delta_f: Optional[np.ndarray] = None
    delta_h: Optional[np.ndarray] = None
    delta_g1: Optional[np.ndarray] = None

    def __post_init__(self):
        U, L, N = np.shape(self.ue_relay)
        expected = {
            'relay_enb': (L, N),
            'relay_dest': (L, U, N),
            'ue_dest': (U, U, N),
            'serving': (U,),
            'is_d2d': (U,)
        }
        for name, shape in expected.items():
            if np.shape(getattr(self, name)) != shape:
                raise ChannelError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        if U and (self.serving.min() < 0 or self.serving.max() >= L):
            raise ChannelError("serving relay index out of range")

    @property
    def num_ues(self) -> int:
        return self.ue_relay.shape[0]

    @property
    def num_relays(self) -> int:
        return self.ue_relay.shape[1]

    @property
    def num_rbs(self) -> int:
        return self.ue_relay.shape[2]

    @property
    def is_perturbed(self) -> bool:
        return self.delta_f is not None

    def members(self, relay: int) -> np.ndarray:
        return np.flatnonzero(self.serving == relay)

    @cached_property
    def h1(self) -> np.ndarray:
        """Hop-1 direct gain h[u, n] to the serving relay"""
        return self.ue_relay[np.arange(self.num_ues), self.serving, :]

    @cached_property
    def h2(self) -> np.ndarray:
        """Hop-2 direct gain: serving relay -> eNB for CUEs, -> D2D receiver for D2D UEs"""
        to_dest = self.relay_dest[self.serving, np.arange(self.num_ues), :]
        to_enb = self.relay_enb[self.serving, :]
        return np.where(self.is_d2d[:, None], to_dest, to_enb)

    @cached_property
    def hop_ratio(self) -> np.ndarray:
        """Nominal hop power ratio H[u, n] = h1 / h2"""
        return self.h1 / self.h2

    @cached_property
    def other_relay(self) -> np.ndarray:
        """mask[j, u]: UE j is served by a relay other than u's"""
        return self.serving[:, None] != self.serving[None, :]

    @cached_property
    def cross_gain(self) -> np.ndarray:
        """g[j, u, n]: hop-1 gain from UE j to the relay serving u"""
        return self.ue_relay[:, self.serving, :]

    @cached_property
    def references(self) -> 'ReferenceGains':
        return reference_gains(self)

    @cached_property
    def bounds(self) -> 'UncertaintyBounds':
        return effective_bounds(self)

    @property
    def realized_hop_ratio(self) -> np.ndarray:
        if self.delta_h is None:
            return self.hop_ratio
        return self.hop_ratio + self.delta_h

    @property
    def realized_hop1_reference(self) -> np.ndarray:
        if self.delta_g1 is None:
            return self.references.hop1_gain
        return self.references.hop1_gain + self.delta_g1


@dataclass(frozen=True)
class NormalizedGain:
    """F[u, j, n] = g[j -> relay of u, n] / h[u, n] (zero unless j is served elsewhere); σ̃ = σ²/h"""
    f_bar: np.ndarray
    sigma_tilde: np.ndarray


def _normalized_interference(cs: ChannelState) -> np.ndarray:
    cross = cs.cross_gain.transpose(1, 0, 2)  # (u, j, n)
    with np.errstate(divide='ignore', invalid='ignore'):
        f_bar = cross / cs.h1[:, None, :]
    return np.where(cs.other_relay.T[:, :, None], f_bar, 0.0)


def normalized_gain(cs: ChannelState, sigma2: float) -> NormalizedGain:
    """
    Normalized interference gains and noise of every UE

    Raises:
        ChannelError: A hop-1 direct gain is zero
    """
    if np.any(cs.h1 <= 0):
        u, n = np.argwhere(cs.h1 <= 0)[0]
        raise ChannelError(f"degenerate channel: hop-1 direct gain of UE {u} on RB {n} is {cs.h1[u, n]}")
    return NormalizedGain(f_bar=_normalized_interference(cs), sigma_tilde=sigma2 / cs.h1)


def reference_user(cs: ChannelState, relay: int, ue: int, hop: int, rb: int) -> Tuple[int, float]:
    """
    Worst-case interference victim of a transmission on RB rb

    Hop 1: the other relay receiving the strongest gain from UE ue.
    Hop 2: the D2D UE of another relay receiving the strongest gain from relay.

    Returns:
        (victim id, gain), or (NO_VICTIM, 0.0) when no candidate exists
    """
    if hop == 1:
        candidates = [j for j in range(cs.num_relays) if j != relay]
        gains = [cs.ue_relay[ue, j, rb] for j in candidates]
    elif hop == 2:
        candidates = [u for u in range(cs.num_ues) if cs.is_d2d[u] and cs.serving[u] != relay]
        gains = [cs.relay_dest[relay, u, rb] for u in candidates]
    else:
        raise ValueError(f"hop must be 1 or 2, got {hop}")

    if not candidates:
        return NO_VICTIM, 0.0
    best = int(np.argmax(gains))
    return candidates[best], float(gains[best])


def reference_gains(cs: ChannelState) -> ReferenceGains:
    """Vectorized reference_user for every UE/relay and RB"""
    U, L, N = cs.ue_relay.shape

    masked = cs.ue_relay.copy()
    masked[np.arange(U), cs.serving, :] = -np.inf
    hop1_user = np.argmax(masked, axis=1)
    hop1_gain = np.take_along_axis(masked, hop1_user[:, None, :], axis=1)[:, 0, :]
    no_victim = ~np.isfinite(hop1_gain)
    hop1_user = np.where(no_victim, NO_VICTIM, hop1_user)
    hop1_gain = np.where(no_victim, 0.0, hop1_gain)

    hop2_user = np.full((L, N), NO_VICTIM, dtype=int)
    hop2_gain = np.zeros((L, N))
    for relay in range(L):
        candidates = np.flatnonzero(cs.is_d2d & (cs.serving != relay))
        if candidates.size == 0:
            continue
        gains = cs.relay_dest[relay, candidates, :]
        best = np.argmax(gains, axis=0)
        hop2_user[relay] = candidates[best]
        hop2_gain[relay] = gains[best, np.arange(N)]

    return ReferenceGains(hop1_user, hop1_gain, hop2_user, hop2_gain)


def effective_bounds(cs: ChannelState) -> UncertaintyBounds:
    """
    Absolute radii of the uncertainty balls.

    In relative mode each bound scales the norm of the nominal vector it perturbs,
    so xi = 0.25 allows deviations up to 25% of the nominal magnitude.
    """
    U, L, N = cs.ue_relay.shape
    xi1, xi2, xi3, xi4 = cs.xi

    if cs.xi_mode == 'absolute':
        return UncertaintyBounds(
            xi1=np.full((U, N), xi1),
            xi2=np.full(L, xi2),
            xi3=np.full((L, N), xi3),
            xi4=np.full((L, N), xi4)
        )

    refs = cs.references
    f_bar = _normalized_interference(cs)
    b1 = xi1 * np.sqrt(np.sum(f_bar ** 2, axis=1))
    b2 = np.zeros(L)
    b3 = np.zeros((L, N))
    b4 = np.zeros((L, N))
    for relay in range(L):
        members = cs.members(relay)
        if members.size == 0:
            continue
        ratio = cs.hop_ratio[members]
        b2[relay] = xi2 * np.linalg.norm(ratio)
        b3[relay] = xi3 * np.linalg.norm(refs.hop1_gain[members], axis=0)
        b4[relay] = xi4 * refs.hop2_gain[relay] * np.linalg.norm(ratio, axis=0)
    return UncertaintyBounds(xi1=b1, xi2=b2, xi3=b3, xi4=b4)


def strongest_relay(ue_relay: np.ndarray) -> np.ndarray:
    """Serving relay of every UE: highest hop-1 gain averaged over RBs"""
    return np.argmax(np.mean(ue_relay, axis=2), axis=1).astype(int)


def associate(topology: Topology, channel: 'ChannelState') -> Topology:
    """Topology whose association matches the channel's serving relays"""
    return topology.with_association(channel.serving)


def sample_link_gains(topology: Topology, cfg: NetworkConfig, seed: int) -> ChannelState:
    """
    Draw every direct and interference gain of a topology

    Args:
        topology: Node placement
        cfg: Network configuration (RB count, uncertainty bounds)
        seed: Seed of the channel random stream

    Every UE is served by the relay with its strongest mean hop-1 gain, which
    may differ from the placement-time association of the topology.

    Returns:
        ChannelState snapshot, deterministic under seed
    """
    rng = np.random.default_rng(seed)
    N = cfg.rb_count
    is_d2d = topology.is_d2d

    ue_pos = np.array([r.position for r in topology.ue_records], dtype=float).reshape(-1, 2)
    relay_pos = np.array(topology.relay_positions, dtype=float)
    enb = np.array(topology.enb_position, dtype=float)
    dest_pos = np.array([
        r.receiver if r.is_d2d else topology.enb_position for r in topology.ue_records
    ], dtype=float).reshape(-1, 2)

    infra = PROPAGATION_CONFIG['exponent_infrastructure']
    ue_ue = PROPAGATION_CONFIG['exponent_ue_ue']

    def distance(a, b):
        return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)

    ue_relay = PropagationModel.link_gains(rng, distance(ue_pos, relay_pos), infra, N)
    serving = strongest_relay(ue_relay)
    relay_enb = PropagationModel.link_gains(rng, np.linalg.norm(relay_pos - enb, axis=1), infra, N)
    relay_dest = PropagationModel.link_gains(rng, distance(relay_pos, dest_pos), infra, N)
    relay_dest[:, ~is_d2d, :] = relay_enb[:, None, :]

    exponent = np.where(is_d2d[None, :], ue_ue, infra)
    ue_dest = PropagationModel.link_gains(rng, distance(ue_pos, dest_pos), exponent, N)

    logger.debug(f"Channel sampled (seed={seed}): {len(serving)} UEs, {len(relay_pos)} relays, {N} RBs")
    return ChannelState(
        ue_relay=ue_relay,
        relay_enb=relay_enb,
        relay_dest=relay_dest,
        ue_dest=ue_dest,
        serving=serving,
        is_d2d=is_d2d,
        xi=cfg.xi,
        xi_mode=cfg.xi_mode,
        perturbation_mode=cfg.perturbation_mode
    )


def _ball(rng: np.random.Generator, dim: int, radius: float, boundary: bool) -> np.ndarray:
    """Uniform draw inside (or on) a Euclidean ball"""
    direction = rng.standard_normal(dim)
    norm = np.linalg.norm(direction)
    if norm == 0 or radius <= 0:
        return np.zeros(dim)
    scale = radius if boundary else radius * rng.uniform() ** (1.0 / dim)
    return direction * (scale / norm)


def sample_perturbation(cs: ChannelState, seed: int) -> ChannelState:
    """
    Draw one realization of the uncertain gains inside their balls

    Deviations are clipped so realized gains stay nonnegative; clipping only
    shrinks components, so every ball constraint still holds.

    Returns:
        Perturbed ChannelState (nominal arrays plus deviation fields)
    """
    rng = np.random.default_rng(seed)
    U, L, N = cs.ue_relay.shape
    boundary = cs.perturbation_mode == 'boundary'
    bounds = cs.bounds
    refs = cs.references

    f_bar = _normalized_interference(cs)
    delta_f = np.zeros((U, U, N))
    for u in range(U):
        others = np.flatnonzero(cs.other_relay[:, u])
        if others.size == 0:
            continue
        for n in range(N):
            delta_f[u, others, n] = _ball(rng, others.size, bounds.xi1[u, n], boundary)
    delta_f = np.maximum(delta_f, -f_bar)

    delta_h = np.zeros((U, N))
    for relay in range(L):
        members = cs.members(relay)
        if members.size == 0:
            continue
        block = _ball(rng, members.size * N, bounds.xi2[relay], boundary).reshape(members.size, N)
        for n in range(N):
            spread = np.linalg.norm(block[:, n]) * refs.hop2_gain[relay, n]
            if spread > bounds.xi4[relay, n]:
                block[:, n] *= bounds.xi4[relay, n] / spread
        delta_h[members] = block
    delta_h = np.maximum(delta_h, -cs.hop_ratio)

    delta_g1 = np.zeros((U, N))
    for relay in range(L):
        members = cs.members(relay)
        for n in range(N):
            victims = members[refs.hop1_user[members, n] != NO_VICTIM]
            if victims.size == 0:
                continue
            delta_g1[victims, n] = _ball(rng, victims.size, bounds.xi3[relay, n], boundary)
    delta_g1 = np.maximum(delta_g1, -refs.hop1_gain)

    return dataclasses.replace(cs, delta_f=delta_f, delta_h=delta_h, delta_g1=delta_g1)


def dump_channel(cs: ChannelState, path: Path) -> Path:
    """Write every nominal gain as (link, hop, rb, gain) CSV rows"""
    path = Path(path)
    U, L, N = cs.ue_relay.shape
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=DUMP_COLUMNS)
        writer.writeheader()
        for n in range(N):
            for u in range(U):
                for l in range(L):
                    writer.writerow({'link': f'ue_relay:{u}:{l}', 'hop': 1, 'rb': n,
                                     'gain': repr(float(cs.ue_relay[u, l, n]))})
            for l in range(L):
                writer.writerow({'link': f'relay_enb:{l}', 'hop': 2, 'rb': n,
                                 'gain': repr(float(cs.relay_enb[l, n]))})
                for u in range(U):
                    writer.writerow({'link': f'relay_dest:{l}:{u}', 'hop': 2, 'rb': n,
                                     'gain': repr(float(cs.relay_dest[l, u, n]))})
            for j in range(U):
                for u in range(U):
                    writer.writerow({'link': f'ue_dest:{j}:{u}', 'hop': 0, 'rb': n,
                                     'gain': repr(float(cs.ue_dest[j, u, n]))})
    logger.info(f"Channel dumped: {path}")
    return path


def load_channel(path: Path, topology: Topology, cfg: NetworkConfig) -> ChannelState:
    """
    Replay a channel written by dump_channel

    Raises:
        ChannelError: Unreadable file, unknown link, missing or non-positive gain
    """
    path = Path(path)
    U, L, N = topology.num_ues, topology.num_relays, cfg.rb_count
    arrays = {
        'ue_relay': np.full((U, L, N), np.nan),
        'relay_enb': np.full((L, N), np.nan),
        'relay_dest': np.full((L, U, N), np.nan),
        'ue_dest': np.full((U, U, N), np.nan)
    }
    try:
        with open(path, newline='', encoding='utf-8') as f:
            for row in csv.DictReader(f):
                kind, *index = row['link'].split(':')
                if kind not in arrays:
                    raise ChannelError(f"unknown link {row['link']!r} in {path}")
                arrays[kind][tuple(int(i) for i in index) + (int(row['rb']),)] = float(row['gain'])
    except OSError as e:
        raise ChannelError(f"cannot read channel dump {path}: {e}") from e
    except (KeyError, ValueError, IndexError) as e:
        raise ChannelError(f"malformed channel dump {path}: {e}") from e

    for name, values in arrays.items():
        if np.isnan(values).any():
            raise ChannelError(f"channel dump {path} is missing {name} entries")
        if (values <= 0).any():
            raise ChannelError(f"channel dump {path} holds non-positive {name} gains")

    logger.info(f"Channel loaded: {path}")
    return ChannelState(
        serving=strongest_relay(arrays['ue_relay']),
        is_d2d=topology.is_d2d,
        xi=cfg.xi,
        xi_mode=cfg.xi_mode,
        perturbation_mode=cfg.perturbation_mode,
        **arrays
    )
