"""
Shared fixtures: small configurations, hand-built channels and random utility matrices
"""
import numpy as np
import pytest

from channel import ChannelState, associate, sample_link_gains
from scenario import NetworkConfig, generate_topology


def make_cfg(**overrides) -> NetworkConfig:
    values = dict(num_relays=1, num_cues=1, num_d2d_pairs=0, rb_count=1, xi_mode='absolute')
    values.update(overrides)
    return NetworkConfig(**values)


def make_channel(ue_relay, serving, is_d2d=None, relay_enb=None, relay_dest=None, ue_dest=None,
                 xi=(0.0, 0.0, 0.0, 0.0), xi_mode='absolute', perturbation_mode='interior') -> ChannelState:
    """
    ChannelState from explicit hop-1 gains; every unspecified gain gets a small positive value.
    CUE columns of relay_dest always mirror relay_enb.
    """
    ue_relay = np.asarray(ue_relay, dtype=float)
    U, L, N = ue_relay.shape
    serving = np.asarray(serving, dtype=int)
    is_d2d = np.zeros(U, dtype=bool) if is_d2d is None else np.asarray(is_d2d, dtype=bool)

    relay_enb = np.full((L, N), 1e-9) if relay_enb is None else np.asarray(relay_enb, dtype=float)
    relay_dest = np.full((L, U, N), 1e-9) if relay_dest is None else np.array(relay_dest, dtype=float)
    relay_dest[:, ~is_d2d, :] = relay_enb[:, None, :]
    if ue_dest is None:
        ue_dest = np.full((U, U, N), 1e-12)
        ue_dest[np.arange(U), np.arange(U), :] = 1e-9

    return ChannelState(
        ue_relay=ue_relay,
        relay_enb=relay_enb,
        relay_dest=relay_dest,
        ue_dest=np.asarray(ue_dest, dtype=float),
        serving=serving,
        is_d2d=is_d2d,
        xi=tuple(xi),
        xi_mode=xi_mode,
        perturbation_mode=perturbation_mode
    )


def sampled_network(cfg: NetworkConfig, seed: int):
    topology = generate_topology(cfg, seed)
    channel = sample_link_gains(topology, cfg, seed + 1000)
    return associate(topology, channel), channel


def distinct_utility(rng: np.random.Generator, num_ues: int, num_rbs: int) -> np.ndarray:
    """Positive utility matrix with all entries different"""
    return (rng.permutation(num_ues * num_rbs) + 1).reshape(num_ues, num_rbs).astype(float)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    """Two relays, two CUEs and two D2D pairs on four RBs, 25% relative uncertainty"""
    return NetworkConfig(
        num_relays=2, num_cues=2, num_d2d_pairs=2, rb_count=4,
        xi1=0.25, xi2=0.25, xi3=0.25, xi4=0.25, t_max=30
    )


@pytest.fixture
def small_network(small_cfg):
    return sampled_network(small_cfg, 3)


@pytest.fixture
def tiny_cfg():
    """Single relay, oracle-sized, rate targets out of reach so every UE bids for all RBs"""
    return NetworkConfig(
        num_relays=1, num_cues=1, num_d2d_pairs=2, rb_count=3,
        q_min_cue_bps=1e9, q_min_d2d_bps=1e9, xi1=0.1, xi2=0.1, xi3=0.1, xi4=0.1, t_max=20
    )
