"""
Scenario Configuration and Topology Generation
Loads experiment documents and places relays, CUEs and D2D pairs in the cell
"""
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import yaml

from config import NETWORK_DEFAULTS, REQUIRED_KEYS, PROPAGATION_CONFIG
from logger import logger, ConfigurationError, ValidationError

Point = Tuple[float, float]

CUE = 'cue'
D2D = 'd2d'


def dbm_to_watts(dbm: float) -> float:
    """Convert a power level from dBm to watts"""
    return 10 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class NetworkConfig:
    """
    Validated parameters of one network scenario.
    Powers and thresholds are stored in dBm; the *_w properties give watts.
    """
    num_relays: int
    num_cues: int
    num_d2d_pairs: int
    rb_count: int
    cell_side_m: float = NETWORK_DEFAULTS['cell_side_m']
    d_rd_m: float = NETWORK_DEFAULTS['d_rd_m']
    d_dd_m: float = NETWORK_DEFAULTS['d_dd_m']
    rb_bandwidth_hz: float = NETWORK_DEFAULTS['rb_bandwidth_hz']
    noise_psd: float = NETWORK_DEFAULTS['noise_psd']
    p_max_ue_dbm: float = NETWORK_DEFAULTS['p_max_ue_dbm']
    p_max_relay_dbm: float = NETWORK_DEFAULTS['p_max_relay_dbm']
    i_th1_dbm: float = NETWORK_DEFAULTS['i_th1_dbm']
    i_th2_dbm: float = NETWORK_DEFAULTS['i_th2_dbm']
    q_min_cue_bps: float = NETWORK_DEFAULTS['q_min_cue_bps']
    q_min_d2d_bps: float = NETWORK_DEFAULTS['q_min_d2d_bps']
    xi1: float = NETWORK_DEFAULTS['xi1']
    xi2: float = NETWORK_DEFAULTS['xi2']
    xi3: float = NETWORK_DEFAULTS['xi3']
    xi4: float = NETWORK_DEFAULTS['xi4']
    xi_mode: str = NETWORK_DEFAULTS['xi_mode']
    perturbation_mode: str = NETWORK_DEFAULTS['perturbation_mode']
    t_max: int = NETWORK_DEFAULTS['t_max']
    epsilon: float = NETWORK_DEFAULTS['epsilon']
    realizations: int = NETWORK_DEFAULTS['realizations']
    seed: int = NETWORK_DEFAULTS['seed']

    def __post_init__(self):
        for name in ('num_relays', 'rb_count', 't_max', 'realizations'):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ('num_cues', 'num_d2d_pairs'):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.num_cues + self.num_d2d_pairs < 1:
            raise ValidationError("at least one UE (CUE or D2D pair) is required")

        for name in ('cell_side_m', 'd_rd_m', 'd_dd_m', 'rb_bandwidth_hz', 'epsilon'):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.d_dd_m >= self.cell_side_m:
            raise ValidationError(f"d_dd_m must be smaller than cell_side_m, got {self.d_dd_m}")
        for name in ('q_min_cue_bps', 'q_min_d2d_bps'):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")

        for index, xi in enumerate(self.xi, start=1):
            if not 0.0 <= xi < 1.0:
                raise ValidationError(f"xi{index} must satisfy 0 <= xi < 1, got {xi}")
        if self.xi_mode not in ('relative', 'absolute'):
            raise ValidationError(f"xi_mode must be 'relative' or 'absolute', got {self.xi_mode!r}")
        if self.perturbation_mode not in ('interior', 'boundary'):
            raise ValidationError(
                f"perturbation_mode must be 'interior' or 'boundary', got {self.perturbation_mode!r}"
            )

    @property
    def xi(self) -> Tuple[float, float, float, float]:
        return (self.xi1, self.xi2, self.xi3, self.xi4)

    @property
    def num_ues(self) -> int:
        return self.num_cues + self.num_d2d_pairs

    @property
    def sigma2(self) -> float:
        """Per-RB noise power σ² = N0 * B_RB (W)"""
        return dbm_to_watts(self.noise_psd) * self.rb_bandwidth_hz

    @property
    def p_max_ue_w(self) -> float:
        return dbm_to_watts(self.p_max_ue_dbm)

    @property
    def p_max_relay_w(self) -> float:
        return dbm_to_watts(self.p_max_relay_dbm)

    @property
    def i_th1_w(self) -> float:
        return dbm_to_watts(self.i_th1_dbm)

    @property
    def i_th2_w(self) -> float:
        return dbm_to_watts(self.i_th2_dbm)


def config_from_mapping(values: Mapping) -> NetworkConfig:
    """
    Build a NetworkConfig from a parsed document

    Args:
        values: Mapping of NetworkConfig keys to values

    Returns:
        Validated NetworkConfig with defaults filled in

    Raises:
        ConfigurationError: Missing required key or unknown key
        ValidationError: Value of the wrong type or violating an invariant
    """
    for key in REQUIRED_KEYS:
        if key not in values:
            raise ConfigurationError(f"{key} required")

    known = {f.name: f for f in fields(NetworkConfig)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")

    merged = dict(NETWORK_DEFAULTS)
    merged.update(values)

    typed = {}
    for name, spec in known.items():
        value = merged[name]
        try:
            if spec.type in (int, 'int'):
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError(f"expected an integer, got {value}")
                typed[name] = int(value)
            elif spec.type in (float, 'float'):
                typed[name] = float(value)
            else:
                typed[name] = str(value)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"invalid value for {name}: {value!r} ({e})") from e

    return NetworkConfig(**typed)


def load_config(source: Union[str, Path, Mapping]) -> NetworkConfig:
    """
    Load and validate an experiment configuration

    Args:
        source: YAML text, path to a YAML file, or an already parsed mapping

    Returns:
        Validated NetworkConfig
    """
    if isinstance(source, Mapping):
        return config_from_mapping(source)

    if isinstance(source, Path) or (
        '\n' not in source and source.strip().endswith(('.yaml', '.yml'))
    ):
        path = Path(source)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as e:
            raise ConfigurationError(f"cannot read config file {path}: {e}") from e
        logger.debug(f"Loaded config file: {path}")
    else:
        text = source

    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"config document does not parse: {e}") from e

    if not isinstance(document, Mapping):
        raise ConfigurationError("config document must be a mapping of keys to values")

    return config_from_mapping(document)


@dataclass(frozen=True)
class UERecord:
    """One UE: a CUE, or the transmitter of a D2D pair with its receiver position"""
    index: int
    kind: str
    position: Point
    relay: int
    receiver: Optional[Point] = None

    @property
    def is_d2d(self) -> bool:
        return self.kind == D2D


@dataclass(frozen=True)
class Topology:
    """Node placement of one network realization. UEs are ordered CUEs first, then D2D."""
    cell_side_m: float
    enb_position: Point
    relay_positions: Tuple[Point, ...]
    ue_records: Tuple[UERecord, ...]
    _members: Dict[int, List[int]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        members = {relay: [] for relay in range(len(self.relay_positions))}
        for record in self.ue_records:
            members[record.relay].append(record.index)
        object.__setattr__(self, '_members', members)

    @property
    def num_relays(self) -> int:
        return len(self.relay_positions)

    @property
    def num_ues(self) -> int:
        return len(self.ue_records)

    @property
    def association(self) -> Dict[int, int]:
        return {record.index: record.relay for record in self.ue_records}

    def relay_members(self, relay: int) -> List[int]:
        return list(self._members[relay])

    @property
    def serving(self) -> np.ndarray:
        return np.array([record.relay for record in self.ue_records], dtype=int)

    @property
    def is_d2d(self) -> np.ndarray:
        return np.array([record.is_d2d for record in self.ue_records], dtype=bool)

    @property
    def d2d_receivers(self) -> Dict[int, Point]:
        return {r.index: r.receiver for r in self.ue_records if r.is_d2d}

    def with_association(self, serving) -> 'Topology':
        """Same placement with every UE moved to the given serving relay"""
        serving = [int(l) for l in serving]
        if len(serving) != self.num_ues:
            raise ValidationError(f"association covers {len(serving)} UEs, topology has {self.num_ues}")
        if any(not 0 <= l < self.num_relays for l in serving):
            raise ValidationError(f"association names a relay outside 0..{self.num_relays - 1}")
        records = tuple(replace(r, relay=l) for r, l in zip(self.ue_records, serving))
        return replace(self, ue_records=records)


def relay_ring(cfg: NetworkConfig) -> List[Point]:
    """Relays evenly spaced on a ring around the cell center, one per sector"""
    center = cfg.cell_side_m / 2.0
    radius = cfg.cell_side_m * PROPAGATION_CONFIG['relay_ring_fraction']
    return [
        (center + radius * math.cos(2 * math.pi * l / cfg.num_relays),
         center + radius * math.sin(2 * math.pi * l / cfg.num_relays))
        for l in range(cfg.num_relays)
    ]


def _inside(point: np.ndarray, side: float) -> bool:
    return bool(0.0 <= point[0] <= side and 0.0 <= point[1] <= side)


def _sample_disc(rng: np.random.Generator, center: Point, radius: float, side: float) -> np.ndarray:
    """Uniform point in a disc, redrawn until it lies inside the cell"""
    for _ in range(PROPAGATION_CONFIG['receiver_attempts']):
        r = radius * math.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2 * math.pi)
        point = np.array([center[0] + r * math.cos(theta), center[1] + r * math.sin(theta)])
        if _inside(point, side):
            return point
    raise ValidationError(f"cannot place a D2D transmitter within {radius} m of {center}")


def _sample_receiver(rng: np.random.Generator, tx: np.ndarray, distance: float, side: float) -> np.ndarray:
    """Uniform point on the circle of the given radius around tx, inside the cell"""
    for _ in range(PROPAGATION_CONFIG['receiver_attempts']):
        theta = rng.uniform(0.0, 2 * math.pi)
        point = tx + distance * np.array([math.cos(theta), math.sin(theta)])
        if _inside(point, side):
            return point
    raise ValidationError(f"cannot place a D2D receiver at {distance} m from {tuple(tx)}")


def _nearest_relay(point: np.ndarray, relays: np.ndarray) -> int:
    # Placement-time association; sample_link_gains moves each UE to its
    # strongest mean hop-1 gain once fading and shadowing are drawn.
    return int(np.argmin(np.linalg.norm(relays - point, axis=1)))


def generate_topology(cfg: NetworkConfig, seed: int) -> Topology:
    """
    Place relays, CUEs and D2D pairs and associate every UE with its nearest relay

    Args:
        cfg: Validated network configuration
        seed: Seed of the placement random stream

    Returns:
        Topology, a pure function of (cfg, seed)
    """
    rng = np.random.default_rng(seed)
    side = cfg.cell_side_m
    relays = relay_ring(cfg)
    relay_array = np.array(relays)

    records = []
    for c in range(cfg.num_cues):
        position = rng.uniform(0.0, side, size=2)
        records.append(UERecord(
            index=c,
            kind=CUE,
            position=(float(position[0]), float(position[1])),
            relay=_nearest_relay(position, relay_array)
        ))

    for d in range(cfg.num_d2d_pairs):
        cluster = relays[d % cfg.num_relays]
        tx = _sample_disc(rng, cluster, cfg.d_rd_m, side)
        rx = _sample_receiver(rng, tx, cfg.d_dd_m, side)
        records.append(UERecord(
            index=cfg.num_cues + d,
            kind=D2D,
            position=(float(tx[0]), float(tx[1])),
            relay=_nearest_relay(tx, relay_array),
            receiver=(float(rx[0]), float(rx[1]))
        ))

    topology = Topology(
        cell_side_m=side,
        enb_position=(side / 2.0, side / 2.0),
        relay_positions=tuple(relays),
        ue_records=tuple(records)
    )
    logger.debug(
        f"Topology generated (seed={seed}): {cfg.num_relays} relays, "
        f"{cfg.num_cues} CUEs, {cfg.num_d2d_pairs} D2D pairs"
    )
    return topology
