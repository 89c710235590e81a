"""
Configuration Management for the Relay-Aided D2D Resource Allocation Simulator
"""
import os
from pathlib import Path

# Base directory
BASE_DIR = Path(__file__).parent

# Directory structure
DIRS = {
    'configs': BASE_DIR / 'configs',
    'results': BASE_DIR / 'results',
    'logs': BASE_DIR / 'logs',
    'traces': BASE_DIR / 'traces'
}

# Create directories if they don't exist
for dir_path in DIRS.values():
    dir_path.mkdir(parents=True, exist_ok=True)

# Keys every experiment document must define
REQUIRED_KEYS = ('num_relays', 'num_cues', 'num_d2d_pairs', 'rb_count')

# Defaults for every optional NetworkConfig key (LTE-A-typical values)
NETWORK_DEFAULTS = {
    'cell_side_m': 700.0,
    'd_rd_m': 50.0,
    'd_dd_m': 50.0,
    'rb_bandwidth_hz': 180e3,
    'noise_psd': -174.0,  # dBm/Hz
    'p_max_ue_dbm': 23.0,
    'p_max_relay_dbm': 30.0,
    'i_th1_dbm': -70.0,
    'i_th2_dbm': -70.0,
    'q_min_cue_bps': 128e3,
    'q_min_d2d_bps': 128e3,
    'xi1': 0.0,
    'xi2': 0.0,
    'xi3': 0.0,
    'xi4': 0.0,
    'xi_mode': 'relative',  # 'relative' scales nominal norms, 'absolute' uses xi as-is
    'perturbation_mode': 'interior',  # 'interior' or 'boundary' of the uncertainty ball
    't_max': 50,
    'epsilon': 100.0,  # bit/s
    'realizations': 200,
    'seed': 0
}

# Propagation model
PROPAGATION_CONFIG = {
    'reference_distance_m': 1.0,
    'reference_loss_db': 40.0,
    'exponent_infrastructure': 3.0,  # links with a relay or the eNB at one end
    'exponent_ue_ue': 3.5,
    'shadowing_std_db': 8.0,
    'relay_ring_fraction': 0.25,  # relay ring radius as a fraction of the cell side
    'receiver_attempts': 10000
}

# Brute-force oracle settings
ORACLE_CONFIG = {
    'max_states': int(1e7),
    'grid_levels': 5,
    'grid_span': 100.0  # lowest grid level is cap / grid_span
}

# Simulation runtime settings
SIMULATION_CONFIG = {
    'parallel_relays': os.getenv('D2D_PARALLEL_RELAYS', '0') == '1',
    'parallel_realizations': os.getenv('D2D_PARALLEL_REALIZATIONS', '1') == '1',
    'max_workers': int(os.getenv('D2D_MAX_WORKERS', 4)),
    'constraint_tolerance': 1e-9  # relative slack tolerated by the feasibility checks
}

# Experiment driver settings
EXPERIMENT_CONFIG = {
    'result_columns': [
        'sweep_value', 'mode', 'realization', 'r_avg_bps', 'r_sum_bps',
        'rate_gain_pct', 'efficiency', 'iterations', 'messages_matching', 'messages_x2'
    ],
    'trace_columns': ['iteration', 'relay', 'sum_rate_bps', 'messages_matching', 'messages_x2'],
    'sweep_axes': ['d_dd_m', 'd_rd_m', 'xi', 'num_ues'],
    'modes': ['proposed', 'reference', 'oracle'],
    'formats': ['csv', 'json']
}

# Logging configuration
LOG_CONFIG = {
    'log_file': DIRS['logs'] / 'simulation.log',
    'max_log_size': 10 * 1024 * 1024,  # 10MB
    'backup_count': 5,
    'log_level': os.getenv('D2D_LOG_LEVEL', 'INFO')
}


def get_output_filename(stem: str, fmt: str = 'csv', sweep_axis: str = None) -> str:
    """
    Generate standardized result filename

    Args:
        stem: Base name of the experiment (e.g., config file stem)
        fmt: Output format ('csv' or 'json')
        sweep_axis: Swept parameter, if any

    Returns:
        Formatted filename
    """
    base_name = Path(stem).stem
    sweep_tag = f'_sweep_{sweep_axis}' if sweep_axis else ''
    return f"{base_name}{sweep_tag}.{fmt}"


def validate_config():
    """Validate the runtime environment: Python 3.8+, packages importable, output directories writable"""
    import importlib
    import sys

    if sys.version_info < (3, 8):
        raise EnvironmentError(f"Python 3.8+ required, found {sys.version.split()[0]}")

    for module_name in ('numpy', 'yaml', 'tqdm'):
        try:
            importlib.import_module(module_name)
        except ImportError as e:
            raise EnvironmentError(
                f"Required package '{module_name}' is not installed. "
                "Install dependencies with: pip install -r requirements.txt"
            ) from e

    for name in ('results', 'logs', 'traces'):
        if not os.access(DIRS[name], os.W_OK):
            raise EnvironmentError(f"Output directory is not writable: {DIRS[name]}")

    return True


if __name__ == '__main__':
    print("Configuration loaded successfully!")
    print(f"Base directory: {BASE_DIR}")
    print(f"Directories created: {list(DIRS.keys())}")
    try:
        validate_config()
        print("✓ Numerical stack is installed and output directories are writable")
    except EnvironmentError as e:
        print(f"✗ Configuration error: {e}")
