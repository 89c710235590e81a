"""
Logging and Error Handling System
"""
import logging
import sys
from pathlib import Path
from datetime import datetime
from typing import Dict, Optional
from logging.handlers import RotatingFileHandler
from config import LOG_CONFIG, DIRS


class SimulationLogger:
    """Centralized logging system for allocation runs and experiments"""

    def __init__(self, name: str = 'D2DRelaySim'):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(getattr(logging, LOG_CONFIG['log_level'].upper(), logging.INFO))

        # Prevent duplicate handlers
        if self.logger.handlers:
            return

        # File handler with rotation
        file_handler = RotatingFileHandler(
            LOG_CONFIG['log_file'],
            maxBytes=LOG_CONFIG['max_log_size'],
            backupCount=LOG_CONFIG['backup_count']
        )
        file_handler.setLevel(logging.DEBUG)
        file_formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        file_handler.setFormatter(file_formatter)

        # Console handler
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))

        self.logger.addHandler(file_handler)
        self.logger.addHandler(console_handler)

    def info(self, message: str):
        """Log info message"""
        self.logger.info(message)

    def error(self, message: str):
        """Log error message"""
        self.logger.error(message)

    def warning(self, message: str):
        """Log warning message"""
        self.logger.warning(message)

    def debug(self, message: str):
        """Log debug message"""
        self.logger.debug(message)

    def critical(self, message: str):
        """Log critical message"""
        self.logger.critical(message)

    def log_experiment_start(self, config_source: str, sweep: str, modes: list):
        """Log the start of an experiment"""
        self.info("=" * 80)
        self.info(f"EXPERIMENT STARTED: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
        self.info(f"Config: {config_source}")
        self.info(f"Sweep: {sweep or 'none'}")
        self.info(f"Modes: {', '.join(modes)}")
        self.info("=" * 80)

    def log_allocation(self, iterations: int, converged: bool, t_max: int, sum_rate: float):
        """Log the outcome of one iterative allocation"""
        if converged:
            self.info(f"Allocation converged after {iterations} iterations, sum rate {sum_rate:.1f} bit/s")
        else:
            self.info(f"Allocation stopped at T_max={t_max} without converging, sum rate {sum_rate:.1f} bit/s")

    def log_experiment_complete(self, output_files: list, diagnostics: dict):
        """
        Log successful completion

        Args:
            output_files: Written result files
            diagnostics: Allocation diagnostics (realizations, mean_iterations,
                         converged, constraint_slack per family)
        """
        self.info("=" * 80)
        self.info(f"EXPERIMENT COMPLETED: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
        self.info(
            f"Allocations: {diagnostics['realizations']}, converged {diagnostics['converged']}, "
            f"mean iterations {diagnostics['mean_iterations']:.1f}"
        )
        violated = [f for f, s in diagnostics['constraint_slack'].items() if s < 0]
        if violated:
            self.warning(f"Negative worst-case slack in: {', '.join(violated)}")
        self.info(f"Generated {len(output_files)} output files:")
        for file in output_files:
            self.info(f"  - {file}")
        self.info("=" * 80)

    def log_experiment_error(self, error: Exception, stage: str):
        """Log experiment failure"""
        self.error("=" * 80)
        self.error(f"EXPERIMENT FAILED at stage: {stage}")
        self.error(f"Error: {str(error)}")
        self.error(f"Error Type: {type(error).__name__}")
        self.error("=" * 80)

    def create_run_report(self, run_id: str, status: str, details: dict,
                          slack: Optional[Dict[str, float]] = None) -> Path:
        """
        Create a detailed run report

        Args:
            run_id: Unique run identifier
            status: Run status (success/failed)
            details: Dictionary with run details
            slack: Smallest worst-case slack per constraint family over all allocations

        Returns:
            Path to the report file
        """
        report_dir = DIRS['logs'] / 'reports'
        report_dir.mkdir(exist_ok=True)

        report_file = report_dir / f"run_{run_id}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.txt"

        with open(report_file, 'w', encoding='utf-8') as f:
            f.write("RUN REPORT\n")
            f.write(f"{'=' * 80}\n")
            f.write(f"Run ID: {run_id}\n")
            f.write(f"Status: {status}\n")
            f.write(f"Timestamp: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
            f.write(f"{'=' * 80}\n\n")

            for key, value in details.items():
                f.write(f"{key}: {value}\n")

            if slack:
                f.write(f"\nWorst-case constraint slack\n{'-' * 80}\n")
                for family, value in slack.items():
                    verdict = 'ok' if value >= 0 else 'VIOLATED'
                    f.write(f"{family:18} {value:.6e}  {verdict}\n")

        self.info(f"Run report created: {report_file}")
        return report_file


class SimulationError(Exception):
    """Base exception for simulation errors"""
    pass

class ConfigurationError(SimulationError):
    """Exception raised for missing, unknown or unparsable configuration keys"""
    pass

class ValidationError(SimulationError):
    """Exception raised when a configuration or input violates an invariant"""
    pass

class ChannelError(SimulationError):
    """Exception raised for degenerate or malformed channel data"""
    pass

class DomainError(SimulationError):
    """Exception raised when an operation is applied to the wrong kind of UE"""
    pass

class OracleSizeError(SimulationError):
    """Exception raised when a brute-force enumeration exceeds the state guard"""
    pass

class InfeasibleError(SimulationError):
    """Exception raised when no feasible candidate allocation exists"""
    pass

class UndefinedMetricError(SimulationError):
    """Exception raised for metrics with a zero reference value"""
    pass

class ExperimentError(SimulationError):
    """Exception raised for experiment pipeline and I/O failures"""
    pass


# Global logger instance
logger = SimulationLogger()


if __name__ == '__main__':
    logger.info("Logger initialized successfully")
    logger.debug("This is a debug message")
    logger.warning("This is a warning message")

    test_details = {
        'config': 'configs/default.yaml',
        'relays': 3,
        'ues': 15,
        'iterations': 7
    }
    logger.create_run_report('TEST123', 'success', test_details, slack={'ue_power': 0.05, 'interference_hop1': 2e-10})
    print(f"\nLog file location: {LOG_CONFIG['log_file']}")
