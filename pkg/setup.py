"""
Simulator Self-Check
Run one allocation on a small configuration and report every constraint family
"""
import argparse
import sys
from typing import List, NamedTuple

from rates import (
    INTERFERENCE_HOP1, INTERFERENCE_HOP2, NONNEGATIVITY, QOS, RB_EXCLUSIVITY, RELAY_POWER, UE_POWER,
    ConstraintReport, RateContext, check_constraints
)

FAMILIES = (RB_EXCLUSIVITY, NONNEGATIVITY, UE_POWER, RELAY_POWER, INTERFERENCE_HOP1, INTERFERENCE_HOP2, QOS)


class FamilyStatus(NamedTuple):
    family: str
    checks: int
    slack: float
    passed: bool


def print_header(text):
    """Print a formatted header"""
    print("\n" + "=" * 80)
    print(f" {text}")
    print("=" * 80 + "\n")


def family_status(report: ConstraintReport) -> List[FamilyStatus]:
    """Check count, smallest slack and verdict of every constraint family"""
    return [
        FamilyStatus(name, len(report.family(name)), report.slack(name), report.family_passed(name))
        for name in FAMILIES
    ]


def print_report(title: str, report: ConstraintReport) -> bool:
    """Print one line per family; rate targets are shown but only count when enforced"""
    print(f"{title} ({report.mode}):")
    for status in family_status(report):
        mark = "✓" if status.passed else ("⚠" if status.family == QOS and not report.enforce_qos else "❌")
        print(f"  {mark} {status.family:18} {status.checks:4} checks, min slack {status.slack:.3e}")
    return report.passed


def check_environment() -> bool:
    """Python version, packages and output directories"""
    print("Checking environment...")
    try:
        from config import validate_config
        validate_config()
        print(f"  ✓ Python {sys.version.split()[0]}, numerical stack installed, outputs writable")
        return True
    except Exception as e:
        print(f"  ❌ {e}")
        return False


def run_allocation(config_path):
    """Topology, channel and converged allocation of the configuration's own seed"""
    from scenario import load_config, generate_topology
    from channel import associate, sample_link_gains
    from allocator import run_network

    cfg = load_config(config_path)
    topology = generate_topology(cfg, cfg.seed)
    channel = sample_link_gains(topology, cfg, cfg.seed)
    topology = associate(topology, channel)
    result = run_network(cfg, topology, channel)
    print(f"  ✓ {cfg.num_relays} relays, {cfg.num_ues} UEs, {cfg.rb_count} RBs: "
          f"{result.iterations} iterations, converged={result.converged}, "
          f"sum rate {result.sum_rate / 1e3:.1f} kbit/s")
    return cfg, result


def check_perturbations(cfg, result, count: int) -> bool:
    """Realized channels inside the uncertainty balls keep every family satisfied"""
    from channel import sample_perturbation

    failed = 0
    for seed in range(count):
        realized = RateContext(cfg, sample_perturbation(result.channel, seed), result.x, result.p1)
        report = check_constraints(realized, 'nominal')
        if not report.passed:
            failed += 1
            first = report.failures()[0]
            print(f"  ❌ perturbation {seed}: {first.family} {first.index} slack {first.slack:.3e}")
    print(f"  {'✓' if failed == 0 else '❌'} {count - failed}/{count} perturbed channels satisfied")
    return failed == 0


def main(argv=None):
    """Run the self-check and return the exit code"""
    from config import DIRS

    parser = argparse.ArgumentParser(description='Relay-aided D2D simulator self-check')
    parser.add_argument('--config', default=str(DIRS['configs'] / 'tiny.yaml'),
                        help='Experiment YAML (default: configs/tiny.yaml)')
    parser.add_argument('--perturbations', type=int, default=50,
                        help='Perturbed channels to evaluate the final allocation on (default: 50)')
    args = parser.parse_args(argv)

    print_header("RELAY-AIDED D2D SIMULATOR - SELF-CHECK")
    checks = [("Environment", check_environment())]

    print("\nRunning allocation...")
    try:
        cfg, result = run_allocation(args.config)
    except Exception as e:
        print(f"  ❌ Allocation failed: {e}")
        checks.append(("Allocation", False))
    else:
        checks.append(("Allocation", True))
        print()
        checks.append(("Worst-case constraints", print_report("Worst-case constraints", result.constraints('robust'))))
        print()
        checks.append(("Nominal constraints", print_report("Nominal constraints", result.constraints('nominal'))))
        print("\nEvaluating perturbed channels...")
        checks.append(("Perturbed channels", check_perturbations(cfg, result, args.perturbations)))

    print_header("SELF-CHECK SUMMARY")
    for name, passed in checks:
        status = "✓ PASS" if passed else "❌ FAIL"
        print(f"{status:10} {name}")

    if all(passed for _, passed in checks):
        print("\n🎉 The simulator is ready: python main.py --config configs/default.yaml\n")
        return 0
    print("\n⚠ Some checks failed. Please address the issues above.\n")
    return 1


if __name__ == '__main__':
    exit(main())
