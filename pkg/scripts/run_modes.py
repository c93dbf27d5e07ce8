"""Run the demo personas through all three engine modes and compare.

    python3 scripts/run_modes.py --days 6 --seed 11

Prints one acceptance line per mode plus a per-persona breakdown for the
full pipeline. The ordering it demonstrates is a property of the persona
configuration, not evidence about people.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from nudgeloop.config import EngineMode
from nudgeloop.simulate import ScenarioConfig, make_demo_personas, run_scenario


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--days", type=int, default=6)
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()

    personas = tuple(make_demo_personas())
    results = {}
    for mode in (EngineMode.FULL, EngineMode.SIMPLE, EngineMode.BASELINE):
        config = ScenarioConfig(personas=personas, days=args.days, mode=mode, seed=args.seed)
        results[mode] = run_scenario(config)

    print(f"days={args.days} seed={args.seed} personas={len(personas)}")
    for mode, result in results.items():
        opens = sum(o.opens for o in result.outcomes)
        rate = result.overall_acceptance
        shown = "n/a" if rate is None else f"{rate:.4f}"
        print(f"  {mode.value:<8} opens={opens:<6} overall acceptance={shown}")

    print("\nfull-mode personas (simulated quit rate vs closed form):")
    for outcome in results[EngineMode.FULL].outcomes:
        se = outcome.standard_error
        print(
            f"  {outcome.persona.name:<10} persuaded={outcome.persuaded:<5} "
            f"mc={outcome.mc_acceptance:.4f} expected={outcome.expected_acceptance:.4f} "
            f"se={se:.4f}"
        )

    full = results[EngineMode.FULL].overall_acceptance
    simple = results[EngineMode.SIMPLE].overall_acceptance
    baseline = results[EngineMode.BASELINE].overall_acceptance
    ok = full > simple > baseline
    print(f"\nordering full > simple > baseline: {'holds' if ok else 'VIOLATED'}")
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
