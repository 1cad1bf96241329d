#!/usr/bin/env python3
"""
Smoke test for the full wrapper pipeline
Generates a scenario, plans one cycle, runs a short closed loop and writes a report
"""

import sys
import tempfile
from pathlib import Path

import pandas as pd

from sketchwrap.config_manager import GeneratorParams, Mode, Params, WrapperConfig
from sketchwrap.planners import IdmPlanner
from sketchwrap.report import CSV_COLUMNS, write_report
from sketchwrap.scenarios import generate_scenario
from sketchwrap.sim import evaluate_scenario, plan_cycle


def banner(title):
    print("\n" + "="*80)
    print(title)
    print("="*80)


def test_single_cycle(scenario):
    """Test 1: One extract + solve cycle right after the warmup"""
    banner("TEST 1: Single Plan Cycle")

    try:
        config = WrapperConfig(mode=Mode.STAY_AHEAD)
        t = scenario.warmup
        record = plan_cycle(scenario, IdmPlanner(), t, scenario.av_ground_truth(t), config, Params())
        if record.failed:
            print(f"❌ Cycle fell back to braking: {record.failure_reason}")
            return False
        print(f"✅ Maneuver extracted ({len(record.maneuver.notes)} note(s))")
        print(f"✅ MPC solved: {record.solution.report.status.value} after {record.solution.report.iterations} iteration(s)")
        print(f"   Max footprint residual: {record.solution.max_footprint_residual:.2e} m")
        return True
    except Exception as e:
        print(f"❌ Plan cycle failed: {e}")
        import traceback
        traceback.print_exc()
        return False


def test_closed_loop(scenario):
    """Test 2: Short closed-loop run in every mode"""
    banner("TEST 2: Closed Loop")

    rows = []
    for mode in Mode:
        try:
            row = evaluate_scenario(scenario, IdmPlanner(), WrapperConfig(mode=mode), Params())
            print(f"✅ {mode.value:<11} coll={row['coll']} road={row['road']} accel={row['accel']} "
                  f"dist={row['dist_m']:.1f} m fallbacks={row['solver_fail_count']}")
            rows.append(row)
        except Exception as e:
            print(f"❌ {mode.value} crashed: {e}")
            return None
    return rows


def test_report(rows):
    """Test 3: Metrics CSV to HTML report"""
    banner("TEST 3: Report")

    with tempfile.TemporaryDirectory() as tmp:
        csv_path = Path(tmp) / 'metrics.csv'
        pd.DataFrame(rows, columns=CSV_COLUMNS).to_csv(csv_path, index=False)
        try:
            out = write_report(csv_path, Path(tmp) / 'report.html')
            print(f"✅ Report written ({out.stat().st_size} bytes)")
            return True
        except Exception as e:
            print(f"❌ Report failed: {e}")
            return False


def main():
    """Run all smoke tests"""
    banner("🧪 SKETCHWRAP - PIPELINE SMOKE TESTS")

    scenario = generate_scenario('cut_in', 0, params=GeneratorParams(duration=6.0))
    print(f"Scenario: {scenario.scenario_id} ({len(scenario.agents)} agent(s), {scenario.duration:.0f} s)")

    success = test_single_cycle(scenario)
    rows = test_closed_loop(scenario)
    success = success and rows is not None and test_report(rows)

    print("\n" + "="*80)
    if success:
        print("✅ ALL TESTS PASSED - Pipeline is working!")
    else:
        print("❌ SOME TESTS FAILED - Check errors above")
    print("="*80)
    return success


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
