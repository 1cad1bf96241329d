"""
Command-line front end.

Commands: run, render, extract, generate, report, bench, init-params.
Exit codes: 0 on success, 1 on malformed inputs, 2 when a scenario crashed.
"""
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import click
import numpy as np
import pandas as pd
import yaml

from sketchwrap import __version__
from sketchwrap.config_manager import ConfigManager, Mode, Params, WrapperConfig
from sketchwrap.errors import SketchwrapError
from sketchwrap.geometry import Sketch
from sketchwrap.logger import log_error, setup_logging
from sketchwrap.maneuver import VehicleState, extract_maneuver
from sketchwrap.planners import make_planner
from sketchwrap.report import AGGREGATE_ID, CSV_COLUMNS, write_report
from sketchwrap.scenarios import FAMILIES, Scenario, generate_suite, resolve_scenarios
from sketchwrap.serialization import (
    dumps,
    maneuver_to_dict,
    save_scenario,
    scene_from_dict,
    sketch_from_dict,
    vehicle_state_from_dict,
)
from sketchwrap.sim import evaluate_scenario, plan_cycle, read_simlog

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_MALFORMED = 1
EXIT_CRASH = 2
FLOAT_FORMAT = '%.9g'
INPUT_ERRORS = (ValueError, KeyError, TypeError, FileNotFoundError, yaml.YAMLError, json.JSONDecodeError)


# -- helpers ----------------------------------------------------------------

def load_params(path: Optional[str]) -> Params:
    return ConfigManager(path).get_params()


def parse_modes(text: Optional[str], default: Mode) -> List[Mode]:
    """'all', a comma-separated list or a single mode name."""
    if not text:
        return [default]
    if text.strip().lower() == 'all':
        return list(Mode)
    return [Mode.parse(part.strip()) for part in text.split(',') if part.strip()]


def wrapper_configs(params: Params, modes: List[Mode], no_tracking: bool) -> List[WrapperConfig]:
    use_tracking = params.wrapper.use_tracking and not no_tracking
    return [replace(params.wrapper, mode=mode, use_tracking=use_tracking) for mode in modes]


@dataclass(frozen=True)
class ScenarioJob:
    scenario: Scenario
    planner: str
    fixture: Optional[Path]
    config: WrapperConfig
    params: Params
    log_dir: Optional[Path]
    timing: bool


def crash_row(scenario_id: str, config: WrapperConfig) -> Dict[str, Any]:
    row = {column: None for column in CSV_COLUMNS}
    row['scenario_id'] = scenario_id
    row['config'] = config.mode.value if config.use_tracking else f"{config.mode.value}-notrack"
    return row


def run_job(job: ScenarioJob) -> Tuple[Dict[str, Any], Optional[str]]:
    """Evaluate one (scenario, config) pair; crashes come back as (empty row, reason)."""
    try:
        planner = make_planner(job.planner, job.params.idm, job.params.astar, job.fixture)
        row = evaluate_scenario(job.scenario, planner, job.config, job.params, job.log_dir, job.timing)
        return row, None
    except Exception as e:
        log_error(e, f"scenario {job.scenario.scenario_id} ({job.config.mode.value})")
        return crash_row(job.scenario.scenario_id, job.config), f"{type(e).__name__}: {e}"


def metrics_table(rows: List[Dict[str, Any]], config_order: List[str]) -> pd.DataFrame:
    """
    Per-scenario rows sorted by scenario_id within each config, each config
    followed by its aggregate (mean) row.
    """
    frame = pd.DataFrame(rows, columns=CSV_COLUMNS)
    numeric = ['coll', 'road', 'accel', 'dist_m', 'runtime_ms_mean', 'solver_fail_count']
    frame[numeric] = frame[numeric].apply(pd.to_numeric, errors='coerce')

    blocks = []
    for config in config_order:
        block = frame[frame['config'] == config].sort_values('scenario_id', kind='mergesort')
        aggregate = {'scenario_id': AGGREGATE_ID, 'config': config}
        aggregate.update(block[numeric].mean(skipna=True).to_dict())
        blocks.append(block)
        blocks.append(pd.DataFrame([aggregate], columns=CSV_COLUMNS))
    return pd.concat(blocks, ignore_index=True)


def default_av_state(sketch: Sketch) -> VehicleState:
    xy = sketch.xy
    heading = float(np.arctan2(xy[1, 1] - xy[0, 1], xy[1, 0] - xy[0, 0])) if len(xy) > 1 else 0.0
    return VehicleState(float(xy[0, 0]), float(xy[0, 1]), heading)


# -- commands ---------------------------------------------------------------

@click.group()
@click.version_option(__version__, prog_name='sketchwrap')
@click.option('--log-level', default='INFO', show_default=True,
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False))
@click.option('--log-file', default=None, help='Also write logs to this file.')
def cli(log_level: str, log_file: Optional[str]):
    """Maneuver wrapper around experimental trajectory planners."""
    setup_logging(getattr(logging, log_level.upper()), log_file, color=click.get_text_stream('stderr').isatty())


@cli.command()
@click.option('--scenarios', 'source', required=True, help='Glob of scenario files or gen:family:count:seed.')
@click.option('--planner', default='idm', show_default=True, help='idm, astar, fixture or synthetic:<kind>.')
@click.option('--config', 'config_text', default=None, help="Mode, comma-separated modes or 'all'.")
@click.option('--params', 'params_path', default=None, help='Params file (falls back to MW_PARAMS).')
@click.option('--out', 'out_dir', default='results', show_default=True, type=click.Path(file_okay=False))
@click.option('--jobs', default=1, show_default=True, type=click.IntRange(min=1))
@click.option('--no-tracking', is_flag=True, help='Drop tracking references from the maneuver.')
@click.option('--save-logs', is_flag=True, help='Write one SimLog per scenario and config.')
@click.option('--fixture', default=None, type=click.Path(dir_okay=False), help='Sketch fixture for --planner fixture.')
@click.option('--timing', is_flag=True, help='Record wall-clock runtime (non-deterministic).')
@click.pass_context
def run(ctx, source, planner, config_text, params_path, out_dir, jobs, no_tracking, save_logs, fixture, timing):
    """Run a scenario suite in closed loop and write metrics.csv."""
    try:
        params = load_params(params_path)
        configs = wrapper_configs(params, parse_modes(config_text, params.wrapper.mode), no_tracking)
        scenarios = resolve_scenarios(source, params.generator)
        make_planner(planner, params.idm, params.astar, Path(fixture) if fixture else None)
    except INPUT_ERRORS as e:
        log_error(e, 'run')
        click.echo(f"❌ {e}", err=True)
        ctx.exit(EXIT_MALFORMED)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_dir = out / 'logs' if save_logs else None
    work = [
        ScenarioJob(s, planner, Path(fixture) if fixture else None, config, params, log_dir, timing)
        for config in configs for s in scenarios
    ]
    logger.info(f"Running {len(scenarios)} scenario(s) x {len(configs)} config(s) with {jobs} worker(s)")

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_job, work))
    else:
        results = [run_job(job) for job in work]

    crashes = [(job, reason) for job, (_, reason) in zip(work, results) if reason is not None]
    for job, reason in crashes:
        logger.error(f"❌ {job.scenario.scenario_id} ({job.config.mode.value}) crashed: {reason}")

    config_order = [crash_row('', c)['config'] for c in configs]
    table = metrics_table([row for row, _ in results], config_order)
    csv_path = out / 'metrics.csv'
    table.to_csv(csv_path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"✅ Metrics written to {csv_path}")

    ctx.exit(EXIT_CRASH if crashes else EXIT_OK)


@cli.command()
@click.option('--log', 'log_path', required=True, type=click.Path(dir_okay=False))
@click.option('--frames', default=None, help="Frame range 'a..b' (inclusive) or one index; default all.")
@click.option('--out', 'out_dir', default='frames', show_default=True, type=click.Path(file_okay=False))
@click.option('--params', 'params_path', default=None)
@click.pass_context
def render(ctx, log_path, frames, out_dir, params_path):
    """Render SimLog frames as SVG."""
    from sketchwrap.render import parse_frames, render_log

    try:
        params = load_params(params_path)
        log = read_simlog(Path(log_path))
        render_log(log, parse_frames(frames, len(log.records)), Path(out_dir), params.mpc.vehicle)
    except (IndexError, *INPUT_ERRORS) as e:
        log_error(e, 'render')
        click.echo(f"❌ {e}", err=True)
        ctx.exit(EXIT_MALFORMED)


@cli.command()
@click.option('--sketch', 'sketch_path', required=True, type=click.Path(dir_okay=False))
@click.option('--scene', 'scene_path', default=None, type=click.Path(dir_okay=False),
              help='Map, predictions and optional av_state; empty scene when omitted.')
@click.option('--mode', 'mode_text', default=None, help='Ablation mode (defaults to the params file).')
@click.option('--params', 'params_path', default=None)
@click.option('--no-tracking', is_flag=True)
@click.option('--indent', default=2, show_default=True, type=int)
@click.pass_context
def extract(ctx, sketch_path, scene_path, mode_text, params_path, no_tracking, indent):
    """Extract one maneuver and print it as JSON."""
    try:
        params = load_params(params_path)
        config = wrapper_configs(params, parse_modes(mode_text, params.wrapper.mode), no_tracking)[0]
        with open(sketch_path, 'r') as f:
            sketch = sketch_from_dict(json.load(f))
        scene_data: Dict[str, Any] = {}
        if scene_path:
            with open(scene_path, 'r') as f:
                scene_data = json.load(f)
        scene = scene_from_dict(scene_data)
        av_state = (vehicle_state_from_dict(scene_data['av_state']) if scene_data.get('av_state')
                    else default_av_state(sketch))
        maneuver = extract_maneuver(sketch, scene, av_state, config, params.mpc.vehicle)
    except (SketchwrapError, *INPUT_ERRORS) as e:
        log_error(e, 'extract')
        click.echo(f"❌ {type(e).__name__}: {e}", err=True)
        ctx.exit(EXIT_MALFORMED)

    click.echo(dumps(maneuver_to_dict(maneuver), indent=indent))


@cli.command()
@click.option('--family', required=True, type=click.Choice(FAMILIES))
@click.option('--count', default=10, show_default=True, type=click.IntRange(min=1))
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--out', 'out_dir', default='scenarios', show_default=True, type=click.Path(file_okay=False))
@click.option('--params', 'params_path', default=None)
@click.pass_context
def generate(ctx, family, count, seed, out_dir, params_path):
    """Write generated scenarios as JSON files."""
    try:
        params = load_params(params_path)
    except INPUT_ERRORS as e:
        log_error(e, 'generate')
        ctx.exit(EXIT_MALFORMED)
    for scenario in generate_suite(family, count, seed, params.generator):
        save_scenario(scenario, Path(out_dir) / f"{scenario.scenario_id}.json")
    logger.info(f"✅ Wrote {count} '{family}' scenario(s) to {out_dir}")


@cli.command()
@click.option('--metrics', 'csv_path', required=True, type=click.Path(dir_okay=False))
@click.option('--out', 'out_path', default='report.html', show_default=True, type=click.Path(dir_okay=False))
@click.pass_context
def report(ctx, csv_path, out_path):
    """Plot a metrics CSV as HTML bar charts."""
    try:
        write_report(Path(csv_path), Path(out_path))
    except (FileNotFoundError, KeyError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        log_error(e, 'report')
        click.echo(f"❌ {e}", err=True)
        ctx.exit(EXIT_MALFORMED)


@cli.command()
@click.option('--scenarios', 'source', default='gen:pudo:1:0', show_default=True)
@click.option('--planner', default='idm', show_default=True)
@click.option('--mode', 'mode_text', default='StayAhead', show_default=True)
@click.option('--cycles', default=30, show_default=True, type=click.IntRange(min=1))
@click.option('--params', 'params_path', default=None)
@click.pass_context
def bench(ctx, source, planner, mode_text, cycles, params_path):
    """Median warm-started plan-cycle runtime along the logged AV track."""
    try:
        params = load_params(params_path)
        config = wrapper_configs(params, parse_modes(mode_text, params.wrapper.mode), False)[0]
        scenario = resolve_scenarios(source, params.generator)[0]
        sketcher = make_planner(planner, params.idm, params.astar)
    except INPUT_ERRORS as e:
        log_error(e, 'bench')
        ctx.exit(EXIT_MALFORMED)

    times = [float(t) for t in scenario.cycle_times if t >= scenario.warmup][:cycles]
    runtimes, warm_start, failures = [], None, 0
    sketcher.reset()
    for t in times:
        started = time.perf_counter()
        record = plan_cycle(scenario, sketcher, t, scenario.av_ground_truth(t), config, params, warm_start)
        runtimes.append((time.perf_counter() - started) * 1000.0)
        failures += int(record.failed)
        warm_start = None if record.failed else record.solution

    agents = len(scenario.agents)
    click.echo(f"{scenario.scenario_id}: {agents} agent(s), {len(runtimes)} cycle(s), {failures} fallback(s)")
    click.echo(f"median {np.median(runtimes):.1f} ms | p90 {np.percentile(runtimes, 90):.1f} ms | "
               f"max {np.max(runtimes):.1f} ms")


@cli.command('init-params')
@click.option('--out', 'out_path', default='params.yaml', show_default=True, type=click.Path(dir_okay=False))
@click.pass_context
def init_params(ctx, out_path):
    """Write the built-in default params."""
    if not ConfigManager(out_path).write_defaults():
        ctx.exit(EXIT_MALFORMED)
    click.echo(f"✅ Default params written to {out_path}")
