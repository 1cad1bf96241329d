"""
SVG debug frames of a SimLog.

Layers (SVG group ids): map, baseline (blue), tube (green, hard solid and
soft dashed), bounds (red upper / yellow lower marks), sketch (gray arrows),
predictions (dark green hulls), trajectory (red).
"""
import logging
from pathlib import Path
from typing import Iterable, List, Optional

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection, PolyCollection  # noqa: E402

from sketchwrap.config_manager import VehicleGeometry  # noqa: E402
from sketchwrap.maneuver import Maneuver, MapRaster  # noqa: E402
from sketchwrap.sim import CycleRecord, SimLog, av_rectangle  # noqa: E402

logger = logging.getLogger(__name__)

LAYERS = ('map', 'baseline', 'tube', 'bounds', 'sketch', 'predictions', 'trajectory')
COLORS = {
    'baseline': 'tab:blue',
    'tube': 'tab:green',
    'upper': 'tab:red',
    'lower': 'gold',
    'sketch': 'dimgray',
    'predictions': 'darkgreen',
    'trajectory': 'red',
}
VIEW_BEHIND = 20.0
VIEW_AHEAD = 80.0

plt.rcParams['svg.hashsalt'] = 'sketchwrap'


def _tube_lines(maneuver: Maneuver, t: int = 0) -> List[np.ndarray]:
    baseline = maneuver.baseline
    p = np.linspace(*baseline.domain, 200)
    lines = []
    for name in ('left_hard', 'right_hard', 'left_soft', 'right_soft'):
        lines.append(baseline.to_cartesian(p, maneuver.tube.evaluate(name, t, p)))
    return lines


def _bound_marks(maneuver: Maneuver, half_length: float = 1.5):
    baseline = maneuver.baseline
    lo, _ = baseline.domain
    marks, colors = [], []
    for p_upper, p_lower in zip(maneuver.bounds.p_upper, maneuver.bounds.p_lower):
        entries = [(p_upper, COLORS['upper'])]
        if p_lower > lo + 1e-9:
            entries.append((p_lower, COLORS['lower']))
        for p, color in entries:
            marks.append(baseline.to_cartesian(np.array([p, p]), np.array([-half_length, half_length])))
            colors.append(color)
    return marks, colors


def render_frame(record: CycleRecord, map_raster: Optional[MapRaster], path: Path,
                 geometry: VehicleGeometry = VehicleGeometry()) -> Path:
    """Write one frame as SVG; every layer group is present even when empty."""
    fig, ax = plt.subplots(figsize=(12, 4))
    av = record.av_state

    if map_raster is not None:
        x0, y0 = map_raster.origin
        extent = (x0, x0 + map_raster.width * map_raster.resolution, y0, y0 + map_raster.height * map_raster.resolution)
        image = ax.imshow(~map_raster.drivable, origin='lower', extent=extent, cmap='Greys', alpha=0.35,
                          interpolation='nearest')
    else:
        image = ax.imshow(np.zeros((1, 1)), extent=(av.x, av.x + 1.0, av.y, av.y + 1.0), alpha=0.0)
    image.set_gid('map')

    maneuver, solution = record.maneuver, record.solution
    baseline_lines, tube_lines, mark_lines, mark_colors = [], [], [], []
    if maneuver is not None:
        baseline_lines = [maneuver.baseline.eval(np.linspace(*maneuver.baseline.domain, 200))]
        tube_lines = _tube_lines(maneuver)
        mark_lines, mark_colors = _bound_marks(maneuver)

    ax.add_collection(LineCollection(baseline_lines, colors=COLORS['baseline'], linewidths=1.5, gid='baseline'))
    ax.add_collection(LineCollection(tube_lines, colors=COLORS['tube'], linewidths=1.0,
                                     linestyles=['solid', 'solid', 'dashed', 'dashed'][:len(tube_lines)] or 'solid',
                                     gid='tube'))
    ax.add_collection(LineCollection(mark_lines, colors=mark_colors or COLORS['upper'], linewidths=2.0, gid='bounds'))

    if record.sketch is not None and len(record.sketch.waypoints) >= 2:
        xy = record.sketch.xy
        direction = np.diff(xy, axis=0)
        sketch_artist = ax.quiver(xy[:-1, 0], xy[:-1, 1], direction[:, 0], direction[:, 1], angles='xy',
                                  scale_units='xy', scale=1.0, color=COLORS['sketch'], width=0.002)
    else:
        sketch_artist = ax.add_collection(LineCollection([], colors=COLORS['sketch']))
    sketch_artist.set_gid('sketch')

    hulls = [hull for prediction in record.predictions for hull in prediction.hulls]
    ax.add_collection(PolyCollection(hulls, facecolors='none', edgecolors=COLORS['predictions'],
                                     linewidths=0.5, gid='predictions'))

    trajectory = [solution.cartesian[:, :2]] if solution is not None else []
    ax.add_collection(LineCollection(trajectory, colors=COLORS['trajectory'], linewidths=1.5, gid='trajectory'))

    ax.add_patch(plt.Polygon(av_rectangle(av, geometry), closed=True, fill=False, edgecolor='black', gid='av'))
    ax.set_xlim(av.x - VIEW_BEHIND, av.x + VIEW_AHEAD)
    ax.set_ylim(av.y - 15.0, av.y + 15.0)
    ax.set_aspect('equal')
    ax.set_title(f"t = {record.t:.1f} s" + ("  (fallback)" if record.failed else ""))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    return path


def parse_frames(text: Optional[str], count: int) -> List[int]:
    """'a..b' (inclusive), 'a' or None for all frames."""
    if not text:
        return list(range(count))
    if '..' in text:
        start, end = text.split('..', 1)
        return list(range(int(start), int(end) + 1))
    return [int(text)]


def render_log(log: SimLog, frames: Iterable[int], out_dir: Path,
               geometry: VehicleGeometry = VehicleGeometry()) -> List[Path]:
    """
    Raises:
        IndexError: A requested frame is not in the log
    """
    frames = list(frames)
    missing = [f for f in frames if f < 0 or f >= len(log.records)]
    if missing:
        raise IndexError(f"frames {missing} not in log ({len(log.records)} frames)")
    written = []
    for index in frames:
        written.append(render_frame(log.records[index], log.map, Path(out_dir) / f"frame_{index:05d}.svg", geometry))
    logger.info(f"✅ Rendered {len(written)} frame(s) to {out_dir}")
    return written
