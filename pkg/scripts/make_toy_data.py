"""Regenerate the bundled toy flight: ``python scripts/make_toy_data.py data/toy``.

Scenes come from the rule-abiding synthetic world and are turned back into
pixel boxes, so ingesting the files reproduces the scenes exactly. The flight
log samples telemetry every 500 ms over a slow loop above one site.
"""
import math
import sys
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from uav_adnet.grid import Box, GridSpec, cell_to_box
from uav_adnet.ingest import DATE_FORMAT, FlightRecord, FrameAnnotation, write_annotations, write_flight_log
from uav_adnet.synth import SyntheticWorld

N_FRAMES = 300
FRAME_PERIOD_MS = 1000.0
LOG_PERIOD_MS = 500.0
START = datetime(2019, 10, 22, 11, 0, 0)


def _rounded(box):
    return Box(*(round(v, 1) for v in box[:4]), box.category)


def main(out_dir, seed=2019):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = GridSpec()
    world = SyntheticWorld(spec)
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(N_FRAMES):
        grid = world.scene(rng)
        boxes = tuple(_rounded(cell_to_box(c, spec, size=float(rng.uniform(0.3, 0.8)))) for c in grid.cells())
        t = i * FRAME_PERIOD_MS + float(rng.uniform(-100.0, 100.0)) + 200.0
        frames.append(FrameAnnotation(f"frame_{i:05d}", boxes, round(t, 1)))
    records = []
    n_log = int(N_FRAMES * FRAME_PERIOD_MS / LOG_PERIOD_MS) + 2
    for k in range(n_log):
        t = k * LOG_PERIOD_MS
        phase = 2.0 * math.pi * t / (N_FRAMES * FRAME_PERIOD_MS)
        stamp = (START + timedelta(milliseconds=t)).strftime(DATE_FORMAT)
        records.append(FlightRecord(
            stamp, t,
            56.2064 + 0.0004 * math.sin(phase), 10.1870 + 0.0006 * math.cos(phase),
            30000.0 + 2500.0 * math.sin(2 * phase),
            round(0.02 * math.sin(3 * phase), 6), round(0.03 * math.cos(3 * phase), 6),
            round(math.pi * math.sin(phase) * 0.9, 6),
            abs(round(0.8 * math.cos(phase), 6)), abs(round(0.5 * math.sin(phase), 6)), 0.0,
        ))
    write_annotations(out / "annotations.jsonl", frames)
    write_flight_log(out / "flight.csv", records)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/toy")
