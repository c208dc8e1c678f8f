"""Acceptance checks, one per criterion.

Each check prints a single ``PASS``/``FAIL`` line with the measured numbers,
then asserts. Run under pytest (``pytest tests/test_acceptance.py``) or as a
script (``python tests/test_acceptance.py``) to get just the summary lines.

Criteria 5 and 6 share one set of training runs (five seeds, four variants,
about four minutes on one core); criterion 7 runs the bundled toy experiment
three times.
"""
from __future__ import annotations

import csv
import math
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from uav_adnet.cli import main as cli_main
from uav_adnet.detection import reconstruct
from uav_adnet.errors import ValidationError
from uav_adnet.evaluation import ConfusionCounts, confusion, metrics_from_pr
from uav_adnet.grid import GridSpec, GridVector
from uav_adnet.ingest import FlightRecord, Sample, parse_flight_log, write_flight_log
from uav_adnet.nn import VARIANTS, ModelConfig, Network, draw_eps, layer_shapes, loss_and_grads
from uav_adnet.training import export_curve, read_curve, reconstruction_error

ROOT = Path(__file__).resolve().parents[1]
ACCEPTANCE_CFG = ROOT / "configs" / "acceptance.cfg"
TOY_CFG = ROOT / "configs" / "toy.cfg"

# published (precision, recall, F1) rows of the three scenario tables
PUBLISHED = [
    ("Scenario 1", "UAV-AdNet", 0.9816, 1.0, 0.9907),
    ("Scenario 1", "UAV-AdNet-wo-gps", 0.9427, 0.9984, 0.9697),
    ("Scenario 1", "CVAE", 0.1963, 0.5165, 0.2845),
    ("Scenario 1", "VAE", 0.1920, 0.4102, 0.2616),
    ("Scenario 2", "UAV-AdNet", 0.9724, 0.9899, 0.9811),
    ("Scenario 2", "UAV-AdNet-wo-gps", 0.9621, 0.99, 0.9759),
    ("Scenario 2", "CVAE", 0.1982, 0.3955, 0.2641),
    ("Scenario 2", "VAE", 0.1979, 0.3992, 0.2646),
    ("Scenario 3", "UAV-AdNet", 0.9630, 0.9939, 0.9782),
    ("Scenario 3", "UAV-AdNet-wo-gps", 0.9517, 0.9939, 0.9723),
    ("Scenario 3", "CVAE", 0.1958, 0.5158, 0.2839),
    ("Scenario 3", "VAE", 0.1990, 0.4113, 0.2682),
]
F1_TOL = 5e-4

FD_STEP = 1e-4
FD_REL_TOL = 1e-4
FD_SEEDS = 20
ORACLE_TOL = 1e-12
N_CONFUSION_PAIRS = 1000
ORDERING_SEEDS = (0, 1, 2, 3, 4)
ORDERING_MIN_SEEDS = 4
F1_FLOOR = 0.9
SANITY_RATIO = 0.5
COPY_CROP = ("UAV-AdNet", "UAV-AdNet-wo-gps")
NO_COPY_CROP = ("CVAE", "VAE")


def _line(number, ok, text):
    return f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}"


# -- 1. metric identity -----------------------------------------------------------

def check_metric_identity():
    worst = max(abs(metrics_from_pr(p, r).f1 - f1) for _, _, p, r, f1 in PUBLISHED)
    ok = worst < F1_TOL
    return ok, _line(1, ok, f"F1 from published (P, R) on {len(PUBLISHED)} rows, max |dF1| = {worst:.2e} (tol {F1_TOL})")


# -- 2. gradient oracle -----------------------------------------------------------

def _fd_relative_errors(variant, seed):
    config = ModelConfig.for_variant(variant, 16, hidden_sizes=(8,), latent_dim=2, kl_weight=0.5)
    net = Network.initialize(config, seed=seed)
    rng = np.random.default_rng([seed, 1])
    for name in net.params:  # nonzero biases so every path is exercised
        if name.endswith(".b"):
            net.params[name] = rng.normal(0.0, 0.3, net.params[name].shape)
    X = (rng.random((3, 16)) < 0.3).astype(float)
    G = rng.random((3, 3)) if config.use_gps else None
    eps = draw_eps([seed, 2], 3, config.latent_dim)
    _, _, _, grads = loss_and_grads(net, X, G, eps)
    worst = 0.0
    for name, _ in layer_shapes(config):
        p = net.params[name]
        flat = p.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + FD_STEP
            up = loss_and_grads(net, X, G, eps)[0]
            flat[k] = saved - FD_STEP
            down = loss_and_grads(net, X, G, eps)[0]
            flat[k] = saved
            numeric = (up - down) / (2 * FD_STEP)
            analytic = grads[name].reshape(-1)[k]
            scale = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst


def check_gradient_oracle():
    worst = {v: max(_fd_relative_errors(v, seed) for seed in range(FD_SEEDS)) for v in VARIANTS}
    ok = all(w < FD_REL_TOL for w in worst.values())
    detail = ", ".join(f"{v} {w:.1e}" for v, w in worst.items())
    return ok, _line(2, ok, f"central differences (h={FD_STEP}) over {FD_SEEDS} seeds, max rel err: {detail}")


# -- 3. reconstruction-error oracle ---------------------------------------------------

def _independent_mse(net, samples):
    total = 0.0
    for s in samples:
        x_hat = reconstruct(net, s.grid, s.gps if net.config.use_gps else None)
        sq = 0.0
        for xi, yi in zip(s.grid.bits.tolist(), x_hat.tolist()):
            sq += (xi - yi) ** 2
        total += sq / len(x_hat)
    return total / len(samples)


def check_reconstruction_oracle():
    spec = GridSpec()
    rng = np.random.default_rng(7)
    samples = [Sample(GridVector(spec, (rng.random(spec.length) < 0.05).astype(np.uint8)), rng.random(3), f"s{i}")
               for i in range(100)]
    gaps = []
    for variant in VARIANTS:
        net = Network.initialize(ModelConfig.for_variant(variant, spec.length, hidden_sizes=(32,), latent_dim=4), seed=3)
        gaps.append(abs(reconstruction_error(net, samples) - _independent_mse(net, samples)))
    zero_net = Network.zeros(ModelConfig.for_variant("vae", spec.length, hidden_sizes=(32,), latent_dim=4))
    blank = [Sample(GridVector.zeros(spec), np.zeros(3), f"z{i}") for i in range(10)]
    const = reconstruction_error(zero_net, blank)
    ok = max(gaps) <= ORACLE_TOL and const == 0.25
    return ok, _line(3, ok, f"per-sample MSE loop on 100 samples, max gap {max(gaps):.1e} (tol {ORACLE_TOL}); "
                            f"all-0.5 output on empty grids = {const!r}")


# -- 4. confusion oracle -----------------------------------------------------------

def check_confusion_oracle():
    rng = np.random.default_rng(11)
    mismatches = 0
    for _ in range(N_CONFUSION_PAIRS):
        n = int(rng.integers(1, 513))
        g = (rng.random(n) < rng.random()).astype(np.uint8)
        m = (rng.random(n) < rng.random()).astype(np.uint8)
        tp = tn = fp = fn = 0
        for gi, mi in zip(g.tolist(), m.tolist()):
            if gi and mi:
                tp += 1
            elif not gi and not mi:
                tn += 1
            elif mi:
                fp += 1
            else:
                fn += 1
        got = confusion(g, m)
        if got != ConfusionCounts(tp, tn, fp, fn) or got.total != n:
            mismatches += 1
    ok = mismatches == 0
    return ok, _line(4, ok, f"{N_CONFUSION_PAIRS} random pairs (length <= 512), {mismatches} mismatches vs brute force")


# -- 5 and 6. trained baselines on the synthetic world -----------------------------------

def run_ordering_experiments(workdir):
    """Train all four variants per seed through ``reproduce``; returns per-seed results."""
    import json

    runs = {}
    for seed in ORDERING_SEEDS:
        out = Path(workdir) / f"seed_{seed}"
        code = cli_main(["reproduce", "--config", str(ACCEPTANCE_CFG), "--out", str(out), "--set", f"seed={seed}"])
        if code != 0:
            raise RuntimeError(f"reproduce failed for seed {seed} with exit code {code}")
        payload = json.loads((out / "metrics.json").read_text())
        f1 = {name: row["f1"] for name, row in payload["results"]["0.50"]["1"].items()}
        curves = {v: out / "models" / v / "loss.csv" for v in VARIANTS}
        runs[seed] = {"f1": f1, "curves": curves}
    return runs


def check_ordering(runs):
    good, notes = 0, []
    for seed, run in runs.items():
        f1 = run["f1"]
        floor_ok = all(f1[m] >= F1_FLOOR for m in COPY_CROP)
        order_ok = min(f1[m] for m in COPY_CROP) > max(f1[m] for m in NO_COPY_CROP)
        good += floor_ok and order_ok
        notes.append(f"s{seed}: " + "/".join(f"{f1[m]:.3f}" for m in COPY_CROP + NO_COPY_CROP))
    ok = good >= ORDERING_MIN_SEEDS
    return ok, _line(5, ok, f"copy-crop F1 >= {F1_FLOOR} and above CVAE/VAE on {good}/{len(runs)} seeds "
                            f"(need {ORDERING_MIN_SEEDS}); F1 AdNet/wo-gps/CVAE/VAE {'; '.join(notes)}")


def check_training_sanity(runs, scratch):
    worst, lossless = 0.0, True
    for seed, run in runs.items():
        for variant, path in run["curves"].items():
            curve = read_curve(path)
            worst = max(worst, curve.at(50).e_train / curve.at(1).e_train)
            copy = Path(scratch) / f"{seed}_{variant}.csv"
            export_curve(curve, copy)
            lossless &= read_curve(copy) == curve and copy.read_bytes() == Path(path).read_bytes()
    ok = worst < SANITY_RATIO and lossless
    return ok, _line(6, ok, f"max e_train(50)/e_train(1) over all variants and seeds = {worst:.3f} "
                            f"(need < {SANITY_RATIO}); curve CSV round trip lossless: {lossless}")


# -- 7. determinism ------------------------------------------------------------------

def check_determinism(workdir):
    outputs = []
    for tag, extra in (("a", []), ("b", []), ("jobs4", ["--jobs", "4"])):
        out = Path(workdir) / tag
        code = cli_main(["reproduce", "--config", str(TOY_CFG), "--out", str(out), *extra])
        if code != 0:
            return False, _line(7, False, f"reproduce run {tag} exited with {code}")
        outputs.append((out / "metrics.json").read_bytes())
    ok = outputs[0] == outputs[1] == outputs[2]
    return ok, _line(7, ok, f"toy experiment metrics JSON byte-identical across 2 serial runs and --jobs 4: {ok}")


# -- 8. ingestion validation -----------------------------------------------------------

GOOD = FlightRecord("10222019-110000", 0.0, 56.2, 10.18, 30000.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0)
VIOLATIONS = [("lat", 91.0), ("lon", 181.0), ("yaw", 3.2), ("altitude", -1.0)]
BOUNDARIES = [("lat", 90.0), ("lat", -90.0), ("lon", 180.0), ("lon", -180.0), ("yaw", math.pi), ("yaw", -math.pi),
              ("roll", math.pi), ("pitch", -math.pi), ("altitude", 0.0), ("vx", 0.0)]  # the first record also sits at t = 0


def check_ingestion(workdir):
    problems = []
    for field, value in VIOLATIONS:
        path = Path(workdir) / f"bad_{field}.csv"
        write_flight_log(path, [GOOD, replace(GOOD, t=20.0, **{field: value})])
        try:
            parse_flight_log(path)
            problems.append(f"{field}={value} accepted")
        except ValidationError as exc:
            if exc.field != field or field not in str(exc):
                problems.append(f"{field}={value} rejected naming {exc.field!r}")
    path = Path(workdir) / "boundaries.csv"
    records = [replace(GOOD, t=20.0 * i, **{f: v}) for i, (f, v) in enumerate(BOUNDARIES)]
    write_flight_log(path, records)
    try:
        if len(parse_flight_log(path)) != len(records):
            problems.append("boundary records dropped")
    except ValidationError as exc:
        problems.append(f"boundary rejected: {exc}")
    ok = not problems
    return ok, _line(8, ok, f"{len(VIOLATIONS)} out-of-range records rejected by field, {len(BOUNDARIES)} "
                            f"boundary records accepted" + (f"; problems: {problems}" if problems else ""))


# -- pytest wiring -------------------------------------------------------------------

@pytest.fixture
def report(capsys):
    def emit(result):
        ok, line = result
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


@pytest.fixture(scope="module")
def trained_runs(tmp_path_factory):
    return run_ordering_experiments(tmp_path_factory.mktemp("ordering"))


def test_criterion_1_metric_identity(report):
    report(check_metric_identity())


def test_criterion_2_gradient_oracle(report):
    report(check_gradient_oracle())


def test_criterion_3_reconstruction_error_oracle(report):
    report(check_reconstruction_oracle())


def test_criterion_4_confusion_oracle(report):
    report(check_confusion_oracle())


@pytest.mark.slow
def test_criterion_5_baseline_ordering(report, trained_runs):
    report(check_ordering(trained_runs))


@pytest.mark.slow
def test_criterion_6_training_sanity(report, trained_runs, tmp_path):
    report(check_training_sanity(trained_runs, tmp_path))


@pytest.mark.slow
def test_criterion_7_determinism(report, tmp_path):
    report(check_determinism(tmp_path))


def test_criterion_8_ingestion_validation(report, tmp_path):
    report(check_ingestion(tmp_path))


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        results = [check_metric_identity(), check_gradient_oracle(), check_reconstruction_oracle(),
                   check_confusion_oracle()]
        runs = run_ordering_experiments(tmp / "ordering")
        (tmp / "curves").mkdir()
        results += [check_ordering(runs), check_training_sanity(runs, tmp / "curves"),
                    check_determinism(tmp / "det"), check_ingestion(tmp)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
