"""Command-line surface: dataset generation, label fusion, the online run,
metric evaluation, conformal coverage checks, latency benchmarking, the
dead-reckoning baseline and report comparison.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from .config import ConfigError, RunConfig
from .conformal import CalibrationSet, apply_quantile, coverage_eval, fit_quantile, score
from .learner import PREDICTION_COLUMNS, TransitionStore, TransitionTracker, physics_warmup, run_loop
from .metrics import MetricsReport, latency_percentiles, nll, rmse
from .model.estimator import GaussianPrediction, MultiFidelityEstimator
from .simworld import DatasetFormatError, builtin_profiles, load, record, simulate
from .ukf import load_fused, run_fusion, save_fused


def _file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_config(path):
    return RunConfig.load(path) if path else RunConfig()


def _profile(cfg):
    profiles = builtin_profiles(cfg.kin(), teleop_seed=cfg["sim.seed"])
    name = cfg["sim.profile"]
    if name not in profiles:
        raise ConfigError(f"unknown profile {name!r}; available: {sorted(profiles)}")
    return profiles[name]


def cmd_simulate(args):
    cfg = _load_config(args.config)
    truth, frames = simulate(
        _profile(cfg),
        params=cfg.kin(),
        disturbance=cfg.disturbance(),
        noise=cfg.noise(),
        rates=cfg.sim_rates(),
        seed=cfg["sim.seed"],
        duration=cfg["sim.duration"],
    )
    record(truth, frames, args.out)
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def cmd_fuse(args):
    cfg = _load_config(args.config)
    truth, frames = load(args.dataset)
    fused = run_fusion(frames, config=cfg.ukf(), params=cfg.kin(), noise=cfg.noise())
    save_fused(fused, [f.t for f in frames], args.out)
    print(f"fused {len(fused)} states to {args.out}")
    return 0


def cmd_baseline(args):
    cfg = _load_config(args.config)
    truth, frames = load(args.dataset)
    from .simworld import dead_reckon

    states = dead_reckon(frames, params=cfg.kin())
    sigma = cfg["model.fallback_sigma"]
    with open(args.out, "w", newline="") as f:
        f.write(",".join(PREDICTION_COLUMNS) + "\n")
        for fr, s in zip(frames, states):
            row = [fr.t, *s.as_tuple(), *([sigma] * 6), *([1.0] * 6)]
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    print(f"wrote {len(states)} dead-reckoning rows to {args.out}")
    return 0


def cmd_run(args):
    cfg = _load_config(args.config)
    truth, frames = load(args.dataset)
    times, labels = load_fused(args.labels)
    if len(labels) != len(frames):
        raise DatasetFormatError(
            f"label count {len(labels)} does not match frame count {len(frames)}"
        )
    max_iter = cfg["run.max_iterations"] or None
    result = run_loop(
        frames,
        labels,
        args.out,
        model_cfg=cfg.model_cfg(),
        train_cfg=cfg.train_cfg(),
        conformal_cfg=cfg.conformal_cfg(),
        kin=cfg.kin(),
        noise=cfg.noise(),
        rates=cfg.sim_rates(),
        warmup_profile=_profile(cfg),
        seed=cfg["run.seed"],
        max_iterations=max_iter,
        manifest_extra={
            "config_hash": cfg.config_hash(),
            "config": cfg.canonical_text(),
            "dataset": os.path.abspath(args.dataset),
            "dataset_hash": _file_hash(args.dataset),
            "labels_hash": _file_hash(args.labels),
        },
    )
    print(
        f"ran {result.n_iterations} iterations "
        f"({result.n_fallback} fallback, {result.n_errors} errors); "
        f"artifacts in {result.outdir}"
    )
    return 0 if result.n_errors == 0 else 2


def _read_predictions(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != PREDICTION_COLUMNS:
            raise DatasetFormatError(f"{path}: unexpected columns {header}")
        rows = np.array([[float(v) for v in row] for row in reader if row])
    return rows


def cmd_evaluate(args):
    preds = _read_predictions(args.predictions)
    times, labels = load_fused(args.labels)
    label_by_t = {t: np.array(s.as_tuple()) for t, s in zip(times, labels)}
    y, mu, sig, qa = [], [], [], []
    for row in preds:
        lbl = label_by_t.get(row[0])
        if lbl is None:
            continue
        y.append(lbl)
        mu.append(row[1:7])
        sig.append(row[7:13])
        qa.append(row[13:19])
    if not y:
        raise DatasetFormatError("no prediction timestamps match the label file")
    y = np.array(y)
    mu = np.array(mu)
    sig = np.array(sig)
    qa = np.array(qa)
    sig_cal = sig * qa
    coverage = (np.abs(y - mu) <= sig_cal).mean(axis=0)

    lat = np.loadtxt(args.latencies, delimiter=",", skiprows=1, usecols=1) if args.latencies else []
    p50, p95, p99 = latency_percentiles(lat)
    n_fallback = 0
    config_hash = ""
    if args.manifest:
        with open(args.manifest) as f:
            m = json.load(f)
        n_fallback = m.get("fallback_predictions", 0)
        config_hash = m.get("config_hash", "")
    report = MetricsReport(
        rmse=rmse(y, mu),
        nll=nll(y, mu, sig_cal**2),
        nll_uncalibrated=nll(y, mu, sig**2),
        coverage=[float(c) for c in coverage],
        latency_p50_ms=p50,
        latency_p95_ms=p95,
        latency_p99_ms=p99,
        n_predictions=int(y.shape[0]),
        n_fallback=n_fallback,
        config_hash=config_hash,
        dataset_hash=_file_hash(args.labels),
        alpha=float(args.alpha),
    )
    blob = report.to_json(args.out)
    if not args.out:
        print(blob)
    else:
        print(f"wrote report to {args.out}")
    return 0


def cmd_compare(args):
    a = MetricsReport.from_json(args.a)
    b = MetricsReport.from_json(args.b)
    if a.dataset_hash != b.dataset_hash:
        print("error: reports come from different datasets", file=sys.stderr)
        return 1
    fields = [
        "rmse",
        "nll",
        "nll_uncalibrated",
        "latency_p50_ms",
        "latency_p95_ms",
        "latency_p99_ms",
    ]
    rows = [(f, getattr(a, f), getattr(b, f), getattr(a, f) - getattr(b, f)) for f in fields]
    width = max(len(f) for f, *_ in rows)
    print(f"{'metric'.ljust(width)}  {'A':>12}  {'B':>12}  {'A-B':>12}")
    for f, va, vb, d in rows:
        print(f"{f.ljust(width)}  {va:12.6f}  {vb:12.6f}  {d:12.6f}")
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["metric", "a", "b", "delta"])
            for row in rows:
                w.writerow(row)
    return 0


def cmd_calibrate_check(args):
    lo, hi = 0.87, 0.95
    alpha = args.alpha
    passes = 0
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed)
        cal = CalibrationSet(dim=6, window=args.n)
        preds_cal = [
            GaussianPrediction(mu=np.zeros(6), var=np.ones(6)) for _ in range(args.n)
        ]
        for p in preds_cal:
            cal.add(score(rng.standard_normal(6), p))
        q = fit_quantile(cal, alpha)
        covered = []
        for _ in range(args.n):
            pred = GaussianPrediction(mu=np.zeros(6), var=np.ones(6))
            calibrated = apply_quantile(pred, q)
            covered.append(np.abs(rng.standard_normal(6)) <= calibrated.sigma())
        cov = float(np.mean(covered))
        ok = lo <= cov <= hi
        passes += ok
        print(f"seed {seed}: coverage {cov:.4f} {'ok' if ok else 'OUT OF RANGE'}")
    print(f"{passes}/{args.seeds} trials within [{lo}, {hi}] at alpha={alpha}")
    return 0 if passes >= args.seeds - 1 else 2


def cmd_bench(args):
    cfg = _load_config(args.config)
    kin = cfg.kin()
    model = MultiFidelityEstimator(cfg.model_cfg(), kin, seed=cfg["run.seed"])
    store = TransitionStore(cfg["train.capacity"])
    tracker = TransitionTracker(store, kin, cfg["model.window"])
    truth, frames = simulate(
        _profile(cfg),
        params=kin,
        noise=cfg.noise(),
        rates=cfg.sim_rates(),
        seed=cfg["sim.seed"],
        duration=(cfg["model.window"] + 8) / cfg["sim.lofi_hz"],
    )
    for fr, tf in zip(frames, truth):
        tracker.advance(fr.t, fr.enc_wr, fr.enc_wl, fr.dk, np.array(tf.state.as_tuple()))
    inputs = tracker.inference_inputs(10.0, 9.0, 1.0 / cfg["sim.lofi_hz"])
    model.infer(inputs)  # warm caches before timing
    lat = np.empty(args.iterations)
    for i in range(args.iterations):
        t0 = time.perf_counter()
        model.infer(inputs)
        lat[i] = (time.perf_counter() - t0) * 1e3
    p50, p95, p99 = latency_percentiles(lat)
    print(f"inference latency over {args.iterations} steps (ms):")
    edges = [0.0, 1, 2, 5, 10, 20, 50, float("inf")]
    for lo_e, hi_e in zip(edges[:-1], edges[1:]):
        n = int(((lat >= lo_e) & (lat < hi_e)).sum())
        label = f"{lo_e:g}-{hi_e:g}" if hi_e != float("inf") else f">={lo_e:g}"
        print(f"  {label:>8} ms: {'#' * min(n, 60)}{' ' if n else ''}({n})")
    print(f"p50 {p50:.3f}  p95 {p95:.3f}  p99 {p99:.3f}")
    budget = args.budget_ms
    if p99 >= budget:
        print(f"FAIL: p99 {p99:.3f} ms exceeds the {budget} ms budget", file=sys.stderr)
        return 2
    print(f"PASS: p99 {p99:.3f} ms within the {budget} ms budget")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="mfnp",
        description="Multi-fidelity residual neural-process state estimation",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a dataset CSV")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("fuse", help="run the sigma-point label oracle over a dataset")
    sp.add_argument("--config", default=None)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_fuse)

    sp = sub.add_parser("baseline", help="dead-reckoning predictions for comparison")
    sp.add_argument("--config", default=None)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_baseline)

    sp = sub.add_parser("run", help="full online learn/infer loop")
    sp.add_argument("--config", default=None)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("evaluate", help="metrics from prediction and label logs")
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--latencies", default=None)
    sp.add_argument("--manifest", default=None)
    sp.add_argument("--alpha", type=float, default=0.1)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("compare", help="side-by-side metric reports")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("calibrate-check", help="conformal coverage study")
    sp.add_argument("--seeds", type=int, default=10)
    sp.add_argument("--n", type=int, default=500)
    sp.add_argument("--alpha", type=float, default=0.1)
    sp.set_defaults(fn=cmd_calibrate_check)

    sp = sub.add_parser("bench", help="inference latency histogram")
    sp.add_argument("--config", default=None)
    sp.add_argument("--iterations", type=int, default=500)
    sp.add_argument("--budget-ms", type=float, default=20.0)
    sp.set_defaults(fn=cmd_bench)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DatasetFormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # anything unexpected is a runtime failure
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
