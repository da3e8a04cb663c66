"""Command-line entry point: gen-data, train, check-grad, bench, complexity.

Exit codes: 0 success, 2 configuration error, 3 numeric abort during
training or evaluation, 4 I/O or file-format error. Heavy imports happen
inside the command handlers so that --threads can pin the BLAS pools
before numpy initializes.
"""
import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _parser():
    p = argparse.ArgumentParser(
        prog="riscade",
        description="RIS cascaded-channel simulation, CNN-denoiser "
                    "estimation and benchmarks")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP thread pools")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="run config JSON")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config master seed")
        sp.add_argument("--out-dir", default=None,
                        help="override the config output directory")

    sp = sub.add_parser("gen-data", help="generate train/val/test splits")
    common(sp)

    sp = sub.add_parser("train", help="train the configured model")
    common(sp)
    sp.add_argument("--data", required=True,
                    help="dataset directory from gen-data")

    sp = sub.add_parser("check-grad",
                        help="finite-difference gradient verification")
    sp.add_argument("--kind", default="all",
                    choices=["all", "linear", "cbdnet", "gan", "mrdn"])
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("bench", help="NMSE sweep over estimators and SNRs")
    common(sp)
    sp.add_argument("--data", required=True,
                    help="dataset directory from gen-data")
    sp.add_argument("--ckpt", action="append", default=[],
                    metavar="NAME=PATH",
                    help="checkpoint estimator to include (repeatable)")
    sp.add_argument("--curves", default=None, metavar="METRICS_CSV",
                    help="also write a smoothed convergence curve from a "
                         "training metrics CSV")

    sp = sub.add_parser("complexity",
                        help="closed-form and exact op counts")
    common(sp)
    return p


def _apply_threads(n):
    if n is None:
        return
    if n < 1:
        raise SystemExit("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _load_run_config(args):
    from . import config

    cfg = config.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "out_dir", None) is not None:
        cfg.out_dir = args.out_dir
    return cfg


def cmd_gen_data(args):
    from . import channel, config, dataio

    cfg = _load_run_config(args)
    ds = channel.gen_dataset(cfg.dataset_config())
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    config.write_resolved(cfg.doc, out)
    manifest = dataio.save_dataset(
        out, ds, manifest_extra={"config_fingerprint": cfg.fingerprint()})
    counts = {k: len(getattr(ds, k)) for k in ("train", "val", "test")}
    print(f"wrote {manifest} (samples: {counts})")
    return EXIT_OK


def cmd_train(args):
    from . import config, dataio, training

    cfg = _load_run_config(args)
    ds = dataio.load_dataset(args.data)
    model = cfg.build_model()
    tcfg = cfg.train_config()
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    config.write_resolved(cfg.doc, out)
    every = cfg.checkpoint_every

    def on_epoch_end(epoch, cur, metrics):
        if every > 0 and (epoch + 1) % every == 0:
            dataio.save_checkpoint(
                os.path.join(out, f"model_epoch{epoch + 1:04d}.ckpt"), cur)

    trained, metrics = training.train(model, ds, tcfg,
                                      on_epoch_end=on_epoch_end)
    dataio.save_checkpoint(os.path.join(out, "model.ckpt"), trained)
    dataio.save_metrics_csv(os.path.join(out, "metrics.csv"), metrics)
    final_val = next((m["val_nmse_db"] for m in reversed(metrics)
                      if m["val_nmse_db"] is not None), None)
    if final_val is None:
        print(f"trained {model.kind}: {len(metrics)} iterations")
    else:
        print(f"trained {model.kind}: {len(metrics)} iterations, "
              f"final val NMSE {final_val:.2f} dB")
    return EXIT_OK


def cmd_check_grad(args):
    from . import training

    kinds = (["linear", "cbdnet", "gan", "mrdn"] if args.kind == "all"
             else [args.kind])
    all_pass = True
    for kind in kinds:
        rep = training.grad_check(kind, tol=args.tol, seed=args.seed)
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {kind}: max rel err {rep.max_rel_err:.3e} "
              f"(tol {args.tol:g}, {rep.n_params} params)")
        for name, err in sorted(rep.per_layer.items()):
            print(f"    {name}: {err:.3e}")
        all_pass = all_pass and rep.passed
    return EXIT_OK if all_pass else EXIT_NUMERIC


def _parse_ckpt_args(pairs):
    out = {}
    for pair in pairs:
        name, sep, path = pair.partition("=")
        if not sep or not name or not path:
            from .errors import ConfigError

            raise ConfigError(f"--ckpt wants NAME=PATH, got {pair!r}")
        out[name] = path
    return out


def _moving_average(values, window):
    import numpy as np

    if window <= 1:
        return list(values)
    kernel = np.ones(window) / window
    return [float(v) for v in np.convolve(values, kernel, mode="valid")]


def _write_curve(metrics_csv, window, out_path):
    import csv

    with open(metrics_csv, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    losses = [float(r["loss"]) for r in rows if r["loss"] != ""]
    smooth = _moving_average(losses, window)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("iteration,loss_ma\n")
        for i, v in enumerate(smooth, start=window):
            f.write(f"{i},{v!r}\n")


def cmd_bench(args):
    from . import bench, config, dataio, models

    cfg = _load_run_config(args)
    ds = dataio.load_dataset(args.data)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    config.write_resolved(cfg.doc, out)

    import dataclasses

    budget = models.OpsBudget(n_b=ds.test.y.shape[1],
                              n_u=ds.test.y.shape[2] // 2)
    estimators = {"ls": bench.ls_estimator}
    reports = {}
    for name, path in _parse_ckpt_args(args.ckpt).items():
        model = dataio.load_checkpoint(path)
        estimators[name] = model
        reports[name] = dataclasses.asdict(models.count_ops(model.spec,
                                                            budget))

    b = cfg.bench
    table = bench.run_benchmark(
        estimators, ds.test, b["snr_grid_db"], seed=cfg.seed,
        p_mean=ds.meta.get("mean_entry_power"),
        record_timing=b["record_timing"], timing_reps=b["timing_reps"],
        config={"fingerprint": cfg.fingerprint()})
    csv_path, json_path = bench.save_table(os.path.join(out, "benchmark"),
                                           table)
    print(f"wrote {csv_path} and {json_path} ({len(table.rows)} rows)")

    if reports:
        rep_path = os.path.join(out, "complexity.json")
        with open(rep_path, "w", encoding="utf-8") as f:
            f.write(json.dumps(reports, indent=2, sort_keys=True) + "\n")
        print(f"wrote {rep_path}")

    if args.curves is not None:
        curve_path = os.path.join(out, "convergence.csv")
        _write_curve(args.curves, b["curve_window"], curve_path)
        print(f"wrote {curve_path}")
    return EXIT_OK


def cmd_complexity(args):
    from . import config, models

    cfg = _load_run_config(args)
    g, d, t = (cfg.doc["geometry"], cfg.doc["dataset"], cfg.doc["train"])
    budget = models.OpsBudget(n_b=g["n_b"], n_u=g["n_u"],
                              s=d["n_train"], t=t["epochs"])
    rep = models.count_ops(cfg.model_spec(), budget)
    doc = {"model": rep.model, "formula_ops": rep.formula_ops,
           "exact_macs_per_sample": rep.exact_macs_per_sample,
           "exact_macs_total": rep.exact_macs_total, "inputs": rep.inputs}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    config.write_resolved(cfg.doc, out)
    with open(os.path.join(out, "complexity.json"), "w",
              encoding="utf-8") as f:
        f.write(text)
    print(text, end="")
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "check-grad": cmd_check_grad,
    "bench": cmd_bench,
    "complexity": cmd_complexity,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    _apply_threads(args.threads)

    from .errors import CheckpointError, ConfigError, NumericError

    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"file format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry():
    raise SystemExit(main())
