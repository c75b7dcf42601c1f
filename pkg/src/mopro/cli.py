"""Command-line entry point: generate / train / eval / plot.

Every command is non-interactive and exits with a documented code:

    0  success
    1  unexpected internal failure
    2  configuration or usage error
    3  unreadable or malformed data file
    4  state/structure mismatch (wrong K, missing warm-up, bad checkpoint pairing)
    5  non-finite numerics (a diagnostic state dump is written when possible)

``--threads 1`` pins the BLAS pools before NumPy loads, which is the
bitwise-reproducible mode; ``--threads auto`` leaves library defaults.
MOPRO_LOG={error|info|debug} controls verbosity (default info).

Only stdlib is imported at module level so thread pinning can happen
ahead of the numeric stack.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

log = logging.getLogger("mopro")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_STATE = 4
EXIT_NUMERIC = 5

_THREAD_ENV = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
               "NUMEXPR_NUM_THREADS")


def _pin_threads(argv):
    """Honor --threads before any numeric import reads the environment."""
    threads = "auto"
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads == "1":
        for var in _THREAD_ENV:
            os.environ[var] = "1"
    return threads


def _setup_logging():
    level_name = os.environ.get("MOPRO_LOG", "info")
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise SystemExit(
            f"MOPRO_LOG must be one of {sorted(levels)}, got {level_name!r}"
        )
    logging.basicConfig(
        level=levels[level_name],
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mopro",
        description="Momentum-prototype training on noisy synthetic data.",
    )
    parser.add_argument("--version", action="version", version="%(prog)s 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--threads", choices=("1", "auto"), default="auto",
                        help="1 = pinned single-threaded (bitwise reproducible)")

    p_gen = sub.add_parser("generate", parents=[common],
                           help="write a synthetic dataset (and optional test split)")
    p_gen.add_argument("--config", help="config file with a [data] section")
    p_gen.add_argument("--seed", type=int, help="override the config seed")
    p_gen.set_defaults(func=cmd_generate)

    p_train = sub.add_parser("train", parents=[common],
                             help="run warm-up + main loop (+ optional re-balancing)")
    p_train.add_argument("--config", help="config file")
    p_train.add_argument("--dataset", required=True, help="training dataset (.mpds)")
    p_train.add_argument("--eval-dataset", help="clean split for per-epoch probes")
    p_train.add_argument("--seed", type=int, help="override the config seed")
    p_train.add_argument("--resume", help="checkpoint to continue from "
                                          "(its stored config wins)")
    p_train.add_argument("--ablate", choices=("wo_pro", "wo_ins", "wo_s", "ce_only"),
                         help="apply one ablation preset")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", parents=[common],
                            help="score a checkpoint: correction, probes, calibration")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--eval-dataset", help="held-out split for the probes")
    p_eval.set_defaults(func=cmd_eval)

    p_plot = sub.add_parser("plot", parents=[common],
                            help="render metric curves from a metrics CSV")
    p_plot.add_argument("--metrics", required=True, help="metrics.csv from train")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def _ensure_out(path):
    os.makedirs(path, exist_ok=True)
    return path


def _base_manifest(args, threads):
    from . import __version__, backend_name

    return {
        "package_version": __version__,
        "backend": backend_name,
        "command": args.command,
        "threads": threads,
        "out_dir": os.path.abspath(args.out),
    }


def cmd_generate(args, threads="auto"):
    from . import configfile as cf
    from .datagen import generate, save_dataset, heldout_split

    sections = cf.parse_config_file(args.config) if args.config else {}
    source = args.config or "<defaults>"
    gen_cfg, extras = cf.build_gen_config(sections, source, seed_override=args.seed)
    out = _ensure_out(args.out)

    dataset = generate(gen_cfg)
    train_path = os.path.join(out, "dataset.mpds")
    save_dataset(dataset, train_path)
    outputs = [{"path": train_path, "sha256": cf.sha256_file(train_path),
                "n": dataset.n}]
    test_per_class = int(extras.get("test_per_class", 0))
    if test_per_class > 0:
        test_set = heldout_split(gen_cfg, per_class=test_per_class)
        test_path = os.path.join(out, "dataset_test.mpds")
        save_dataset(test_set, test_path)
        outputs.append({"path": test_path, "sha256": cf.sha256_file(test_path),
                        "n": test_set.n})

    manifest = _base_manifest(args, threads)
    manifest["config"] = dataclasses.asdict(gen_cfg)
    manifest["test_per_class"] = test_per_class
    manifest["outputs"] = outputs
    cf.write_manifest(out, manifest)
    with open(os.path.join(out, "config.echo.cfg"), "w", encoding="utf-8") as fh:
        fh.write(cf.render_config(gen_cfg, cf.GEN_SECTIONS))
    log.info("wrote %s (%d samples)", train_path, dataset.n)
    return EXIT_OK


def cmd_train(args, threads="auto"):
    from . import configfile as cf
    from .datagen import load_dataset
    from .errors import NumericError
    from .evalkit import emit_metrics
    from .trainer import Trainer, load_checkpoint

    dataset = load_dataset(args.dataset)
    eval_dataset = load_dataset(args.eval_dataset) if args.eval_dataset else None
    out = _ensure_out(args.out)

    if args.resume:
        trainer = load_checkpoint(args.resume, dataset, eval_dataset=eval_dataset)
        config = trainer.config
        for flag, value in (("--config", args.config), ("--seed", args.seed),
                            ("--ablate", args.ablate)):
            if value is not None:
                log.info("--resume: the checkpoint's config wins, ignoring %s", flag)
    else:
        sections = cf.parse_config_file(args.config) if args.config else {}
        source = args.config or "<defaults>"
        config, _ = cf.build_train_config(
            sections, source, dataset.num_classes, dataset.dim,
            seed_override=args.seed,
        )
        if args.ablate:
            config = config.ablated(args.ablate)
        trainer = Trainer(config, dataset, eval_dataset=eval_dataset)

    manifest = _base_manifest(args, threads)
    manifest["config"] = dataclasses.asdict(config)
    manifest["seed"] = config.seed
    manifest["ablate"] = args.ablate if not args.resume else None
    manifest["resume"] = os.path.abspath(args.resume) if args.resume else None
    manifest["dataset"] = {"path": os.path.abspath(args.dataset),
                           "sha256": cf.sha256_file(args.dataset)}
    if args.eval_dataset:
        manifest["eval_dataset"] = {"path": os.path.abspath(args.eval_dataset),
                                    "sha256": cf.sha256_file(args.eval_dataset)}
    cf.write_manifest(out, manifest)
    with open(os.path.join(out, "config.echo.cfg"), "w", encoding="utf-8") as fh:
        fh.write(cf.render_config(config, cf.TRAIN_SECTIONS))

    csv_path = os.path.join(out, "metrics.csv")
    try:
        while trainer.epoch < config.epochs:
            rec = trainer.train_epoch()
            log.info(
                "epoch %d/%d total=%.4f ce=%.4f pro=%.4f ins=%.4f pseudo_acc=%.4f",
                rec.epoch, config.epochs, rec.total, rec.l_ce, rec.l_pro,
                rec.l_ins, rec.pseudo_acc,
            )
            # re-emit after every epoch so an interrupted run leaves a
            # readable CSV behind
            emit_metrics([r.as_row() for r in trainer.records], csv_path, "csv")
        rebalance_report = trainer.rebalance_finetune() if config.rebalance_enabled else None
    except NumericError:
        dump = os.path.join(out, "abort_state.mpck")
        trainer.save_checkpoint(dump)
        log.error("aborting on non-finite loss; state dumped to %s", dump)
        raise

    rows = [rec.as_row() for rec in trainer.records]
    emit_metrics(rows, csv_path, "csv")
    emit_metrics(rows, os.path.join(out, "metrics.json"), "json")
    trainer.save_checkpoint(os.path.join(out, "checkpoint.mpck"))
    if rebalance_report is not None:
        with open(os.path.join(out, "rebalance_report.json"), "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(rebalance_report), fh, indent=2, sort_keys=True)
            fh.write("\n")
    log.info("finished %d epochs; outputs in %s", trainer.epoch, out)
    return EXIT_OK


def cmd_eval(args, threads="auto"):
    from . import configfile as cf
    from .datagen import load_dataset
    from .evalkit import calibration_error, knn_probe, linear_probe, score_corrections
    from .trainer import load_checkpoint

    dataset = load_dataset(args.dataset)
    trainer = load_checkpoint(args.checkpoint, dataset)
    out = _ensure_out(args.out)

    correction = trainer.clean_dataset()
    report = score_corrections(correction.labels, correction.rules, dataset)

    in_dist = ~dataset.is_ood
    v_train, _ = trainer.embed_all(dataset.features[in_dist])
    y_train = dataset.true_labels[in_dist]
    if args.eval_dataset:
        held_out = load_dataset(args.eval_dataset)
        v_test, _ = trainer.embed_all(held_out.features)
        y_test = held_out.true_labels
    else:
        # deterministic 80/20 split of the in-distribution samples
        cut = int(v_train.shape[0] * 0.8)
        v_train, v_test = v_train[:cut], v_train[cut:]
        y_train, y_test = y_train[:cut], y_train[cut:]

    knn_acc = knn_probe(v_train, y_train, v_test, y_test, k=trainer.config.probe_k)
    linear_acc = linear_probe(v_train, y_train, v_test, y_test,
                              epochs=50, lr=0.1, seed=trainer.config.seed)
    probs = trainer.classifier.forward_array(v_test)
    calib = calibration_error(probs.max(axis=1), probs.argmax(axis=1) == y_test)

    payload = {
        "correction": dataclasses.asdict(report),
        "probes": {"knn_acc": knn_acc, "linear_acc": linear_acc,
                   "k": trainer.config.probe_k},
        "calibration": {
            "error": calib.error,
            "bins": calib.bins,
            "bin_counts": calib.bin_counts.tolist(),
        },
    }
    with open(os.path.join(out, "eval_report.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")

    flat = []
    for group, entries in sorted(payload.items()):
        for key, value in sorted(entries.items()):
            flat.append((f"{group}.{key}", value))
    with open(os.path.join(out, "eval_report.csv"), "w", encoding="utf-8") as fh:
        fh.write("key,value\n")
        for key, value in flat:
            fh.write(f"{key},{value}\n")
    log.info("eval report written to %s", out)
    return EXIT_OK


_PLOTS = (
    ("loss_curves.svg", "training losses", ("l_ce", "l_pro", "l_ins", "total")),
    ("pseudo_accuracy.svg", "pseudo-label accuracy", ("pseudo_acc",)),
    ("ood_detection.svg", "OOD detection", ("ood_recall", "ood_precision")),
)


def cmd_plot(args, threads="auto"):
    from .errors import DataFormatError
    from .evalkit import parse_metrics_csv
    from .plotting import write_chart

    header, records = parse_metrics_csv(args.metrics)
    out = _ensure_out(args.out)
    for filename, title, columns in _PLOTS:
        missing = [c for c in ("epoch", *columns) if c not in header]
        if missing:
            raise DataFormatError(
                f"{args.metrics}: missing columns {', '.join(missing)} for {filename}"
            )
        epochs = [rec["epoch"] for rec in records]
        series = [(col, epochs, [rec[col] for rec in records]) for col in columns]
        write_chart(os.path.join(out, filename), series, title, "epoch", title)
    log.info("wrote %d plots to %s", len(_PLOTS), out)
    return EXIT_OK


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    threads = _pin_threads(argv)
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)

    from .errors import (
        ConfigError,
        ContractViolationError,
        DataFormatError,
        DegenerateInputError,
        DimensionError,
        NumericError,
        StateError,
        StructuralError,
    )

    try:
        return args.func(args, threads=threads)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (StructuralError, StateError, DimensionError,
            ContractViolationError, DegenerateInputError) as exc:
        log.error("state error: %s", exc)
        return EXIT_STATE
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except Exception as exc:  # pragma: no cover - last resort
        log.error("unexpected failure: %s", exc, exc_info=True)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    raise SystemExit(main())
