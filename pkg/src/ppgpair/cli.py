"""Command-line front end.

Every command accepts ``--config FILE`` (key=value), ``--set key=value``
overrides, ``--seed`` and ``--threads``. Logs go to stderr; data goes to
files only. Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric
failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as cfgmod
from . import formats, pairing, seeding
from .errors import ConfigError, DataError, NumericError
from .model import ModelBundle, load_checkpoint, save_checkpoint
from .signals import SampleSeries, downsample, minmax

log = logging.getLogger("ppgpair")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------- data helpers

def load_inputs(manifest_path, run: cfgmod.RunConfig):
    """Manifest rows plus normalized model inputs [N, L] at the model rate."""
    rows = formats.read_manifest(manifest_path)
    if not rows:
        raise DataError(f"{manifest_path}: manifest has no segments")
    raw = formats.load_segment_samples(manifest_path, rows)
    length = int(round(run.duration_s * run.target_hz))
    x = np.empty((len(rows), length), dtype=np.float32)
    for i, r in enumerate(rows):
        samples, rate = raw[r.segment_id]
        if rate != run.target_hz:
            samples = downsample(SampleSeries(samples, rate), run.target_hz).samples
        if samples.shape[0] != length:
            raise DataError(f"segment {r.segment_id} has {samples.shape[0]} samples at {run.target_hz} Hz, "
                            f"expected {length}")
        x[i] = minmax(samples)
    return rows, x


def load_targets(labels_path, rows, task: str) -> np.ndarray:
    labels = formats.read_labels(labels_path)
    missing = [r.segment_id for r in rows if r.segment_id not in labels]
    if missing:
        raise DataError(f"no label for {len(missing)} segment(s), e.g. {missing[0]}")
    y = np.array([labels[r.segment_id] for r in rows], dtype=np.float64)
    if task == "binary_classification":
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise DataError("binary_classification labels must be 0 or 1")
        return y.astype(np.int64)
    return y


def build_curriculum(rows, run: cfgmod.RunConfig, epochs_per_stage: int):
    index = pairing.index_from_manifest(rows)
    pairs = pairing.sort_curriculum(pairing.build_pairs(index, run.window_s, run.bad_threshold, run.eps_good))
    if not pairs:
        raise DataError("no quality pairs could be formed")
    return pairs, pairing.make_schedule(pairs, min(run.n_stages, len(pairs)), epochs_per_stage)


def _checkpoint(path, run):
    bundle = load_checkpoint(path)
    if bundle.config.input_length != int(round(run.duration_s * run.target_hz)):
        raise DataError(f"{path}: checkpoint expects {bundle.config.input_length}-sample inputs")
    return bundle


# ---------------------------------------------------------------- commands

def cmd_synth(args, run):
    from .synth import build_synthetic_corpus

    rows = build_synthetic_corpus(
        args.out, run.n_patients, run.segments_per_patient, (run.hr_min, run.hr_max), run.noise_policy,
        seeding.sub_seed(run.seed, "corpus"), sample_rate_hz=run.sample_rate_hz, duration_s=run.duration_s,
    )
    log.info("wrote %d segments to %s", len(rows), args.out)


def cmd_ingest(args, run):
    """Validate an external manifest and rewrite it at the model rate."""
    rows = formats.read_manifest(args.manifest)
    if not rows:
        raise DataError(f"{args.manifest}: manifest has no segments")
    raw = formats.load_segment_samples(args.manifest, rows)
    out = Path(args.out)
    (out / "signals").mkdir(parents=True, exist_ok=True)
    length = int(round(run.duration_s * run.target_hz))
    by_patient: dict[str, list] = {}
    for r in rows:
        samples, rate = raw[r.segment_id]
        if not np.all(np.isfinite(samples)):
            raise DataError(f"segment {r.segment_id} contains non-finite samples")
        low = downsample(SampleSeries(samples, rate), run.target_hz).samples
        if low.shape[0] != length:
            raise DataError(f"segment {r.segment_id} lasts {samples.shape[0] / rate:g} s, expected {run.duration_s:g} s")
        by_patient.setdefault(r.patient_id, []).append((r, low))
    new_rows = []
    for pid, items in by_patient.items():
        fname = f"signals/{pid}.ppgs"
        formats.write_ppgs(out / fname, np.concatenate([s for _, s in items]), run.target_hz)
        for k, (r, _) in enumerate(items):
            new_rows.append(formats.ManifestRow(r.segment_id, pid, r.t_start_s, r.quality_y, fname,
                                                k * length, length))
    formats.write_manifest(out / "manifest.csv", new_rows)
    if args.labels:
        labels = formats.read_labels(args.labels)
        known = {r.segment_id for r in rows}
        stray = sorted(set(labels) - known)
        if stray:
            raise DataError(f"labels for unknown segments, e.g. {stray[0]}")
        formats.write_labels(out / "labels.csv", labels)
    log.info("ingested %d segments from %d patients", len(new_rows), len(by_patient))


def cmd_pair(args, run):
    rows = formats.read_manifest(args.manifest)
    pairs, schedule = build_curriculum(rows, run, run.epochs_per_stage)
    pairing.write_pairs(args.pairs, pairs)
    pairing.write_schedule(args.schedule, schedule)
    log.info("%d pairs in %d stages", len(pairs), len(schedule.stages))


def cmd_pretrain(args, run):
    from .train import pretrain, write_loss_log

    rows, x = load_inputs(args.manifest, run)
    pairs = pairing.read_pairs(args.pairs)
    schedule = pairing.read_schedule(args.schedule, run.epochs_per_stage)
    signals = {r.segment_id: x[i] for i, r in enumerate(rows)}
    if args.init:
        bundle = _checkpoint(args.init, run)
    else:
        bundle = ModelBundle.initialize(run.encoder_config(x.shape[1]), seeding.sub_seed(run.seed, "init"))
    result = pretrain(bundle, pairs, schedule, signals, run.train_config())
    save_checkpoint(result.bundle, args.out)
    write_loss_log(args.loss_log or Path(args.out).with_suffix(".loss.csv"), result.loss_log)
    log.info("saved %s", args.out)


def cmd_finetune(args, run):
    from .train import FineTuneMode, InDomainData, finetune, write_metric_log

    mode = FineTuneMode(run.finetune_mode)
    rows, x = load_inputs(args.manifest, run)
    y = load_targets(args.labels, rows, run.task)
    bundle = _checkpoint(args.checkpoint, run)
    indomain = None
    if mode is FineTuneMode.INDOMAIN_THEN_LAST:
        pairs, schedule = build_curriculum(rows, run, run.indomain_epochs_per_stage)
        indomain = InDomainData(pairs, schedule, {r.segment_id: x[i] for i, r in enumerate(rows)})
    validation = None
    if args.val_manifest:
        vrows, vx = load_inputs(args.val_manifest, run)
        validation = (vx, load_targets(args.val_labels or args.labels, vrows, run.task))
    result = finetune(bundle, x, y, mode, run.task, run.train_config(run.finetune_learning_rate),
                      run.finetune_epochs, indomain=indomain, validation=validation)
    save_checkpoint(result.bundle, args.out)
    write_metric_log(args.metric_log or Path(args.out).with_suffix(".metrics.csv"), result.metric_log)
    log.info("saved %s", args.out)


def cmd_eval(args, run):
    from .evaluate import EvalRecord, metric, write_predictions

    bundle = _checkpoint(args.checkpoint, run)
    if bundle.head_kind is None:
        raise DataError(f"{args.checkpoint}: checkpoint has no task head")
    rows, x = load_inputs(args.manifest, run)
    y = load_targets(args.labels, rows, bundle.head_kind)
    pred = bundle.predict_targets(x[:, None, :])
    records = [EvalRecord(r.segment_id, r.quality_y, float(t), float(p)) for r, t, p in zip(rows, y, pred)]
    kind = "mae" if bundle.head_kind == "regression" else "f1"
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value", "n_records"])
        w.writerow([kind, repr(metric(records, kind)), len(records)])
    write_predictions(args.predictions or Path(args.out).with_suffix(".predictions.csv"), records)


def cmd_atcurve(args, run):
    from .evaluate import at_curve, read_predictions, render_report

    records = read_predictions(args.predictions)
    if not records:
        raise DataError("no prediction records")
    render_report(at_curve(records, run.n_bins, run.metric), args.out)


def cmd_embed(args, run):
    from .evaluate import export_embeddings
    from .signals import Segment

    bundle = _checkpoint(args.checkpoint, run)
    rows, x = load_inputs(args.manifest, run)
    segments = [Segment(r.segment_id, r.patient_id, r.t_start_s, x[i], run.target_hz, r.quality_y)
                for i, r in enumerate(rows)]
    export_embeddings(bundle, segments, args.out)


def cmd_gradcheck(args, run):
    from .gradcheck import OP_CASES, TOLERANCE, run_suite

    ops = args.ops or None
    if ops:
        unknown = sorted(set(ops) - set(OP_CASES))
        if unknown:
            raise ConfigError(f"unknown ops {unknown}; choose from {sorted(OP_CASES)}")
    results = run_suite(run.gradcheck_cases, run.seed, ops)
    worst = 0.0
    for r in results:
        worst = max(worst, r.max_rel_error)
        print(f"{r.name:24s} cases={r.cases:4d} max_rel_error={r.max_rel_error:.3e} {'ok' if r.passed else 'FAIL'}")
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    if not all(r.passed for r in results):
        raise NumericError("gradient check failed")


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "pair": cmd_pair, "pretrain": cmd_pretrain,
    "finetune": cmd_finetune, "eval": cmd_eval, "atcurve": cmd_atcurve, "embed": cmd_embed,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, help="root seed for all random sub-streams")
    common.add_argument("--threads", type=int, help="BLAS thread limit (1 gives bit-identical reruns)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ppgpair", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    p = add("synth", "generate a synthetic PPG corpus")
    p.add_argument("--out", required=True, help="output directory")
    p = add("ingest", "validate an external manifest and resample it to the model rate")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True, help="output directory")
    p = add("pair", "build quality pairs and the curriculum schedule")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs", required=True, help="output pairs CSV")
    p.add_argument("--schedule", required=True, help="output schedule CSV")
    p = add("pretrain", "contrastive pretraining over the curriculum")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--init", help="start from this checkpoint instead of a seeded initialization")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--loss-log")
    p = add("finetune", "attach a task head and fine-tune")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--val-manifest")
    p.add_argument("--val-labels")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--metric-log")
    p = add("eval", "score a fine-tuned checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="metrics CSV")
    p.add_argument("--predictions", help="per-record predictions CSV")
    p = add("atcurve", "artifact-tolerance curve from a predictions CSV")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True, help="report path; .csv and .svg are written")
    p = add("embed", "export encoder embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p = add("gradcheck", "finite-difference gradient check of every operation")
    p.add_argument("--ops", nargs="*", help="subset of operations")
    return parser


def resolve_config(args) -> cfgmod.RunConfig:
    overrides: dict[str, object] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    return cfgmod.load(args.config, overrides)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"ppgpair: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        run = resolve_config(args)
        log.info("resolved config:\n%s", run.render().rstrip())
        with threadpool_limits(limits=run.threads):
            COMMANDS[args.command](args, run)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("config error: %s", exc)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
