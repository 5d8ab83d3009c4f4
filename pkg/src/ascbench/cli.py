"""``ascbench`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 training divergence. Diagnostics go to stderr; results go to files
under ``--out``.

Typical run::

    ascbench segment --input raw/ --out seg/
    ascbench augment --input seg/ --out aug/
    ascbench split   --input aug/ --out split/ --test-fraction 0.2
    ascbench extract --input split/ --out feats/ --repr mfcc
    ascbench train   --input feats/ --out run/
    ascbench eval    --input feats/ --model run/model.ascm --out run/
    ascbench report  --input run/results.json --out report/
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import evaluation as ev
from .audio_io import downmix_to_mono, read_wav
from .augmentation import augment_manifest, segment_manifest
from .config import REPRESENTATIONS, default_config, load_config
from .containers import write_png_gray
from .dataset import (DatasetManifest, build_manifest, check_balance, class_names, load_manifest, save_manifest,
                      split_train_test, data_accounting)
from .dsp import log_mel_spectrogram, render_spectrogram_image
from .errors import ConfigError, DataError, DivergenceError
from .fsutil import atomic_write_bytes, atomic_write_text
from .models import fit, load_model, save_model
from . import pipeline as pl

log = logging.getLogger("ascbench")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
MODEL_NAME = "model.ascm"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _add_common(p, input_help="input directory or manifest.jsonl"):
    p.add_argument("--config", type=Path, help="JSON run config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--input", type=Path, required=True, help=input_help)
    p.add_argument("--out", type=Path, required=True, help="output directory")


def make_parser():
    parser = _Parser(prog="ascbench", description="Acoustic scene classification benchmark pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("segment", help="cut recordings into fixed-length clips")
    _add_common(p)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("augment", help="add one noisy, time-shifted copy per clip")
    _add_common(p)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("split", help="group-aware stratified train/test split")
    _add_common(p)
    p.add_argument("--test-fraction", type=float)

    p = sub.add_parser("extract", help="compute feature files for every clip")
    _add_common(p)
    p.add_argument("--repr", choices=REPRESENTATIONS)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("embed-ingest", help="convert per-clip embedding CSVs into feature files")
    _add_common(p)
    p.add_argument("--embeddings", type=Path, required=True, help="directory of <clip>.csv files")

    p = sub.add_parser("train", help="train a classifier on a feature directory")
    _add_common(p, "feature directory")

    p = sub.add_parser("eval", help="evaluate a trained model on the test split")
    _add_common(p, "feature directory")
    p.add_argument("--model", type=Path, required=True)

    p = sub.add_parser("report", help="render results JSON files as Markdown and CSV tables")
    p.add_argument("--config", type=Path, help="JSON run config")
    p.add_argument("--input", type=Path, nargs="+", required=True, help="results.json files")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--manifest", type=Path, help="also write the dataset accounting table")

    p = sub.add_parser("render", help="spectrogram (and waveform) PNGs for every clip")
    _add_common(p)
    p.add_argument("--waveform", action="store_true", help="also render waveform images")
    return parser


def _run_config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else default_config()
    return cfg.with_overrides(representation=getattr(args, "repr", None), seed=getattr(args, "seed", None),
                              test_fraction=getattr(args, "test_fraction", None))


def _load_input_manifest(path: Path) -> DatasetManifest:
    if path.is_file():
        return load_manifest(path)
    if not path.is_dir():
        raise DataError(f"input not found: {path}")
    if (path / pl.MANIFEST_NAME).is_file():
        return load_manifest(path / pl.MANIFEST_NAME)
    return build_manifest(path)


def _jobs(args):
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    return args.jobs


def cmd_segment(args, cfg):
    m = segment_manifest(_load_input_manifest(args.input), args.out, cfg.segment_seconds, _jobs(args))
    save_manifest(m, args.out / pl.MANIFEST_NAME)
    log.info("segment: %d clips -> %s", len(m), args.out)


def cmd_augment(args, cfg):
    m = augment_manifest(_load_input_manifest(args.input), cfg.augment_spec(), args.out, _jobs(args))
    save_manifest(m, args.out / pl.MANIFEST_NAME)
    log.info("augment: %d entries -> %s", len(m), args.out)


def cmd_split(args, cfg):
    m = _load_input_manifest(args.input)
    report = check_balance(m)
    if not report.balanced:
        log.warning("split: %s", report)
    out = split_train_test(m, cfg.split["test_fraction"], cfg.seed)
    save_manifest(out, args.out / pl.MANIFEST_NAME)
    n_test = sum(e.split == "test" for e in out)
    log.info("split: %d train / %d test", len(out) - n_test, n_test)


def cmd_extract(args, cfg):
    m = _load_input_manifest(args.input)
    _, meta = pl.extract_features(m, cfg.feature_config(), args.out, _jobs(args), cfg.fingerprint)
    log.info("extract: %d %s files, shape %s, pipeline %s", meta["count"], meta["representation"],
             meta["shapes"][0], meta["fingerprint"])


def cmd_embed_ingest(args, cfg):
    m = _load_input_manifest(args.input)
    _, meta = pl.ingest_embeddings(m, args.embeddings, args.out, cfg.fingerprint)
    log.info("embed-ingest: %d embedding matrices, shape %s", meta["count"], meta["shapes"][0])


def _model_config(cfg, fdir):
    if fdir.representation != cfg.representation:
        cfg = replace(cfg, representation=fdir.representation)
    probe = cfg.model_config((1,))  # resolves resize before the real input shape is known
    return cfg.model_config(pl.prepared_shape(fdir.raw_shape, probe))


def cmd_train(args, cfg):
    fdir = pl.open_feature_dir(args.input)
    mc = _model_config(cfg, fdir)
    train_set = pl.load_feature_set(fdir, mc, "train")
    test_set = pl.load_feature_set(fdir, mc, "test")
    if not len(train_set) or not len(test_set):
        raise DataError(f"{args.input}: need both train and test entries (run split before extract)")
    lines = []

    def log_epoch(rec):
        lines.append(pl.dumps_line(rec))
        if "epoch" in rec:
            log.info("epoch %d: train loss %.4f acc %.3f | eval loss %.4f acc %.3f", rec["epoch"],
                     rec["train_loss"], rec["train_acc"], rec["eval_loss"], rec["eval_acc"])

    try:
        tm = fit(mc, train_set, test_set, cfg.train_config(), log_fn=log_epoch)
    finally:
        if lines:
            atomic_write_text(args.out / "train_log.jsonl", "".join(lines))
    atomic_write_bytes(args.out / MODEL_NAME, save_model(tm))
    log.info("train: %d params, best epoch %d -> %s", tm.n_params, tm.best_epoch, args.out / MODEL_NAME)


def cmd_eval(args, cfg):
    fdir = pl.open_feature_dir(args.input)
    if not args.model.is_file():
        raise DataError(f"model file not found: {args.model}")
    tm = load_model(args.model.read_bytes(), expected_fingerprint=fdir.fingerprint)
    names = class_names(tm.config.n_classes)
    test_set = pl.load_feature_set(fdir, tm.config, "test")
    train_set = pl.load_feature_set(fdir, tm.config, "train")
    cm, acc = ev.evaluate(tm, test_set, names)
    train_acc = ev.evaluate(tm, train_set, names)[1] if len(train_set) else 0.0
    rec = ev.results_record(tm, cm, train_acc, cfg.seed)
    rec["config_fingerprint"] = cfg.fingerprint
    atomic_write_text(args.out / "results.json", ev.dump_record(rec))
    log.info("eval: test accuracy %s, train accuracy %s", ev.format_percent(acc), ev.format_percent(train_acc))


def _display_name(rec):
    if rec["architecture"] == "autoencoder":
        return "Autoencoder"
    return "Small CNN"


def cmd_report(args, cfg):
    table = ev.ResultsTable()
    for path in args.input:
        if not path.is_file():
            raise DataError(f"results file not found: {path}")
        try:
            rec = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from None
        table.add(ev.row_from_record(rec, _display_name(rec)))
    atomic_write_text(args.out / "results.md", ev.render_results_table(table))
    atomic_write_text(args.out / "results.csv", ev.render_results_csv(table))
    if args.manifest:
        m = _load_input_manifest(args.manifest)
        atomic_write_text(args.out / "accounting.md", data_accounting(m, cfg.segment_seconds).to_markdown())
    log.info("report: %d rows -> %s", len(table.rows), args.out)


def cmd_render(args, cfg):
    m = _load_input_manifest(args.input)
    fcfg = replace(cfg, representation="spectrogram").feature_config()
    for e in m:
        src = m.resolve(e)
        if not src.is_file():
            raise DataError(f"missing audio file: {src}")
        clip = downmix_to_mono(read_wav(src))
        img = render_spectrogram_image(log_mel_spectrogram(clip, fcfg))
        write_png_gray(args.out / pl.output_name(e, ".png"), img.pixels, {"fingerprint": img.provenance})
        if args.waveform:
            write_png_gray(args.out / pl.output_name(e, "_wave.png"), pl.waveform_image(clip.mono))
    log.info("render: %d clips -> %s", len(m), args.out)


COMMANDS = {
    "segment": cmd_segment, "augment": cmd_augment, "split": cmd_split, "extract": cmd_extract,
    "embed-ingest": cmd_embed_ingest, "train": cmd_train, "eval": cmd_eval, "report": cmd_report,
    "render": cmd_render,
}


def run_command(argv) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    _setup_logging(args.verbose)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _run_config(args)
        for w in cfg.warnings:
            log.warning("config: %s", w)
        COMMANDS[args.command](args, cfg)
    except DivergenceError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    return EXIT_OK


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time (tests swap it)."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def _setup_logging(verbose):
    root = logging.getLogger("ascbench")
    if not any(isinstance(h, _StderrHandler) for h in root.handlers):
        h = _StderrHandler()
        h.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        root.addHandler(h)
    root.setLevel(logging.INFO if verbose else logging.WARNING)


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
