"""Command-line entry point: ``shotnet {gen,train,detect,eval,sweep,viz}``.

Exit codes: 0 success, 1 usage or configuration error, 2 weights error,
3 input error, 4 internal error.

File formats (all little-endian):

  weights  b"NTW2" u32 version=1 u32 count, then per tensor
           u16 name_len, UTF-8 name, u8 rank, rank x u32 dims, float32 data
  frames   b"NFRM" u32 frames u16 width u16 height, then RGB u8 frames, row-major
  scenes / transitions / ground truth   text lines "start end" (inclusive)
  confidences   CSV "frame,single,all"
  metrics log   CSV "epoch,step,loss,val_f1"
  config        text lines "key=value"
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import datagen, evaluation, formats, infer, net, train
from .errors import ConfigError, FormatError, InputError, ShotNetError

EXIT_OK, EXIT_USAGE, EXIT_WEIGHTS, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3, 4


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _print_config(command, values):
    print(f"[{command}] resolved configuration:")
    for k, v in values.items():
        print(f"  {k} = {v}")


# --------------------------------------------------------------------------
# gen
# --------------------------------------------------------------------------

def write_procedural_corpus(directory, n_shots, seed, shot_frames=datagen.SEGMENT_LEN, n_real=2):
    """Procedural shots plus ``n_real`` annotated multi-shot videos under ``real/``."""
    directory = Path(directory)
    rng = np.random.default_rng([seed, 1])
    for i in range(n_shots):
        formats.save_frames(directory / f"shot_{i:04d}.nfrm", datagen.synthesize_shot(rng, shot_frames))
    lines = []
    for v in range(n_real):
        parts, spans, pos = [], [], 0
        for k in range(4):
            shot = datagen.synthesize_shot(rng, int(rng.integers(60, 120)))
            if k:
                if rng.random() < 0.5:
                    spans.append((pos, pos))
                else:
                    t = int(rng.integers(datagen.MIN_DISSOLVE, 13))
                    a, b = parts[-1][-t:], shot[:t]
                    alpha = datagen.dissolve_alphas(t)[:, None, None, None]
                    parts[-1] = parts[-1][:-t]
                    pos -= t
                    parts.append(((1 - alpha) * a + alpha * b).astype(np.float32))
                    spans.append((pos, pos + t - 1))
                    pos += t
                    shot = shot[t:]
            parts.append(shot)
            pos += len(shot)
        vid = f"real_{v:03d}"
        formats.save_frames(directory / "real" / f"{vid}.nfrm", np.concatenate(parts))
        lines += [f"{vid} {s} {e}\n" for s, e in spans]
    if n_real:
        formats.atomic_write(directory / "real" / "annotations.txt", "".join(lines))


def _require_dir(path):
    if not Path(path).is_dir():
        raise CommandError(EXIT_INPUT, f"corpus directory {path} does not exist")


def cmd_gen(args):
    try:
        mix = tuple(float(x) for x in args.mix.split(","))
    except ValueError:
        raise CommandError(EXIT_USAGE, f"--mix must be comma-separated numbers, got {args.mix!r}") from None
    _print_config("gen", {"corpus": args.corpus, "count": args.count, "seed": args.seed, "out": args.out,
                          "mix": mix, "length": args.length, "procedural_shots": args.procedural_shots})
    if args.procedural_shots:
        write_procedural_corpus(args.corpus, args.procedural_shots, args.seed, args.shot_frames)
    _require_dir(args.corpus)
    try:
        corpus = train.load_corpus(args.corpus, args.segment_len)
    except FormatError as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from exc
    cfg = datagen.SamplerConfig(mix=mix, length=args.length)
    stream = datagen.batch_sampler(corpus.real, corpus.shots, np.random.default_rng(args.seed), cfg)
    out = Path(args.out)
    labels = []
    for i in range(args.count):
        ex = next(stream)
        name = f"ex_{i:05d}"
        formats.save_frames(out / f"{name}.nfrm", ex.frames)
        mid = int(np.flatnonzero(ex.label.single_frame)[0])
        labels.append(f"{name} {ex.kind} {ex.span[0]} {ex.span[1]} {mid}\n")
    formats.atomic_write(out / "labels.txt", "".join(labels))
    print(f"wrote {args.count} examples to {out}")


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def cmd_train(args):
    text = Path(args.config).read_text() if args.config else ""
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError([f"--set expects key=value, got {item!r}"])
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    cfg = train.parse_config(text, overrides)
    _print_config("train", {"corpus": args.corpus, "out": args.out, "log": args.log,
                            **{k: train._format_value(v) for k, v in vars(cfg).items()}})
    _require_dir(args.corpus)
    try:
        corpus = train.load_corpus(args.corpus, cfg.segment_len)
    except FormatError as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from exc
    train_part, val_part = train.split_corpus(corpus)
    val_set = train.make_validation_set(val_part, cfg)
    result = train.train_loop(cfg, train_part, val_set=val_set)
    formats.save_weights(args.out, result.best_params)
    if args.log:
        formats.atomic_write(args.log, train.format_log(result.log))
    print(f"best val_f1 {result.state.best_f1:.4f}; weights written to {args.out}")


# --------------------------------------------------------------------------
# detect / viz
# --------------------------------------------------------------------------

def _load_model(path):
    try:
        params = formats.load_weights(path)
        cfg = net.config_from_params(params)
    except (FormatError, InputError) as exc:
        raise CommandError(EXIT_WEIGHTS, f"invalid weights {path}: {exc}") from exc
    return params, cfg


def _load_input(path, frame_scale=1):
    try:
        frames = formats.load_video(path)
    except (FormatError, OSError) as exc:
        raise CommandError(EXIT_INPUT, f"cannot read input {path}: {exc}") from exc
    if len(frames) == 0:
        raise CommandError(EXIT_INPUT, f"input {path} has no frames")
    try:
        return datagen.downsample(frames, frame_scale)
    except InputError as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from exc


def cmd_detect(args):
    _print_config("detect", {"weights": args.weights, "input": args.input, "threshold": args.threshold,
                             "scenes": args.scenes, "confidences": args.confidences, "viz": args.viz,
                             "window": args.window, "frame_scale": args.frame_scale})
    if not 0 < args.threshold < 1:
        raise CommandError(EXIT_USAGE, "--threshold must be in (0, 1)")
    params, cfg = _load_model(args.weights)
    frames = _load_input(args.input, args.frame_scale)
    pred = infer.predict_video(frames, params, cfg, window=args.window)
    scenes = infer.predictions_to_scenes(pred.single, args.threshold)
    outputs = [(args.scenes, formats.format_intervals(scenes).encode())]
    if args.confidences:
        outputs.append((args.confidences, formats.format_confidences(pred.single, pred.all).encode()))
    if args.viz:
        outputs.append((args.viz, formats.encode_ppm(infer.visualize_predictions(frames, pred.single, pred.all))))
    for path, data in outputs:
        formats.atomic_write(path, data)
    print(f"{len(frames)} frames, {len(scenes)} scenes")


def cmd_viz(args):
    _print_config("viz", {"input": args.input, "confidences": args.confidences, "out": args.out})
    frames = _load_input(args.input)
    try:
        single, all_ = formats.load_confidences(args.confidences)
    except FormatError as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from exc
    if len(single) != len(frames):
        raise CommandError(EXIT_INPUT, f"{len(frames)} frames but {len(single)} confidence rows")
    formats.save_ppm(args.out, infer.visualize_predictions(frames, single, all_))


# --------------------------------------------------------------------------
# eval / sweep
# --------------------------------------------------------------------------

def _load_intervals(path):
    try:
        return formats.load_intervals(path)
    except FormatError as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from exc


def cmd_eval(args):
    _print_config("eval", {"pred": args.pred, "gt": args.gt, "tol": args.tol, "report_csv": args.report_csv})
    try:
        rep = evaluation.match_and_score(_load_intervals(args.pred), _load_intervals(args.gt), args.tol)
    except InputError as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from exc
    sys.stdout.write(rep.as_text())
    if args.report_csv:
        formats.atomic_write(args.report_csv, rep.as_csv())


def cmd_sweep(args):
    _print_config("sweep", {"confidences": args.confidences, "gt": args.gt, "grid": args.grid, "tol": args.tol,
                            "report_csv": args.report_csv})
    try:
        grid = evaluation.parse_grid(args.grid)
        if any(not 0 < t < 1 for t in grid):
            raise InputError("grid thresholds must lie in (0, 1)")
        single, _ = formats.load_confidences(args.confidences)
        best_th, rep = evaluation.threshold_sweep(single, _load_intervals(args.gt), grid, args.tol)
    except (InputError, FormatError) as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from exc
    sys.stdout.write(rep.as_text())
    if args.report_csv:
        formats.atomic_write(args.report_csv, rep.as_csv())


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="shotnet", description=__doc__.split("\n")[0],
                epilog=__doc__.split("\n", 2)[2], formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="render training sequences from a shot corpus")
    g.add_argument("--corpus", required=True, help="directory of *.nfrm shots (optional real/ subdir)")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory: ex_NNNNN.nfrm + labels.txt")
    g.add_argument("--mix", default="0.15,0.35,0.50", help="real,cut,dissolve fractions")
    g.add_argument("--length", type=int, default=datagen.SEQ_LEN)
    g.add_argument("--segment-len", type=int, default=datagen.SEGMENT_LEN)
    g.add_argument("--procedural-shots", type=int, default=0,
                   help="first write this many procedural shots (and annotated real videos) into --corpus")
    g.add_argument("--shot-frames", type=int, default=datagen.SEGMENT_LEN)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True, help="best weights (NTW2)")
    t.add_argument("--log", help="metrics CSV")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="predict transitions and scenes for a video")
    d.add_argument("--weights", required=True)
    d.add_argument("--input", required=True, help="NFRM file or directory of P6 .ppm frames")
    d.add_argument("--threshold", type=float, default=0.5)
    d.add_argument("--scenes", required=True)
    d.add_argument("--confidences")
    d.add_argument("--viz")
    d.add_argument("--window", type=int, default=net.WINDOW)
    d.add_argument("--frame-scale", type=int, default=1)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", help="tolerance F1 of predicted vs ground-truth transitions")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--tol", type=int, default=2)
    e.add_argument("--report-csv")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="best threshold for a confidence CSV")
    s.add_argument("--confidences", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--grid", default="0.05:0.95:0.05", help="start:stop:step or comma list")
    s.add_argument("--tol", type=int, default=2)
    s.add_argument("--report-csv")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("viz", help="render the prediction visualisation")
    v.add_argument("--input", required=True)
    v.add_argument("--confidences", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ShotNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
