"""Command-line surface: generate, train, eval, predict, verify.

Every command is deterministic given its configuration and seed (at a fixed
thread count).  Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .config import ConfigError, LAYOUTS, ABLATIONS, load_config, spec_conflicts
from .data import Dataset, DataFormatError, frames_from_npy, generate_dataset, read_npy
from .model import Model, model_from_checkpoint
from .tensor import ShapeError
from .training import LAST_CHECKPOINT, TrainingDiverged, train


def write_pgm(path, img: np.ndarray):
    """Binary PGM (P5, maxval 255) of one [H, W] frame in [0, 1].

    Pixels quantize as floor(255 * value + 0.5), clamped to [0, 255]; the
    header is exactly ``P5\\n<w> <h>\\n255\\n`` followed by h * w bytes.
    """
    if img.ndim != 2:
        raise ValueError(f"pgm frames are 2-d, got shape {img.shape}")
    h, w = img.shape
    data = np.clip(np.floor(img * 255.0 + 0.5), 0.0, 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def _config(args) -> "RunConfig":
    cfg = load_config(args.config, args.set)
    for key, attr in getattr(args, "_flag_keys", {}).items():
        value = getattr(args, attr)
        if value is not None and value is not False:
            cfg.set(key, str(value).lower() if isinstance(value, bool) else str(value))
    return cfg


def _add_common(p, flag_keys):
    p.add_argument("--config", help="configuration file (section.key = value lines)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key")
    p.set_defaults(_flag_keys=flag_keys)


def cmd_generate(args) -> int:
    cfg = _config(args)
    spec = cfg.scene_spec()
    n_train = cfg.values["data.n_train"]
    n_test = cfg.values["data.n_test"]
    ds = generate_dataset(spec, n_train, n_test)
    ds.save(args.out)
    t, c, h, w = ds.train.shape[1:]
    print(f"wrote {args.out}: train={n_train} test={n_test} frames={t} "
          f"channels={c} size={h}x{w} sprites={spec.num_sprites} seed={spec.seed}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out_dir = Path(args.out)
    dataset = Dataset.load(args.data)
    tspec = cfg.train_spec()
    if args.resume:
        model, _ = model_from_checkpoint(out_dir / LAST_CHECKPOINT)
        diffs = spec_conflicts(cfg, model.spec)
        if diffs:
            raise ConfigError("configuration disagrees with the checkpoint: "
                              + "; ".join(diffs))
    else:
        model = Model(cfg.model_spec(), seed=cfg.values["model.seed"])
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.txt", "w") as f:
        f.write(f"# resolved configuration (version {__version__})\n")
        f.write(cfg.resolved_text())
    echo = print if args.quiet is False else None
    history = train(model, dataset, tspec, out_dir, resume=args.resume,
                    stop_after=args.stop_after, echo=echo)
    done = history["step"][-1] if history["step"] else 0
    print(f"finished at step {done}; parameters={model.num_parameters()} "
          f"best_eval_mse={history['best_mse']:.8e} run_dir={out_dir}")
    return 0


def _predictions(model: Model, split_u8: np.ndarray, batch: int = 16):
    fin, fout = model.spec.frames_in, model.spec.frames_out
    if split_u8.shape[1] < fin + fout:
        raise ValueError(f"sequences have {split_u8.shape[1]} frames, "
                         f"evaluation needs {fin + fout}")
    preds, truths = [], []
    for i in range(0, len(split_u8), batch):
        seqs = split_u8[i:i + batch].astype(np.float32) / 255.0
        preds.append(model.predict(seqs[:, :fin], steps=fout))
        truths.append(seqs[:, fin:fin + fout])
    return np.concatenate(preds), np.concatenate(truths)


def cmd_eval(args) -> int:
    cfg = _config(args)
    dataset = Dataset.load(args.data)
    split = dataset.split(args.split)
    if len(split) == 0:
        raise ValueError(f"split {args.split!r} is empty")

    if args.baseline == "copy-last":
        fin = cfg.values["model.frames_in"]
        fout = cfg.values["model.frames_out"]
        seqs = split.astype(np.float32) / 255.0
        pred = np.repeat(seqs[:, fin - 1:fin], fout, axis=1)
        truth = seqs[:, fin:fin + fout]
        source = "baseline:copy-last"
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint (or --baseline copy-last)")
        model, _ = model_from_checkpoint(args.checkpoint)
        diffs = spec_conflicts(cfg, model.spec)
        if diffs:
            raise ConfigError("configuration disagrees with the checkpoint: "
                              + "; ".join(diffs))
        pred, truth = _predictions(model, split)
        source = str(args.checkpoint)

    report = metrics.evaluate(pred, truth)
    report["split"] = args.split
    report["source"] = source
    for line in metrics.report_lines(report):
        print(line)
    if args.json:
        with open(args.json, "wb") as f:
            f.write(metrics.report_json(report))
        print(f"json report written to {args.json}")
    return 0


def cmd_predict(args) -> int:
    model, _ = model_from_checkpoint(args.checkpoint)
    fin = model.spec.frames_in
    steps = args.steps if args.steps is not None else model.spec.frames_out

    path = str(args.data)
    if path.endswith(".npy"):
        videos = frames_from_npy(read_npy(path))
    else:
        videos = Dataset.load(path).split(args.split)
    if not 0 <= args.index < len(videos):
        raise ValueError(f"sequence index {args.index} out of range "
                         f"(have {len(videos)})")
    seq = videos[args.index].astype(np.float32) / 255.0
    if seq.shape[0] < fin:
        raise ValueError(f"sequence has {seq.shape[0]} frames, model wants {fin}")

    pred = model.predict(seq[None, :fin], steps=steps)[0]  # [steps, C, H, W]
    have_truth = seq.shape[0] >= fin + steps
    truth = seq[fin:fin + steps] if have_truth else None

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    channels = pred.shape[1]
    written = 0
    for t in range(pred.shape[0]):
        for c in range(channels):
            tag = f"{t + 1:03d}" + (f"_c{c}" if channels > 1 else "")
            write_pgm(out_dir / f"pred_{tag}.pgm", pred[t, c])
            written += 1
            if truth is not None:
                write_pgm(out_dir / f"err_{tag}.pgm", np.abs(truth[t, c] - pred[t, c]))
                written += 1
    note = "" if have_truth else " (no ground truth for error frames)"
    print(f"wrote {written} images to {out_dir}{note}")
    return 0


def cmd_verify(args) -> int:
    from . import verify

    results = verify.run_all(args.suite)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="framecast",
        description="Video prediction with temporal, spatial and channel attention.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic sprite dataset")
    g.add_argument("--out", required=True, help="output dataset path")
    g.add_argument("--seed", type=int)
    g.add_argument("--frames", type=int)
    g.add_argument("--size", type=int)
    g.add_argument("--sprites", type=int)
    g.add_argument("--train-sequences", type=int, dest="train_sequences")
    g.add_argument("--test-sequences", type=int, dest="test_sequences")
    _add_common(g, {"data.seed": "seed", "data.frames": "frames",
                    "data.size": "size", "data.num_sprites": "sprites",
                    "data.n_train": "train_sequences",
                    "data.n_test": "test_sequences"})
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True, help="dataset file")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--ordering", choices=sorted(LAYOUTS))
    t.add_argument("--ablate", choices=sorted(k for k in ABLATIONS if k))
    t.add_argument("--ar", action="store_true", default=None,
                   help="train the causal-mask autoregressive regime")
    t.add_argument("--resume", action="store_true",
                   help="continue from the run directory's last checkpoint")
    t.add_argument("--stop-after", type=int, dest="stop_after",
                   help="stop this invocation after N steps (for resuming later)")
    t.add_argument("--quiet", action="store_true", default=False,
                   help="do not echo per-step log lines")
    _add_common(t, {"training.total_steps": "steps", "training.seed": "seed",
                    "model.order": "ordering", "model.ablate": "ablate",
                    "model.ar": "ar"})
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint (or baseline) on a split")
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--baseline", choices=("copy-last",),
                   help="score a trivial reference predictor instead of a model")
    e.add_argument("--json", help="also write the report as canonical JSON")
    _add_common(e, {})
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="export predicted frames as PGM images")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True, help="dataset file or .npy video array")
    r.add_argument("--split", choices=("train", "test"), default="test")
    r.add_argument("--index", type=int, default=0, help="sequence index")
    r.add_argument("--steps", type=int, help="prediction steps (AR models only)")
    r.add_argument("--out", required=True, help="image output directory")
    _add_common(r, {})
    r.set_defaults(func=cmd_predict)

    v = sub.add_parser("verify", help="run the oracle and invariant suites")
    v.add_argument("--suite", default="all",
                   choices=("all", "gradient", "oracle", "causality", "invariant"))
    _add_common(v, {})
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DataFormatError, TrainingDiverged, ShapeError, ValueError,
            TypeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
