"""Command-line entry point: ``gfnet <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import bench, model, persist, train, verify
from .errors import InvalidArgumentError

log = logging.getLogger("gfnet")


class StageError(Exception):
    def __init__(self, stage, exc):
        self.stage = stage
        super().__init__(f"{stage} failed: {exc}")


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (KeyboardInterrupt, StageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _grid(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


_SYNTH_KEYS = {
    "size": None, "height": int, "width": int, "channels": int, "classes": int,
    "train": int, "test": int, "seed": int, "leak": float,
}
_SYNTH_FIELDS = {"classes": "num_classes", "train": "num_train", "test": "num_test"}


def parse_data_spec(text, base):
    """``synth:key=value,...`` on top of ``base`` (a :class:`SynthConfig`)."""
    kind, _, rest = text.partition(":")
    if kind != "synth":
        raise argparse.ArgumentTypeError(f"unsupported data source {kind!r} (only 'synth')")
    cfg = dataclasses.asdict(base)
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in _SYNTH_KEYS:
            raise argparse.ArgumentTypeError(f"bad synth option {item!r}; keys: {sorted(_SYNTH_KEYS)}")
        if key == "size":
            cfg["height"], cfg["width"] = _grid(value) if "x" in value else (int(value), int(value))
        else:
            cfg[_SYNTH_FIELDS.get(key, key)] = _SYNTH_KEYS[key](value)
    return train.SynthConfig(**cfg)


def _seed(args):
    env = os.environ.get("GFNET_SEED")
    return int(env) if env not in (None, "") else args.seed


# -- subcommands -----------------------------------------------------------------

def cmd_verify(args):
    try:
        verify.run(seed=args.seed)
    except verify.VerifyFailure as exc:
        print(f"FAIL {exc}", file=sys.stderr)
        return 1
    print("verify: all suites passed")
    return 0


def cmd_train(args):
    seed = _seed(args)
    cfg = _stage("config", model.preset, args.preset)
    base = train.SynthConfig(height=cfg.image_size[0], width=cfg.image_size[1],
                             channels=cfg.in_channels, num_classes=cfg.num_classes, seed=seed)
    data_cfg = parse_data_spec(args.data, base) if args.data else base
    if (data_cfg.height, data_cfg.width) != cfg.image_size:
        cfg = _stage("config", cfg.with_image_size, (data_cfg.height, data_cfg.width))
    if data_cfg.channels != cfg.in_channels or data_cfg.num_classes != cfg.num_classes:
        d = cfg.to_dict()
        d.update(in_channels=data_cfg.channels, num_classes=data_cfg.num_classes)
        cfg = model.ModelConfig.from_dict(d)
    task = _stage("data", train.gen_synth, data_cfg)
    tc = train.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                           weight_decay=args.weight_decay, seed=seed)

    def report(rec):
        print(json.dumps(rec), flush=True)

    params, trace = _stage("train", train.train_loop, cfg, task, tc,
                           trace_path=args.trace, on_epoch=report)
    meta = {"data": dataclasses.asdict(data_cfg), "train": dataclasses.asdict(tc), "final": trace[-1] if trace else {}}
    steps = tc.epochs * -(-data_cfg.num_train // tc.batch_size)
    _stage("save", persist.save_checkpoint, args.out, params, cfg, meta, steps)
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_eval(args):
    ckpt = _stage("load", persist.load_checkpoint, args.ckpt)
    cfg, params = ckpt.config, ckpt.params
    data = ckpt.meta.get("data")
    data_cfg = train.SynthConfig(**data) if data else train.SynthConfig(
        height=cfg.image_size[0], width=cfg.image_size[1], channels=cfg.in_channels,
        num_classes=cfg.num_classes)
    if args.data:
        data_cfg = parse_data_spec(args.data, data_cfg)
    if args.resolution:
        th, tw = args.resolution
        scale = cfg.image_size[0] // cfg.token_grids()[0][0]
        new_size = (th * scale, tw * scale)
        params, cfg = _stage("adapt", model.adapt_resolution, params, cfg, new_size)
        data_cfg = dataclasses.replace(data_cfg, height=new_size[0], width=new_size[1])
    task = _stage("data", train.gen_synth, data_cfg)
    acc = _stage("eval", train.accuracy, params, cfg, task.test_x, task.test_y)
    grid = "x".join(map(str, cfg.token_grids()[0]))
    print(f"accuracy {acc:.4f} on {len(task.test_y)} held-out samples (tokens {grid})")
    return 0


def cmd_bench(args):
    kinds = [bench.MixerKind.parse(k) for k in args.mixers.split(",")]
    results = _stage("bench", bench.run_sweep, kinds, args.tokens, args.dim, reps=args.reps)
    _stage("write", bench.write_csv, results, args.out)
    for r in results:
        print(f"{r.mixer.label:20s} L={r.tokens:6d} median {r.median_wall_time:.6f}s")
    groups = {}
    for r in results:
        groups.setdefault(r.mixer.label, []).append(r)
    for label, rs in groups.items():
        try:
            fit = bench.fit_power_law([r.tokens for r in rs], [r.median_wall_time for r in rs])
        except InvalidArgumentError as exc:
            print(f"{label:20s} no exponent: {exc}")
            continue
        print(f"{label:20s} exponent {fit.exponent:.3f} (rms log residual {fit.residual:.3f})")
    return 0


def cmd_export(args):
    doc = _stage("export", persist.export_filters_file, args.ckpt, args.out, args.bands)
    print(f"exported {len(doc['blocks'])} filters to {args.out}")
    return 0


def cmd_flops(args):
    cfg = _stage("config", model.preset, args.preset)
    if args.image_size:
        cfg = _stage("config", cfg.with_image_size, args.image_size)
    rep = model.flops_count(cfg)
    n = model.param_count(cfg)
    print(f"model        {cfg.name}")
    print(f"image        {cfg.image_size[0]}x{cfg.image_size[1]}")
    print(f"params       {n} ({n / 1e6:.2f}M)")
    for f in dataclasses.fields(rep):
        val = getattr(rep, f.name)
        print(f"{f.name:12s} {val}" + (f" ({val / 1e9:.3f}G)" if isinstance(val, int) else ""))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="gfnet", description="Global filter network toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify", help="run the invariant and oracle suite")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("train", help="train a preset on synthetic data")
    s.add_argument("--preset", default="toy")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=40)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--weight-decay", type=float, default=0.05)
    s.add_argument("--data", help="synth:size=32,classes=2,train=512,test=256,seed=0,leak=0.1")
    s.add_argument("--trace", help="write the per-epoch metric trace (JSON lines)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint, optionally at another token grid")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--resolution", type=_grid, help="first-stage token grid HxW")
    s.add_argument("--data")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="time token mixers against the number of tokens")
    s.add_argument("--mixers", default="global_filter,spatial_mlp")
    s.add_argument("--tokens", type=_int_list, default=[256, 1024, 4096])
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--reps", type=int, default=9)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("export-filters", help="dump filter spectra, kernels and band powers")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bands", type=int, default=persist.DEFAULT_BANDS)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("flops", help="print parameter and FLOP counts of a preset")
    s.add_argument("--preset", required=True)
    s.add_argument("--image-size", type=_grid)
    s.set_defaults(func=cmd_flops)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"gfnet: {exc}", file=sys.stderr)
        return 1
    except argparse.ArgumentTypeError as exc:
        parser.print_usage(sys.stderr)
        print(f"gfnet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
