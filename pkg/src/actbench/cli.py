"""Command-line entry point (``actbench <command> ...``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .descriptor import DEFAULT_TAU, extract_features, write_features_csv
from .videoio import (
    DatasetManifest, ManifestEntry, Perturbation, VideoError, apply_perturbation, load_video,
    parse_range, read_manifest, save_video, synthesize_dataset, write_manifest,
)


def _param(text: str):
    key, sep, raw = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _method(args) -> harness.MethodSpec:
    hp = dict(args.param or [])
    if args.svm_c is not None:
        hp["C"] = args.svm_c
    if getattr(args, "tau", None) is not None:
        hp["tau"] = args.tau
    return harness.MethodSpec(args.method, hp)


def cmd_synth(args):
    m = synthesize_dataset(args.classes, args.per_class, args.seed, args.out,
                           size=args.size, n_frames=args.frames)
    print(f"wrote {len(m)} videos in {len(m.labels)} classes to {args.out}")


def cmd_perturb(args):
    if args.scale is not None:
        p = Perturbation.scale(args.scale)
    else:
        p = Perturbation("translate", shift_x=args.shift_x, shift_y=args.shift_y)
    src, dst = Path(args.input), Path(args.out)
    manifest_path = src / "manifest.csv"
    if manifest_path.exists():
        m = read_manifest(manifest_path)
        for e in m.entries:
            save_video(apply_perturbation(load_video(m.resolve(e)), p), dst / e.path)
        write_manifest(DatasetManifest([ManifestEntry(e.path, e.label, e.group)
                                        for e in m.entries], dst), dst / "manifest.csv")
        print(f"perturbed {len(m)} videos ({p.tag()}) into {dst}")
    else:
        save_video(apply_perturbation(load_video(src), p), dst)
        print(f"perturbed video ({p.tag()}) into {dst}")


def cmd_extract(args):
    fs = extract_features(load_video(args.input), args.tau)
    write_features_csv(fs, args.out)
    print(f"{len(fs)} feature vectors written to {args.out}")


def cmd_eval(args):
    rep = harness.run_loo(read_manifest(args.manifest), _method(args), args.protocol,
                          args.seed, workers=args.workers)
    rep.write(args.out)
    print(f"{rep.method} {rep.protocol} accuracy {rep.accuracy:.4f}")


def cmd_robustness(args):
    if args.scale:
        sweep = [Perturbation.scale(v) for v in parse_range(args.scale)]
    else:
        sweep = [Perturbation.translate(v) for v in parse_range(args.shift)]
    reports = harness.run_robustness(read_manifest(args.manifest), _method(args), sweep,
                                     args.protocol, args.seed, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r, p in zip(reports, sweep):
        r.write(out / f"{args.method}_{p.tag()}.json")
        print(f"{p.tag()} accuracy {r.accuracy:.4f}")
    harness.write_robustness_data(reports, out / f"{args.method}_robustness.dat")


def cmd_sweep(args):
    if args.grid:
        with open(args.grid) as fh:
            grid = json.load(fh)
    else:
        grid = harness.default_grid(args.method)
    best, table = harness.sweep_hyperparameters(read_manifest(args.manifest), args.method, grid,
                                                args.protocol, args.seed, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    best.write(out / f"{args.method}_best.json")
    with open(out / f"{args.method}_grid.json", "w") as fh:
        json.dump(table, fh, indent=1, default=float)
    for row in table:
        print(json.dumps(row["hyperparameters"], default=float), f"{row['accuracy']:.4f}")
    print(f"best accuracy {best.accuracy:.4f} with {json.dumps(best.hyperparameters, default=float)}")


def _evaluation_args(p, out_default):
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", required=True, choices=harness.METHODS)
    p.add_argument("--protocol", default="per_video", choices=("per_video", "per_group"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--svm-c", type=float, dest="svm_c")
    p.add_argument("--tie-rule", choices=("lowest",), default="lowest",
                   help="ties resolve to the lowest class / index / grid position (fixed)")
    p.add_argument("--param", type=_param, action="append", metavar="KEY=VALUE",
                   help="hyperparameter override; VALUE is parsed as JSON when possible")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=out_default)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="actbench", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic labelled dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True, dest="per_class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=40)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("perturb", help="scale or translate a video or a whole dataset")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scale", type=float)
    g.add_argument("--shift-x", type=float, dest="shift_x")
    p.add_argument("--shift-y", type=float, default=0.0, dest="shift_y")
    p.add_argument("--in", required=True, dest="input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("extract", help="per-pixel features of one video as CSV")
    p.add_argument("--in", required=True, dest="input")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="leave-one-out evaluation of one method")
    _evaluation_args(p, "report.json")
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="train clean, test under a perturbation sweep")
    _evaluation_args(p, "robustness")
    p.add_argument("--tau", type=float)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scale", help="start:stop:step of scale factors")
    g.add_argument("--shift", help="start:stop:step of translation fractions")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("sweep", help="exhaustive hyperparameter grid")
    _evaluation_args(p, "sweep")
    p.add_argument("--grid", help="JSON grid (dict of lists or list of dicts); "
                                  "defaults to the built-in grid of the method")
    p.set_defaults(func=cmd_sweep)
    return ap


def _glue_ranges(argv):
    # "-0.2:0.2:0.02" would otherwise be taken for an option
    out, it = [], iter(argv)
    for tok in it:
        if tok in ("--shift", "--scale", "--shift-x", "--shift-y"):
            nxt = next(it, None)
            if nxt is not None and nxt.startswith("-"):
                out.append(f"{tok}={nxt}")
                continue
            out.append(tok)
            if nxt is not None:
                out.append(nxt)
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_glue_ranges(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (VideoError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
