"""Command-line interface.

Subcommands: synth, train-clusternet, train-foveanet, infer, eval, sweep.
Options may also come from a flat ``key = value`` file given with
``--config``; flags on the command line win over the file. Exit status is 0
on success, 1 on a usage error and 2 on a runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

log = logging.getLogger("clusternet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def read_config(path) -> dict:
    """Flat ``key = value`` pairs; blank lines and ``#`` comments are skipped."""
    out = {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {path} not found")
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _apply_config(parser, values: dict):
    """Turn config strings into parser defaults, typed like the matching flags."""
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for k, v in values.items():
        a = actions.get(k)
        if a is None or k in ("help", "config", "command"):
            raise UsageError(f"unknown config key {k!r} for {parser.prog}")
        try:
            if isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                defaults[k] = _bool(v)
            elif a.nargs in ("+", "*"):
                conv = a.type or str
                defaults[k] = [conv(x) for x in v.replace(",", " ").split()]
            else:
                defaults[k] = (a.type or str)(v)
        except (TypeError, ValueError) as e:
            raise UsageError(f"config key {k}: {e}") from e
        if a.choices is not None and defaults[k] not in a.choices:
            raise UsageError(f"config key {k}: {v!r} is not one of {list(a.choices)}")
        a.required = False  # the file supplies it
    parser.set_defaults(**defaults)


def _thresholds(s: str):
    """``0.1,0.2`` or ``start:stop:step`` (stop inclusive)."""
    if ":" in s:
        a, b, c = (float(x) for x in s.split(":"))
        n = int(round((b - a) / c)) + 1
        return [round(a + i * c, 10) for i in range(n)]
    return [float(x) for x in s.replace(",", " ").split()]


def _add_common(p):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", dest="n_frames", type=int, default=5, choices=(1, 3, 5),
                   help="frames per input stack N")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="clusternet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="render a synthetic scene")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--height", type=int, default=1024)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--scene-frames", type=int, default=5, help="frames in the sequence")
    p.add_argument("--vehicles", type=int, default=40)
    p.add_argument("--stopped-fraction", type=float, default=0.25)
    p.add_argument("--parallax", type=int, default=6)

    for name in ("train-clusternet", "train-foveanet"):
        p = sub.add_parser(name, help=f"train {name.split('-')[1]}")
        _add_common(p)
        p.add_argument("--data", nargs="+", required=True, help="scene directories")
        p.add_argument("--val", nargs="*", default=[], help="validation scene directories")
        p.add_argument("--out", required=True, help="checkpoint path; the loss log goes next to it")
        p.add_argument("--width", type=int, default=16, help="feature maps per conv layer")
        p.add_argument("--steps", type=int, default=300)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int, default=8)
        p.add_argument("--optimizer", choices=("sgd_nesterov", "adam"))
        p.add_argument("--chip", type=int, default=256 if name == "train-clusternet" else 128)
        if name == "train-foveanet":
            p.add_argument("--loss", choices=("euclidean", "softmax_xent"), default="euclidean")

    p = sub.add_parser("infer", help="two-stage detection over a frame directory")
    _add_common(p)
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--cluster", required=True, help="ClusterNet checkpoint")
    p.add_argument("--fovea", required=True, help="FoveaNet checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tau-gate", type=float, default=0.1)
    p.add_argument("--threshold", type=float, help="fixed heatmap threshold (default: Otsu)")
    p.add_argument("--min-area", type=float, default=100.0)
    p.add_argument("--max-area", type=float, default=900.0)
    p.add_argument("--frame-ids", type=int, nargs="*", help="frames to process (default: all with a full stack)")

    p = sub.add_parser("eval", help="score detections against annotations")
    _add_common(p)
    p.add_argument("--detections", required=True, help="detections CSV")
    p.add_argument("--annotations", required=True, help="annotations CSV")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--radius", type=float, default=20.0)
    p.add_argument("--all-vehicles", action="store_true", help="keep stopped vehicles in the ground truth")
    p.add_argument("--frame-ids", type=int, nargs="*", help="frames to score (default: all with a full stack)")

    p = sub.add_parser("sweep", help="PR/ROC curves from saved heatmaps")
    _add_common(p)
    p.add_argument("--heatmaps", required=True, help="directory of heatmap_*.npy written by infer")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True, help="PR curve CSV")
    p.add_argument("--roc", help="ROC CSV")
    p.add_argument("--thresholds", type=_thresholds, default=_thresholds("0.1:0.9:0.1"))
    p.add_argument("--radius", type=float, default=20.0)
    p.add_argument("--min-area", type=float, default=100.0)
    p.add_argument("--max-area", type=float, default=900.0)
    p.add_argument("--all-vehicles", action="store_true")
    return ap


def parse(argv):
    ap = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((t for t in argv if not t.startswith("-")), None)
    if known.config and command:
        sub = ap._subparsers._group_actions[0].choices.get(command)
        if sub is not None:
            _apply_config(sub, read_config(known.config))
    return ap.parse_args(argv)


# --- commands ------------------------------------------------------------------

def _need(*paths):
    for p in paths:
        if not Path(p).exists():
            raise UsageError(f"{p} does not exist")


def cmd_synth(a):
    from clusternet.synthdata import SceneConfig, config_to_dict, generate

    cfg = SceneConfig(height=a.height, width=a.width, n_frames=a.scene_frames, stack_frames=a.n_frames,
                      n_vehicles=a.vehicles, stopped_fraction=a.stopped_fraction,
                      n_parallax=a.parallax, seed=a.seed)
    scene = generate(cfg)
    scene.write(a.out)
    with open(Path(a.out) / "scene.json", "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("wrote %d frames, %d annotations to %s", len(scene.frames), len(scene.annotations), a.out)


def _load_scene(d):
    from clusternet.synthdata import Annotations, load_frames

    _need(d, Path(d) / "annotations.csv")
    return load_frames(d), Annotations.from_csv(Path(d) / "annotations.csv")


def _train(a, which):
    from clusternet import models as M
    from clusternet.synthdata import chips

    _need(*a.data, *a.val)
    if which == "clusternet":
        spec = M.clusternet_spec(a.n_frames, width=a.width)
        model = M.Model(spec, M.CLUSTERNET_SIGMA, seed=a.seed)
        cfg = M.clusternet_defaults()
    else:
        out_ch = 2 if a.loss == "softmax_xent" else 1
        spec = M.foveanet_spec(a.n_frames, width=a.width, out_channels=out_ch)
        model = M.Model(spec, M.FOVEANET_SIGMA, loss=a.loss, seed=a.seed)
        cfg = M.foveanet_defaults()
    kw = {"max_steps": a.steps, "batch_size": a.batch_size, "seed": a.seed}
    if a.lr is not None:
        kw["lr"] = a.lr
    if a.optimizer is not None:
        kw["optimizer"] = a.optimizer
    cfg = replace(cfg, **kw)

    def samples(dirs):
        out = []
        for d in dirs:
            out += chips(_load_scene(d), chip=a.chip, n_frames=a.n_frames, d=model.d, sigma=model.sigma)
        return out

    data = samples(a.data)
    if not data:
        raise RuntimeError("no training chips contain a moving vehicle")
    val = samples(a.val) or None
    res = M.train(model, data, cfg, val=val,
                  progress=lambda h: log.info("step %d train %.4g val %s", h["step"], h["train_loss"], h["val_loss"]))
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    model.save(a.out, {"train": M.config_dict(cfg)})
    res.write_log(Path(a.out).with_suffix(".loss.csv"))


def cmd_infer(a):
    from clusternet import pipeline as P
    from clusternet.models import Model
    from clusternet.postprocess import write_detections_csv
    from clusternet.synthdata import load_frames, stack_at, write_png

    _need(a.frames_dir, a.cluster, a.fovea)
    cfg = P.RunConfig(frames_dir=a.frames_dir, cluster_ckpt=a.cluster, fovea_ckpt=a.fovea, out_dir=a.out,
                      n_frames=a.n_frames, tau_gate=a.tau_gate, threshold=a.threshold,
                      min_area=a.min_area, max_area=a.max_area, seed=a.seed)
    cluster = Model.load(cfg.cluster_ckpt, expect="clusternet")
    fovea = Model.load(cfg.fovea_ckpt, expect="foveanet")
    need = max(cluster.spec.n_frames, fovea.spec.n_frames)
    if need > cfg.n_frames:
        raise P.SpecMismatchError(f"checkpoints need {need}-frame stacks, --frames is {cfg.n_frames}")
    frames = load_frames(cfg.frames_dir)
    half = cfg.n_frames // 2
    ids = a.frame_ids if a.frame_ids else list(range(half, len(frames) - half))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    detsets, reports = [], []
    for f in ids:
        res = P.detect_frame(stack_at(frames, f, cfg.n_frames), cluster, fovea, cfg.tau_gate,
                             cfg.threshold, cfg.min_area, cfg.max_area)
        detsets.append(res.detections)
        reports.append({"frame_id": f, "proposed": res.report.proposed,
                        "total_blocks": res.report.total_blocks,
                        "fraction_skipped": res.report.fraction_skipped, "threshold": res.threshold})
        log.info("frame %d: %d detections, %.1f%% blocks skipped, %.2fs", f, len(res.detections),
                 100 * res.report.fraction_skipped, res.report.wall_time_s)
        write_png(out / f"heatmap_{f:05d}.png", P.heatmap_image(res.heatmap))
        np.save(out / f"heatmap_{f:05d}.npy", res.heatmap.unit().astype(np.float32))
    write_detections_csv(out / "detections.csv", detsets)
    skipped = float(np.mean([r["fraction_skipped"] for r in reports])) if reports else 0.0
    with open(out / "speedup.json", "w") as fh:
        json.dump({"tau_gate": cfg.tau_gate, "mean_fraction_skipped": skipped, "frames": reports},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ground_truth(ann, frame_ids, all_vehicles):
    return [ann.points(f, moving_only=not all_vehicles) for f in frame_ids]


def _stack_frames(ann, n_frames):
    """Annotated frames that have a full ``n_frames`` stack (what infer visits by default)."""
    if len(ann) == 0:
        return []
    half = n_frames // 2
    return list(range(half, int(ann.frame_id.max()) + 1 - half))


def cmd_eval(a):
    from clusternet.evaluation import evaluate, write_report_json
    from clusternet.postprocess import read_detections_csv
    from clusternet.synthdata import Annotations

    _need(a.detections, a.annotations)
    dets = read_detections_csv(a.detections)
    ann = Annotations.from_csv(a.annotations)
    ids = a.frame_ids if a.frame_ids else _stack_frames(ann, a.n_frames)
    # a frame missing from the detections file had no detections
    xy = [dets[f].xy if f in dets else np.zeros((0, 2)) for f in ids]
    rep = evaluate(xy, _ground_truth(ann, ids, a.all_vehicles), a.radius)
    write_report_json(a.out, rep, {"radius": a.radius, "frames": ids})
    log.info("P %.4f R %.4f F1 %.4f", rep.precision, rep.recall, rep.f1)


def cmd_sweep(a):
    from clusternet.evaluation import sweep, write_curve_csv, write_roc_csv

    _need(a.heatmaps, a.annotations)
    paths = sorted(Path(a.heatmaps).glob("heatmap_*.npy"))
    if not paths:
        raise UsageError(f"no heatmap_*.npy files in {a.heatmaps}")
    ids = [int(p.stem.split("_")[1]) for p in paths]
    maps = [np.load(p) for p in paths]
    from clusternet.synthdata import Annotations

    gts = _ground_truth(Annotations.from_csv(a.annotations), ids, a.all_vehicles)
    reports = sweep(maps, gts, sorted(a.thresholds), d=1, radius=a.radius,
                    min_area=a.min_area, max_area=a.max_area)
    write_curve_csv(a.out, reports)
    if a.roc:
        write_roc_csv(a.roc, reports, len(maps))


COMMANDS = {
    "synth": cmd_synth,
    "train-clusternet": lambda a: _train(a, "clusternet"),
    "train-foveanet": lambda a: _train(a, "foveanet"),
    "infer": cmd_infer,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - every runtime failure becomes exit status 2
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
