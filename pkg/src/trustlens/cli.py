"""Command-line interface wiring the library into reproducible pipelines.

Every command is a pure function of its input files, flags, and seeds;
re-running with identical inputs produces byte-identical artifacts.  Exit
codes: 0 success, 2 bad arguments, 3 schema violation, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import calibration as cal
from . import cards, faithfulness, io, metrics, saliency
from .errors import NumericError, SchemaError
from .layout import TokenLayout
from .synthdet import DetectorConfig, default_layout, generate_tokens, random_scene, run_detector
from .types import Scene, SelectionConfig


def _add_layout_flags(p: argparse.ArgumentParser) -> None:
    d = default_layout()
    p.add_argument("--grid", type=int, default=d.grid_x, help="BEV cells per side")
    p.add_argument("--cell-size", type=float, default=d.cell_size, help="meters per BEV cell")
    p.add_argument("--cams", type=int, default=d.num_cams, help="number of cameras")
    p.add_argument("--cam-h", type=int, default=d.cam_h, help="camera token rows")
    p.add_argument("--cam-w", type=int, default=d.cam_w, help="camera token columns")


def _layout_from_flags(args) -> TokenLayout:
    return TokenLayout(
        grid_x=args.grid,
        grid_y=args.grid,
        cell_size=args.cell_size,
        num_cams=args.cams,
        cam_h=args.cam_h,
        cam_w=args.cam_w,
    )


def _add_detector_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--queries", type=int, default=64)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--weight-seed", type=int, default=7)
    p.add_argument("--score-sharpness", type=float, default=10.0)
    p.add_argument("--noise-std", type=float, default=0.05)


def _detector_config(args, layout: TokenLayout) -> DetectorConfig:
    return DetectorConfig(
        layers=args.layers,
        heads=args.heads,
        queries=args.queries,
        width=args.width,
        layout=layout,
        weight_seed=args.weight_seed,
        score_sharpness=args.score_sharpness,
    )


def _add_selection_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--top-k", type=int, default=32, help="top-K queries kept")
    p.add_argument("--tau", type=float, default=0.3, help="query confidence threshold")


def _add_scene_batch_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", action="append", default=[], help="scene.json (repeatable)")
    p.add_argument("--generate", type=int, default=0, help="generate N seeded scenes")
    p.add_argument("--seed", type=int, default=0, help="base seed for --generate")
    p.add_argument("--objects", type=int, default=5, help="objects per generated scene")
    p.add_argument("--extent", type=float, default=32.0, help="generated scene extent (m)")


def _scene_batch(args) -> list[Scene]:
    scenes = [io.read_scene(path) for path in args.scene]
    scenes += [
        random_scene(args.seed + i, n_objects=args.objects, extent=args.extent)
        for i in range(args.generate)
    ]
    if not scenes:
        raise ValueError("no scenes: pass --scene files and/or --generate N")
    return scenes


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_scene(args) -> int:
    scene = random_scene(args.seed, n_objects=args.objects, extent=args.extent)
    io.write_scene(args.out, scene)
    if args.layout_out:
        io.write_layout(args.layout_out, _layout_from_flags(args))
    print(f"wrote {args.out} ({len(scene.objects)} objects, seed {args.seed})")
    return 0


def cmd_detect(args) -> int:
    layout = io.read_layout(args.layout)
    scene = io.read_scene(args.scene)
    cfg = _detector_config(args, layout)
    tokens = generate_tokens(scene, layout, args.noise_std, width=cfg.width)
    dets, stack = run_detector(tokens, cfg, masked_modalities=args.mask)
    io.write_detections(args.out_detections, dets)
    io.write_attention(args.out_attention, stack)
    n_conf = sum(1 for d in dets if d.score >= 0.3)
    print(f"wrote {args.out_detections} and {args.out_attention} "
          f"({len(dets)} queries, {n_conf} above 0.3)")
    return 0


def _fused_map(args):
    layout = io.read_layout(args.layout)
    smap = saliency.fuse_attention_file(
        args.attention, layout, SelectionConfig(top_k=args.top_k, tau=args.tau), args.fusion
    )
    return smap, layout


def cmd_saliency(args) -> int:
    smap, layout = _fused_map(args)
    bev, cams = saliency.split_modalities(smap)
    io.write_json(
        args.out,
        {
            "schema": "saliency",
            "version": 1,
            "method": smap.method,
            "q_valid": smap.q_valid,
            "importance": [float(v) for v in smap.importance],
            "bev": [[float(v) for v in row] for row in bev],
            "cameras": [
                [[float(v) for v in row] for row in cam] for cam in cams
            ],
        },
    )
    if args.bev_csv:
        io.write_csv(
            args.bev_csv,
            [f"c{j}" for j in range(bev.shape[1])],
            [[float(v) for v in row] for row in bev],
        )
    if args.bev_pgm:
        grid = bev
        if args.upsample > 1:
            grid = saliency.upsample_bilinear(
                bev, bev.shape[0] * args.upsample, bev.shape[1] * args.upsample
            )
        io.write_pgm(args.bev_pgm, grid)
    print(f"wrote {args.out} (method {smap.method}, {smap.q_valid} queries)")
    return 0


def cmd_contribution(args) -> int:
    smap, layout = _fused_map(args)
    contrib = saliency.sensor_contribution(smap)
    io.write_json(
        args.out,
        {
            "schema": "contribution",
            "version": 1,
            "method": smap.method,
            "values": {k: float(v) for k, v in contrib.values.items()},
        },
    )
    shares = ", ".join(f"{k}={v:.3f}" for k, v in contrib.values.items())
    print(f"wrote {args.out} ({shares})")
    return 0


def cmd_faithfulness(args) -> int:
    scenes = _scene_batch(args)
    layout = io.read_layout(args.layout) if args.layout else default_layout()
    cfg = _detector_config(args, layout)
    sel = SelectionConfig(top_k=args.top_k, tau=args.tau)
    spec = faithfulness.PerturbationSpec(
        rho_grid=tuple(args.rho) if args.rho else faithfulness.DEFAULT_RHO_GRID,
        random_repeats=args.random_repeats,
        seed=args.seed,
    )
    comp = faithfulness.compare_methods(
        scenes,
        cfg,
        sel,
        spec=spec,
        methods=args.methods,
        noise_std=args.noise_std,
        jobs=args.jobs,
    )
    io.write_csv(
        args.out_curve, ["method", "direction", "rho", "dqs"], comp.curve_rows()
    )
    io.write_json(
        args.out_summary,
        {"schema": "faithfulness_summary", "version": 1, "n_scenes": comp.n_scenes,
         "methods": comp.summary_dict()},
    )
    print(f"{'method':12s} {'pos_auc':>8s} {'neg_auc':>8s}")
    for method, entry in comp.summary_dict().items():
        print(f"{method:12s} {entry['pos_auc']:8.2f} {entry['neg_auc']:8.2f}")
    print(f"wrote {args.out_curve} and {args.out_summary}")
    return 0


def cmd_robustness(args) -> int:
    rows = io.read_csv(args.table, ["model", "corruption", "severity", "score"])
    table = metrics.RobustnessTable(
        [(r[0], r[1], int(r[2]), float(r[3])) for r in rows]
    )
    if args.baseline not in table.models:
        raise SchemaError(
            f"baseline {args.baseline!r} not in table (models: {table.models})"
        )
    header, out_rows = metrics.rra_table(table, args.baseline)
    io.write_csv(args.out, header, out_rows)
    print(f"wrote {args.out} ({len(out_rows)} models x {len(header) - 2} corruptions)")
    return 0


def _detections_for_scenes(scenes, cfg, noise_std):
    out = []
    for scene in scenes:
        tokens = generate_tokens(scene, cfg.layout, noise_std, width=cfg.width)
        dets, _ = run_detector(tokens, cfg)
        out.append((scene, dets))
    return out


def cmd_calibrate(args) -> int:
    scenes = _scene_batch(args)
    layout = io.read_layout(args.layout) if args.layout else default_layout()
    cfg = _detector_config(args, layout)
    cal_scenes, _ = cal.split_scenes(scenes)
    pairs = _detections_for_scenes(cal_scenes, cfg, args.noise_std)
    data = cal.build_dataset(pairs, tau=args.tau)
    params = cal.fit(data, cls_method=args.cls_method)
    io.write_json(args.out, params.to_dict())
    print(
        f"fitted {args.cls_method} on {len(cal_scenes)} scenes "
        f"({data.n} detections); wrote {args.out}"
    )
    return 0


def cmd_eval_calibration(args) -> int:
    scenes = _scene_batch(args)
    layout = io.read_layout(args.layout) if args.layout else default_layout()
    cfg = _detector_config(args, layout)
    params = cal.CalibrationParams.from_dict(io.read_json(args.calibration, "calibration"))
    _, eval_scenes = cal.split_scenes(scenes)
    pairs = _detections_for_scenes(eval_scenes, cfg, args.noise_std)
    data = cal.build_dataset(pairs, tau=args.tau)

    identity = cal.CalibrationParams()
    before = {
        "d_ece": cal.d_ece(data, identity, bins=args.bins),
        "mca_xyz": cal.mca_xyz(data, identity),
        "mca_theta": cal.mca_theta(data, identity),
        "nll": cal.binary_nll(data.logits, data.matched.astype(float)),
    }
    after = {
        "d_ece": cal.d_ece(data, params, bins=args.bins),
        "mca_xyz": cal.mca_xyz(data, params),
        "mca_theta": cal.mca_theta(data, params),
        "nll": cal.binary_nll(
            cal.logit(params.calibrate_scores(data.scores)), data.matched.astype(float)
        ),
    }
    dqs_before, dqs_after = [], []
    for scene, dets in pairs:
        kept = [d for d in dets if d.score >= args.tau]
        dqs_before.append(metrics.dqs(kept, list(scene.objects)))
        dqs_after.append(metrics.dqs(cal.apply(params, kept), list(scene.objects)))
    accuracy = {
        "mean_dqs_uncalibrated": float(np.mean(dqs_before)),
        "mean_dqs_calibrated": float(np.mean(dqs_after)),
        "identical": dqs_before == dqs_after,
    }
    io.write_json(
        args.out,
        {
            "schema": "calibration_report",
            "version": 1,
            "n_scenes_calibration": len(scenes) - len(eval_scenes),
            "n_scenes_evaluation": len(eval_scenes),
            "uncalibrated": before,
            "calibrated": after,
            "accuracy": accuracy,
        },
    )
    print(
        f"D-ECE {before['d_ece']:.3f} -> {after['d_ece']:.3f} | "
        f"MCA_xyz {before['mca_xyz']:.3f} -> {after['mca_xyz']:.3f} | "
        f"MCA_theta {before['mca_theta']:.3f} -> {after['mca_theta']:.3f} | "
        f"DQS unchanged: {accuracy['identical']}"
    )
    print(f"wrote {args.out}")
    return 0


def cmd_card(args) -> int:
    if args.init:
        io.write_json(args.init, cards.template_manifest())
        print(f"wrote starter manifest {args.init}")
        return 0
    manifest = io.read_json(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    model_path = os.path.join(args.out_dir, "model_card.md")
    data_path = os.path.join(args.out_dir, "data_card.md")
    with open(model_path, "w", encoding="utf-8") as fh:
        fh.write(cards.render_model_card(manifest, args.manifest) + "\n")
    with open(data_path, "w", encoding="utf-8") as fh:
        fh.write(cards.render_data_card(manifest, args.manifest) + "\n")
    print(f"wrote {model_path} and {data_path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trustlens",
        description="Attention saliency, faithfulness, calibration, and robustness "
        "scoring on a synthetic multi-modal 3D detector.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="write a seeded random scene.json")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--objects", type=int, default=5)
    p.add_argument("--extent", type=float, default=32.0)
    p.add_argument("--out", required=True)
    p.add_argument("--layout-out", default=None, help="also write layout.json")
    _add_layout_flags(p)
    p.set_defaults(fn=cmd_gen_scene)

    p = sub.add_parser("detect", help="run the detector on a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--layout", required=True)
    p.add_argument("--out-detections", required=True)
    p.add_argument("--out-attention", required=True)
    p.add_argument("--mask", action="append", default=[],
                   help="modality to mask: lidar, camN, or cameras (repeatable)")
    _add_detector_flags(p)
    p.set_defaults(fn=cmd_detect)

    for name, fn, extra in (
        ("saliency", cmd_saliency, True),
        ("contribution", cmd_contribution, False),
    ):
        p = sub.add_parser(name, help=f"compute {name} from an attention file")
        p.add_argument("--attention", required=True)
        p.add_argument("--layout", required=True)
        p.add_argument("--fusion", default="mean", choices=saliency.FUSION_METHODS)
        p.add_argument("--out", required=True)
        _add_selection_flags(p)
        if extra:
            p.add_argument("--bev-csv", default=None, help="BEV grid CSV export")
            p.add_argument("--bev-pgm", default=None, help="BEV grid PGM export")
            p.add_argument("--upsample", type=int, default=1,
                           help="bilinear upsampling factor for the PGM export")
        p.set_defaults(fn=fn)

    p = sub.add_parser("faithfulness", help="perturbation curves over a scene batch")
    _add_scene_batch_flags(p)
    p.add_argument("--layout", default=None, help="layout.json (default: desk layout)")
    p.add_argument("--out-curve", required=True)
    p.add_argument("--out-summary", required=True)
    p.add_argument("--methods", nargs="+", default=list(faithfulness.METHODS),
                   choices=faithfulness.METHODS)
    p.add_argument("--rho", nargs="+", type=float, default=None)
    p.add_argument("--random-repeats", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    _add_selection_flags(p)
    _add_detector_flags(p)
    p.set_defaults(fn=cmd_faithfulness)

    p = sub.add_parser("robustness", help="RRA/mRRA table from robustness.csv")
    p.add_argument("--table", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_robustness)

    p = sub.add_parser("calibrate", help="fit calibration on the leading 30 percent of scenes")
    _add_scene_batch_flags(p)
    p.add_argument("--layout", default=None)
    p.add_argument("--cls-method", default="ps", choices=("ts", "ps", "identity"))
    p.add_argument("--out", required=True)
    _add_selection_flags(p)
    _add_detector_flags(p)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("eval-calibration", help="evaluate calibration on the trailing 70 percent split")
    _add_scene_batch_flags(p)
    p.add_argument("--layout", default=None)
    p.add_argument("--calibration", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_selection_flags(p)
    _add_detector_flags(p)
    p.set_defaults(fn=cmd_eval_calibration)

    p = sub.add_parser("card", help="render Model/Data cards from a manifest")
    p.add_argument("--manifest", default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--init", default=None, help="write a starter manifest and exit")
    p.set_defaults(fn=cmd_card)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "card" and not args.init and not args.manifest:
        print("card: pass --manifest or --init", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
