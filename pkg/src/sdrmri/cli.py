"""Command-line interface.

Subcommands: gen-data, calibrate, run, report, sdr, finetune-encoder, serve.
The `sdr` console script is a shortcut for the sdr subcommand.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdrmri",
                                     description="Diverse data-consistent MRI "
                                                 "reconstruction workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a browsable slice dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-slices", type=int, default=8)
    p.add_argument("--acceleration", type=float, default=8)
    p.add_argument("--contrast", type=float, default=0.5)
    _add_world_args(p)

    p = sub.add_parser("calibrate", help="bisect lesion contrast to a recall band")
    p.add_argument("--accel", type=float, default=8)
    p.add_argument("--band", type=float, nargs=2, default=(0.3, 0.7),
                   metavar=("LO", "HI"))
    p.add_argument("--out", help="write calibration JSON here")
    _add_world_args(p)

    p = sub.add_parser("run", help="run the full benchmark")
    p.add_argument("--out", required=True, help="run directory for report + figures")
    p.add_argument("--config", help="JSON or TOML config file")
    p.add_argument("--n-phantoms", type=int)
    p.add_argument("--accelerations", type=float, nargs="+")
    p.add_argument("--methods", nargs="+")
    p.add_argument("--contrast", type=float, help="skip calibration, use this contrast")
    p.add_argument("--encoder", help="robust encoder blob for the diversity loop")
    _add_sdr_args(p)
    _add_world_args(p)

    p = sub.add_parser("report", help="re-render figures from a stored report")
    p.add_argument("--run", help="run directory containing report.json")
    p.add_argument("--report", help="explicit report.json path")
    p.add_argument("--out", help="output directory (default: alongside the report)")

    p = sub.add_parser("sdr", help="generate a diverse set for one acquisition")
    _add_sdr_io_args(p)

    p = sub.add_parser("finetune-encoder", help="adversarially robust fine-tuning")
    p.add_argument("--out", required=True, help="output encoder blob")
    p.add_argument("--log", help="training log CSV")
    p.add_argument("--n-images", type=int, default=40)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--budget", type=float, default=0.5, help="perturbation radius")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=3e-4)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--inner-steps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contrast", type=float, default=0.5)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--demo-mode", action="store_true",
                   help="include ground-truth boxes in slice responses")
    p.add_argument("--max-jobs", type=int, default=2)
    p.add_argument("--budget", type=float, default=30.0, help="per-job seconds")
    p.add_argument("--ui-dir", help="static UI build to mount at /app")
    return parser


def _add_world_args(p: argparse.ArgumentParser):
    p.add_argument("--size", type=int, default=128, help="image size in pixels")
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--threshold", type=float, default=0.78, help="detector threshold")
    p.add_argument("--seed", type=int, default=7, help="master seed")


def _add_sdr_args(p: argparse.ArgumentParser):
    p.add_argument("--n-rec", type=int, default=3)
    p.add_argument("--n-opt", type=int, default=50)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--sigma", type=float, default=0.01, help="seed noise std")
    p.add_argument("--cg-iters", type=int, default=15, help="DC CG budget in the loop")
    p.add_argument("--cg-tol", type=float, default=3e-5)


def _add_sdr_io_args(p: argparse.ArgumentParser):
    p.add_argument("--input", required=True, help="acquisition JSON")
    p.add_argument("--init", required=True,
                   help="initial reconstruction (.png magnitude or .json complex)")
    p.add_argument("--boxes", required=True, help="boxes JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--encoder", help="encoder blob (default: reference encoder)")
    p.add_argument("--jacobi", action="store_true",
                   help="snapshot features per sweep instead of in-place updates")
    p.add_argument("--raw-gradient", action="store_true",
                   help="skip per-step gradient normalization")
    p.add_argument("--seed", type=int, default=7)
    _add_sdr_args(p)


def _world_config(args) -> "ExperimentConfig":
    from .harness import ExperimentConfig

    return ExperimentConfig(image_size=args.size, n_coils=args.coils,
                            noise_sigma=args.noise_sigma,
                            detector_threshold=args.threshold,
                            master_seed=args.seed)


def _load_config_file(path) -> dict:
    text = Path(path).read_bytes()
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib

        return tomllib.loads(text.decode())
    return json.loads(text)


def _cmd_gen_data(args) -> int:
    from .harness import generate_dataset

    manifest = generate_dataset(args.out, _world_config(args), n_slices=args.n_slices,
                                acceleration=args.acceleration,
                                lesion_contrast=args.contrast)
    print(f"wrote {len(manifest['slices'])} slices to {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    from .errors import CalibrationFailure
    from .harness import calibrate_lesion_contrast

    cfg = _world_config(args)
    try:
        contrast, history = calibrate_lesion_contrast(args.accel, tuple(args.band), cfg)
    except CalibrationFailure as e:
        print(f"calibration failed: {e}", file=sys.stderr)
        return 2
    print(f"calibrated lesion contrast: {contrast:.4f} "
          f"({len(history)} evaluations)")
    if args.out:
        Path(args.out).write_text(json.dumps({
            "contrast": contrast, "acceleration": args.accel, "band": list(args.band),
            "history": [{"contrast": c, "recall": r} for c, r in history],
        }, sort_keys=True, indent=1))
    return 0


def _cmd_run(args) -> int:
    from dataclasses import replace

    from .harness import ExperimentConfig, run_experiment
    from .recon import DcConfig
    from .sdr import SdrParams

    overrides = {}
    if args.config:
        overrides.update(_load_config_file(args.config))
    cfg = ExperimentConfig(
        image_size=overrides.get("image_size", args.size),
        n_coils=overrides.get("n_coils", args.coils),
        noise_sigma=overrides.get("noise_sigma", args.noise_sigma),
        detector_threshold=overrides.get("detector_threshold", args.threshold),
        master_seed=overrides.get("master_seed", args.seed),
        n_phantoms=overrides.get("n_phantoms", 20),
        accelerations=tuple(overrides.get("accelerations", (4, 8, 12))),
        methods=tuple(overrides.get("methods", ("baseline-1", "baseline-3seed",
                                                "sdr-m", "sdr-a"))),
        lesion_contrast=overrides.get("lesion_contrast"),
        encoder_path=overrides.get("encoder_path"),
        output_dir=args.out,
    )
    sdr_over = overrides.get("sdr", {})
    cfg = replace(cfg, sdr=SdrParams(
        n_rec=sdr_over.get("n_rec", args.n_rec),
        n_opt=sdr_over.get("n_opt", args.n_opt),
        radius=sdr_over.get("radius", args.radius),
        step_size=sdr_over.get("step_size", args.step_size),
        init_sigma=sdr_over.get("init_sigma", args.sigma),
        dc=DcConfig(cg_iters=sdr_over.get("cg_iters", args.cg_iters),
                    cg_tol=sdr_over.get("cg_tol", args.cg_tol)),
    ))
    if args.n_phantoms is not None:
        cfg = replace(cfg, n_phantoms=args.n_phantoms)
    if args.accelerations:
        cfg = replace(cfg, accelerations=tuple(args.accelerations))
    if args.methods:
        cfg = replace(cfg, methods=tuple(args.methods))
    if args.contrast is not None:
        cfg = replace(cfg, lesion_contrast=args.contrast)
    if args.encoder:
        cfg = replace(cfg, encoder_path=args.encoder)

    report = run_experiment(cfg)
    print(f"lesion contrast: {report.lesion_contrast:.4f}")
    for row in report.rows:
        rec = "-" if row.recall is None else f"{row.recall:.3f}"
        m = "-" if row.map_25 is None else f"{row.map_25:.3f}"
        print(f"  {row.acceleration:>4}x {row.method:<15} recall {rec:<6} "
              f"mAP@0.25 {m:<6} residual(max) {row.max_residual:.2e} "
              f"{row.seconds_per_image:6.2f} s/img")
    v = report.contract["violations"]
    print(f"contract violations: {v}")
    print(f"report written to {args.out}")
    return 0


def _cmd_report(args) -> int:
    from .report import render_figures_from_json

    if not args.run and not args.report:
        print("need --run or --report", file=sys.stderr)
        return 2
    report_path = Path(args.report) if args.report else Path(args.run) / "report.json"
    out = args.out or report_path.parent
    written = render_figures_from_json(report_path, out)
    for metric, fname in written.items():
        print(f"{metric}: {Path(out) / fname}")
    return 0


def _cmd_sdr(args) -> int:
    from .encoder import make_encoder
    from .recon import DcConfig
    from .sdr import SdrParams, sdr_generate
    from .serialize import (complex_from_json, load_acquisition, load_boxes,
                            load_encoder, read_magnitude_png, save_reconstruction_set)

    acq = load_acquisition(args.input)
    init_path = str(args.init)
    if init_path.endswith(".json"):
        x1 = complex_from_json(json.loads(Path(init_path).read_text()))
    else:
        mag, _vmax = read_magnitude_png(init_path)
        x1 = mag.astype(np.complex128)
    boxes = load_boxes(args.boxes)
    encoder = load_encoder(args.encoder) if args.encoder else make_encoder(seed=0)
    params = SdrParams(n_rec=args.n_rec, n_opt=args.n_opt, radius=args.radius,
                       step_size=args.step_size, init_sigma=args.sigma,
                       dc=DcConfig(cg_iters=args.cg_iters, cg_tol=args.cg_tol),
                       seed=args.seed,
                       normalize_gradient=not args.raw_gradient,
                       sweep="jacobi" if args.jacobi else "gauss-seidel")
    recon_set = sdr_generate(acq, x1, encoder, boxes, params)
    files = save_reconstruction_set(args.out, recon_set)
    print(f"wrote {len(recon_set.images)} reconstructions to {args.out}")
    print(f"mean pairwise distance: seed {recon_set.post_seed_mean_distance:.4f} "
          f"-> final {recon_set.final_mean_distance:.4f}")
    for f in files:
        print(f"  {f}")
    return 0


def _cmd_finetune_encoder(args) -> int:
    from .encoder import RobustTrainConfig, make_encoder, robust_finetune
    from .mri import make_phantom, random_phantom_spec
    from .serialize import save_encoder, write_training_log_csv

    images = []
    for k in range(args.n_images):
        phantom, _ = make_phantom(random_phantom_spec(
            args.image_size, args.image_size, seed=args.seed * 10_000 + k,
            lesion_contrast=args.contrast))
        images.append(np.abs(phantom))
    model = make_encoder(seed=args.seed, variant="trainable")
    cfg = RobustTrainConfig(perturbation_budget=args.budget,
                            inner_pgd_steps=args.inner_steps,
                            outer_steps=args.steps,
                            outer_learning_rate=args.learning_rate,
                            batch_size=args.batch_size)
    tuned, log = robust_finetune(model, images, cfg, seed=args.seed)
    save_encoder(args.out, tuned)
    if args.log:
        write_training_log_csv(args.log, log)
    print(f"trained {args.steps} steps; objective {log[0][1]:.4f} -> {log[-1][1]:.4f}")
    print(f"encoder written to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.data_dir, demo_mode=args.demo_mode, max_jobs=args.max_jobs,
                     time_budget_s=args.budget, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "calibrate": _cmd_calibrate,
    "run": _cmd_run,
    "report": _cmd_report,
    "sdr": _cmd_sdr,
    "finetune-encoder": _cmd_finetune_encoder,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


def sdr_main(argv=None) -> int:
    """Entry point for the `sdr` console script (the sdr subcommand directly)."""
    return main(["sdr", *(argv if argv is not None else sys.argv[1:])])


if __name__ == "__main__":
    raise SystemExit(main())
