"""Command line entry point.

Heavy modules are imported inside the command handlers so that
``--threads`` (or the EFFIPOSE_THREADS environment variable) can pin the
BLAS thread pools before numpy is loaded. Exit codes: 0 on success, 2 on
bad input, 3 when training diverges.
"""

import argparse
import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _configure_threads(value):
    if value is None:
        value = os.environ.get("EFFIPOSE_THREADS")
    if value in (None, ""):
        return
    count = int(value)
    if count < 1:
        raise ValueError(f"thread count must be positive, got {count}")
    for var in _THREAD_VARS:
        os.environ[var] = str(count)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="effipose",
        description="Single-person pose estimation: build, train and score models.")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="cap math library threads (default: EFFIPOSE_THREADS or library default)")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--variant", help="model variant name (RT, I, II, III, IV)")
    model.add_argument("--config", help="run config file; --variant is ignored when given")
    model.add_argument("--seed", type=int, default=None, help="seed for weight init and shuffling")
    model.add_argument("--no-low-branch", action="store_true",
                       help="drop the half-resolution backbone branch")
    model.add_argument("--no-skeleton", action="store_true",
                       help="drop the limb-field pass in front of the keypoint passes")
    model.add_argument("--passes", type=int, default=None, metavar="N",
                       help="number of keypoint passes (1-3)")
    model.add_argument("--no-upscaling", action="store_true",
                       help="emit stride-8 maps instead of upscaling to input size")

    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("summarize", parents=[common, model],
                       help="print the per-layer parameter and FLOP breakdown")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("train", parents=[common, model],
                       help="train on an annotation file")
    p.add_argument("--data", required=True, help="annotation file")
    p.add_argument("--out", required=True, help="output directory for config, metrics and checkpoint")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None, help="batch size (default: variant default)")
    p.add_argument("--lr-max", type=float, default=None, help="peak learning rate of the first cycle")
    p.add_argument("--sigma-schedule", default=None, metavar="E:S,...",
                   help="epoch:sigma pairs, e.g. 0:4,50:3,100:2")
    p.add_argument("--max-steps", type=int, default=None, help="stop after this many optimizer steps")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common, model],
                       help="score predictions against annotations (PCKh)")
    p.add_argument("--data", required=True, help="annotation file with ground truth")
    p.add_argument("--weights", help="weight file or training checkpoint to run inference with")
    p.add_argument("--predictions", help="score a prediction file instead of running the model")
    p.add_argument("--scales", default="1.0", help="comma-separated inference zoom factors")
    p.add_argument("--flip", action="store_true", help="average with a mirrored forward pass")
    p.add_argument("--out", help="directory to write the report and resolved config into")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", parents=[common, model],
                       help="write per-image keypoint predictions")
    p.add_argument("--data", required=True,
                   help="annotation file naming the images (keypoints may be zeros)")
    p.add_argument("--weights", required=True, help="weight file or training checkpoint")
    p.add_argument("--scales", default="1.0", help="comma-separated inference zoom factors")
    p.add_argument("--flip", action="store_true", help="average with a mirrored forward pass")
    p.add_argument("--out", default="-", help="prediction file to write ('-' for stdout)")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("check-scaling", parents=[common],
                       help="print the compound scaling factors and detection depths")
    p.set_defaults(func=_cmd_check_scaling)

    return parser


def _run_config(args):
    """Resolve a RunConfig from --config/--variant plus override flags."""
    from dataclasses import replace

    from .builder import variant_config
    from .config import RunConfig, load_run_config
    from .supervision import SigmaSchedule

    if args.config:
        run = load_run_config(args.config)
    elif args.variant:
        run = RunConfig(variant=variant_config(args.variant))
    else:
        raise ValueError("pass --variant or --config")

    changes = {}
    if args.no_low_branch:
        changes.update(low_res=None, low_scale=None)
    if args.no_skeleton:
        changes["skeleton_pass"] = False
    if args.passes is not None:
        changes["keypoint_passes"] = args.passes
    if args.no_upscaling:
        changes["upscaling"] = False
    if changes:
        run.variant = replace(run.variant, **changes).validate()

    if args.seed is not None:
        run.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        run.epochs = args.epochs
    if getattr(args, "batch", None) is not None:
        run.batch_size = args.batch
    if getattr(args, "lr_max", None) is not None:
        run.lr_max = args.lr_max
    if getattr(args, "sigma_schedule", None) is not None:
        run.sigma_schedule = SigmaSchedule.parse(args.sigma_schedule)
    return run


def _parse_scales(text):
    try:
        scales = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ValueError(f"bad --scales value {text!r}") from None
    if not scales or any(s <= 0 for s in scales):
        raise ValueError(f"bad --scales value {text!r}")
    return scales


def _cmd_summarize(args):
    from .accounting import summarize
    from .builder import build_variant, default_batch_size

    run = _run_config(args)
    model = build_variant(run.variant, seed=run.seed)
    report = summarize(model)
    print(report.table())
    v = run.variant
    res = f"{v.high_res[1]}x{v.high_res[0]}"
    print(f"\nvariant {v.name} at {res}: "
          f"{report.total_params:,} params, {report.total_flops:,} flops per image")
    print(f"default batch size: {default_batch_size(v.name)}")
    return 0


def _cmd_train(args):
    from .builder import build_variant
    from .config import save_run_config
    from .data import parse_annotations
    from .optimizer import train_loop

    run = _run_config(args)
    samples = parse_annotations(args.data)
    if not samples:
        raise ValueError(f"{args.data}: no annotations")
    os.makedirs(args.out, exist_ok=True)
    save_run_config(run, os.path.join(args.out, "config.txt"))
    model = build_variant(run.variant, seed=run.seed)

    def progress(step, _model):
        if step % 25 == 0:
            print(f"step {step}", flush=True)
        return False

    result = train_loop(
        model, samples,
        epochs=run.epochs,
        batch_size=run.resolved_batch_size,
        lr_max=run.lr_max,
        seed=run.seed,
        out_dir=args.out,
        schedule=run.sigma_schedule,
        paf_half_width=run.paf_half_width,
        max_steps=args.max_steps,
        step_callback=progress,
    )
    print(f"trained {result['steps']} steps, final loss {result['final_loss']:.6f}")
    print(f"checkpoint: {result['checkpoint']}")
    print(f"metrics: {result['metrics']}")
    return 0


def _load_model(run, weights_path):
    from .builder import build_variant
    from .weights import load_into_model

    model = build_variant(run.variant, seed=run.seed)
    load_into_model(model, weights_path)
    return model


def _cmd_eval(args):
    import numpy as np

    from .config import save_run_config
    from .data import parse_annotations
    from .evaluation import evaluate_samples, pckh, read_predictions

    run = _run_config(args)
    samples = parse_annotations(args.data)
    if not samples:
        raise ValueError(f"{args.data}: no annotations")

    if args.predictions and args.weights:
        raise ValueError("pass --weights or --predictions, not both")
    if args.predictions:
        _, preds = read_predictions(args.predictions, run.variant.num_keypoints)
        if len(preds) != len(samples):
            raise ValueError(
                f"{args.predictions}: {len(preds)} predictions for {len(samples)} annotations")
        report = pckh(preds,
                      np.stack([s.keypoints for s in samples]),
                      np.stack([s.head_box for s in samples]))
    elif args.weights:
        model = _load_model(run, args.weights)
        report = evaluate_samples(model, samples,
                                  scales=_parse_scales(args.scales), flip=args.flip)
    else:
        raise ValueError("pass --weights or --predictions")

    text = report.table()
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        save_run_config(run, os.path.join(args.out, "config.txt"))
    return 0


def _cmd_predict(args):
    from .data import parse_annotations
    from .evaluation import predict_sample, write_predictions

    run = _run_config(args)
    samples = parse_annotations(args.data)
    if not samples:
        raise ValueError(f"{args.data}: no annotations")
    model = _load_model(run, args.weights)
    scales = _parse_scales(args.scales)
    preds = [predict_sample(model, s, scales=scales, flip=args.flip) for s in samples]
    paths = [s.image_path for s in samples]
    if args.out == "-":
        for path, row in zip(paths, preds):
            print(path, " ".join(f"{v:.4f}" for v in row.reshape(-1)))
    else:
        write_predictions(args.out, paths, preds)
        print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def _cmd_check_scaling(args):
    from .backbones import backbone_scales
    from .builder import compound_scaling_factor, detection_depth

    print("phi  factor    target 2^phi  deviation")
    for phi in range(5):
        factor = compound_scaling_factor(phi)
        target = 2.0 ** phi
        dev = 100.0 * (factor - target) / target
        print(f"{phi}    {factor:9.6f} {target:12.1f}  {dev:+.2f}%")
    depths = "  ".join(f"{s}->{detection_depth(s)}" for s in backbone_scales())
    print(f"detection depth per backbone: {depths}")
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        _configure_threads(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    from .optimizer import TrainingDiverged

    try:
        code = args.func(args)
        return 0 if code is None else code
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
