"""``dsm`` command line: match, eval, train-toy, refine, gradcheck."""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__, gradcheck, io, losses, matcher, refinement, train
from .errors import DSMError, TrainingDiverged
from .metrics import compute_metrics, split_metrics
from .params import META_PREFIX, ParamSet, load_checkpoint, save_checkpoint

log = logging.getLogger("dsmstereo")


def _load_params(path, config):
    """Checkpoint parameters, or a fresh seed-0 initialization when ``path`` is None."""
    fresh = matcher.init_params(config, seed=0)
    if path is None:
        return ParamSet(fresh)
    params = load_checkpoint(path)
    missing = sorted(set(fresh) - set(params))
    if missing:
        raise DSMError(f"checkpoint {path} lacks tensors required by the config: {', '.join(missing)}")
    for name, value in fresh.items():
        if params[name].shape != value.shape:
            raise DSMError(f"checkpoint tensor {name} has shape {params[name].shape}, config needs {value.shape}")
    stored = params.get(META_PREFIX + "disparities")
    if stored is not None and int(stored[0]) != config.disparities:
        log.warning("checkpoint was trained with %d disparities, config uses %d", int(stored[0]), config.disparities)
    return params


def _makedirs(path):
    if path:
        os.makedirs(path, exist_ok=True)
    return path


def cmd_match(args):
    config = matcher.read_config(args.config)
    left = io.read_image(args.left)
    right = io.read_image(args.right)
    params = _load_params(args.ckpt, config)
    out = matcher.match(left, right, config, params)
    io.write_pfm(args.out_disp, out.disparity_refined)
    if args.out_match:
        io.write_pfm(args.out_match, out.matchability)
    if _makedirs(args.heatmaps):
        top = config.disparities - 1
        io.write_pgm_heatmap(os.path.join(args.heatmaps, "disparity_init.pgm"), out.disparity_init, (0, top))
        io.write_pgm_heatmap(os.path.join(args.heatmaps, "disparity_refined.pgm"), out.disparity_refined, (0, top))
        io.write_pgm_heatmap(os.path.join(args.heatmaps, "matchability.pgm"), out.matchability,
                             (0, np.log(config.disparities)))
        io.write_pgm(os.path.join(args.heatmaps, "matchable.pgm"), (out.logscale < 0).astype(float))
    if _makedirs(args.figures):
        from . import report

        report.match_figure(os.path.join(args.figures, "match.png"), left, out, config.disparities)
    matchable = float(np.mean(out.logscale < 0))
    print(f"disparity range [{out.disparity_refined.min():.3f}, {out.disparity_refined.max():.3f}] px, "
          f"mean matchability {out.matchability.mean():.4f} nats, matchable {100 * matchable:.2f} %")
    return 0


def cmd_eval(args):
    pred = io.read_pfm(args.pred).astype(np.float64)
    gt = io.read_pfm(args.gt).astype(np.float64)
    mask = losses.valid_mask(gt, args.max_disp)
    if args.logscale:
        logscale = io.read_pfm(args.logscale).astype(np.float64)
        report_ = split_metrics(pred, gt, logscale, mask)
    else:
        logscale = None
        report_ = compute_metrics(pred, gt, mask)
    print(report_.format_text())
    if args.csv:
        print(report_.csv_header())
        print(report_.csv_row())
    if args.figure:
        from . import report

        report.error_figure(args.figure, pred, gt, mask > 0, logscale)
    return 0


def cmd_train_toy(args):
    config = train.read_train_config(args.config)
    try:
        result = train.train(config, seed=args.seed, checkpoint_path=args.out)
    except TrainingDiverged as exc:
        if exc.params is not None:
            save_checkpoint(args.out, exc.params)
        print(f"training diverged at step {exc.step}: {exc}; last good parameters saved to {args.out}",
              file=sys.stderr)
        return 3
    save_checkpoint(args.out, result.params)
    train.write_history(args.history, result.history)
    if _makedirs(args.figures):
        from . import report

        report.history_figure(os.path.join(args.figures, "history.png"), result.history)
    last = result.history[-1] if result.history else None
    if last is not None:
        print(f"{len(result.steps)} steps, final epoch total loss {last[4]:.6f}, train EPE {last[5]:.4f} px")
    return 0


def cmd_refine(args):
    disp = io.read_pfm(args.disp).astype(np.float64)
    left = io.read_image(args.left)
    match_map = io.read_pfm(args.match).astype(np.float64)
    params = load_checkpoint(args.ckpt)
    disparities = args.disparities
    if disparities is None:
        stored = params.get(META_PREFIX + "disparities")
        if stored is None:
            raise DSMError("checkpoint does not record its disparity count; pass --disparities")
        disparities = int(stored[0])
    raw = refinement.extract_diffusion_kernels(disp, left, match_map, params, disparities,
                                               use_matchability=not args.no_matchability)
    refined = refinement.cspn_refine(disp, refinement.normalize_affinities(raw), args.iters)
    io.write_pfm(args.out, refined)
    print(f"refined {disp.shape[0]}x{disp.shape[1]} map over {args.iters} iterations, "
          f"mean change {np.abs(refined - disp).mean():.4f} px")
    return 0


def cmd_gradcheck(args):
    names = list(gradcheck.OPS) if args.op == "all" else [args.op]
    results = gradcheck.run_suite(names, trials=args.trials, seed=args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max rel err {r.max_error:.3e}  tol {r.tolerance:.0e}  "
              f"{r.trials} trials  {r.seconds:.2f}s  {status}")
    return 0 if all(r.passed for r in results) else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="dsm", description="Stereo matching with matchability-aware refinement.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="estimate disparity for a rectified image pair")
    p.add_argument("--left", required=True, help="left image (binary PGM/PPM)")
    p.add_argument("--right", required=True, help="right image (binary PGM/PPM)")
    p.add_argument("--config", required=True, help="matcher key=value file")
    p.add_argument("--ckpt", help="checkpoint; untrained seed-0 weights when omitted")
    p.add_argument("--out-disp", required=True, help="refined disparity (PFM)")
    p.add_argument("--out-match", help="entropy matchability (PFM)")
    p.add_argument("--heatmaps", help="directory for PGM heatmaps")
    p.add_argument("--figures", help="directory for PNG figures")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="score a disparity map against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--logscale", help="log-scale map (PFM) for the matchable/unmatchable split")
    p.add_argument("--max-disp", type=float, default=losses.DEFAULT_MAX_DISPARITY)
    p.add_argument("--csv", action="store_true", help="also print a comma-separated header and row")
    p.add_argument("--figure", help="write an error-map figure (PNG) here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-toy", help="train on synthetic random-dot pairs")
    p.add_argument("--config", required=True, help="training key=value file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", required=True, help="per-epoch CSV")
    p.add_argument("--figures", help="directory for PNG figures")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("refine", help="run the propagation refinement on an existing disparity map")
    p.add_argument("--disp", required=True)
    p.add_argument("--left", required=True)
    p.add_argument("--match", required=True, help="entropy matchability (PFM)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--iters", type=int, default=refinement.DEFAULT_ITERATIONS)
    p.add_argument("--out", required=True)
    p.add_argument("--disparities", type=int, help="disparity count used for input scaling")
    p.add_argument("--no-matchability", action="store_true",
                   help="for checkpoints trained without the matchability input")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward passes")
    p.add_argument("--op", default="all", choices=["all", *gradcheck.OPS])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DSMError, OSError) as exc:
        print(f"dsm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
