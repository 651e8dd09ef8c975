"""Command-line entry point: ``xsep train | separate | bench``.

Exit codes: 0 success, 2 argument error, 3 data/format error, 4 numerical
failure. Logs go to stderr as ``key=value`` lines; results only go to the
declared output files.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError, NumericalError, XsepError

log = logging.getLogger("xsep")

DEFAULT_EPS = "4,4,7,8"


def _int_list(text):
    try:
        out = [int(t) for t in str(text).replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _snr_list(text):
    out = []
    for t in str(text).replace(" ", "").split(","):
        if not t:
            continue
        try:
            v = float(t)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad SNR value {t!r}")
        if not v > 0:
            raise argparse.ArgumentTypeError(f"SNR must be positive or inf, got {t!r}")
        out.append(v)
    if not out:
        raise argparse.ArgumentTypeError("empty SNR list")
    return tuple(out)


def _common(p):
    p.add_argument("--config", help="INI file with option defaults")
    p.add_argument("--threads", type=int, help="worker threads (default: XSEP_THREADS or all cores)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="xsep", description="Separate mixed X-ray images of double-sided panels.")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="learn coupled dictionaries from visual/X-ray image pairs")
    _common(t)
    t.add_argument("--visual", nargs="+", required=True, help="visual images")
    t.add_argument("--xray", nargs="+", required=True, help="X-ray images, paired with --visual")
    t.add_argument("--mask", nargs="+", help="crack masks (0 = crack, nonzero = valid), paired with --visual")
    t.add_argument("--patch", type=int, default=8, help="patch side")
    t.add_argument("--atoms", type=int, default=256, help="atoms per dictionary")
    t.add_argument("--common-atoms", type=int, help="common atoms (default: --atoms)")
    t.add_argument("--innovation-atoms", type=int, help="innovation atoms (default: --atoms)")
    t.add_argument("--sz", type=int, default=10)
    t.add_argument("--sv", type=int, default=8)
    t.add_argument("--iters", type=int, default=100)
    t.add_argument("--samples", type=int, default=46400)
    t.add_argument("--scale", type=int, default=1, help="pyramid scale to train (1 = full resolution)")
    t.add_argument("--eps", type=_int_list, default=DEFAULT_EPS, help="per-scale steps, e.g. 4,4,7,8")
    t.add_argument("--init", choices=("dct", "random", "data"), default="dct")
    t.add_argument("--weighted", action="store_true", help="crack-aware training with --mask")
    t.add_argument("--ridge", action="store_true", help="regularise near-singular weighted row systems")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--stem", default="dict")

    s = sub.add_parser("separate", help="separate a mixed X-ray using the two visual images")
    _common(s)
    s.add_argument("--mixture", required=True)
    s.add_argument("--visual1", required=True)
    s.add_argument("--visual2", required=True)
    s.add_argument("--dict", nargs="+", required=True, help="dictionary manifests, finest scale first")
    s.add_argument("--multiscale", type=int, nargs="?", const=4, default=None, metavar="L",
                   help="number of scales (flag alone: 4)")
    s.add_argument("--eps", type=_int_list, default=DEFAULT_EPS)
    s.add_argument("--patch", type=int, help="patch side (default: from the dictionary)")
    s.add_argument("--include-v", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--rho", type=float, default=1.0)
    s.add_argument("--max-iters", type=int, default=5000)
    s.add_argument("--tol", type=float, default=1e-4, help="ADMM residual tolerance")
    s.add_argument("--out1", required=True)
    s.add_argument("--out2", required=True)
    s.add_argument("--matrix-out", help="also write both outputs as CDLM files with this prefix")
    s.add_argument("--dump-pyramid", help="directory for pyramid bands of the three inputs")

    b = sub.add_parser("bench", help="synthetic experiments")
    bsub = b.add_subparsers(dest="bench", required=True)
    for name in ("table1", "table2"):
        q = bsub.add_parser(name)
        _common(q)
        q.add_argument("--snr", type=_snr_list, default=(math.inf,))
        q.add_argument("--trials", type=int, default=5 if name == "table1" else 1)
        q.add_argument("--n", type=int, default=40)
        q.add_argument("--gamma", type=int, default=60)
        q.add_argument("--d", type=int, default=60)
        q.add_argument("--t", type=int, default=1500)
        q.add_argument("--sz", type=int, default=2)
        q.add_argument("--sv", type=int, default=3)
        q.add_argument("--iters", type=int, default=100)
        q.add_argument("--mixtures", type=int, default=200)
        q.add_argument("--normalization", choices=("separate", "stacked"), default="separate")
        q.add_argument("--injective", action="store_true", help="one-to-one atom matching (table1)")
        q.add_argument("--out", required=True, help="CSV output")
    q = bsub.add_parser("mix", help="simulated two-sided panel: PSNR/SSIM against ground truth")
    _common(q)
    q.add_argument("--simulated-mix", nargs=2, metavar=("A", "B"),
                   help="paint layers of the two sides (default: generated)")
    q.add_argument("--size", type=int, default=256)
    q.add_argument("--eps", type=_int_list, default="4,4,4")
    q.add_argument("--patch", type=int, default=8)
    q.add_argument("--iters", type=int, default=20)
    q.add_argument("--max-iters", type=int, default=300)
    q.add_argument("--out", required=True, help="CSV output")
    return parser


def _apply_config(parser, argv):
    """Use INI values (section named after the command, or [xsep]) as defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    from .storage import read_config

    cfg = read_config(known.config)
    args, _ = _parse_command(parser, argv)
    values = dict(cfg.get("xsep", {}))
    values.update(cfg.get(args.command, {}))
    if getattr(args, "bench", None):
        values.update(cfg.get(f"bench.{args.bench}", {}))
    target = _subparser(parser, args)
    actions = {a.dest: a for a in target._actions}
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest == "config":
            raise ArgumentError(f"unknown option {key!r} in config {known.config}")
        a = actions[dest]
        if a.nargs in ("+", 2):
            defaults[dest] = raw.split()
        elif isinstance(a, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ArgumentError(f"option {key!r} expects a boolean, got {raw!r}")
            defaults[dest] = low in ("1", "true", "yes", "on")
        else:
            defaults[dest] = raw
        a.required = False
    target.set_defaults(**defaults)


def _parse_command(parser, argv):
    # parse while ignoring required-ness, only to learn which command runs
    saved = []
    for p in _all_parsers(parser):
        for a in p._actions:
            if a.required and a.option_strings:
                saved.append(a)
                a.required = False
    try:
        with open(os.devnull, "w") as devnull:
            old = sys.stderr
            sys.stderr = devnull
            try:
                return parser.parse_known_args(argv)
            finally:
                sys.stderr = old
    finally:
        for a in saved:
            a.required = True


def _all_parsers(parser):
    out = [parser]
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            for p in a.choices.values():
                out += _all_parsers(p)
    return out


def _subparser(parser, args):
    sp = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    if args.command == "bench":
        sp = next(a for a in sp._actions if isinstance(a, argparse._SubParsersAction)).choices[args.bench]
    return sp


def _setup_logging(args):
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)
    h = logging.StreamHandler(sys.stderr)
    h.setFormatter(logging.Formatter("level=%(levelname)s logger=%(name)s %(message)s"))
    root.addHandler(h)
    root.setLevel(level)
    logging.captureWarnings(True)


def _setup_threads(args):
    n = args.threads
    if n is None and os.environ.get("XSEP_THREADS"):
        try:
            n = int(os.environ["XSEP_THREADS"])
        except ValueError:
            raise ArgumentError(f"XSEP_THREADS must be an integer, got {os.environ['XSEP_THREADS']!r}")
    if n is None:
        return
    if n < 1:
        raise ArgumentError(f"--threads must be >= 1, got {n}")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    log.info("threads=%d", numba.get_num_threads())


def cmd_train(args):
    from .coupled_dl import TrainConfig, TrainingSet, train_coupled
    from .patchwork import PatchGridSpec, sample_patches
    from .pyramid import PyramidSpec, scale_planes
    from .storage import read_image, read_mask, save_dictionaries
    from .weighted_dl import MaskedTrainingSet, train_weighted

    if len(args.visual) != len(args.xray):
        raise ArgumentError(f"{len(args.visual)} visual images but {len(args.xray)} X-ray images")
    if args.mask is not None and len(args.mask) != len(args.visual):
        raise ArgumentError(f"{len(args.mask)} masks for {len(args.visual)} image pairs")
    if args.weighted and args.mask is None:
        raise ArgumentError("--weighted needs --mask")
    gamma = args.common_atoms or args.atoms
    d = args.innovation_atoms or args.atoms
    level = args.scale - 1
    spec = PyramidSpec(tuple(PatchGridSpec(args.patch, e) for e in args.eps[:max(level, 1)]))
    if level > len(args.eps):
        raise ArgumentError(f"--scale {args.scale} needs at least {level} steps in --eps")
    tuples = []
    for k, (vp, xp) in enumerate(zip(args.visual, args.xray)):
        y, x = read_image(vp), read_image(xp)
        if y.shape != x.shape:
            raise ArgumentError(f"pair {k}: visual {y.shape} and X-ray {x.shape} differ in size")
        planes = [y, x]
        if args.mask is not None:
            mk = read_mask(args.mask[k])
            if mk.shape != y.shape:
                raise ArgumentError(f"pair {k}: mask {mk.shape} does not match image {y.shape}")
            planes.append(mk)
        if level > 0:
            planes = [scale_planes(a, spec, level) if i < 2 else _mask_plane(a, spec, level)
                      for i, a in enumerate(planes)]
        tuples.append(tuple(planes))
    rng = np.random.default_rng(args.seed)
    parts = sample_patches(tuples, args.patch, args.samples, rng)
    data = TrainingSet.from_patches(parts[0], parts[1])
    cfg = TrainConfig(args.sz, args.sv, gamma, d, max_iters=args.iters, init=args.init, seed=args.seed,
                      ridge=args.ridge)
    log.info("samples=%d patch=%d gamma=%d d=%d s_z=%d s_v=%d scale=%d weighted=%s",
             data.t, args.patch, gamma, d, args.sz, args.sv, args.scale, args.weighted)
    if args.weighted:
        valid = (parts[2] > 0.5).astype(np.float64)
        support = valid.sum(axis=1)
        need = gamma + d
        if support.min() < need and not args.ridge:
            i = int(np.argmin(support))
            raise ArgumentError(
                f"weighted training needs at least gamma+d = {need} valid samples in every pixel row; "
                f"row {i} has {int(support[i])} of {data.t}. Increase --samples (valid fraction "
                f"{valid.mean():.3f} suggests >= {int(math.ceil(need / max(support.min() / data.t, 1e-12)))}) "
                f"or pass --ridge")
        data = MaskedTrainingSet(data.Y, data.X, valid)
        res = train_weighted(data, cfg)
    else:
        res = train_coupled(data, cfg)
    meta = {"patch_side": args.patch, "scale": args.scale, "s_z": args.sz, "s_v": args.sv,
            "iterations": len(res.trace), "final_objective": repr(res.trace[-1]), "seed": args.seed,
            "weighted": int(args.weighted), "samples": data.t}
    path = save_dictionaries(res.dictionaries, args.out, meta, args.stem)
    log.info("manifest=%s iterations=%d objective=%.12g", path, len(res.trace), res.trace[-1])
    return 0


def _mask_plane(mask, spec, level):
    # a coarse pixel is valid only if every pixel averaged into it was valid
    from .pyramid import scale_planes

    return (scale_planes(mask, spec, level) >= 1.0 - 1e-12).astype(np.float64)


def cmd_separate(args):
    from .patchwork import PatchGridSpec, separate_single_scale
    from .pyramid import PyramidSpec, decompose, dump_pyramid, separate_multiscale
    from .separator import BPConfig
    from .storage import load_dictionaries, read_image, write_image, write_matrix

    m = read_image(args.mixture)
    y1 = read_image(args.visual1)
    y2 = read_image(args.visual2)
    if not (m.shape == y1.shape == y2.shape):
        raise ArgumentError(f"image sizes differ: mixture {m.shape}, visual1 {y1.shape}, visual2 {y2.shape}")
    dicts = [load_dictionaries(p)[0] for p in args.dict]
    side = args.patch or int(round(math.sqrt(dicts[0].n)))
    cfg = BPConfig(rho=args.rho, feas_tol=args.tol, dual_tol=args.tol, max_iters=args.max_iters)
    if args.multiscale:
        L = args.multiscale
        if len(args.eps) < L:
            raise ArgumentError(f"--multiscale {L} needs {L} steps in --eps, got {len(args.eps)}")
        spec = PyramidSpec(tuple(PatchGridSpec(side, e) for e in args.eps[:L]))
        if len(dicts) < L:
            log.warning("dictionaries=%d scales=%d deeper scales reuse the last dictionary", len(dicts), L)
        if args.dump_pyramid:
            for name, img in (("mixture", m), ("visual1", y1), ("visual2", y2)):
                dump_pyramid(decompose(img, spec), args.dump_pyramid, name)
        X1, X2 = separate_multiscale(m, y1, y2, spec, dicts, cfg, args.include_v)
    else:
        X1, X2 = separate_single_scale(m, y1, y2, dicts[0], PatchGridSpec(side, args.eps[0]), cfg,
                                       args.include_v)
    write_image(X1, args.out1)
    write_image(X2, args.out2)
    if args.matrix_out:
        write_matrix(X1, f"{args.matrix_out}1.cdlm")
        write_matrix(X2, f"{args.matrix_out}2.cdlm")
    log.info("out1=%s out2=%s", args.out1, args.out2)
    return 0


def cmd_bench(args):
    from . import synthbench as sb

    if args.bench in ("table1", "table2"):
        spec = sb.SynthSpec(n=args.n, gamma=args.gamma, d=args.d, t=args.t, s_z=args.sz, s_v=args.sv,
                            snrs=args.snr, trials=args.trials, seed=args.seed, mixtures=args.mixtures,
                            iters=args.iters, normalization=args.normalization)
        if args.bench == "table1":
            sb.run_table1(spec, csv_path=args.out, injective=args.injective)
        else:
            sb.run_table2(spec, csv_path=args.out)
    else:
        from .storage import read_image

        layers = None
        if args.simulated_mix:
            layers = tuple(read_image(p) for p in args.simulated_mix)
        sb.run_mix(layers, size=args.size, steps=tuple(args.eps), patch_side=args.patch, iters=args.iters,
                   max_iters=args.max_iters, seed=args.seed, csv_path=args.out)
    log.info("csv=%s", args.out)
    return 0


COMMANDS = {"train": cmd_train, "separate": cmd_separate, "bench": cmd_bench}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except XsepError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    _setup_logging(args)
    try:
        _setup_threads(args)
        return COMMANDS[args.command](args)
    except ArgumentError as e:
        log.error("error=argument message=%r", str(e))
        return 2
    except (FormatError, OSError) as e:
        log.error("error=data message=%r", str(e))
        return 3
    except NumericalError as e:
        log.error("error=numerical message=%r", str(e))
        return 4
    except XsepError as e:
        log.error("error=other message=%r", str(e))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
