"""``wavblur`` command line.

Every command prints a ``key = value`` metadata block on stdout. Exit codes:
0 ok, 2 usage, 3 I/O, 4 format, 5 geometry/dimension, 6 solver infeasible.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .bench import bench_thetas, rows_to_csv, scaling_sweep
from .blurop import KernelSpec, apply_exact, blur_operator, load_kernel_spec
from .dwt import default_levels, get_family
from .errors import DimensionError, FormatError, InfeasibleWarning, IoError, WavblurError
from .experiment import ERROR_KS, Criterion, desk_criteria, run_desk
from .imagecore import NoiseModel, add_noise, check_image, load_image, phantom, save_image, snr_db
from .kvfile import format_kv, read_kv
from .patterns import build_theta_masked, generate_mask, load_neighborhood
from .restore import SolverConfig, restore
from .thetaop import build_theta, load_theta, save_theta, threshold_many, verify_decay_1d

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INFEASIBLE = 6

log = logging.getLogger("wavblur")

MANIFEST_KEYS = {
    "image": str, "kernel": str, "wavelet": str, "levels": int, "k": str, "pattern": str,
    "sigma": float, "seed": int, "theta": str, "out": str, "threads": int, "iters": int, "tol": float,
}
FILE_KEYS = ("image", "kernel", "theta")


class UsageError(WavblurError):
    exit_code = EXIT_USAGE


# -- helpers ---------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """PGM/PNG through imagecore; ``.npy`` keeps full float precision."""
    p = Path(path)
    if p.suffix.lower() == ".npy":
        try:
            return check_image(np.load(p))
        except OSError as exc:
            raise IoError(f"cannot read {p}: {exc}") from exc
        except ValueError as exc:
            raise FormatError(f"{p}: {exc}") from exc
    return load_image(p)


def write_image(img, path) -> None:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        if p.suffix.lower() == ".npy":
            np.save(p, np.asarray(img, dtype=np.float64))
            return
    except OSError as exc:
        raise IoError(f"cannot write {p}: {exc}") from exc
    save_image(img, p)


def write_text(text: str, path) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def emit(meta: dict) -> None:
    sys.stdout.write(format_kv({k: _fmt(v) for k, v in meta.items()}))
    sys.stdout.flush()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def parse_ks(text) -> list:
    try:
        ks = [int(t) for t in str(text).replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"--k expects integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise UsageError("--k values must be positive integers")
    return ks


def kernel_for(args, n: int | None = None) -> KernelSpec:
    if args.kernel:
        spec = load_kernel_spec(args.kernel)
        if n is not None and spec.n != n:
            raise DimensionError(f"kernel is {spec.n} wide but the image is {n}")
        return spec
    return KernelSpec(n=n or 64)


def square_side(img) -> int:
    if img.shape[0] != img.shape[1]:
        raise DimensionError(f"the blur model needs a square image, got {img.shape}")
    return img.shape[0]


def apply_manifest(args) -> None:
    """Fill unset flags from ``--manifest`` and check referenced files exist."""
    if getattr(args, "manifest", None):
        kv = read_kv(args.manifest)
        unknown = set(kv) - set(MANIFEST_KEYS)
        if unknown:
            raise FormatError(f"unknown manifest keys: {sorted(unknown)}")
        base = Path(args.manifest).parent
        for key, value in kv.items():
            if getattr(args, key, None) is not None or not hasattr(args, key):
                continue
            if key in FILE_KEYS or key == "out":
                value = str(base / value)
            try:
                setattr(args, key, MANIFEST_KEYS[key](value))
            except ValueError:
                raise FormatError(f"bad manifest value for {key}: {value!r}") from None
    for key in FILE_KEYS:
        paths = getattr(args, key, None) or []
        for path in [paths] if isinstance(paths, str) else paths:
            if not Path(path).exists():
                raise IoError(f"{key} file not found: {path}")
    if getattr(args, "pattern", None) and not Path(args.pattern).exists():
        # shipped neighbourhoods are addressed by name
        if args.pattern not in ("scenario1", "scenario2", "n1"):
            raise IoError(f"pattern file not found: {args.pattern}")


def setup_threads(threads) -> None:
    if not threads:
        return
    if threads < 1:
        raise UsageError("--threads must be positive")
    import numba

    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


# -- commands --------------------------------------------------------------


def cmd_blur(args):
    img = read_image(args.image)
    spec = kernel_for(args, square_side(img))
    out = apply_exact(spec, img)
    write_image(out, args.out)
    emit({"command": "blur", "out": args.out, "kernel": spec.kernel_id, "snr_vs_clean": snr_db(out, img)})
    return 0


def cmd_degrade(args):
    img = read_image(args.image)
    spec = kernel_for(args, square_side(img))
    sigma = 0.0 if args.sigma is None else args.sigma
    seed = 0 if args.seed is None else args.seed
    blurred = apply_exact(spec, img)
    out = add_noise(blurred, NoiseModel(sigma, seed))
    write_image(out, args.out)
    emit({"command": "degrade", "out": args.out, "kernel": spec.kernel_id, "sigma": sigma, "seed": seed,
          "snr_vs_clean": snr_db(out, img), "snr_vs_blurred": snr_db(out, blurred)})
    return 0


def _levels(args, n):
    return args.levels or default_levels(n)


def cmd_build_theta(args):
    spec = kernel_for(args, args.n)
    family = get_family(args.wavelet or "db2")
    ks = parse_ks(args.k) if args.k else None
    if ks and len(ks) > 1:
        raise UsageError("build-theta takes a single --k; use threshold for several")
    theta = build_theta(spec, family, _levels(args, spec.n), k=ks[0] if ks else None, threads=args.threads)
    save_theta(theta, args.out)
    emit({"command": "build-theta", "out": args.out, "kernel": spec.kernel_id, "wavelet": theta.family,
          "levels": theta.levels, "budget": theta.budget, "nnz": theta.nnz, "nnz_per_row": theta.nnz / theta.dim})
    return 0


def _k_path(out: str, k: int) -> Path:
    if "{k}" in out:
        return Path(out.format(k=k))
    return Path(out) / f"theta_k{k}.wbth"


def cmd_threshold(args):
    ks = parse_ks(args.k)
    theta = load_theta(args.theta)
    meta = {"command": "threshold", "source": args.theta, "source_nnz": theta.nnz}
    for k, th in threshold_many(theta, ks).items():
        path = _k_path(args.out, k)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_theta(th, path)
        meta[f"k{k}_path"] = str(path)
        meta[f"k{k}_nnz"] = th.nnz
    emit(meta)
    return 0


def cmd_pattern(args):
    spec = kernel_for(args, args.n)
    levels = _levels(args, spec.n)
    nbh = load_neighborhood(args.pattern)
    mask = generate_mask(nbh, spec.shape, levels)
    theta = build_theta_masked(spec, mask, args.wavelet or "db2", levels, threads=args.threads)
    save_theta(theta, args.out)
    meta = {"command": "pattern", "out": args.out, "pattern": args.pattern, "levels": levels,
            "mask_nnz": mask.nnz, "nnz_per_row": mask.density, "theta_nnz": theta.nnz}
    if args.figure:
        plotting.plot_spy(mask, args.figure)
        meta["figure"] = args.figure
    emit(meta)
    return 0


def solver_config(args, sigma) -> SolverConfig:
    cfg = SolverConfig(sigma, step_ratio=args.step_ratio)
    if args.iters is not None:
        cfg.max_iters = args.iters
    if args.tol is not None:
        cfg.tol = args.tol
    return cfg


def cmd_restore(args):
    v = read_image(args.image)
    if args.theta:
        op = load_theta(args.theta)
        source = args.theta
    else:
        spec = kernel_for(args, square_side(v))
        op = blur_operator(spec)
        source = spec.kernel_id
    if args.sigma is None:
        raise UsageError("restore needs --sigma (noise standard deviation)")
    cfg = solver_config(args, args.sigma)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InfeasibleWarning)
        result = restore(v, op, cfg)
    for w in caught:
        log.warning("%s", w.message)
    write_image(result.image, args.out)
    meta = {"command": "restore", "out": args.out, "operator": source, "iterations": result.iterations,
            "residual": result.residual, "radius": result.radius, "tv": result.tv,
            "converged": str(result.converged).lower(), "infeasible": str(result.infeasible).lower()}
    if args.clean:
        clean = read_image(args.clean)
        meta["snr_degraded"] = snr_db(v, clean)
        meta["snr_restored"] = snr_db(result.image, clean)
    emit(meta)
    return EXIT_INFEASIBLE if result.infeasible else 0


def cmd_bench(args):
    spec = kernel_for(args, args.n)
    levels = _levels(args, spec.n)
    thetas = {}
    paths = [args.theta] if isinstance(args.theta, str) else args.theta or []
    for path in paths:
        th = load_theta(path)
        thetas[str(th.budget)] = th
    t_build = None
    if not thetas:
        t0 = time.perf_counter()
        full = build_theta(spec, args.wavelet or "db2", levels, threads=args.threads)
        t_build = time.perf_counter() - t0
        thetas = {str(k): th for k, th in threshold_many(full, parse_ks(args.k or "1,20")).items()}
        if args.full:
            thetas["full"] = full
    rows = bench_thetas(spec, thetas, reps=args.reps)
    text = rows_to_csv(rows)
    meta = {"command": "bench", "reps": args.reps}
    if t_build is not None:
        meta["t_build_s"] = t_build  # one-off cost, kept out of the per-apply timings
    if args.out:
        write_text(text, args.out)
        meta["csv"] = args.out
    else:
        sys.stdout.write(text)
    if args.sweep:
        sw = scaling_sweep(spec, reps=args.reps, family=args.wavelet or "db2", threads=args.threads)
        meta["sweep_slope"] = sw.slope
        if args.out:
            write_text(sw.to_csv(), Path(args.out).with_name(Path(args.out).stem + "_scaling.csv"))
    for r in rows:
        meta[f"speedup_{r.k}"] = r.speedup
    emit(meta)
    return 0


def cmd_verify_decay(args):
    n = args.n or 256
    spec = load_kernel_spec(args.kernel) if args.kernel else KernelSpec(n=n, ndim=1)
    rep = verify_decay_1d(spec, args.wavelet or "haar", args.levels)
    meta = {"command": "verify-decay", "kernel": spec.kernel_id, "vanishing_moments": rep.vanishing_moments,
            "pairs": len(rep.rows), "slope": rep.slope, "slope_threshold": rep.slope_threshold, "c_m": rep.c_m,
            "zero_checked": rep.zero_checked, "zero_violations": rep.zero_violations,
            "passed": str(rep.passed).lower()}
    if args.out:
        write_text(rep.to_csv(), args.out)
        meta["csv"] = args.out
    if args.figure:
        plotting.plot_decay(rep, args.figure)
        meta["figure"] = args.figure
    emit(meta)
    return 0


def cmd_reproduce(args):
    out = Path(args.out or "wavblur_run")
    out.mkdir(parents=True, exist_ok=True)
    clean = read_image(args.image) if args.image else phantom(64)
    spec = kernel_for(args, square_side(clean))
    sigma = 0.02 if args.sigma is None else args.sigma
    seed = 1 if args.seed is None else args.seed
    cfg = solver_config(args, sigma)
    levels = _levels(args, spec.n)
    family = args.wavelet or "db2"
    manifest = {"image": args.image or "phantom", "kernel": spec.kernel_id, "wavelet": family, "levels": levels,
                "sigma": sigma, "seed": seed, "iters": cfg.max_iters, "tol": cfg.tol,
                "step_ratio": cfg.step_ratio, "version": __version__}
    write_text(format_kv(manifest), out / "manifest.txt")

    res = run_desk(clean, spec, family, levels, sigma, seed, cfg, threads=args.threads)
    write_image(clean, out / "clean.pgm")
    write_image(res.blurred, out / "blurred.pgm")
    write_image(res.degraded, out / "degraded.pgm")
    write_text("k,mc_error\n" + "".join(f"{k},{res.errors[k]:.6g}\n" for k in ERROR_KS), out / "errors.csv")
    plotting.plot_error_curve(list(ERROR_KS), [res.errors[k] for k in ERROR_KS], out / "errors.png")
    lines = ["label,nnz,snr_db,iterations,residual,radius,converged"]
    for label, r in res.restored.items():
        nnz = getattr(res.thetas[label], "nnz", "")
        lines.append(f"{label},{nnz},{res.snr[label]:.4f},{r.iterations},{r.residual:.6g},{r.radius:.6g},"
                     f"{str(r.converged).lower()}")
        write_image(r.image, out / f"restored_{label.replace('=', '')}.pgm")
    write_text("\n".join(lines) + "\n", out / "restore.csv")
    panels = {f"degraded {res.degraded_snr:.2f} dB": res.degraded}
    panels.update({f"{k} {res.snr[k]:.2f} dB": r.image for k, r in res.restored.items()})
    plotting.plot_images(panels, out / "restorations.png", ncols=4)
    plotting.plot_theta_magnitude(res.thetas["full"], out / "theta_full.png")
    for name in ("scenario1", "scenario2"):
        plotting.plot_spy(res.thetas[name].matrix, out / f"{name}_spy.png")

    bench_set = {k: res.thetas[k] for k in ("k=1", "k=20", "full")}
    rows = bench_thetas(spec, bench_set, reps=args.reps)
    write_text(rows_to_csv(rows), out / "bench.csv")
    criteria = desk_criteria(res)
    sp = {r.k: r.speedup for r in rows}
    criteria.append(Criterion("speedup k=1 > k=20 > 1", f"{sp['k=1']:.2f} > {sp['k=20']:.2f}", "ordering",
                              sp["k=1"] > sp["k=20"] > 1))
    if not args.skip_sweep:
        sw = scaling_sweep(spec, family=family, reps=args.reps, threads=args.threads)
        write_text(sw.to_csv(), out / "scaling.csv")
        plotting.plot_scaling(sw, out / "scaling.png")
        criteria.append(Criterion("apply time slope vs pixels", f"{sw.slope:.3f}", "[0.9, 1.3]",
                                  0.9 <= sw.slope <= 1.3))
    for fam in ("haar", "db2"):
        rep = verify_decay_1d(KernelSpec(n=256, ndim=1), fam)
        plotting.plot_decay(rep, out / f"decay_{fam}.png")
        criteria.append(Criterion(f"decay slope {fam}", f"{rep.slope:.3f}", f"<= {rep.slope_threshold}",
                                  rep.passed))
    table = "criterion,value,target,passed\n" + "".join(
        f"\"{c.name}\",\"{c.value}\",\"{c.target}\",{str(c.passed).lower()}\n" for c in criteria)
    write_text(table, out / "criteria.csv")
    for c in criteria:
        print(c.line())
    meta = {"command": "reproduce", "out": str(out), "degraded_snr": res.degraded_snr}
    meta.update({f"snr_{k.replace('=', '')}": v for k, v in res.snr.items()})
    meta["criteria_passed"] = sum(c.passed for c in criteria)
    meta["criteria_total"] = len(criteria)
    emit(meta)
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavblur", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"wavblur {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *names):
        sp.add_argument("--manifest", help="key = value file supplying defaults for the flags")
        opts = {
            "image": dict(help="input image (.pgm, .png or .npy)"),
            "kernel": dict(help="kernel spec file (key = value)"),
            "wavelet": dict(help="wavelet family: haar, db2 ... db10"),
            "levels": dict(type=int, help="decomposition depth J"),
            "k": dict(help="budget(s) per row, comma separated"),
            "pattern": dict(help="neighbourhood file or shipped name (scenario1, scenario2, n1)"),
            "sigma": dict(type=float, help="noise standard deviation"),
            "seed": dict(type=int, help="noise seed"),
            "theta": dict(help="WBTH operator file"),
            "out": dict(help="output path"),
            "threads": dict(type=int, help="worker threads for build stages"),
            "iters": dict(type=int, help="solver iteration cap"),
            "tol": dict(type=float, help="solver tolerance"),
            "n": dict(type=int, help="image side when no kernel file is given"),
        }
        for name in names:
            sp.add_argument(f"--{name}", **opts[name])

    sp = sub.add_parser("blur", help="apply the exact blur")
    common(sp, "image", "kernel", "out", "threads")
    sp.set_defaults(func=cmd_blur, required=("image", "out"))

    sp = sub.add_parser("degrade", help="blur and add Gaussian noise")
    common(sp, "image", "kernel", "sigma", "seed", "out", "threads")
    sp.set_defaults(func=cmd_degrade, required=("image", "out"))

    sp = sub.add_parser("build-theta", help="assemble the wavelet-domain operator")
    common(sp, "kernel", "n", "wavelet", "levels", "k", "out", "threads")
    sp.set_defaults(func=cmd_build_theta, required=("out",))

    sp = sub.add_parser("threshold", help="keep the k*dim largest entries, for every k")
    common(sp, "theta", "k", "out", "threads")
    sp.set_defaults(func=cmd_threshold, required=("theta", "k", "out"))

    sp = sub.add_parser("pattern", help="operator restricted to a neighbourhood pattern")
    common(sp, "kernel", "n", "wavelet", "levels", "pattern", "out", "threads")
    sp.add_argument("--figure", help="write a spy plot of the mask")
    sp.set_defaults(func=cmd_pattern, required=("pattern", "out"))

    sp = sub.add_parser("restore", help="constrained TV restoration")
    common(sp, "image", "theta", "kernel", "sigma", "iters", "tol", "out", "threads")
    sp.add_argument("--clean", help="ground truth, to report SNR")
    sp.add_argument("--step-ratio", type=float, default=1e-3, help="primal/dual step ratio tau/kappa")
    sp.set_defaults(func=cmd_restore, required=("image", "out"))

    sp = sub.add_parser("bench", help="time exact vs sparse application")
    common(sp, "kernel", "n", "wavelet", "levels", "k", "out", "threads")
    sp.add_argument("--theta", action="append", help="WBTH operator file (repeatable)")
    sp.add_argument("--reps", type=int, default=20)
    sp.add_argument("--full", action="store_true", help="also time the unthresholded operator")
    sp.add_argument("--sweep", action="store_true", help="run the N = 32, 64, 128 scaling sweep")
    sp.set_defaults(func=cmd_bench, required=())

    sp = sub.add_parser("verify-decay", help="check coefficient decay on a 1D blur")
    common(sp, "kernel", "n", "wavelet", "levels", "out")
    sp.add_argument("--figure", help="scatter plot output")
    sp.set_defaults(func=cmd_verify_decay, required=())

    sp = sub.add_parser("reproduce", help="run the whole desk-scale experiment")
    common(sp, "image", "kernel", "wavelet", "levels", "sigma", "seed", "iters", "tol", "out", "threads")
    sp.add_argument("--reps", type=int, default=20)
    sp.add_argument("--skip-sweep", action="store_true")
    sp.add_argument("--step-ratio", type=float, default=1e-3, help="primal/dual step ratio tau/kappa")
    sp.set_defaults(func=cmd_reproduce, required=())
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        apply_manifest(args)
        for name in args.required:
            if getattr(args, name, None) is None:
                raise UsageError(f"{args.command} needs --{name}")
        if hasattr(args, "threads"):
            setup_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"wavblur: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WavblurError as exc:
        print(f"wavblur: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"wavblur: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"wavblur: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
