"""Timing harness: exact blur vs the sparse wavelet-domain operator."""

from __future__ import annotations

import csv
import gc
import io
import math
import time
from dataclasses import astuple, dataclass, fields

import numpy as np

from .blurop import KernelSpec, blur_operator
from .dwt import default_levels
from .imagecore import gaussian_samples
from .thetaop import SparseTheta, apply_theta, build_theta, operator_error

CSV_HEADER = "N,k,nnz,t_exact_ms,t_sparse_ms,speedup,mc_error"
MIN_REPS = 20


def _loop_count(fn, min_sample_s: float) -> int:
    t0 = time.perf_counter()
    fn()  # warm-up, also sizes the inner loop
    one = max(time.perf_counter() - t0, 1e-7)
    return max(1, int(math.ceil(min_sample_s / one)))


def interleaved_median_ms(fns, reps: int = MIN_REPS, min_sample_s: float = 1e-3, warmup_s: float = 0.2) -> list:
    """Median wall time per call of each function, in milliseconds.

    Samples are taken round-robin across ``fns`` so slow drift in machine
    speed hits every function alike instead of whichever ran during a slow
    spell. Each sample times enough back-to-back calls to last at least
    ``min_sample_s``. Every function first runs untimed for ``warmup_s``.
    """
    for fn in fns:
        # the first ~0.1 s of calls run measurably slower on a cold process
        end = time.perf_counter() + warmup_s
        fn()
        while time.perf_counter() < end:
            fn()
    numbers = [_loop_count(fn, min_sample_s) for fn in fns]
    ts = np.empty((reps, len(fns)))
    gc.collect()
    enabled = gc.isenabled()
    gc.disable()
    try:
        for i in range(reps):
            for j, (fn, number) in enumerate(zip(fns, numbers)):
                t0 = time.perf_counter()
                for _ in range(number):
                    fn()
                ts[i, j] = (time.perf_counter() - t0) / number
    finally:
        if enabled:
            gc.enable()
    return [float(v) for v in np.median(ts, axis=0) * 1e3]


def median_ms(fn, reps: int = MIN_REPS, min_sample_s: float = 1e-3, warmup_s: float = 0.2) -> float:
    """Median wall time of one ``fn()`` call in milliseconds."""
    return interleaved_median_ms([fn], reps, min_sample_s, warmup_s)[0]


@dataclass
class BenchRow:
    N: int
    k: str
    nnz: int
    t_exact_ms: float
    t_sparse_ms: float
    speedup: float
    mc_error: float


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f.name for f in fields(BenchRow)])
    for r in rows:
        w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in astuple(r)])
    return buf.getvalue()


def bench_thetas(spec: KernelSpec, thetas: dict, reps: int = MIN_REPS, trials: int = 10, seed: int = 0) -> list:
    """One row per entry of ``thetas`` (label -> SparseTheta)."""
    if reps < MIN_REPS:
        raise ValueError(f"use at least {MIN_REPS} repetitions")
    op = blur_operator(spec)
    x = gaussian_samples(spec.dim, seed).reshape(spec.shape)
    labels = list(thetas)
    fns = [lambda: op.apply(x)] + [lambda th=thetas[lb]: apply_theta(th, x) for lb in labels]
    t_exact, *t_sparse = interleaved_median_ms(fns, reps)
    rows = []
    for label, t in zip(labels, t_sparse):
        th = thetas[label]
        err = operator_error(th, spec, trials=trials, seed=seed)
        rows.append(BenchRow(spec.n, str(label), th.nnz, t_exact, t, t_exact / t, err))
    return rows


@dataclass
class ScalingResult:
    sizes: tuple
    pixels: tuple
    times_ms: tuple
    slope: float

    def to_csv(self) -> str:
        lines = ["N,pixels,t_sparse_ms"]
        lines += [f"{n},{p},{t:.6g}" for n, p, t in zip(self.sizes, self.pixels, self.times_ms)]
        return "\n".join(lines) + "\n"


def scaling_sweep(spec: KernelSpec, sizes=(32, 64, 128), k: int = 20, family="db2", levels=None,
                  reps: int = MIN_REPS, threads=None) -> ScalingResult:
    """apply_theta time against pixel count at fixed ``k``; slope of the log-log fit.

    ``levels=None`` uses the default depth for each size, so the transform
    depth grows with N.
    """
    fns = []
    pixels = []
    for n in sizes:
        s = spec.with_n(n)
        th = build_theta(s, family, levels or default_levels(n), k=k, threads=threads)
        x = gaussian_samples(s.dim, n).reshape(s.shape)
        fns.append(lambda th=th, x=x: apply_theta(th, x))
        pixels.append(s.dim)
    times = interleaved_median_ms(fns, reps)
    slope = float(np.polyfit(np.log(pixels), np.log(times), 1)[0])
    return ScalingResult(tuple(sizes), tuple(pixels), tuple(times), slope)


def theta_label(theta: SparseTheta) -> str:
    return str(theta.budget)
