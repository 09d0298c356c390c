"""The desk-scale experiment chained by ``wavblur reproduce``."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .blurop import KernelSpec, apply_exact, blur_operator
from .dwt import default_levels
from .imagecore import NoiseModel, add_noise, phantom, snr_db
from .patterns import build_theta_masked, energy_capture, generate_mask, load_neighborhood
from .restore import SolverConfig, restore
from .thetaop import build_theta, operator_error, threshold_many

logger = logging.getLogger(__name__)

ERROR_KS = (1, 2, 4, 8, 16, 32)
RESTORE_KS = (1, 20)


@dataclass
class Criterion:
    name: str
    value: str
    target: str
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value} (target {self.target})"


@dataclass
class DeskResult:
    clean: np.ndarray
    blurred: np.ndarray
    degraded: np.ndarray
    errors: dict = field(default_factory=dict)  # k -> MC operator error
    densities: dict = field(default_factory=dict)  # pattern -> nnz/dim
    capture: dict = field(default_factory=dict)  # pattern -> energy fraction
    restored: dict = field(default_factory=dict)  # label -> RestoreResult
    snr: dict = field(default_factory=dict)  # label -> dB against clean
    thetas: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def degraded_snr(self) -> float:
        return snr_db(self.degraded, self.clean)


def run_desk(clean=None, spec: KernelSpec | None = None, family="db2", levels=None, sigma=0.02, seed=1,
             cfg: SolverConfig | None = None, threads=None, restore_full=True) -> DeskResult:
    """Blur, degrade, build, threshold, mask, restore."""
    clean = phantom(64) if clean is None else np.asarray(clean, dtype=np.float64)
    spec = spec or KernelSpec(n=clean.shape[0])
    levels = levels or default_levels(spec.n)
    cfg = cfg or SolverConfig(sigma)
    blurred = apply_exact(spec, clean)
    degraded = add_noise(blurred, NoiseModel(sigma, seed))
    res = DeskResult(clean, blurred, degraded)

    t0 = time.perf_counter()
    full = build_theta(spec, family, levels, threads=threads)
    res.timings["build_full_s"] = time.perf_counter() - t0
    ks = sorted(set(ERROR_KS) | set(RESTORE_KS))
    thresholded = threshold_many(full, ks)
    for k in ERROR_KS:
        res.errors[k] = operator_error(thresholded[k], spec)
    for k in RESTORE_KS:
        res.thetas[f"k={k}"] = thresholded[k]
    if restore_full:
        res.thetas["full"] = full

    for name in ("scenario1", "scenario2"):
        mask = generate_mask(load_neighborhood(name), spec.shape, levels)
        res.densities[name] = mask.density
        res.capture[name] = energy_capture(full, mask)
        res.thetas[name] = build_theta_masked(spec, mask, family, levels, threads=threads)

    res.thetas["exact"] = blur_operator(spec)
    for label, op in res.thetas.items():
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            r = restore(degraded, op, cfg)
        res.timings[f"restore_{label}_s"] = time.perf_counter() - t0
        res.restored[label] = r
        res.snr[label] = snr_db(r.image, clean)
        logger.info("%s: SNR %.3f dB after %d iterations", label, res.snr[label], r.iterations)
    return res


def desk_criteria(res: DeskResult) -> list:
    """Pass/fail summary of the desk experiment."""
    out = []
    errs = [res.errors[k] for k in ERROR_KS]
    mono = all(b <= a * 1.05 for a, b in zip(errs, errs[1:]))
    out.append(Criterion("error non-increasing in k", " ".join(f"{e:.3g}" for e in errs), "5% slack", mono))
    ratio = res.errors[32] / res.errors[1]
    out.append(Criterion("error(32)/error(1)", f"{ratio:.3f}", "<= 0.1", ratio <= 0.1))
    s = res.snr
    deg = res.degraded_snr
    out.append(Criterion("SNR k=1 < k=20", f"{s['k=1']:.2f} < {s['k=20']:.2f}", "strict", s["k=1"] < s["k=20"]))
    if "full" in s:
        gap = abs(s["k=20"] - s["full"])
        out.append(Criterion("|SNR k=20 - full|", f"{gap:.3f} dB", "<= 0.5 dB", gap <= 0.5))
    worst = min(v for key, v in s.items() if key.startswith("k=") or key == "full")
    out.append(Criterion("restorations beat degraded", f"min {worst:.2f} vs {deg:.2f} dB", ">", worst > deg))
    for name, target in (("scenario1", 3), ("scenario2", 15)):
        d = res.densities[name]
        out.append(Criterion(f"{name} nnz/dim", f"{d:.2f}", f"{target} +-30%", abs(d - target) <= 0.3 * target))
    out.append(Criterion("SNR pattern 2 > pattern 1", f"{s['scenario2']:.2f} > {s['scenario1']:.2f}", "strict",
                         s["scenario2"] > s["scenario1"]))
    gap = abs(s["scenario2"] - s["k=20"])
    out.append(Criterion("|SNR pattern 2 - k=20|", f"{gap:.2f} dB", "<= 1.0 dB", gap <= 1.0))
    for label, r in res.restored.items():
        if r.converged:
            out.append(Criterion(f"{label} feasible", f"{r.residual**2:.4g} vs {r.radius**2:.4g}", "<= eps^2(1+tol)",
                                 r.feasible))
    return out
