import subprocess
import sys

import numpy as np
import pytest

from wavblur.blurop import KernelSpec, apply_exact, save_kernel_spec
from wavblur.cli import main
from wavblur.imagecore import phantom, save_image
from wavblur.kvfile import parse_kv
from wavblur.thetaop import load_theta


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


def meta(out):
    return parse_kv(out)


@pytest.fixture
def workspace(tmp_path):
    save_image(phantom(16), tmp_path / "clean.pgm")
    np.save(tmp_path / "clean.npy", phantom(16))
    save_kernel_spec(KernelSpec(n=16), tmp_path / "kernel.txt")
    return tmp_path


def test_version_via_module():
    res = subprocess.run([sys.executable, "-m", "wavblur", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "wavblur" in res.stdout


def test_blur_matches_library(workspace, capsys):
    code, out = run(capsys, "blur", "--image", workspace / "clean.npy", "--kernel", workspace / "kernel.txt",
                    "--out", workspace / "b.npy")
    assert code == 0
    ref = apply_exact(KernelSpec(n=16), phantom(16))
    assert np.load(workspace / "b.npy").tobytes() == ref.tobytes()
    assert meta(out)["command"] == "blur"


def test_degrade_sigma_zero_equals_blur(workspace, capsys):
    run(capsys, "blur", "--image", workspace / "clean.pgm", "--out", workspace / "b.pgm")
    run(capsys, "degrade", "--image", workspace / "clean.pgm", "--sigma", 0, "--out", workspace / "d.pgm")
    assert (workspace / "b.pgm").read_bytes() == (workspace / "d.pgm").read_bytes()


def test_degrade_deterministic(workspace, capsys):
    for name in ("a.npy", "b.npy"):
        code, _ = run(capsys, "degrade", "--image", workspace / "clean.npy", "--sigma", 0.02, "--seed", 7,
                      "--out", workspace / name)
        assert code == 0
    assert (workspace / "a.npy").read_bytes() == (workspace / "b.npy").read_bytes()
    run(capsys, "degrade", "--image", workspace / "clean.npy", "--sigma", 0.02, "--seed", 8, "--out", workspace / "c.npy")
    assert (workspace / "a.npy").read_bytes() != (workspace / "c.npy").read_bytes()


def test_build_threshold_pattern(workspace, capsys):
    for name in ("t1.wbth", "t2.wbth"):
        code, out = run(capsys, "build-theta", "--n", 16, "--levels", 2, "--out", workspace / name)
        assert code == 0
    assert (workspace / "t1.wbth").read_bytes() == (workspace / "t2.wbth").read_bytes()
    assert int(meta(out)["levels"]) == 2

    code, out = run(capsys, "threshold", "--theta", workspace / "t1.wbth", "--k", "1,20", "--out", workspace / "th")
    assert code == 0
    m = meta(out)
    assert int(m["k1_nnz"]) == 256 and int(m["k20_nnz"]) == 20 * 256
    assert load_theta(workspace / "th" / "theta_k20.wbth").nnz == 20 * 256

    code, out = run(capsys, "pattern", "--pattern", "scenario2", "--n", 64, "--levels", 3,
                    "--out", workspace / "p.wbth", "--figure", workspace / "spy.png")
    assert code == 0
    assert abs(float(meta(out)["nnz_per_row"]) - 15) <= 4.5
    assert (workspace / "spy.png").stat().st_size > 0


def test_restore_reports_snr(workspace, capsys):
    run(capsys, "degrade", "--image", workspace / "clean.npy", "--sigma", 0.02, "--seed", 1, "--out", workspace / "v.npy")
    code, out = run(capsys, "restore", "--image", workspace / "v.npy", "--sigma", 0.02, "--iters", 400,
                    "--clean", workspace / "clean.npy", "--out", workspace / "u.npy")
    assert code == 0
    m = meta(out)
    assert {"iterations", "residual", "tv", "snr_restored", "snr_degraded"} <= set(m)
    assert np.load(workspace / "u.npy").shape == (16, 16)


def test_restore_infeasible_exit_code(workspace, capsys, tmp_path):
    import scipy.sparse as sp

    from wavblur.thetaop import identity_theta, save_theta

    zero = identity_theta((16, 16), "haar", 2)
    save_theta(zero.with_matrix(sp.csr_matrix((256, 256)), "zero"), tmp_path / "zero.wbth")
    code, _ = run(capsys, "restore", "--image", workspace / "clean.npy", "--theta", tmp_path / "zero.wbth",
                  "--sigma", 0.001, "--iters", 2000, "--out", tmp_path / "u.npy")
    assert code == 6


def test_exit_codes(workspace, capsys):
    assert run(capsys, "blur", "--image", workspace / "clean.pgm")[0] == 2  # missing --out
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "threshold", "--theta", workspace / "kernel.txt", "--k", "x", "--out", workspace)[0] == 2
    assert run(capsys, "blur", "--image", workspace / "missing.pgm", "--out", workspace / "o.pgm")[0] == 3
    assert run(capsys, "blur", "--image", workspace / "clean.pgm", "--kernel", workspace / "nope.txt",
               "--out", workspace / "o.pgm")[0] == 3
    (workspace / "bad.pgm").write_bytes(b"P9 junk")
    assert run(capsys, "blur", "--image", workspace / "bad.pgm", "--out", workspace / "o.pgm")[0] == 4
    assert run(capsys, "threshold", "--theta", workspace / "kernel.txt", "--k", 1, "--out", workspace)[0] == 4
    save_kernel_spec(KernelSpec(n=32), workspace / "k32.txt")
    assert run(capsys, "blur", "--image", workspace / "clean.pgm", "--kernel", workspace / "k32.txt",
               "--out", workspace / "o.pgm")[0] == 5
    assert run(capsys, "verify-decay", "--n", 4, "--wavelet", "db2", "--levels", 1)[0] == 5


def test_manifest_supplies_flags(workspace, capsys):
    (workspace / "run.txt").write_text("image = clean.pgm\nkernel = kernel.txt\nsigma = 0.01\nseed = 3\nout = m.pgm\n")
    code, out = run(capsys, "degrade", "--manifest", workspace / "run.txt")
    assert code == 0
    assert (workspace / "m.pgm").exists()
    assert meta(out)["seed"] == "3"
    (workspace / "bad.txt").write_text("colour = red\n")
    assert run(capsys, "degrade", "--manifest", workspace / "bad.txt")[0] == 4


def test_verify_decay_outputs(workspace, capsys):
    code, out = run(capsys, "verify-decay", "--n", 128, "--wavelet", "db2", "--out", workspace / "d.csv",
                    "--figure", workspace / "d.png")
    assert code == 0
    m = meta(out)
    assert m["passed"] == "true"
    assert (workspace / "d.csv").read_text().splitlines()[0] == "row,col,level_row,level_col,dist,abs_theta,bound,same_scale"


def test_bench_csv(workspace, capsys):
    code, out = run(capsys, "bench", "--n", 32, "--levels", 2, "--k", "1,4", "--out", workspace / "b.csv")
    assert code == 0
    lines = (workspace / "b.csv").read_text().splitlines()
    assert lines[0] == "N,k,nnz,t_exact_ms,t_sparse_ms,speedup,mc_error"
    assert len(lines) == 3
