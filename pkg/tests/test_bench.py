import numpy as np
import pytest

from wavblur.bench import CSV_HEADER, BenchRow, bench_thetas, median_ms, rows_to_csv, scaling_sweep
from wavblur.blurop import KernelSpec
from wavblur.thetaop import build_theta, threshold_many


def test_csv_header_golden():
    text = rows_to_csv([BenchRow(64, "1", 4096, 2.0, 0.1, 20.0, 0.37)])
    assert text.splitlines()[0] == "N,k,nnz,t_exact_ms,t_sparse_ms,speedup,mc_error" == CSV_HEADER
    assert text.splitlines()[1] == "64,1,4096,2,0.1,20,0.37"


def test_median_ms_positive_and_reps_floor():
    assert median_ms(lambda: sum(range(100))) > 0
    with pytest.raises(ValueError):
        bench_thetas(KernelSpec(n=16), {}, reps=5)


@pytest.fixture(scope="module")
def desk_rows():
    spec = KernelSpec()
    full = build_theta(spec, "db2", 3)
    thetas = {str(k): th for k, th in threshold_many(full, [1, 20]).items()}
    thetas["full"] = full
    return {r.k: r for r in bench_thetas(spec, thetas)}


def test_speedup_ordering(desk_rows):
    assert desk_rows["1"].speedup > desk_rows["20"].speedup > 1


def test_rows_consistent(desk_rows):
    for r in desk_rows.values():
        assert r.N == 64
        assert r.speedup == pytest.approx(r.t_exact_ms / r.t_sparse_ms)
    assert desk_rows["1"].nnz == 4096 and desk_rows["20"].nnz == 20 * 4096
    assert desk_rows["full"].mc_error <= 1e-9
    assert desk_rows["1"].mc_error > desk_rows["20"].mc_error


def test_scaling_result_shape():
    res = scaling_sweep(KernelSpec(), sizes=(16, 32), k=2)
    assert res.pixels == (256, 1024)
    assert np.isfinite(res.slope)
    assert res.to_csv().splitlines()[0] == "N,pixels,t_sparse_ms"
