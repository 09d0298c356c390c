import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavblur.dwt import (
    SubbandIndex,
    analysis,
    band_layout,
    box_distance,
    flat_index,
    forward,
    get_family,
    inverse,
    subband_index,
    support_box,
    synthesis,
    synthesize_atom,
)
from oracles import oracle_1d, oracle_2d
from wavblur.errors import LevelError, ShapeError, SubbandIndexError

FAMILIES = ["haar", "db2", "db3", "db4", "db10"]


# -- filters ----------------------------------------------------------------


def test_db2_closed_form():
    s3 = math.sqrt(3)
    ref = np.array([1 + s3, 3 + s3, 3 - s3, 1 - s3]) / (4 * math.sqrt(2))
    np.testing.assert_allclose(get_family("db2").h, ref, atol=1e-14)


@pytest.mark.parametrize("name", FAMILIES)
def test_filter_identities(name):
    fam = get_family(name)
    h, g = fam.h, fam.g
    assert h.sum() == pytest.approx(math.sqrt(2), abs=1e-12)
    for shift in range(0, len(h), 2):
        dot = h[: len(h) - shift] @ h[shift:]
        assert dot == pytest.approx(1.0 if shift == 0 else 0.0, abs=1e-12)
    n = np.arange(len(g), dtype=float)
    for p in range(fam.vanishing_moments):
        assert (n**p) @ g == pytest.approx(0.0, abs=1e-8 * max(1.0, len(g) ** p))


def test_unknown_family():
    with pytest.raises(ValueError):
        get_family("sym4")


# -- transforms -------------------------------------------------------------


@pytest.mark.parametrize("name", ["haar", "db2", "db3"])
def test_analysis_matches_oracle_2d(name):
    fam = get_family(name)
    x = np.random.default_rng(1).random((16, 32))
    np.testing.assert_allclose(analysis(x, fam, 2), oracle_2d(x, fam, 2), atol=1e-13)


@pytest.mark.parametrize("name", ["haar", "db2", "db4"])
def test_analysis_matches_oracle_1d(name):
    fam = get_family(name)
    x = np.random.default_rng(2).random(64)
    np.testing.assert_allclose(analysis(x, fam, 3, ndim=1), oracle_1d(x, fam, 3), atol=1e-13)


def test_haar_pair():
    c = analysis(np.array([1.0, 1.0]), "haar", 1, ndim=1)
    np.testing.assert_allclose(c, [math.sqrt(2), 0.0], atol=1e-15)


@pytest.mark.parametrize("name", FAMILIES)
def test_constant_image(name):
    c = forward(np.full((32, 32), 0.7), name, 2)
    approx = c.band(2, "l")
    np.testing.assert_allclose(approx, 0.7 * 4, atol=1e-10)
    details = c.vector[approx.size :]
    assert np.abs(details).max() < 1e-10


@pytest.mark.parametrize("name", ["haar", "db2", "db4"])
def test_round_trip_and_parseval(name):
    rng = np.random.default_rng(5)
    x = rng.random((64, 64))
    c = forward(x, name, 3)
    assert np.linalg.norm(c.vector) == pytest.approx(np.linalg.norm(x), rel=1e-10)
    assert np.abs(inverse(c, name) - x).max() <= 1e-10


def test_batched_matches_single():
    x = np.random.default_rng(0).random((3, 16, 16))
    batch = analysis(x, "db2", 2)
    for i in range(3):
        np.testing.assert_array_equal(batch[i], analysis(x[i], "db2", 2))
    np.testing.assert_allclose(synthesis(batch, "db2", 2, (16, 16)), x, atol=1e-13)


def test_zero_coefficients():
    assert np.all(synthesis(np.zeros(256), "db2", 2, (16, 16)) == 0)


def test_level_errors():
    with pytest.raises(LevelError):
        analysis(np.zeros((24, 32)), "haar", 4)
    with pytest.raises(LevelError):
        analysis(np.zeros((16, 16)), "haar", 0)
    with pytest.raises(ShapeError):
        synthesis(np.zeros(100), "haar", 1, (16, 16))


def test_default_depth():
    assert forward(np.zeros((64, 64))).levels == 3


def test_band_layout_canonical():
    bands = band_layout((8, 8), 2)
    assert [(b.level, b.orientation) for b in bands] == [
        (2, "l"), (2, "h"), (2, "v"), (2, "d"), (1, "h"), (1, "v"), (1, "d"),
    ]
    assert [b.offset for b in bands] == [0, 4, 8, 12, 16, 32, 48]
    assert [(b.level, b.orientation) for b in band_layout((8,), 2)] == [(2, "l"), (2, "d"), (1, "d")]


# -- atoms ------------------------------------------------------------------


def test_haar_level1_atom():
    a = synthesize_atom(SubbandIndex(1, "d", (0,)), (8,), "haar", 1)
    r = 1 / math.sqrt(2)
    np.testing.assert_allclose(a, [r, -r, 0, 0, 0, 0, 0, 0], atol=1e-15)


@pytest.mark.parametrize("name", ["haar", "db2", "db3"])
def test_random_atoms_orthonormal(name):
    rng = np.random.default_rng(9)
    shape, levels = (32, 32), 3
    flats = rng.choice(1024, size=20, replace=False)
    atoms = np.array([synthesize_atom(subband_index(f, shape, levels), shape, name, levels).ravel() for f in flats])
    np.testing.assert_allclose(atoms @ atoms.T, np.eye(20), atol=1e-10)


@pytest.mark.parametrize("name", ["haar", "db2", "db4"])
def test_support_box_contains_atom_1d(name):
    n, levels = 32, 3
    for f in range(n):
        idx = subband_index(f, (n,), levels)
        atom = synthesize_atom(idx, (n,), name, levels)
        ((start, length),) = support_box(idx, name)
        nz = np.flatnonzero(np.abs(atom) > 1e-13)
        assert np.all((nz - start) % n < length), (idx, nz, start, length)


def test_support_box_contains_atom_2d():
    shape, levels = (32, 32), 2
    for f in range(0, 1024, 7):
        idx = subband_index(f, shape, levels)
        atom = synthesize_atom(idx, shape, "db2", levels)
        box = support_box(idx, "db2")
        ys, xs = np.nonzero(np.abs(atom) > 1e-13)
        assert np.all((ys - box[0][0]) % 32 < box[0][1])
        assert np.all((xs - box[1][0]) % 32 < box[1][1])


@pytest.mark.parametrize("n", [16, 32, 64])
def test_separated_haar_boxes(n):
    a = support_box(SubbandIndex(1, "d", (0,)), "haar")
    b = support_box(SubbandIndex(1, "d", (n // 2 - 1,)), "haar")
    assert box_distance(a, b) > 0


def test_box_distance_torus():
    assert box_distance(((0, 3),), ((10, 3),)) == 8
    assert box_distance(((0, 3),), ((14, 3),), period=16) == 0
    assert box_distance(((0, 2), (0, 2)), ((4, 2), (5, 2))) == 5.0  # gaps 3 and 4


def test_bad_indices():
    with pytest.raises(SubbandIndexError):
        flat_index(SubbandIndex(4, "h", (0, 0)), (16, 16), 2)
    with pytest.raises(SubbandIndexError):
        flat_index(SubbandIndex(1, "h", (8, 0)), (16, 16), 2)
    with pytest.raises(SubbandIndexError):
        subband_index(256, (16, 16), 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(1, 3), st.data())
def test_index_round_trip(ly, lx, levels, data):
    levels = min(levels, ly, lx)
    shape = (1 << ly, 1 << lx)
    f = data.draw(st.integers(0, shape[0] * shape[1] - 1))
    assert flat_index(subband_index(f, shape, levels), shape, levels) == f


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.sampled_from(["haar", "db2", "db3"]), st.integers(0, 2**32 - 1))
def test_round_trip_property(ly, lx, name, seed):
    shape = (1 << ly, 1 << lx)
    levels = min(ly, lx)
    x = np.random.default_rng(seed).standard_normal(shape)
    c = analysis(x, name, levels)
    assert np.linalg.norm(c) == pytest.approx(np.linalg.norm(x), rel=1e-10)
    np.testing.assert_allclose(synthesis(c, name, levels, shape), x, atol=1e-10)
