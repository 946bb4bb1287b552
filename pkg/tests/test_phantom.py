import json
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fibertensor.errors import GenerationError, PackingError
from fibertensor.phantom import (
    FiberSpec, GrayLevels, gen_isotropic_fibers, gen_shell_core, gen_straight_bundle, rasterize,
)


def _brute_coverage(dims, spacing, fibers):
    """Max over fibers of the fraction of 2x2x2 sub-samples inside each capsule."""
    out = np.zeros(dims)
    offs = [0.25, 0.75]
    for f in fibers:
        p0, p1 = (np.asarray(p, float) for p in f.endpoints())
        d = p1 - p0
        for i, j, k in product(*(range(n) for n in dims)):
            inside = 0
            for a, b, c in product(offs, offs, offs):
                p = np.array([(i + a) * spacing[0], (j + b) * spacing[1], (k + c) * spacing[2]])
                t = np.clip(np.dot(p - p0, d) / np.dot(d, d), 0, 1)
                inside += np.sum((p - (p0 + t * d)) ** 2) <= f.radius ** 2
            out[i, j, k] = max(out[i, j, k], inside / 8)
    return out


def test_rasterize_matches_brute_force_capsules():
    dims, spacing = (9, 8, 7), (1.0, 1.5, 0.8)
    fibers = [
        FiberSpec((0.6, 0.8, 0.0), 1.3, 6.0, (4.0, 5.0, 2.5)),
        FiberSpec((0.0, 0.0, 1.0), 0.9, 3.0, (2.0, 9.0, 2.8)),
        FiberSpec((0.48, 0.6, 0.64), 1.1, 20.0, (4.5, 6.0, 2.8)),  # runs out of the volume
    ]
    np.testing.assert_array_equal(rasterize(dims, spacing, fibers),
                                  _brute_coverage(dims, spacing, fibers))


def test_bundle_deterministic_per_seed():
    kw = dict(dims=(32, 32, 32), spacing=(1, 1, 1), direction=(0, 1, 0), radius=2.0,
              n_fibers=10, gray=GrayLevels(noise=5.0))
    a, b = gen_straight_bundle(seed=5, **kw), gen_straight_bundle(seed=5, **kw)
    c = gen_straight_bundle(seed=6, **kw)
    assert a.volume.data.tobytes() == b.volume.data.tobytes()
    assert a.volume.data.tobytes() != c.volume.data.tobytes()


def test_bundle_without_noise_is_coverage_blend():
    ph = gen_straight_bundle((24, 24, 24), (1, 1, 1), (0, 1, 0), 2.5, 9, seed=1)
    cov = ph.coverage
    assert cov.min() >= 0 and cov.max() == 1
    np.testing.assert_array_equal(cov * 8, np.round(cov * 8))
    np.testing.assert_allclose(ph.volume.data, 80 + 120 * cov, rtol=1e-6)
    np.testing.assert_array_equal(ph.truth, [0, 1, 0, 0, 0, 0])
    assert len(ph.fibers) == 9


def test_bundle_noise_level():
    ph = gen_straight_bundle((40, 40, 40), (1, 1, 1), (0, 1, 0), 2.0, 4, seed=1,
                             gray=GrayLevels(noise=5.0))
    matrix = ph.volume.data[ph.coverage == 0]
    assert matrix.mean() == pytest.approx(80, abs=0.2)
    assert matrix.std() == pytest.approx(5.0, rel=0.03)


def test_bundle_fibers_never_touch():
    ph = gen_straight_bundle((48, 48, 48), (1, 1, 1), (0.2, 1, 0.1), 2.0, 40, seed=2)
    c = np.array([f.center for f in ph.fibers])
    d = np.asarray(ph.fibers[0].axis)
    rel = c[:, None, :] - c[None, :, :]
    perp = rel - (rel @ d)[..., None] * d
    dist = np.linalg.norm(perp, axis=-1) + np.eye(len(c)) * 1e9
    assert dist.min() >= 4.0


def test_bundle_transpose_symmetry():
    a = gen_straight_bundle((20, 28, 24), (1.0, 1.5, 1.2), (0.2, 1.0, 0.3), 2.0, 12, seed=8)
    b = gen_straight_bundle((28, 20, 24), (1.5, 1.0, 1.2), (1.0, 0.2, 0.3), 2.0, 12, seed=8)
    np.testing.assert_array_equal(b.volume.data, a.volume.data.transpose(1, 0, 2))


def test_bundle_packing_error():
    with pytest.raises(PackingError):
        gen_straight_bundle((20, 20, 20), (1, 1, 1), (0, 1, 0), 3.0, 100)


def test_bundle_zero_fibers_is_uniform_matrix():
    ph = gen_straight_bundle((8, 8, 8), (1, 1, 1), (0, 1, 0), 1.0, 0)
    np.testing.assert_array_equal(ph.volume.data, 80.0)


def test_tiny_radius_rejected():
    with pytest.raises(ValueError, match="0.3 voxel"):
        gen_straight_bundle((8, 8, 8), (1, 1, 1), (0, 1, 0), 0.2, 1)


def test_gray_levels_validated():
    with pytest.raises(ValueError):
        GrayLevels(fiber=50, matrix=80)
    with pytest.raises(ValueError):
        GrayLevels(noise=-1)


def test_isotropic_truth_frozen_and_near_one_third():
    ph = gen_isotropic_fibers((64, 64, 64), (1, 1, 1), 1.5, 500, seed=11, length=30)
    # placed-axes tensor recomputed from the same seed by direct averaging
    want = [0.3367443, 0.33159309, 0.3316626, -0.02018169, 0.02749839, 0.01682967]
    np.testing.assert_allclose(ph.truth, want, atol=1e-7)
    np.testing.assert_allclose(ph.truth[:3], 1 / 3, atol=0.03)
    axes = ph.axes
    np.testing.assert_allclose(ph.truth, (axes[:, [0, 1, 2, 0, 0, 1]] * axes[:, [0, 1, 2, 1, 2, 2]]).mean(0))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_isotropic_fibers_stay_inside(seed):
    ph = gen_isotropic_fibers((30, 20, 25), (1, 1, 1), 1.0, 20, seed=seed, length=12)
    for f in ph.fibers:
        for p in f.endpoints():
            assert np.all(p >= -1e-9) and np.all(p <= np.array([30, 20, 25]) + 1e-9)
    assert np.all(ph.axes[:, 2] >= 0)


def test_isotropic_length_checked():
    with pytest.raises(GenerationError):
        gen_isotropic_fibers((10, 10, 10), (1, 1, 1), 1.0, 5, length=12)


def test_shell_core_layers():
    ph = gen_shell_core((36, 36, 36), (1, 1, 1), 1.5, seed=0)
    assert ph.meta["layer_bounds_um"] == [0.0, 12.0, 24.0, 36.0]
    w = ph.slice_weights
    assert w[:12, 0].sum() == 0 and w[24:, 0].sum() == 0
    assert w[12:24, 1].sum() == 0
    prof = ph.truth_profile(3)
    np.testing.assert_allclose(prof[:, :3], [[0, 1, 0], [1, 0, 0], [0, 1, 0]])
    np.testing.assert_allclose(ph.truth[:3].sum(), 1.0)
    assert 0.5 < ph.truth[1] < 0.75


def test_shell_core_thickness_guard():
    with pytest.raises(GenerationError):
        gen_shell_core((40, 40, 20), (1, 1, 1), 1.0, tile_edge_vox=8)
    with pytest.raises(GenerationError):
        gen_shell_core((40, 40, 6), (1, 1, 1), 1.0, pitch=4.0)


def test_truth_profile_uniform_phantom():
    ph = gen_straight_bundle((8, 8, 8), (1, 1, 1), (1, 0, 0), 1.0, 2)
    np.testing.assert_array_equal(ph.truth_profile(4), np.tile(ph.truth, (4, 1)))


def test_to_json_round_trips():
    ph = gen_isotropic_fibers((16, 16, 16), (1, 1, 1), 1.0, 3, seed=2, length=6)
    d = json.loads(json.dumps(ph.to_json()))
    assert d["kind"] == "isotropic" and len(d["fibers"]) == 3
    np.testing.assert_allclose(d["truth_tensor"], ph.truth)
