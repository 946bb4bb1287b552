"""End-to-end acceptance criteria on phantoms with known ground truth.

Each test carries ``@pytest.mark.criterion(n, title)``; the terminal summary
prints one PASS/FAIL line per criterion with the measured values. Run with

    python3 -m pytest tests/test_acceptance.py -v
"""
import shutil
import time

import numpy as np
import pytest

from fibertensor import Volume, downsample, set_threads
from fibertensor.cli import main
from fibertensor.io import read_mhd, write_mhd
from fibertensor.orientation import OrientationConfig, eigen_sym3_batch, orientation_field
from fibertensor.phantom import (
    GrayLevels, gen_isotropic_fibers, gen_shell_core, gen_straight_bundle,
)
from fibertensor.segmentation import (
    Histogram, fiber_mask, morphological_opening, otsu_bin, part_mask,
)
from fibertensor.stats import (
    anisotropy_index, axis_profile, layer_resample, mean_direction, orientation_tensor,
    tile_analysis,
)
from fibertensor.volume import angle_between_axes, matrix_to_sym, sym_to_matrix

from acceptance_report import DETAILS, note
from oracles import jacobi_eigenvalues, otsu_exhaustive

PART_THRESHOLD = 40.0  # halfway between air (0) and matrix (80)
NOISY = GrayLevels(noise=5.0)


def analyze(volume, diameter, tile_edge_vox, method="hessian", min_fiber_voxels=None):
    fm = fiber_mask(volume, part_mask(volume, PART_THRESHOLD))
    field = orientation_field(volume, fm, OrientationConfig(diameter, method=method))
    grid = tile_analysis(field, fm, tile_edge_vox, min_fiber_voxels)
    return field, fm, grid


def global_summary(field):
    t, n = orientation_tensor(field)
    return t, anisotropy_index(t), mean_direction(t), n


@pytest.fixture(autouse=True)
def single_thread():
    set_threads(1)
    yield


# -- shared phantoms ------------------------------------------------------------


@pytest.fixture(scope="module")
def bundle256():
    ph = gen_straight_bundle((256,) * 3, (1.0,) * 3, (0, 1, 0), 3.0, 600, seed=1, gray=NOISY)
    set_threads(1)
    t0 = time.perf_counter()
    field, fm, grid = analyze(ph.volume, 6.0, 64)
    elapsed = time.perf_counter() - t0
    return ph, field, grid, elapsed


@pytest.fixture(scope="module")
def shell_core():
    """240 x 240 x 360 plate, fibers 8 um across at pitch 16 um, noise 5."""
    ph = gen_shell_core((240, 240, 360), (1.0,) * 3, 4.0, seed=7, gray=NOISY)
    fm = fiber_mask(ph.volume, part_mask(ph.volume, PART_THRESHOLD))
    field = orientation_field(ph.volume, fm, OrientationConfig(8.0))
    return ph, fm, field


@pytest.fixture(scope="module")
def isotropic160():
    ph = gen_isotropic_fibers((160,) * 3, (1.0,) * 3, 3.0, 500, seed=2, length=80, gray=NOISY)
    field, fm, grid = analyze(ph.volume, 6.0, 40)
    return ph, field, fm, grid


# -- criteria -------------------------------------------------------------------


@pytest.mark.criterion(1, "unidirectional recovery, 256^3 bundle along y")
def test_unidirectional_recovery(bundle256):
    ph, field, grid, elapsed = bundle256
    t, alpha, d, n = global_summary(field)
    ang = float(angle_between_axes(d, (0, 1, 0))) if d is not None else float("nan")
    full = grid.valid & ~grid.partial()
    note(1, f"a_yy={t[1]:.4f} alpha={alpha:.4f} angle={ang:.2f} deg "
            f"min tile a_yy={grid.tensor[full][:, 1].min():.4f} runtime={elapsed:.1f} s (1 thread)")
    assert t[1] >= 0.95
    assert d is not None and ang <= 3.0
    assert alpha >= 0.9
    assert elapsed <= 60.0
    assert grid.tensor[full][:, 1].min() >= 0.95


@pytest.mark.criterion(2, "sub-voxel fibers: diameter 0.8 voxel after 10x downsampling")
def test_subvoxel_sampling():
    fine = gen_straight_bundle((400,) * 3, (1.0,) * 3, (0, 1, 0), 4.0, 100, seed=1, gray=NOISY)
    coarse = downsample(fine.volume, 10)
    del fine
    assert coarse.dims == (40, 40, 40) and coarse.spacing == (10.0,) * 3
    cfg = OrientationConfig(8.0)
    _, fallback = cfg.smoothing(coarse.spacing)
    assert fallback  # 0.8 voxel across: the 3x3x3 binomial mask is selected
    fm = fiber_mask(coarse, part_mask(coarse, PART_THRESHOLD))
    t, alpha, d, n = global_summary(orientation_field(coarse, fm, cfg))
    ang = float(angle_between_axes(d, (0, 1, 0))) if d is not None else float("nan")
    note(2, f"a_yy={t[1]:.4f} angle={ang:.2f} deg alpha={alpha:.3f} oriented voxels={n}")
    assert d is not None and ang <= 10.0
    assert t[1] >= 0.75


@pytest.mark.criterion(3, "resolution consistency of the shell-core z-profile (1x, 3x, 10x)")
def test_resolution_consistency(shell_core):
    ph, fm, field = shell_core
    tile_um = 60.0  # 6 tile layers, two per third of the plate
    truth = ph.truth_profile(6)[:, 1]
    profiles = {1: axis_profile(tile_analysis(field, fm, 60), "z")}
    for f in (3, 10):
        vol = downsample(ph.volume, f)
        _, _, grid = analyze(vol, 8.0, int(round(tile_um / f)))
        profiles[f] = axis_profile(grid, "z")
    a_yy = {f: p.tensor[:, 1] for f, p in profiles.items()}
    for p in profiles.values():
        assert p.present.all() and p.n_layers == 6
    diff = {f: float(np.abs(a_yy[f] - a_yy[1]).max()) for f in (3, 10)}
    bias = {f: float(np.abs(a_yy[f] - truth).mean()) for f in a_yy}
    note(3, "max |a_yy - native| " + ", ".join(f"{f}x={diff[f]:.4f}" for f in diff)
         + "; mean |a_yy - truth| " + ", ".join(f"{f}x={bias[f]:.4f}" for f in bias))
    assert max(diff.values()) <= 0.10


@pytest.mark.criterion(4, "isotropic phantom, 500 fibers")
def test_isotropy(isotropic160):
    ph, field, fm, grid = isotropic160
    t, alpha, d, n = global_summary(field)
    diff = float(np.abs(t[:3] - ph.truth[:3]).max())
    note(4, f"diag={np.round(t[:3], 4).tolist()} truth={np.round(ph.truth[:3], 4).tolist()} "
            f"max diff={diff:.4f} alpha={alpha:.4f}")
    assert len(ph.fibers) >= 500
    assert diff <= 0.05
    assert alpha <= 0.25


@pytest.mark.criterion(5, "shell-core z-profile: x in the core, y in the shells, low z")
def test_shell_core_profile(shell_core):
    ph, fm, field = shell_core
    grid = tile_analysis(field, fm, 30)
    p = layer_resample(grid, 12)  # one 30-voxel tile layer per band
    diag = p.diagonal()
    core = np.zeros(12, bool)
    core[4:8] = True  # thirds at z = 120 and 240
    note(5, "a_yy by layer " + " ".join(f"{v:.2f}" for v in diag[:, 1])
         + f"; max a_zz={diag[:, 2].max():.3f}")
    assert p.present.all()
    assert np.all(diag[core, 0] > diag[core, 1])
    assert np.all(diag[~core, 1] > diag[~core, 0])
    assert np.all(diag[:, 2] <= 0.2)
    # a symmetric U in a_yy
    np.testing.assert_allclose(diag[:, 1], diag[::-1, 1], atol=0.1)


@pytest.mark.criterion(6, "eigen solver vs Jacobi oracle, 1e5 matrices")
def test_eigen_oracle():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(100_000, 3, 3))
    a = 0.5 * (a + a.transpose(0, 2, 1))
    a *= 10 ** rng.uniform(-4, 4, (len(a), 1, 1))
    m = matrix_to_sym(a)
    t0 = time.perf_counter()
    w, v = eigen_sym3_batch(m)
    solver = time.perf_counter() - t0
    want = jacobi_eigenvalues(a)
    norm = np.linalg.norm(a, axis=(1, 2))
    val_err = (np.abs(np.sort(w, axis=1) - want).max(1) / norm).max()
    back = np.einsum("nij,nj,nkj->nik", v, w, v)
    res = (np.linalg.norm(back - sym_to_matrix(m), axis=(1, 2)) / norm).max()
    elapsed = time.perf_counter() - t0  # solver, oracle and checks together
    note(6, f"max eigenvalue error={val_err:.2e}*|A| max residual={res:.2e}*|A| "
            f"solver {solver:.2f} s, whole check {elapsed:.2f} s")
    assert val_err <= 1e-8
    assert res <= 1e-6
    assert elapsed <= 5.0


@pytest.mark.criterion(7, "Otsu vs exhaustive between-class variance search")
def test_otsu_oracle():
    rng = np.random.default_rng(77)
    agree = 0
    for i in range(100):
        kind = i % 4
        if kind == 0:
            counts = rng.integers(0, 10_000, 256)
        elif kind == 1:  # sparse
            counts = rng.integers(0, 50, 256) * (rng.random(256) < 0.05)
            counts[rng.integers(0, 256, 2)] += 1
        elif kind == 2:  # bimodal
            x = np.concatenate([rng.normal(70, 12, 4000), rng.normal(180, 20, 2500)])
            counts = np.bincount(np.clip(x, 0, 255).astype(int), minlength=256)
        else:  # few levels
            counts = np.zeros(256, int)
            counts[rng.choice(256, 3, replace=False)] = rng.integers(1, 100, 3)
        if np.count_nonzero(counts) < 2:
            counts[[0, 255]] += 1
        agree += otsu_bin(Histogram(counts, 0.0, 256.0)) == otsu_exhaustive(counts)
    note(7, f"{agree}/100 histograms identical")
    assert agree == 100


@pytest.mark.criterion(8, "Hessian vs structure-tensor orientations on a bundle")
@pytest.mark.parametrize("direction", [(0, 1, 0), (0.3, 1.0, 0.2)])
def test_method_cross_validation(direction):
    ph = gen_straight_bundle((128,) * 3, (1.0,) * 3, direction, 3.0, 150, seed=4, gray=NOISY)
    vol = ph.volume
    fm = fiber_mask(vol, part_mask(vol, PART_THRESHOLD))
    h = orientation_field(vol, fm, OrientationConfig(6.0))
    s = orientation_field(vol, fm, OrientationConfig(6.0, method="structure-tensor"))
    both = h.valid & s.valid
    ang = angle_between_axes(h.directions[both], s.directions[both])
    med = float(np.median(ang))
    prev = DETAILS.get(8, "")
    note(8, (prev + "; " if prev else "") + f"direction {direction}: median {med:.2f} deg")
    assert both.sum() >= 0.99 * fm.count()
    assert med <= 5.0


@pytest.mark.criterion(9, "invariant suite")
def test_invariant_suite(bundle256, shell_core, isotropic160, tmp_path):
    t0 = time.perf_counter()
    checks = []

    # trace normalization and positive semi-definiteness of every reported tensor
    ph, fm, field = shell_core
    grids = [bundle256[2], isotropic160[3], tile_analysis(field, fm, 30)]
    tensors = [g.tensor[g.valid] for g in grids]
    for g in grids:
        for axis in "xyz":
            p = axis_profile(g, axis)
            tensors.append(p.tensor[p.present])
        p = layer_resample(g, 12)
        tensors.append(p.tensor[p.present])
    allt = np.concatenate(tensors)
    trace_err = float(np.abs(allt[:, :3].sum(1) - 1).max())
    lam_min = float(np.linalg.eigvalsh(sym_to_matrix(allt)).min())
    checks.append(f"trace err {trace_err:.1e}, min eigenvalue {lam_min:.1e}")
    assert trace_err <= 1e-6
    assert lam_min >= -1e-9

    # 90 degree rotation about z swaps a_xx and a_yy in interior tiles
    rot = gen_straight_bundle((64,) * 3, (1.0,) * 3, (1, 0.6, 0.3), 3.0, 20, seed=21, gray=NOISY)
    _, _, a = analyze(rot.volume, 6.0, 16)
    _, _, b = analyze(Volume(np.rot90(rot.volume.data, 1, axes=(0, 1)), rot.volume.spacing),
                      6.0, 16)
    ta = a.tensor[1:3, 1:3, 1:3]
    tb = np.rot90(b.tensor, -1, axes=(0, 1))[1:3, 1:3, 1:3]
    rot_err = float(max(np.abs(tb[..., 0] - ta[..., 1]).max(), np.abs(tb[..., 1] - ta[..., 0]).max(),
                        np.abs(tb[..., 2] - ta[..., 2]).max()))
    checks.append(f"rotation err {rot_err:.4f}")
    assert rot_err <= 0.02

    # weighted-average identity before exclusion
    iso_field, iso_fm = isotropic160[1], isotropic160[2]
    g = tile_analysis(iso_field, iso_fm, 40, min_fiber_voxels=1)
    whole, _ = orientation_tensor(iso_field)
    ok = g.count > 0
    w = g.count[ok].astype(np.float64)
    avg = (w[:, None] * g.tensor[ok]).sum(0) / w.sum()
    wa_err = float(np.abs(avg - whole).max())
    checks.append(f"weighted-average err {wa_err:.1e}")
    assert wa_err <= 1e-12

    # opening idempotence on a full-size part mask
    once = part_mask(bundle256[0].volume, PART_THRESHOLD)
    assert np.array_equal(morphological_opening(once).bits, once.bits)

    # MHD round trip, bit for bit
    vol = ph.volume
    back = read_mhd(write_mhd(vol, tmp_path / "sc.mhd", "MET_FLOAT"))
    assert back.data.tobytes() == vol.data.tobytes() and back.spacing == vol.spacing

    elapsed = time.perf_counter() - t0
    note(9, "; ".join(checks) + f"; opening idempotent; MHD round trip exact; {elapsed:.1f} s")
    assert elapsed <= 300


@pytest.mark.criterion(10, "determinism across thread counts")
def test_determinism(tmp_path):
    """The same two commands run with 1 and with 4 worker threads."""
    outputs = {}
    d = tmp_path / "run"
    for threads in (1, 4):
        if d.exists():
            shutil.rmtree(d)
        assert main(["phantom", "bundle", "-o", str(d / "ph"), "--dims", "96", "96", "96",
                     "--diameter", "6", "--n-fibers", "60", "--direction", "0.3", "1", "0.2",
                     "--seed", "10", "--noise", "--threads", str(threads)]) == 0
        assert main(["analyze", str(d / "ph" / "phantom.mhd"), "-o", str(d / "out"),
                     "--part-threshold", "40", "--fiber-diameter", "6", "--tile-edge", "32",
                     "--threads", str(threads)]) == 0
        files = sorted(p for p in d.rglob("*") if p.suffix in (".csv", ".json", ".raw"))
        outputs[threads] = {str(p.relative_to(d)): p.read_bytes() for p in files}
    assert outputs[1].keys() == outputs[4].keys()
    same = [k for k in outputs[1] if outputs[1][k] == outputs[4][k]]
    note(10, f"{len(same)}/{len(outputs[1])} files byte-identical (1 vs 4 threads)")
    assert len(same) == len(outputs[1])
