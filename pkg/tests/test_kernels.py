import numpy as np
import pytest

from actbench.geometry import SpdDescriptor, SubspaceDescriptor, dist_ls, dist_spd, sym_exp
from actbench.kernels import (
    KernelError, KernelSpec, build_gram, cross_kernel, gamma_p_grid, k_ls_poly, k_ls_rbf,
    k_spd_poly, k_spd_rbf, kernel, kernel_grid, load_gram_binary, ls_rbf_gamma_grid,
    save_gram_binary, save_gram_csv, spd_rbf_gamma_grid,
)

from conftest import random_spd, random_subspace


def adversarial_poly_set(seed=0, n=20, scale=4.0, d=14):
    """SPD matrices whose logs span a plane: the degree-5 Gram has rank <= 6,
    and its many zero eigenvalues land well below zero in floating point."""
    rng = np.random.default_rng(seed)
    basis = []
    for _ in range(2):
        B = rng.normal(size=(d, d))
        B = (B + B.T) / 2
        basis.append(B / np.linalg.norm(B))
    return [SpdDescriptor(sym_exp(scale * (a * basis[0] + b * basis[1])))
            for a, b in rng.normal(size=(n, 2))]


def test_ls_rbf_orthogonal_lines():
    e = np.eye(14)
    a, b = SubspaceDescriptor(e[:, :1]), SubspaceDescriptor(e[:, 1:2])
    assert abs(k_ls_rbf(a, b, 1.0) - np.exp(-2.0)) < 1e-12


def test_rbf_kernels_follow_distances(rng):
    a, b = random_spd(rng), random_spd(rng)
    assert k_spd_rbf(a, b, 0.3) == pytest.approx(np.exp(-0.3 * dist_spd(a, b) ** 2), rel=1e-12)
    y, z = random_subspace(rng, m=3), random_subspace(rng, m=3)
    assert k_ls_rbf(y, z, 0.7) == pytest.approx(np.exp(-0.7 * 2 * dist_ls(y, z) ** 2), rel=1e-10)


def test_poly_kernel_values(rng):
    a, b = random_spd(rng), random_spd(rng)
    ref = (0.5 * np.trace(a.log @ b.log)) ** 3
    assert k_spd_poly(a, b, 0.5, 3) == pytest.approx(ref, rel=1e-12)
    y = random_subspace(rng, m=3)
    assert k_ls_poly(y, y, 1.0) == pytest.approx(27.0, rel=1e-12)


def test_cross_kernel_matches_pairwise(rng):
    spds = [random_spd(rng) for _ in range(5)]
    subs = [random_subspace(rng, m=2) for _ in range(5)]
    for spec, items in ((KernelSpec("spd_rbf", gamma_r=0.1), spds),
                        (KernelSpec("spd_poly", gamma_p=0.5, exponent=2), spds),
                        (KernelSpec("ls_rbf", gamma_r=0.4), subs),
                        (KernelSpec("ls_poly", gamma_p=0.5), subs)):
        K = cross_kernel(items, items[:3], spec)
        ref = np.array([[kernel(a, b, spec) for b in items[:3]] for a in items])
        assert np.allclose(K, ref, rtol=1e-10, atol=1e-12)


def test_rbf_grams_are_psd_without_shift(rng):
    spds = [random_spd(rng, spread=1.5) for _ in range(30)]
    subs = [random_subspace(rng, m=3) for _ in range(30)]
    for items, spec in ((spds, KernelSpec("spd_rbf", gamma_r=0.05)),
                        (subs, KernelSpec("ls_rbf", gamma_r=1.0))):
        g = build_gram(items, spec)
        assert g.psd_shift == 0.0
        assert np.linalg.eigvalsh(g.K)[0] >= -1e-8


def test_adversarial_poly_gram_is_shifted():
    g = build_gram(adversarial_poly_set(), KernelSpec("spd_poly", gamma_p=1.0, exponent=5))
    assert g.psd_shift > 0
    assert np.linalg.eigvalsh(g.K)[0] >= -1e-8


def test_incompatible_inputs(rng):
    with pytest.raises(KernelError):
        cross_kernel([random_subspace(rng, m=2), random_subspace(rng, m=3)],
                     [random_subspace(rng, m=2)], KernelSpec("ls_rbf", gamma_r=1.0))
    with pytest.raises(KernelError):
        build_gram([random_spd(rng)], KernelSpec("ls_rbf", gamma_r=1.0))
    with pytest.raises(KernelError):
        KernelSpec("spd_rbf")
    with pytest.raises(KernelError):
        KernelSpec("spd_poly", gamma_p=1.0, exponent=0)


def test_grid_counts():
    assert gamma_p_grid() == [1.0 / k for k in range(1, 15)]
    assert len(spd_rbf_gamma_grid()) == 20
    assert spd_rbf_gamma_grid()[0] == 2.0 ** -10 / 14 and spd_rbf_gamma_grid()[-1] == 2.0 ** 9 / 14
    g = ls_rbf_gamma_grid()
    assert len(g) == 18 and g[0] == 2.0 ** -14 / 14 and g[-1] == 2.0 ** 20 / 14
    assert [s.exponent for s in kernel_grid("spd_poly")] == list(range(1, 15))


def test_gram_persistence(tmp_path, rng):
    g = build_gram([random_spd(rng) for _ in range(6)], KernelSpec("spd_poly", gamma_p=0.25, exponent=3))
    save_gram_binary(g, tmp_path / "g.bin")
    back = load_gram_binary(tmp_path / "g.bin")
    assert np.array_equal(back.K, g.K) and back.spec == g.spec and back.psd_shift == g.psd_shift
    save_gram_csv(g, tmp_path / "g.csv")
    assert np.array_equal(np.loadtxt(tmp_path / "g.csv", delimiter=","), g.K)
