import numpy as np
import pytest

from dibod import autodiff as ad
from dibod.autodiff import ContractError, Tensor
from dibod.hsic import (DegenerateBandwidthError, KernelSpec, center_gram,
                        gram, hsic, median_bandwidth)

from util import check_gradients


def brute_force_hsic(a, b, kind="linear", sigma=None):
    """Direct evaluation of tr(Ka H Kb H) / (n-1)^2 with explicit loops."""
    n = a.shape[0]

    def kern(x):
        k = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if kind == "linear":
                    k[i, j] = float(x[i] @ x[j])
                else:
                    k[i, j] = float(np.exp(-((x[i] - x[j]) ** 2).sum() / (2 * sigma**2)))
        return k

    h = np.eye(n) - np.ones((n, n)) / n
    return float(np.trace(kern(a) @ h @ kern(b) @ h)) / (n - 1) ** 2


class TestGram:
    def test_linear_on_standard_basis(self):
        x = Tensor(np.eye(2))
        k = gram(x, KernelSpec(kind="linear"))
        np.testing.assert_allclose(k.data, np.eye(2), atol=1e-15)

    def test_rbf_unit_diagonal(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(6, 3)))
        k = gram(x, KernelSpec(kind="rbf", bandwidth=1.3))
        np.testing.assert_allclose(np.diag(k.data), np.ones(6), atol=1e-12)

    def test_rbf_known_offdiagonal(self):
        x = Tensor(np.array([[0.0], [2.0]]))
        k = gram(x, KernelSpec(kind="rbf", bandwidth=1.0))
        assert k.data[0, 1] == pytest.approx(np.exp(-2.0), rel=1e-12)

    def test_median_sentinel_degenerate(self):
        with pytest.raises(DegenerateBandwidthError):
            median_bandwidth(np.ones((4, 2)))

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(5, 2)))
        for spec in (KernelSpec("linear"), KernelSpec("rbf", 0.7)):
            k = gram(x, spec).data
            np.testing.assert_allclose(k, k.T, atol=1e-12)


class TestHsic:
    def test_constant_input_is_zero(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.normal(size=(6, 3)))
        b = Tensor(np.ones((6, 2)))
        val = hsic(a, b, KernelSpec("linear")).item()
        assert abs(val) < 1e-12

    def test_self_dependence_positive(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.normal(size=(6, 3)))
        assert hsic(a, a, KernelSpec("linear")).item() > 1e-6

    @pytest.mark.parametrize("n", [2, 3, 7])
    def test_linear_matches_brute_force(self, n):
        rng = np.random.default_rng(10 + n)
        a = rng.normal(size=(n, 3))
        b = rng.normal(size=(n, 2))
        got = hsic(Tensor(a), Tensor(b), KernelSpec("linear")).item()
        want = brute_force_hsic(a, b, "linear")
        assert got == pytest.approx(want, abs=1e-12)

    def test_rbf_matches_brute_force(self):
        rng = np.random.default_rng(20)
        a = rng.normal(size=(5, 2))
        b = rng.normal(size=(5, 2))
        got = hsic(Tensor(a), Tensor(b), KernelSpec("rbf", 0.9)).item()
        want = brute_force_hsic(a, b, "rbf", sigma=0.9)
        assert got == pytest.approx(want, abs=1e-12)

    def test_symmetry_in_arguments(self):
        rng = np.random.default_rng(21)
        a = Tensor(rng.normal(size=(8, 3)))
        b = Tensor(rng.normal(size=(8, 3)))
        spec = KernelSpec("rbf", 1.1)
        assert hsic(a, b, spec).item() == pytest.approx(hsic(b, a, spec).item(), abs=1e-12)

    def test_centering_annihilates_ones_exactly(self):
        for n in (3, 7, 9):
            centered = center_gram(Tensor(np.ones((n, n)))).data
            np.testing.assert_array_equal(centered, np.zeros((n, n)))

    def test_sample_count_contracts(self):
        a = Tensor(np.ones((3, 2)))
        with pytest.raises(ContractError):
            hsic(a, Tensor(np.ones((4, 2))), KernelSpec("linear"))
        with pytest.raises(ContractError):
            hsic(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 2))), KernelSpec("linear"))

    def test_independence_consistency(self):
        hits = 0
        for seed in range(5):
            rng = np.random.default_rng(1000 + seed)
            a = Tensor(rng.standard_normal((2048, 1)))
            b = Tensor(rng.standard_normal((2048, 1)))
            indep = hsic(a, b, KernelSpec("rbf", "median")).item()
            copied = hsic(a, a, KernelSpec("rbf", "median")).item()
            if indep < 5e-3 and copied >= 10 * indep:
                hits += 1
        assert hits >= 4

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(30)
        a = ad.parameter(rng.normal(size=(5, 2)))
        b = ad.parameter(rng.normal(size=(5, 2)))
        spec = KernelSpec("rbf", 0.8)

        def value():
            return brute_force_hsic(a.data, b.data, "rbf", sigma=0.8)

        check_gradients(lambda: hsic(a, b, spec), value, [a, b])

    def test_gradient_linear_kernel(self):
        rng = np.random.default_rng(31)
        a = ad.parameter(rng.normal(size=(4, 3)))
        b = ad.parameter(rng.normal(size=(4, 2)))
        spec = KernelSpec("linear")

        def value():
            return brute_force_hsic(a.data, b.data, "linear")

        check_gradients(lambda: hsic(a, b, spec), value, [a, b])
