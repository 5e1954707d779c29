import numpy as np
import pytest

from dibod import autodiff as ad
from dibod.autodiff import ContractError, Tensor
from dibod.mi import (LOG_FLOOR, VariationalCritic, ba_lower_bound, club_upper_bound,
                      conditional_club_view, kl_compression, label_entropy)

from util import check_gradients


def perfect_categorical_critic(m, scale=60.0):
    """Critic whose logits are scale * z for one-hot z: q(y|z) ~ exact."""
    critic = VariationalCritic(m, m, np.random.default_rng(0), "categorical", hidden=m)
    critic.net.layers[0].w.data = np.eye(m)
    critic.net.layers[0].b.data = np.zeros((1, m))
    critic.net.layers[1].w.data = scale * np.eye(m)
    critic.net.layers[1].b.data = np.zeros((1, m))
    return critic


def uniform_categorical_critic(d_in, m):
    critic = VariationalCritic(d_in, m, np.random.default_rng(0), "categorical")
    for p in critic.params():
        p.data = np.zeros_like(p.data)
    return critic


def exact_gaussian_critic(rho):
    """q(y|z) = N(rho z, 1 - rho^2) built by hand through the relu trunk."""
    critic = VariationalCritic(1, 1, np.random.default_rng(0), "gaussian", hidden=2)
    critic.trunk.layers[0].w.data = np.array([[1.0, -1.0]])
    critic.trunk.layers[0].b.data = np.zeros((1, 2))
    critic.mu_head.layers[0].w.data = np.array([[rho], [-rho]])
    critic.mu_head.layers[0].b.data = np.zeros((1, 1))
    critic.logvar_head.layers[0].w.data = np.zeros((2, 1))
    critic.logvar_head.layers[0].b.data = np.array([[np.log(1 - rho**2)]])
    return critic


def bivariate_gaussian(n, rho, seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 1))
    y = rho * z + np.sqrt(1 - rho**2) * rng.standard_normal((n, 1))
    return z, y


def quantile_bins(y, k):
    edges = np.quantile(y, np.linspace(0, 1, k + 1)[1:-1])
    return np.digitize(y.reshape(-1), edges)


class TestBarberAgakov:
    def test_identity_channel_reaches_label_entropy(self):
        y = np.array([0, 1] * 8)
        z = Tensor(np.eye(2)[y])
        bound = ba_lower_bound(z, y, perfect_categorical_critic(2)).item()
        assert bound == pytest.approx(np.log(2), abs=1e-9)

    def test_uniform_critic_gives_entropy_minus_log_m(self):
        y = np.array([0, 1, 2, 0, 1, 2])
        z = Tensor(np.random.default_rng(0).normal(size=(6, 4)))
        bound = ba_lower_bound(z, y, uniform_categorical_critic(4, 3)).item()
        assert bound == pytest.approx(label_entropy(y) - np.log(3), abs=1e-12)
        assert bound <= 1e-12

    def test_clamp_never_minus_infinity(self):
        y = np.array([0, 1])
        z = Tensor(np.array([[1000.0], [-1000.0]]))
        critic = VariationalCritic(1, 2, np.random.default_rng(1), "categorical")
        val = ba_lower_bound(z, y, critic).item()
        assert np.isfinite(val)
        assert val >= label_entropy(y) + LOG_FLOOR

    def test_requires_categorical_critic(self):
        critic = VariationalCritic(1, 1, np.random.default_rng(0), "gaussian")
        with pytest.raises(ContractError):
            ba_lower_bound(Tensor(np.zeros((4, 1))), np.zeros(4, dtype=int), critic)

    def test_trained_critic_approaches_discrete_mi(self):
        # z carries y perfectly; trained bound should approach H(Y) = ln 2
        rng = np.random.default_rng(2)
        y = rng.integers(0, 2, size=512)
        z = np.eye(2)[y] + 0.01 * rng.standard_normal((512, 2))
        critic = VariationalCritic(2, 2, rng, "categorical")
        critic.fit(z, y, steps=400, rng=rng)
        bound = ba_lower_bound(Tensor(z), y, critic).item()
        assert np.log(2) - 0.05 <= bound <= np.log(2) + 1e-9


class TestClub:
    def test_constant_representation_is_zero(self):
        z = Tensor(np.ones((8, 3)))
        y = np.array([0, 1, 0, 1, 1, 0, 1, 0])
        critic = VariationalCritic(3, 2, np.random.default_rng(3), "categorical")
        assert abs(club_upper_bound(z, y, critic).item()) < 1e-12

    def test_permutation_oracle_mean_near_zero(self):
        rng = np.random.default_rng(4)
        z, y = bivariate_gaussian(512, 0.8, 5)
        perm = rng.permutation(512)
        y_ind = y[perm]  # break the dependence
        critic = VariationalCritic(1, 1, rng, "gaussian")
        critic.fit(z, y_ind, steps=300, rng=rng)
        estimates = []
        for k in range(20):
            p = np.random.default_rng(100 + k).permutation(512)
            estimates.append(club_upper_bound(Tensor(z), y[p], critic).item())
        assert abs(float(np.mean(estimates))) < 0.05

    def test_exact_conditional_critic_upper_bounds_gaussian_mi(self):
        rho = 0.9
        z, y = bivariate_gaussian(4096, rho, 6)
        critic = exact_gaussian_critic(rho)
        est = club_upper_bound(Tensor(z), Tensor(y), critic).item()
        true_mi = -0.5 * np.log(1 - rho**2)
        assert est >= true_mi
        # closed form with the exact conditional: rho^2 / (1 - rho^2)
        assert est == pytest.approx(rho**2 / (1 - rho**2), abs=0.4)

    def test_categorical_negative_term_matches_double_loop(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(16, 3))
        y = rng.integers(0, 3, size=16)
        critic = VariationalCritic(3, 3, rng, "categorical")
        got = club_upper_bound(Tensor(z), y, critic).item()
        logq = np.maximum(np.log(critic.probabilities(Tensor(z)).data), LOG_FLOOR)
        pos = np.mean([logq[i, y[i]] for i in range(16)])
        neg = np.mean([[logq[i, y[j]] for j in range(16)] for i in range(16)])
        assert got == pytest.approx(pos - neg, abs=1e-12)

    def test_gaussian_negative_term_matches_double_loop(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=(12, 2))
        y = rng.normal(size=(12, 2))
        critic = VariationalCritic(2, 2, rng, "gaussian")
        got = club_upper_bound(Tensor(z), Tensor(y), critic).item()
        mu, logvar = critic.gaussian_params(Tensor(z))
        mu, logvar = mu.data, logvar.data

        def logq(i, j):
            var = np.exp(logvar[i])
            ll = -0.5 * (((y[j] - mu[i]) ** 2) / var + logvar[i] + np.log(2 * np.pi)).sum()
            return max(ll, LOG_FLOOR)

        pos = np.mean([logq(i, i) for i in range(12)])
        neg = np.mean([[logq(i, j) for j in range(12)] for i in range(12)])
        assert got == pytest.approx(pos - neg, abs=1e-10)


class TestKlCompression:
    def test_zero_mean_unit_variance_is_zero(self):
        mu = Tensor(np.zeros((4, 3)))
        logvar = Tensor(np.zeros((4, 3)))
        assert kl_compression(mu, logvar).item() == pytest.approx(0.0, abs=1e-15)

    def test_unit_mean_single_dim(self):
        mu = Tensor(np.array([[1.0, 0.0]]))
        logvar = Tensor(np.zeros((1, 2)))
        assert kl_compression(mu, logvar).item() == pytest.approx(0.5, abs=1e-15)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(9)
        mu = rng.normal(size=(6, 4))
        logvar = rng.normal(scale=0.5, size=(6, 4))
        got = kl_compression(Tensor(mu), Tensor(logvar)).item()
        want = float(np.mean(0.5 * (np.exp(logvar) + mu**2 - 1 - logvar).sum(axis=1)))
        assert got == pytest.approx(want, abs=1e-12)

    def test_zero_iff_standard_normal_params(self):
        mu = Tensor(np.full((2, 2), 0.1))
        logvar = Tensor(np.zeros((2, 2)))
        assert kl_compression(mu, logvar).item() > 0


class TestConditionalClubView:
    def test_view_independent_z_is_zero(self):
        rng = np.random.default_rng(10)
        base = rng.normal(size=(6, 3))
        z = Tensor(np.repeat(base, 2, axis=0))           # same z for both views
        view_ids = np.tile([0, 1], 6)
        y = np.repeat(rng.integers(0, 2, size=6), 2)
        critics = {c: VariationalCritic(3, 2, rng, "categorical") for c in (0, 1)}
        assert abs(conditional_club_view(z, view_ids, y, critics).item()) < 1e-12

    def test_one_hot_view_identity_exceeds_log_v(self):
        v = 3
        view_ids = np.tile(np.arange(v), 8)
        z = Tensor(np.eye(v)[view_ids])
        y = np.zeros(v * 8, dtype=int)
        critics = {0: perfect_categorical_critic(v)}
        est = conditional_club_view(z, view_ids, y, critics).item()
        assert est >= np.log(v)

    def test_single_class_reduces_to_plain_club(self):
        rng = np.random.default_rng(11)
        z = rng.normal(size=(10, 3))
        view_ids = rng.integers(0, 2, size=10)
        y = np.zeros(10, dtype=int)
        critic = VariationalCritic(3, 2, rng, "categorical")
        strat = conditional_club_view(Tensor(z), view_ids, y, {0: critic}).item()
        plain = club_upper_bound(Tensor(z), view_ids, critic).item()
        assert strat == pytest.approx(plain, abs=1e-12)

    def test_small_class_skipped(self):
        rng = np.random.default_rng(12)
        z = Tensor(rng.normal(size=(5, 2)))
        view_ids = np.array([0, 1, 0, 1, 0])
        y = np.array([0, 0, 0, 0, 1])  # class 1 has a single sample
        critics = {0: VariationalCritic(2, 2, rng, "categorical")}
        val = conditional_club_view(z, view_ids, y, critics).item()
        assert np.isfinite(val)


class TestDifferentiability:
    def test_ba_gradient_wrt_z(self):
        rng = np.random.default_rng(13)
        z = ad.parameter(rng.normal(size=(6, 3)))
        y = rng.integers(0, 2, size=6)
        critic = VariationalCritic(3, 2, rng, "categorical")

        def value():
            return ba_lower_bound(Tensor(z.data), y, critic).item()

        check_gradients(lambda: ba_lower_bound(z, y, critic), value, [z])

    def test_club_categorical_gradient_wrt_z(self):
        rng = np.random.default_rng(14)
        z = ad.parameter(rng.normal(size=(6, 3)))
        y = rng.integers(0, 3, size=6)
        critic = VariationalCritic(3, 3, rng, "categorical")

        def value():
            return club_upper_bound(Tensor(z.data), y, critic).item()

        check_gradients(lambda: club_upper_bound(z, y, critic), value, [z])

    def test_club_gaussian_gradient_wrt_both(self):
        rng = np.random.default_rng(15)
        z = ad.parameter(rng.normal(size=(5, 2)))
        y = ad.parameter(rng.normal(size=(5, 2)))
        critic = VariationalCritic(2, 2, rng, "gaussian")

        def value():
            return club_upper_bound(Tensor(z.data), Tensor(y.data), critic).item()

        check_gradients(lambda: club_upper_bound(z, y, critic), value, [z, y])

    def test_kl_gradient(self):
        rng = np.random.default_rng(16)
        mu = ad.parameter(rng.normal(size=(4, 3)))
        logvar = ad.parameter(rng.normal(scale=0.3, size=(4, 3)))

        def value():
            return float(np.mean(0.5 * (np.exp(logvar.data) + mu.data**2
                                        - 1 - logvar.data).sum(axis=1)))

        check_gradients(lambda: kl_compression(mu, logvar), value, [mu, logvar])


class TestBracketProperty:
    def test_bounds_bracket_gaussian_mi_after_convergence(self):
        # rho chosen so the upper bound's own excess stays inside the band:
        # with the exact conditional it sits at rho^2/(1-rho^2) vs the true
        # -0.5 ln(1-rho^2)
        rho = 0.45
        true_mi = -0.5 * np.log(1 - rho**2)
        hits = 0
        for seed in range(5):
            z, y = bivariate_gaussian(4096, rho, 200 + seed)
            rng = np.random.default_rng(300 + seed)
            y_binned = quantile_bins(y, 16)
            ba_critic = VariationalCritic(1, 16, rng, "categorical")
            ba_critic.fit(z, y_binned, steps=1500, rng=rng)
            ba = ba_lower_bound(Tensor(z), y_binned, ba_critic).item()
            club_critic = VariationalCritic(1, 1, rng, "gaussian")
            club_critic.fit(z, y, steps=2500, rng=rng)
            club = club_upper_bound(Tensor(z), Tensor(y), club_critic).item()
            ok = (true_mi - 0.2 <= ba <= true_mi + 1e-6
                  and true_mi - 1e-6 <= club <= true_mi + 0.2)
            hits += ok
        assert hits >= 4
