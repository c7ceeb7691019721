import math

import numpy as np
import pytest
import torch

from conftest import fd_grads_params, max_rel_error
from mavenlab import losses as L
from mavenlab.networks import EncoderOutput


def probs_from_fake(p_fake):
    """Two-class (n=1) probability rows with the given p(fake) values."""
    p = torch.as_tensor(p_fake, dtype=torch.float64).view(-1, 1)
    return torch.cat([1.0 - p, p], dim=1)


class TestDSupervised:
    def test_perfect_prediction(self):
        probs = torch.tensor([[1.0, 0.0, 0.0]])
        assert float(L.d_supervised_loss(probs, [1])) == pytest.approx(0.0)

    def test_quarter_probability(self):
        probs = torch.tensor([[0.25, 0.5, 0.25]])
        assert float(L.d_supervised_loss(probs, [1])) == pytest.approx(1.3863, abs=1e-4)

    def test_mean_over_items(self):
        probs = torch.tensor([[1.0, 0.0, 0.0], [0.25, 0.5, 0.25]])
        assert float(L.d_supervised_loss(probs, [1, 1])) == pytest.approx(0.6931, abs=1e-4)

    def test_fake_label_rejected(self):
        probs = torch.tensor([[0.2, 0.3, 0.5]])
        with pytest.raises(ValueError):
            L.d_supervised_loss(probs, [3])  # n=2, so 3 is the fake class


class TestDReal:
    def test_no_fake_mass(self):
        assert float(L.d_real_loss(probs_from_fake([0.0]))) == pytest.approx(0.0)

    def test_half(self):
        assert float(L.d_real_loss(probs_from_fake([0.5]))) == pytest.approx(0.6931, abs=1e-4)

    def test_clamped_at_full_fake_mass(self):
        val = float(L.d_real_loss(probs_from_fake([1.0])))
        assert val == pytest.approx(-math.log(1e-12), rel=1e-6)


class TestDFake:
    def test_full_fake_mass(self):
        assert float(L.d_fake_loss(probs_from_fake([1.0]))) == pytest.approx(0.0)

    def test_half(self):
        assert float(L.d_fake_loss(probs_from_fake([0.5]))) == pytest.approx(0.6931, abs=1e-4)

    def test_batch_mean(self):
        assert float(L.d_fake_loss(probs_from_fake([1.0, 0.5]))) == \
            pytest.approx(0.3466, abs=1e-4)

    def test_monotone_decreasing_in_p_fake(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = rng.uniform(0.05, 0.9, size=4)
            bumped = p.copy()
            i = rng.integers(4)
            bumped[i] += 0.05
            assert float(L.d_fake_loss(probs_from_fake(bumped))) < \
                float(L.d_fake_loss(probs_from_fake(p)))


class TestDUnsupervised:
    def test_zero(self):
        assert L.d_unsupervised_loss(0.0, 0.0, 0.0) == 0.0

    def test_sum(self):
        assert L.d_unsupervised_loss(0.5, 0.25, 0.25) == pytest.approx(1.0)

    def test_composition(self):
        real = float(L.d_real_loss(probs_from_fake([0.5])))
        fake1 = float(L.d_fake_loss(probs_from_fake([1.0])))
        fake2 = float(L.d_fake_loss(probs_from_fake([1.0, 0.5])))
        assert L.d_unsupervised_loss(real, fake1, fake2) == pytest.approx(1.0397, abs=1e-4)


class TestFeatureMatching:
    def test_identical_batches(self):
        f = torch.randn(4, 3, generator=torch.Generator().manual_seed(0))
        assert float(L.feature_matching_loss(f, f)) == pytest.approx(0.0)

    def test_hand_value(self):
        f_real = torch.tensor([[1.0, 2.0]])
        f_fake = torch.tensor([[0.0, 0.0]])
        assert float(L.feature_matching_loss(f_real, f_fake)) == pytest.approx(5.0)

    def test_symmetry(self):
        g = torch.Generator().manual_seed(1)
        a, b = torch.randn(5, 4, generator=g), torch.randn(7, 4, generator=g)
        assert float(L.feature_matching_loss(a, b)) == \
            pytest.approx(float(L.feature_matching_loss(b, a)))

    def test_item_permutation_invariant(self):
        # reordering changes the float summation order, so "exact" here means
        # within double-precision accumulation noise
        g = torch.Generator().manual_seed(2)
        a = torch.randn(6, 3, generator=g, dtype=torch.float64)
        b = torch.randn(6, 3, generator=g, dtype=torch.float64)
        perm = torch.randperm(6, generator=g)
        assert float(L.feature_matching_loss(a, b)) == \
            pytest.approx(float(L.feature_matching_loss(a[perm], b)), abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            L.feature_matching_loss(torch.zeros(2, 3), torch.zeros(2, 4))


class TestGAdversarial:
    def test_zero_fake_mass(self):
        assert float(L.g_adversarial_loss(probs_from_fake([0.0]))) == pytest.approx(0.0)

    def test_half(self):
        assert float(L.g_adversarial_loss(probs_from_fake([0.5]))) == \
            pytest.approx(0.6931, abs=1e-4)

    def test_total(self):
        assert L.g_total_loss(5.0, 0.6931, 0.0) == pytest.approx(5.6931)

    def test_monotone_increasing_in_p_fake(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = rng.uniform(0.05, 0.9, size=4)
            bumped = p.copy()
            i = rng.integers(4)
            bumped[i] += 0.05
            assert float(L.g_adversarial_loss(probs_from_fake(bumped))) > \
                float(L.g_adversarial_loss(probs_from_fake(p)))


class TestKL:
    def test_prior_matches_posterior(self):
        enc = EncoderOutput(mu=torch.zeros(3, 2), log_sigma_sq=torch.zeros(3, 2))
        assert float(L.kl_loss(enc)) == pytest.approx(0.0)

    def test_unit_mean_shift(self):
        enc = EncoderOutput(mu=torch.ones(1, 1), log_sigma_sq=torch.zeros(1, 1))
        assert float(L.kl_loss(enc)) == pytest.approx(0.5)

    def test_non_negative(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(20):
            enc = EncoderOutput(mu=2 * torch.randn(4, 3, generator=g),
                                log_sigma_sq=torch.randn(4, 3, generator=g))
            assert float(L.kl_loss(enc)) >= 0.0

    def test_rejects_non_finite(self):
        enc = EncoderOutput(mu=torch.tensor([[float("nan")]]),
                            log_sigma_sq=torch.zeros(1, 1))
        with pytest.raises(ValueError):
            L.kl_loss(enc)

    def test_matches_monte_carlo(self):
        # closed form vs E_q[log q - log p] over reparameterized samples
        rng = np.random.default_rng(0)
        n = 100_000
        for _ in range(5):
            mu = rng.normal(0, 1)
            logvar = rng.normal(0, 0.5)
            sigma = np.exp(0.5 * logvar)
            z = mu + sigma * rng.standard_normal(n)
            log_q = -0.5 * (np.log(2 * np.pi) + logvar + ((z - mu) / sigma) ** 2)
            log_p = -0.5 * (np.log(2 * np.pi) + z ** 2)
            diffs = log_q - log_p
            mc = diffs.mean()
            se = diffs.std(ddof=1) / np.sqrt(n)
            closed = float(L.kl_loss(EncoderOutput(
                mu=torch.tensor([[mu]]), log_sigma_sq=torch.tensor([[logvar]]))))
            assert abs(closed - mc) < 3 * se


class TestETotal:
    def test_zero(self):
        assert L.e_total_loss(0.0, 0.0) == 0.0

    def test_sum(self):
        assert L.e_total_loss(0.5, 5.0) == pytest.approx(5.5)

    def test_composition(self):
        kl = float(L.kl_loss(EncoderOutput(mu=torch.ones(1, 1),
                                           log_sigma_sq=torch.zeros(1, 1))))
        feat = float(L.feature_matching_loss(torch.tensor([[1.0, 2.0]]),
                                             torch.tensor([[0.0, 0.0]])))
        assert L.e_total_loss(kl, feat) == pytest.approx(5.5)


class TestBreakdown:
    def test_totals_are_sums(self):
        bd = L.LossBreakdown(d_supervised=0.1, d_real=0.2, d_fake1=0.3, d_fake2=0.4,
                             g_feature=0.5, g_fake1=0.6, g_fake2=0.7,
                             e_kl=0.8, e_feature=0.9)
        assert bd.total_d == pytest.approx(1.0, abs=1e-9)
        assert bd.total_g == pytest.approx(1.8, abs=1e-9)
        assert bd.total_e == pytest.approx(1.7, abs=1e-9)


def _fd_check(inputs, loss_fn, step=1e-5, tol=1e-4):
    for t in inputs:
        t.grad = None
    loss_fn().backward()
    analytic = [t.grad.clone() for t in inputs]
    numeric = fd_grads_params(lambda: loss_fn().detach(), inputs, step=step)
    err = max_rel_error(analytic, numeric)
    assert err < tol, f"max relative gradient error {err:.3e}"


class TestLossGradients:
    """Analytic gradients vs central finite differences (64-bit, step 1e-5)."""

    def test_supervised_wrt_logits(self):
        g = torch.Generator().manual_seed(0)
        logits = torch.randn(4, 4, generator=g, dtype=torch.float64,
                             requires_grad=True)
        labels = [1, 2, 3, 1]
        from mavenlab.networks import class_probabilities
        _fd_check([logits], lambda: L.d_supervised_loss(
            class_probabilities(logits), labels))

    def test_real_and_fake_wrt_logits(self):
        from mavenlab.networks import class_probabilities
        g = torch.Generator().manual_seed(1)
        logits = torch.randn(5, 3, generator=g, dtype=torch.float64,
                             requires_grad=True)
        _fd_check([logits], lambda: L.d_real_loss(class_probabilities(logits)))
        _fd_check([logits], lambda: L.d_fake_loss(class_probabilities(logits)))
        _fd_check([logits], lambda: L.g_adversarial_loss(class_probabilities(logits)))

    def test_feature_matching_wrt_features(self):
        g = torch.Generator().manual_seed(2)
        f_real = torch.randn(4, 6, generator=g, dtype=torch.float64, requires_grad=True)
        f_fake = torch.randn(3, 6, generator=g, dtype=torch.float64, requires_grad=True)
        _fd_check([f_real, f_fake],
                  lambda: L.feature_matching_loss(f_real, f_fake))

    def test_kl_wrt_encoder_outputs(self):
        g = torch.Generator().manual_seed(3)
        mu = torch.randn(4, 3, generator=g, dtype=torch.float64, requires_grad=True)
        lv = torch.randn(4, 3, generator=g, dtype=torch.float64, requires_grad=True)
        _fd_check([mu, lv], lambda: L.kl_loss(EncoderOutput(mu=mu, log_sigma_sq=lv)))


class TestHistoryCsv:
    def test_write_and_shape(self, tmp_path):
        bd = L.LossBreakdown(d_real=0.25)
        row = bd.as_row()
        row["step"] = 1
        row["epoch"] = 1
        path = tmp_path / "history.csv"
        L.write_history_csv(path, [row])
        lines = path.read_text().splitlines()
        assert lines[0].split(",") == L.HISTORY_COLUMNS
        assert len(lines) == 2
