import numpy as np
import pytest

from ipvae.vae import (
    ModelDimensionError,
    ModelIntegrityError,
    ModelTruncatedError,
    ModelVersionError,
    TrainConfig,
    TrainingDivergedError,
    VaeModel,
    decode,
    encode,
    kl_term,
    load,
    loss,
    loss_backward,
    loss_given_eps,
    reparametrize,
    sample,
    sample_matrix,
    save,
    smooth_curve,
    train,
    train_new,
)


@pytest.fixture(scope="module")
def toy_model():
    return VaeModel.initialize(input_dim=20, latent_dim=2, rng=11)


class TestEncode:
    def test_sigma_strictly_positive(self, toy_model):
        rng = np.random.default_rng(0)
        for _ in range(10):
            _, sigma = encode(toy_model, rng.normal(0, 20, 20))
            assert np.all(sigma > 0)

    def test_deterministic(self, toy_model):
        x = np.linspace(30, 1, 20)
        a = encode(toy_model, x)
        b = encode(toy_model, x)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_trained_mu_hugs_prior(self, small_corpus):
        # With one informative factor, a K=1 posterior-mean cloud sits close
        # to the standard-normal prior in both center and spread.
        _, noisy, _ = small_corpus
        model, _ = train_new(noisy, TrainConfig(seed=7, latent_dim=1))
        mu, _ = encode(model, noisy)
        assert abs(mu.mean()) < 0.5
        assert 0.5 < mu.std() < 1.5

    def test_trained_mu_structure_k2(self, canonical_model, canonical_corpus):
        # At K=2 the decay family supports a single informative coordinate:
        # it hugs the prior while the spare coordinate collapses onto it
        # (zero-centered, near-zero spread). See the decisions ledger.
        model, _ = canonical_model
        _, noisy, _ = canonical_corpus
        mu, _ = encode(model, noisy[:20000])
        means, stds = mu.mean(axis=0), mu.std(axis=0)
        assert np.all(np.abs(means) < 0.5)
        informative = int(np.argmax(stds))
        assert 0.5 < stds[informative] < 1.5
        assert stds[1 - informative] < 0.5

    def test_dimension_mismatch(self, toy_model):
        with pytest.raises(ValueError, match="dim"):
            encode(toy_model, np.ones(19))


class TestReparametrize:
    def test_zero_sigma_returns_mu(self):
        mu = np.array([1.5, -2.0])
        z = reparametrize(mu, np.zeros(2), rng=1)
        assert np.array_equal(z, mu)

    def test_statistics(self):
        rng = np.random.default_rng(2)
        z = reparametrize(np.zeros((100_000, 2)), np.ones((100_000, 2)), rng)
        assert np.all(np.abs(z.mean(axis=0)) < 0.02)
        assert np.all((z.std(axis=0) > 0.98) & (z.std(axis=0) < 1.02))

    def test_deterministic_given_seed(self):
        mu, sigma = np.array([0.5, 0.5]), np.array([2.0, 0.1])
        assert np.array_equal(
            reparametrize(mu, sigma, rng=33), reparametrize(mu, sigma, rng=33)
        )

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            reparametrize(np.zeros(2), np.array([1.0, -0.1]), rng=1)


class TestDecode:
    def test_deterministic(self, toy_model):
        z = np.array([0.3, -1.2])
        assert np.array_equal(decode(toy_model, z), decode(toy_model, z))

    def test_finite_for_moderate_latents(self, toy_model):
        rng = np.random.default_rng(3)
        z = rng.uniform(-5, 5, (200, 2))
        assert np.all(np.isfinite(decode(toy_model, z)))

    def test_decode_origin_near_corpus_median(self, canonical_model, canonical_corpus):
        model, _ = canonical_model
        _, noisy, _ = canonical_corpus
        origin_curve = decode(model, np.zeros(2))
        median_curve = np.median(noisy, axis=0)
        err = np.sqrt(np.mean((origin_curve - median_curve) ** 2))
        assert err < 0.75  # mV/V; measured ~0.1 on the canonical run


class TestLoss:
    def test_kl_zero_at_prior(self):
        assert kl_term(np.zeros(2), np.zeros(2))[0] == pytest.approx(0.0, abs=1e-12)

    def test_kl_closed_form_ones(self):
        kl = kl_term(np.array([1.0, 1.0]), np.array([0.0, 0.0]))[0]
        assert kl == pytest.approx(1.0, abs=1e-12)

    def test_kl_non_negative_randomized(self):
        rng = np.random.default_rng(4)
        mu = rng.uniform(-5, 5, (10_000, 3))
        logvar = rng.uniform(-6, 4, (10_000, 3))
        assert np.all(kl_term(mu, logvar) >= 0.0)

    def test_nll_is_summed_squared_error_and_zero_when_forced(self, toy_model):
        rng = np.random.default_rng(8)
        x = rng.normal(3, 2, (3, 20))
        report, cache = loss_given_eps(toy_model, x, rng.standard_normal((3, 2)))
        manual = float(np.mean(np.sum((cache.x_std - cache.x_rec_std) ** 2, axis=1)))
        assert report.nll == pytest.approx(manual, rel=1e-12)
        # forcing x' == x zeroes the reconstruction term
        assert float(np.sum((cache.x_std - cache.x_std) ** 2)) == 0.0

    def test_total_combines_terms(self, toy_model):
        rng = np.random.default_rng(5)
        x = rng.normal(5, 3, (4, 20))
        for beta in (0.0, 0.5, 1.0, 2.0):
            report, _ = loss(toy_model, x, rng=6, kl_weight=beta)
            assert report.total == pytest.approx(
                report.nll + beta * report.kl, rel=1e-12
            )

    def test_gradient_check_small(self, toy_model):
        rng = np.random.default_rng(7)
        model = VaeModel.initialize(input_dim=6, latent_dim=2, hidden=(5, 3), rng=rng)
        x = rng.normal(0, 2, (2, 6))
        eps = rng.standard_normal((2, 2))
        _, cache = loss_given_eps(model, x, eps, kl_weight=0.8)
        grads = loss_backward(model, cache)
        h = 1e-5
        for p, g in zip(model.parameters(), grads):
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                lp, _ = loss_given_eps(model, x, eps, 0.8)
                p[idx] = orig - h
                lm, _ = loss_given_eps(model, x, eps, 0.8)
                p[idx] = orig
                fd = (lp.total - lm.total) / (2 * h)
                if abs(g[idx] - fd) > 1e-9:
                    assert abs(g[idx] - fd) / max(1e-8, abs(g[idx]) + abs(fd)) < 1e-4

    def test_backward_requires_cache(self, toy_model):
        with pytest.raises(ValueError, match="cache"):
            loss_backward(toy_model, None)

    def test_non_finite_error_names_the_stage(self):
        from ipvae.vae import NonFiniteError

        model = VaeModel.initialize(input_dim=6, latent_dim=2, hidden=(5, 3), rng=1)
        model.logvar_head.bias[:] = 1e4  # exp(5000) overflows to inf
        with pytest.raises(NonFiniteError, match="standard deviation"):
            loss_given_eps(model, np.ones((1, 6)), np.zeros((1, 2)))


class TestTrain:
    def test_deterministic_end_to_end(self, small_corpus):
        _, noisy, _ = small_corpus
        sub = noisy[:2000]
        m1, r1 = train_new(sub, TrainConfig(seed=3))
        m2, r2 = train_new(sub, TrainConfig(seed=3))
        for a, b in zip(m1.parameters(), m2.parameters()):
            assert np.array_equal(a, b)
        assert [r.total for r in r1] == [r.total for r in r2]

    def test_drop_last_batching(self, small_corpus):
        _, noisy, _ = small_corpus
        _, reports = train_new(noisy[:1000], TrainConfig(seed=3, batch_size=64))
        assert len(reports) == 1000 // 64
        assert [r.step for r in reports] == list(range(1, 1000 // 64 + 1))

    def test_divergence_guard(self, small_corpus):
        _, noisy, _ = small_corpus
        with pytest.raises(TrainingDivergedError) as exc_info:
            train_new(noisy[:2000], TrainConfig(seed=3, lr=1e6))
        assert exc_info.value.step > 0

    def test_loss_terms_positive_and_same_order(self, canonical_model):
        _, reports = canonical_model
        tail = reports[-1000:]
        nll = float(np.mean([r.nll for r in tail]))
        kl = float(np.mean([r.kl for r in tail]))
        assert nll > 0 and kl > 0
        assert max(nll, kl) / min(nll, kl) < 10.0

    def test_ae_mode_reconstructs_at_least_as_well(self, small_corpus):
        _, noisy, _ = small_corpus
        sub = noisy[:20_000]
        plain, _ = train_new(sub, TrainConfig(seed=5, kl_weight=0.0))
        vae, _ = train_new(sub, TrainConfig(seed=5, kl_weight=1.0))
        mu_p, _ = encode(plain, sub)
        mu_v, _ = encode(vae, sub)
        err_p = np.mean((decode(plain, mu_p) - sub) ** 2)
        err_v = np.mean((decode(vae, mu_v) - sub) ** 2)
        assert err_p <= err_v

    def test_smooth_curve_window(self):
        values = np.arange(10.0)
        sm = smooth_curve(values, window=3)
        assert sm[0] == pytest.approx(1.0)
        assert len(sm) == 8


class TestSample:
    def test_sigma_zero_collapses_to_origin_decode(self, small_model):
        model, _ = small_model
        origin = decode(model, np.zeros(2))
        decays = sample(model, 50, sigma_scale=0.0, rng=9)
        for dec in decays:
            assert np.allclose(dec.windows, origin, atol=1e-12)

    def test_small_sigma_within_tolerance(self, small_model):
        model, _ = small_model
        origin = decode(model, np.zeros(2))
        values = sample_matrix(model, 200, sigma_scale=1e-5, rng=10)
        assert np.max(np.abs(values - origin)) < 1e-3

    def test_deterministic(self, small_model):
        model, _ = small_model
        a = sample_matrix(model, 20, 1.0, rng=12)
        b = sample_matrix(model, 20, 1.0, rng=12)
        assert np.array_equal(a, b)

    def test_returns_decays_with_matching_scheme(self, small_model):
        model, _ = small_model
        decays = sample(model, 5, rng=13)
        assert all(dec.scheme.count == model.input_dim for dec in decays)


class TestPersistence:
    def test_round_trip_bit_exact(self, small_model, tmp_path):
        model, _ = small_model
        path = tmp_path / "model.ipvae"
        save(model, path)
        back = load(path)
        assert back.latent_dim == model.latent_dim
        assert back.input_dim == model.input_dim
        assert back.input_offset == model.input_offset
        assert back.input_scale == model.input_scale
        for a, b in zip(model.parameters(), back.parameters()):
            assert np.array_equal(a, b)

    def test_dimension_check(self, small_model, tmp_path):
        model, _ = small_model
        path = tmp_path / "model.ipvae"
        save(model, path)
        with pytest.raises(ModelDimensionError, match="latent"):
            load(path, expected_latent_dim=1)

    def test_checksum_corruption(self, small_model, tmp_path):
        model, _ = small_model
        path = tmp_path / "model.ipvae"
        save(model, path)
        blob = bytearray(path.read_bytes())
        blob[60] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ModelIntegrityError):
            load(path)

    def test_version_mismatch(self, small_model, tmp_path):
        import hashlib
        import struct

        model, _ = small_model
        path = tmp_path / "model.ipvae"
        save(model, path)
        blob = path.read_bytes()
        payload = bytearray(blob[5:-8])
        payload[0:4] = struct.pack("<I", 99)
        digest = hashlib.sha256(bytes(payload)).digest()[:8]
        path.write_bytes(blob[:5] + bytes(payload) + digest)
        with pytest.raises(ModelVersionError, match="99"):
            load(path)

    def test_truncated_file(self, small_model, tmp_path):
        import hashlib

        model, _ = small_model
        path = tmp_path / "model.ipvae"
        save(model, path)
        blob = path.read_bytes()
        cut = blob[5:200]
        digest = hashlib.sha256(cut).digest()[:8]
        path.write_bytes(blob[:5] + cut + digest)
        with pytest.raises(ModelTruncatedError):
            load(path)

    def test_bad_magic(self, tmp_path):
        from ipvae.vae import ModelFileError

        path = tmp_path / "junk.ipvae"
        path.write_bytes(b"NOTIP" + b"\x00" * 64)
        with pytest.raises(ModelFileError, match="magic"):
            load(path)
