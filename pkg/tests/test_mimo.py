import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from admmdet.errors import DimensionError, DomainError, ParameterError
from admmdet.linalg import RngStream
from admmdet.mimo import (
    DatasetSpec,
    SnrPolicy,
    SystemConfig,
    alphabet,
    awgn_transmit,
    complex_to_real,
    compose_symbols,
    decompose_symbols,
    generate_channel,
    generate_dataset,
    noise_variance,
    quantize,
    symbol_energy,
    symbol_error_rate,
)

from oracles import planes_bruteforce


class TestSystemConfig:
    def test_derived_dimensions(self):
        cfg = SystemConfig(mc=64, kc=16, q=2)
        assert (cfg.M, cfg.K, cfg.order) == (128, 32, 16)

    @pytest.mark.parametrize("kw", [dict(mc=4, kc=4, q=1), dict(mc=4, kc=0, q=1),
                                    dict(mc=4, kc=2, q=0), dict(mc=4, kc=2, q=1, L=0)])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            SystemConfig(**kw)


class TestComplexToReal:
    def test_one(self):
        np.testing.assert_array_equal(complex_to_real(np.array([[1 + 0j]])), [[1, 0], [0, 1]])

    def test_imaginary_unit(self):
        np.testing.assert_array_equal(complex_to_real(np.array([[1j]])), [[0, 1], [-1, 0]])

    def test_scalar_product(self):
        H = complex_to_real(np.array([[1 + 2j]]))
        np.testing.assert_array_equal(H, [[1, 2], [-2, 1]])
        np.testing.assert_array_equal(H @ np.array([1.0, 1.0]), [3, -1])

    def test_random_block_layout(self):
        rng = np.random.default_rng(0)
        Hc = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
        yc = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        H, y = complex_to_real(Hc, yc)
        np.testing.assert_array_equal(H[:5, :3], Hc.real)
        np.testing.assert_array_equal(H[:5, 3:], Hc.imag)
        np.testing.assert_array_equal(H[5:, :3], -Hc.imag)
        np.testing.assert_array_equal(H[5:, 3:], Hc.real)
        np.testing.assert_array_equal(y, np.concatenate([yc.real, yc.imag]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            complex_to_real(np.ones((3, 2), complex), np.ones(4, complex))

    def test_product_relation(self):
        # block layout [[A, B], [-B, A]] realifies conj(Hc) @ sc
        rng = np.random.default_rng(1)
        Hc = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
        sc = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        H = complex_to_real(Hc)
        A, B = Hc.real, Hc.imag
        expect = np.concatenate([A @ sc.real + B @ sc.imag, -B @ sc.real + A @ sc.imag])
        np.testing.assert_allclose(H @ np.concatenate([sc.real, sc.imag]), expect, atol=1e-12)
        yc = np.conj(Hc) @ sc
        np.testing.assert_allclose(expect, np.concatenate([yc.real, yc.imag]), atol=1e-12)


class TestChannel:
    cfg = SystemConfig(mc=400, kc=250, q=1)

    def test_moments(self):
        Hc = generate_channel(self.cfg, RngStream(5))
        assert Hc.size == 100_000
        power = np.abs(Hc) ** 2
        assert 0.98 <= power.mean() <= 1.02
        assert abs(Hc.real.mean()) < 3 * math.sqrt(0.5 / Hc.size)
        assert abs(Hc.imag.mean()) < 3 * math.sqrt(0.5 / Hc.size)
        assert abs(Hc.real.var() - 0.5) < 0.01

    def test_replay(self):
        assert np.array_equal(generate_channel(self.cfg, RngStream(7, 1)),
                              generate_channel(self.cfg, RngStream(7, 1)))


class TestBitPlanes:
    def test_compose_examples(self):
        np.testing.assert_array_equal(compose_symbols([[1, -1]]), [1, -1])
        np.testing.assert_array_equal(compose_symbols([[1], [-1]]), [-1])
        np.testing.assert_array_equal(compose_symbols([[1], [1], [1]]), [7])

    @pytest.mark.parametrize("s,q", [(3, 2), (-1, 2), (-7, 3), (5, 3), (1, 1)])
    def test_decompose_matches_bruteforce(self, s, q):
        hits = planes_bruteforce(s, q)
        assert len(hits) == 1
        z = decompose_symbols(np.array([float(s)]), q)
        assert tuple(z[:, 0].astype(int)) == hits[0]

    @pytest.mark.parametrize("q", [1, 2, 3])
    def test_round_trip_exhaustive(self, q):
        for bits in itertools.product((-1.0, 1.0), repeat=q):
            z = np.array(bits)[:, None]
            np.testing.assert_array_equal(decompose_symbols(compose_symbols(z), q), z)
        a = alphabet(q)
        np.testing.assert_array_equal(compose_symbols(decompose_symbols(a, q)), a)

    def test_compose_rejects_non_binary(self):
        with pytest.raises(DomainError):
            compose_symbols([[1.0, 0.5]])

    @pytest.mark.parametrize("s", [2.0, 9.0, 0.0])
    def test_decompose_rejects_off_grid(self, s):
        with pytest.raises(DomainError, match="entry 1"):
            decompose_symbols(np.array([1.0, s]), 3 if s == 9.0 else 2)


class TestAwgn:
    def test_symbol_energy(self):
        assert symbol_energy(1) == 2.0
        assert symbol_energy(2) == 10.0
        assert symbol_energy(3) == 42.0
        for q in (1, 2, 3):
            a = alphabet(q)
            assert symbol_energy(q) == pytest.approx(2 * np.mean(a * a))

    def test_noiseless(self):
        rng = np.random.default_rng(0)
        H = rng.standard_normal((8, 4))
        s = np.array([1.0, -3.0, 3.0, -1.0])
        np.testing.assert_array_equal(awgn_transmit(H, s, math.inf, RngStream(1), 2), H @ s)

    def test_noise_variance_empirical(self):
        cfg = SystemConfig(mc=8, kc=2, q=2)
        H = complex_to_real(generate_channel(cfg, RngStream(0)))
        s = np.array([1.0, -1.0, 3.0, -3.0])
        sigma2 = noise_variance(5.0, cfg.kc, cfg.q)
        assert sigma2 == pytest.approx(2 * 10 / 10**0.5 / 2)
        trials = 20_000
        acc = 0.0
        for t in range(trials):
            d = awgn_transmit(H, s, 5.0, RngStream(3, t), cfg.q) - H @ s
            acc += d @ d
        # 16 real entries per trial: 3.2e5 draws, well inside 2%
        assert acc / trials / cfg.M == pytest.approx(sigma2, rel=0.02)


class TestQuantize:
    def test_examples(self):
        assert quantize([0.2], 2)[0] == 1
        assert quantize([-5.7], 2)[0] == -3
        assert quantize([2.0], 2)[0] == 1
        assert quantize([0.0], 2)[0] == -1
        assert quantize([-2.0], 2)[0] == -3

    def test_non_finite(self):
        with pytest.raises(DomainError):
            quantize([0.0, np.nan], 2)

    @pytest.mark.parametrize("q", [1, 2, 3])
    def test_nearest_on_grid(self, q):
        x = np.linspace(-20, 20, 100_001)
        got = quantize(x, q)
        a = alphabet(q)
        dist = np.abs(x[:, None] - a[None, :])
        # nearest point; ties resolved toward the smaller symbol (argmin picks the first)
        expect = a[np.argmin(dist, axis=1)]
        np.testing.assert_array_equal(got, expect)
        np.testing.assert_array_equal(quantize(got, q), got)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-100, 100)), st.integers(1, 4))
    def test_idempotent(self, x, q):
        once = quantize(x, q)
        np.testing.assert_array_equal(quantize(once, q), once)
        assert set(np.unique(once)) <= set(alphabet(q))


class TestSer:
    def test_examples(self):
        s = np.array([1.0, -1.0, 3.0, 1.0])
        assert symbol_error_rate(s, s, 2) == 0
        wrong_re = s.copy()
        wrong_re[0] = -1.0
        assert symbol_error_rate(wrong_re, s, 2) == 0.5
        assert symbol_error_rate(-s, s, 2) == 1.0

    def test_both_components_one_symbol(self):
        s = np.array([1.0, 1.0, 1.0, 1.0])
        e = np.array([-1.0, 1.0, -1.0, 1.0])
        assert symbol_error_rate(e, s, 2) == 0.5

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        a = rng.choice(alphabet(2), size=(50, 8))
        b = rng.choice(alphabet(2), size=(50, 8))
        assert symbol_error_rate(a, b, 4) == symbol_error_rate(b, a, 4)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            symbol_error_rate(np.ones(4), np.ones(6), 2)


class TestDataset:
    cfg = SystemConfig(mc=8, kc=2, q=2)

    def test_replay(self):
        a = next(generate_dataset(self.cfg, 1, SnrPolicy.fixed(10), RngStream(9)))
        b = next(generate_dataset(self.cfg, 1, SnrPolicy.fixed(10), RngStream(9)))
        for f in ("y", "H", "s"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_samples_on_grid_and_shapes(self):
        for smp in generate_dataset(self.cfg, 20, SnrPolicy.uniform(0, 10), RngStream(1)):
            assert smp.y.shape == (16,) and smp.H.shape == (16, 4) and smp.s.shape == (4,)
            assert set(smp.s) <= set(alphabet(2))
            assert 0 <= smp.snr_db <= 10

    def test_alphabet_uniform(self):
        cfg = SystemConfig(mc=30, kc=25, q=2)
        s = np.concatenate([smp.s for smp in generate_dataset(cfg, 2000, SnrPolicy.fixed(10), RngStream(2))])
        assert s.size == 100_000
        counts = np.array([np.sum(s == a) for a in alphabet(2)])
        p = 0.25
        sd = math.sqrt(s.size * p * (1 - p))
        assert np.all(np.abs(counts - s.size * p) < 3 * sd)

    def test_indexable(self):
        spec = DatasetSpec(self.cfg, 5, SnrPolicy.fixed(3.0), seed=4)
        full = spec.batch()
        third = list(spec.samples())[3]
        assert np.array_equal(full.y[3], third.y)

    def test_descriptor_round_trip(self):
        for snr in (SnrPolicy.fixed(3.0), SnrPolicy.uniform(0, 12)):
            spec = DatasetSpec(self.cfg, 10, snr, seed=4)
            again = DatasetSpec.from_dict(spec.to_dict())
            assert again == spec
            assert np.array_equal(again.batch().y, spec.batch().y)

    def test_descriptor_keys(self):
        d = DatasetSpec(self.cfg, 10, SnrPolicy.fixed(3.0), seed=4).to_dict()
        assert set(d) == {"mc", "kc", "q", "snr_db", "m", "seed"}
        with pytest.raises(ParameterError):
            DatasetSpec.from_dict({**d, "bogus": 1})

    def test_full_scale_sizes(self):
        from admmdet.psnet import TrainConfig
        assert TrainConfig.psnet_full().m == 10_000
        assert TrainConfig.hnet_full().m == 90_000
