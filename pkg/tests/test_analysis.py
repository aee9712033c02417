import numpy as np
import pytest

from ghzstab.analysis import (
    LyapunovKind,
    bures_distance,
    bures_to_set,
    classify_limit,
    estimate_exponent,
    fidelity_lyapunov,
    fidelity_sandwich_constants,
    ghz_populations,
    lyapunov,
    mixed_lyapunov,
    mixed_sandwich_constants,
    noise_coefficients,
    operator_variance,
    pair_generator,
    pair_population,
    pair_populations,
    rate_bounds,
    reduction_lyapunov,
    reduction_sandwich_constants,
    x_mean,
    x_variance,
    x_variance_generator,
)
from ghzstab.model import SIGMA_Z
from ghzstab.qmat import random_density, trace_product

MAX_MIXED = np.eye(8, dtype=complex) / 8


@pytest.fixture(scope="module")
def ghz_states(basis_a):
    return [basis_a.projector(k, s) for k in (1, 2, 3, 4) for s in (1, -1)]


class TestPairPopulations:
    def test_entangled_states(self, basis_a):
        for k, s in basis_a.labels():
            assert pair_population(basis_a.projector(k, s), k) == pytest.approx(1.0)

    def test_maximally_mixed(self):
        assert pair_population(MAX_MIXED, 2) == pytest.approx(2 / 8)

    def test_sum_is_trace(self, rng):
        rho = random_density(8, rng)
        assert pair_populations(rho).sum() == pytest.approx(1.0, abs=1e-12)

    def test_index_range(self):
        with pytest.raises(ValueError):
            pair_population(MAX_MIXED, 5)


class TestVariance:
    def test_eigenstate(self):
        ket0 = np.diag([1.0, 0.0]).astype(complex)
        assert operator_variance(ket0, SIGMA_Z) == pytest.approx(0.0, abs=1e-14)

    def test_maximally_mixed_qubit(self):
        assert operator_variance(np.eye(2, dtype=complex) / 2, SIGMA_Z) == pytest.approx(1.0)

    def test_nonnegative_on_random_states(self, rng):
        from ghzstab.qmat import random_hermitian

        for _ in range(200):
            rho = random_density(6, rng)
            op = random_hermitian(6, rng)
            assert operator_variance(rho, op) >= -1e-12


class TestXVariance:
    def test_entangled_state(self, basis_a):
        assert x_variance(basis_a.projector(1, 1)) == pytest.approx(0.0, abs=1e-14)

    def test_maximally_mixed(self):
        assert x_variance(MAX_MIXED) == pytest.approx(1.0)

    def test_product_identity(self, rng, basis_a):
        # 1 - <X>^2 equals 4 * (minus-family weight) * (plus-family weight)
        for _ in range(100):
            rho = random_density(8, rng)
            pops = ghz_populations(rho, basis_a)
            plus, minus = pops[:4].sum(), pops[4:].sum()
            assert x_variance(rho) == pytest.approx(4 * plus * minus, abs=1e-12)


class TestBures:
    def test_zero_at_itself(self, basis_a):
        p = basis_a.projector(1, 1)
        assert bures_distance(p, p) == pytest.approx(0.0, abs=1e-7)

    def test_orthogonal_pure_states(self, basis_a):
        d = bures_distance(basis_a.projector(1, 1), basis_a.projector(1, -1))
        assert d == pytest.approx(np.sqrt(2), abs=1e-12)

    def test_maximally_mixed_value(self, basis_a):
        # sqrt(2 - 2 sqrt(1/8)) evaluated independently
        d = bures_distance(MAX_MIXED, basis_a.projector(1, 1))
        assert d == pytest.approx(1.137054624375387, abs=1e-12)

    def test_set_version_minimizes(self, rng, ghz_states):
        rho = random_density(8, rng)
        d = bures_to_set(rho, ghz_states)
        assert d == pytest.approx(min(bures_distance(rho, s) for s in ghz_states))

    def test_rejects_mixed_reference(self):
        with pytest.raises(ValueError):
            bures_distance(MAX_MIXED, MAX_MIXED)


class TestLyapunovFunctions:
    def test_reduction_zero_on_targets(self, ghz_states):
        # square roots amplify machine epsilon to ~1e-8 at exact zeros
        for p in ghz_states:
            assert reduction_lyapunov(p) == pytest.approx(0.0, abs=1e-7)

    def test_reduction_maximally_mixed(self):
        # six unordered pairs at sqrt(1/16) plus unit x-deviation
        assert reduction_lyapunov(MAX_MIXED) == pytest.approx(2.5, abs=1e-12)

    def test_fidelity_value(self, basis_a, rng):
        rho = 0.75 * basis_a.projector(2, 1) + 0.25 * MAX_MIXED
        f = trace_product(rho, basis_a.projector(2, 1)).real
        assert fidelity_lyapunov(rho, basis_a, 2, 1) == pytest.approx(np.sqrt(1 - f))
        direct = 0.75 * basis_a.projector(2, 1)
        direct = direct + 0.25 * basis_a.projector(1, 1)
        assert fidelity_lyapunov(direct, basis_a, 2, 1) == pytest.approx(0.5)

    def test_dispatcher(self, basis_a, rng):
        rho = random_density(8, rng)
        assert lyapunov(LyapunovKind.REDUCTION, rho) == pytest.approx(reduction_lyapunov(rho))
        assert lyapunov(LyapunovKind.FIDELITY, rho, basis_a, (1, 1)) == pytest.approx(
            fidelity_lyapunov(rho, basis_a, 1, 1)
        )
        with pytest.raises(ValueError):
            lyapunov(LyapunovKind.MIXED, rho)

    def _random_states(self, rng, basis, n=1000):
        states = []
        anchors = [basis.projector(k, s) for k in (1, 2, 3, 4) for s in (1, -1)]
        for trial in range(n):
            which = trial % 3
            if which == 0:
                states.append(random_density(8, rng))
            elif which == 1:
                states.append(random_density(8, rng, rank=int(rng.integers(1, 9))))
            else:
                eps = 10.0 ** rng.uniform(-8, -0.5)
                base = anchors[rng.integers(0, 8)]
                mix = (1 - eps) * base + eps * random_density(8, rng)
                states.append(0.5 * (mix + mix.conj().T))
        return states

    def test_reduction_sandwich(self, rng, basis_a, ghz_states):
        lo, hi = reduction_sandwich_constants(8)
        for rho in self._random_states(rng, basis_a):
            d = bures_to_set(rho, ghz_states)
            v = reduction_lyapunov(rho)
            assert lo * d - 1e-12 <= v <= hi * d + 1e-12

    def test_fidelity_sandwich(self, rng, basis_a):
        lo, hi = fidelity_sandwich_constants()
        tgt = basis_a.projector(1, 1)
        for rho in self._random_states(rng, basis_a):
            d = bures_distance(rho, tgt)
            v = fidelity_lyapunov(rho, basis_a, 1, 1)
            assert lo * d - 1e-12 <= v <= hi * d + 1e-12

    def test_mixed_sandwich(self, rng, basis_a):
        lo, hi = mixed_sandwich_constants(8)
        tgt = basis_a.projector(2, 1)
        for rho in self._random_states(rng, basis_a):
            d = bures_distance(rho, tgt)
            v = mixed_lyapunov(rho, basis_a, 2, 1)
            assert lo * d - 1e-12 <= v <= hi * d + 1e-12


class TestGenerators:
    def test_pair_value_maximally_mixed(self, model_a):
        assert pair_generator(MAX_MIXED, 1, 2, model_a) == pytest.approx(-0.275, abs=1e-12)

    def test_pair_vanishing_population(self, model_a, basis_a):
        rho = basis_a.projector(3, 1)
        assert pair_generator(rho, 1, 2, model_a) == 0.0

    def test_pair_needs_distinct_planes(self, model_a):
        with pytest.raises(ValueError):
            pair_generator(MAX_MIXED, 2, 2, model_a)

    def test_pair_dominated_by_z_rate(self, model_a, rng):
        # decay at least gamma_z * gap^2 / (2 m_z) times the functional
        rates = rate_bounds(model_a)
        for _ in range(100):
            rho = random_density(8, rng)
            lam = pair_populations(rho)
            for i in range(1, 5):
                for j in range(i + 1, 5):
                    bound = -rates.reduction_rate_z * np.sqrt(lam[i - 1] * lam[j - 1])
                    assert pair_generator(rho, i, j, model_a) <= bound + 1e-12

    def test_x_variance_value_maximally_mixed(self, model_a):
        assert x_variance_generator(MAX_MIXED, model_a) == pytest.approx(-0.72, abs=1e-12)

    def test_x_variance_dominated(self, model_a, rng):
        xc = model_a.x_channel
        for _ in range(100):
            rho = random_density(8, rng)
            bound = -2.0 * xc.rate * np.sqrt(x_variance(rho))
            assert x_variance_generator(rho, model_a) <= bound + 1e-12

    def test_x_variance_invariant_set(self, model_a, basis_a):
        assert x_variance_generator(basis_a.projector(1, 1), model_a) == 0.0


class TestRateBounds:
    def test_reduction_exponent(self, model_a):
        rates = rate_bounds(model_a)
        assert rates.reduction_rate == pytest.approx(0.3, abs=1e-12)
        assert rates.exponent_reduction == pytest.approx(-0.3, abs=1e-12)

    def test_first_plane_exponent(self, model_a):
        rates = rate_bounds(model_a, (1, 1))
        expected = -(9 - 6 * np.sqrt(2)) / 5
        assert rates.exponent_plus == pytest.approx(expected, abs=1e-12)
        assert rates.rate_minus is None

    def test_last_plane_exponent(self, model_a):
        rates = rate_bounds(model_a, (4, 1))
        assert rates.c_minus == pytest.approx(1 - np.sqrt(2), abs=1e-12)
        expected = -2 * 0.3 * (1 - np.sqrt(2)) ** 2
        assert rates.exponent_minus == pytest.approx(expected, abs=1e-12)
        assert rates.rate_plus is None

    def test_middle_plane_uses_reduction_rate(self, model_a):
        rates = rate_bounds(model_a, (2, 1))
        assert rates.rate_plus is None and rates.rate_minus is None
        assert rates.exponent_reduction == pytest.approx(-0.3, abs=1e-12)

    def test_z_only_model(self, model_b):
        rates = rate_bounds(model_b, (1, 1))
        assert rates.reduction_rate is None
        assert rates.reduction_rate_z == pytest.approx(0.3, abs=1e-12)


class TestExponentFit:
    def test_exact_exponential(self):
        t = np.linspace(0, 30, 400)
        fit = estimate_exponent(t, np.exp(-0.3 * t))
        assert fit.slope == pytest.approx(-0.3, abs=1e-9)
        assert not fit.clamped

    def test_constant_series(self):
        t = np.linspace(0, 10, 50)
        assert estimate_exponent(t, np.full(50, 2.0)).slope == pytest.approx(0.0, abs=1e-12)

    def test_modulated_decay(self):
        t = np.linspace(0, 30, 1000)
        values = np.exp(-0.3 * t) * (1 + 0.1 * np.sin(t))
        fit = estimate_exponent(t, values, window=(5, 30))
        assert fit.slope == pytest.approx(-0.3, abs=0.02)

    def test_clamps_nonpositive(self):
        t = np.linspace(0, 10, 50)
        values = np.exp(-5 * t) - 1e-10
        fit = estimate_exponent(t, values)
        assert fit.clamped

    def test_needs_points(self):
        with pytest.raises(ValueError):
            estimate_exponent(np.arange(5.0), np.ones(5))


class TestClassifyLimit:
    def test_entangled_state(self, basis_a):
        assert classify_limit(basis_a.projector(4, -1), basis_a) == (4, -1)

    def test_maximally_mixed_unresolved(self, basis_a):
        assert classify_limit(MAX_MIXED, basis_a) is None

    def test_threshold_range(self, basis_a):
        with pytest.raises(ValueError):
            classify_limit(MAX_MIXED, basis_a, threshold=0.4)


class TestNoiseCoefficients:
    @staticmethod
    def _fidelity_value_fn(target):
        def fn(rho):
            f = float(np.real(np.trace(rho @ target)))
            return float(np.sqrt(max(1.0 - f, 0.0)))

        return fn

    @staticmethod
    def _analytic_g(rho, model, basis, k, sign):
        # hand-differentiated: g_i = -sqrt(eta_i) F P_i / (1 - F) with the
        # scaled mean residual P_i of each channel at the target
        tgt = basis.projector(k, sign)
        f = float(np.real(np.trace(rho @ tgt)))
        out = []
        for chan in model.channels:
            if chan.kind == "z":
                eig = np.diag(chan.operator).real[k - 1]
            else:
                eig = float(sign)
            p = np.sqrt(chan.strength) * eig - float(np.real(np.trace(chan.scaled @ rho)))
            out.append(-np.sqrt(chan.efficiency) * f * p / (1.0 - f))
        return np.array(out)

    def test_matches_hand_derivative(self, model_a, basis_a, rng):
        fn = self._fidelity_value_fn(basis_a.projector(1, 1))
        for _ in range(25):
            rho = 0.8 * basis_a.projector(1, 1) + 0.2 * random_density(8, rng)
            rho = 0.5 * (rho + rho.conj().T)
            got = noise_coefficients(fn, rho, model_a)
            want = self._analytic_g(rho, model_a, basis_a, 1, 1)
            assert np.max(np.abs(got - want)) <= 1e-6

    def test_lower_bound_near_target(self, model_a, basis_a, rng):
        # sum g_i^2 >= 2 * rate * F^2 near the target (20% slack)
        rates = rate_bounds(model_a, (1, 1))
        floor = 2.0 * rates.rate_plus
        tgt = basis_a.projector(1, 1)
        fn = self._fidelity_value_fn(tgt)
        for _ in range(50):
            eps = 10.0 ** rng.uniform(-4, np.log10(1.2e-3))
            rho = (1 - eps) * tgt + eps * random_density(8, rng)
            rho = 0.5 * (rho + rho.conj().T)
            f = float(np.real(np.trace(rho @ tgt)))
            d = bures_distance(rho, tgt)
            assert d <= 0.05
            g = noise_coefficients(fn, rho, model_a)
            assert float(np.sum(g**2)) >= 0.8 * floor * f * f

    def test_vanishing_diffusion_direction(self, model_a, basis_a):
        # along a plane the z channels cannot distinguish, their g vanishes
        rho = 0.5 * basis_a.projector(1, 1) + 0.5 * basis_a.projector(1, -1)
        fn = self._fidelity_value_fn(basis_a.projector(1, 1))
        g = noise_coefficients(fn, rho, model_a)
        assert np.allclose(g[:2], 0.0, atol=1e-9)

    def test_undefined_at_zero(self, model_a, basis_a):
        fn = self._fidelity_value_fn(basis_a.projector(1, 1))
        with pytest.raises(ValueError):
            noise_coefficients(fn, basis_a.projector(1, 1), model_a)


def test_x_mean_range(rng):
    for _ in range(100):
        rho = random_density(8, rng)
        assert -1.0 - 1e-12 <= x_mean(rho) <= 1.0 + 1e-12
