import numpy as np
import pytest

from ghzstab.model import (
    MeasurementChannel,
    SystemModel,
    build_x_operator,
    build_z_operator,
    check_assumptions,
    even_z_patterns,
    ghz_basis,
    ghz_vector,
    identity_operator,
    spectral_data,
)

SQ2 = np.sqrt(2.0)


class TestGhzVectors:
    def test_first_plane(self):
        v = ghz_vector(3, 1, +1)
        expect = np.zeros(8)
        expect[0] = expect[7] = 1 / SQ2
        assert np.allclose(v, expect)

    def test_second_plane(self):
        v = ghz_vector(3, 2, +1)
        expect = np.zeros(8)
        expect[1] = expect[6] = 1 / SQ2
        assert np.allclose(v, expect)

    def test_fourth_plane_minus(self):
        v = ghz_vector(3, 4, -1)
        expect = np.zeros(8)
        expect[3] = 1 / SQ2
        expect[4] = -1 / SQ2
        assert np.allclose(v, expect)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_orthonormal_family(self, n):
        u = ghz_basis(n).matrix
        gram = u.conj().T @ u
        assert np.max(np.abs(gram - np.eye(2**n))) <= 1e-12

    def test_index_bounds(self):
        with pytest.raises(ValueError):
            ghz_vector(3, 0, +1)
        with pytest.raises(ValueError):
            ghz_vector(3, 5, +1)
        with pytest.raises(ValueError):
            ghz_vector(3, 1, 2)

    def test_basis_bookkeeping(self):
        basis = ghz_basis(3)
        assert basis.pair_positions(2) == (1, 6)
        for k, s in basis.labels():
            v = basis.vector(k, s)
            assert np.allclose(v, ghz_vector(3, k, s))
            proj = basis.projector(k, s)
            assert np.allclose(proj, np.outer(v, v.conj()))


class TestZOperators:
    def test_z_identity_z(self):
        op = build_z_operator(3, ["z", "1", "z"])
        assert np.allclose(np.diag(op), [1, -1, 1, -1, -1, 1, -1, 1])

    def test_z_z_identity(self):
        op = build_z_operator(3, ["z", "z", "1"])
        assert np.allclose(np.diag(op), [1, 1, -1, -1, -1, -1, 1, 1])

    def test_two_qubit(self):
        op = build_z_operator(2, ["z", "z"])
        assert np.allclose(np.diag(op), [1, -1, -1, 1])

    def test_coefficient(self):
        op = build_z_operator(3, ["z", "z", "1"], coeff=2.0)
        assert np.allclose(np.diag(op), [2, 2, -2, -2, -2, -2, 2, 2])

    def test_mirror_symmetry(self):
        for pattern in even_z_patterns(4):
            d = np.diag(build_z_operator(4, pattern)).real
            assert np.allclose(d, d[::-1])

    def test_odd_count_rejected(self):
        with pytest.raises(ValueError):
            build_z_operator(3, ["z", "1", "1"])

    def test_identity_pattern_rejected(self):
        with pytest.raises(ValueError):
            build_z_operator(3, ["1", "1", "1"])
        assert np.array_equal(identity_operator(3), np.eye(8))

    @pytest.mark.parametrize("n,count", [(2, 1), (3, 3), (4, 7), (5, 15)])
    def test_valid_pattern_count(self, n, count):
        # 2**(n-1) - 1 non-identity patterns; the identity completes the span
        assert len(list(even_z_patterns(n))) == count

    def test_span_dimension(self):
        # patterns plus identity span the mirror-symmetric diagonals
        n = 3
        mats = [np.diag(build_z_operator(n, p)).real for p in even_z_patterns(n)]
        mats.append(np.diag(identity_operator(n)).real)
        assert np.linalg.matrix_rank(np.array(mats)) == 2 ** (n - 1)


class TestEigenrelations:
    def test_scaled_z_channels_fix_entangled_states(self, model_a, basis_a):
        for chan in model_a.z_channels:
            op = chan.scaled
            table = np.diag(chan.operator).real
            for k, s in basis_a.labels():
                v = basis_a.vector(k, s)
                expected = np.sqrt(chan.strength) * table[k - 1]
                assert np.allclose(op @ v, expected * v, atol=1e-12)

    def test_x_channel_signs(self, model_a, basis_a):
        xc = model_a.x_channel
        for k, s in basis_a.labels():
            v = basis_a.vector(k, s)
            assert np.allclose(xc.scaled @ v, s * np.sqrt(xc.strength) * v, atol=1e-12)

    def test_x_diagonal_in_entangled_frame(self, model_a, basis_a):
        u = basis_a.matrix
        framed = u.conj().T @ model_a.x_channel.scaled @ u
        off = framed - np.diag(np.diag(framed))
        assert np.max(np.abs(off)) <= 1e-12
        assert np.allclose(np.abs(np.diag(framed)), np.sqrt(model_a.x_channel.strength))


class TestSpectralData:
    def test_plane_eigenvalues(self, model_a):
        spec = spectral_data(model_a)
        assert np.allclose(spec.l_values, [3, 1, -1, -3])
        assert spec.min_gap == pytest.approx(2.0, abs=1e-12)
        assert spec.gamma_z == pytest.approx(0.3)
        assert spec.gamma_all == pytest.approx(0.3)

    def test_gap_constants_first_plane(self, model_a):
        spec = spectral_data(model_a, target=(1, 1))
        assert spec.c_plus == pytest.approx(SQ2 - 1, abs=1e-12)

    def test_gap_constants_last_plane(self, model_a):
        spec = spectral_data(model_a, target=(4, 1))
        assert spec.c_minus == pytest.approx(1 - SQ2, abs=1e-12)

    def test_duplicate_detection(self):
        op = build_z_operator(3, ["z", "1", "z"])
        chans = (
            MeasurementChannel(op, 1.0, 0.5, "z"),
            MeasurementChannel(op, 1.0, 0.5, "z"),
        )
        spec = spectral_data(SystemModel(3, 0.0 * op, chans))
        assert spec.min_gap is None
        assert spec.duplicates


class TestAssumptions:
    def test_reference_model_passes(self, model_a):
        report = check_assumptions(model_a)
        assert report.all_ok
        assert report.frame_max_offdiag <= 1e-10

    def test_duplicate_channel_fails_gaps(self, model_a):
        first = model_a.z_channels[0]
        clone = MeasurementChannel(first.operator, 1.0, 0.3, "z")
        bad = SystemModel(3, model_a.h0, (first, clone, model_a.x_channel))
        report = check_assumptions(bad)
        assert not report.gaps_ok
        assert report.duplicate_pairs

    def test_offdiagonal_hamiltonian_fails_frame(self, model_a):
        from ghzstab.model import IDENTITY_2, SIGMA_X
        from ghzstab.qmat import kron

        h_bad = kron(kron(SIGMA_X, IDENTITY_2), IDENTITY_2)
        bad = SystemModel(3, h_bad, model_a.channels)
        report = check_assumptions(bad)
        assert not report.frame_diagonal_ok
        assert report.frame_worst_operator == "H0"


class TestModelValidation:
    def test_channel_validation(self):
        op = build_z_operator(2, ["z", "z"])
        with pytest.raises(ValueError):
            MeasurementChannel(op, -1.0, 0.5, "z")
        with pytest.raises(ValueError):
            MeasurementChannel(op, 1.0, 0.0, "z")
        with pytest.raises(ValueError):
            MeasurementChannel(op, 1.0, 1.5, "z")
        with pytest.raises(ValueError):
            MeasurementChannel(build_x_operator(2), 1.0, 0.5, "z")

    def test_z_kind_requires_mirror_diagonal(self):
        bad = np.diag([1.0, 2.0, 3.0, 4.0]).astype(complex)
        with pytest.raises(ValueError):
            MeasurementChannel(bad, 1.0, 0.5, "z")

    def test_model_requires_z_channel(self):
        x = MeasurementChannel(build_x_operator(2), 1.0, 0.5, "x")
        with pytest.raises(ValueError):
            SystemModel(2, np.zeros((4, 4)), (x,))

    def test_channel_ordering_z_first(self, model_a):
        kinds = [c.kind for c in model_a.channels]
        assert kinds == ["z", "z", "x"]
