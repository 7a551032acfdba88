"""Unit tests for the time-bin qubit algebra."""

import numpy as np
import pytest

from teleportsim.qubit import (
    COMPLEMENT,
    SETTINGS,
    DensityMatrix,
    PhysicalityError,
    TimeBinState,
    average_fidelity,
    born_probability,
    fidelity,
    fidelity_from_visibility,
    overlap,
    pauli_y_transform,
)

CARDINALS = ["E", "L", "PLUS", "MINUS", "PLUS_I", "MINUS_I"]


def random_rho(rng):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    m = a @ a.conj().T
    return DensityMatrix(m / np.trace(m))


def random_pure(rng):
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return TimeBinState.from_amplitudes(v[0], v[1])


class TestTimeBinState:
    def test_normalization_enforced(self):
        with pytest.raises(ValueError):
            TimeBinState(0.9, 0.9)

    def test_negative_amplitude_rejected(self):
        with pytest.raises(ValueError):
            TimeBinState(-0.6, 0.8)

    def test_global_phase_canonicalized(self):
        s = TimeBinState.from_amplitudes(np.exp(1j * 1.3) * 0.6, np.exp(1j * (1.3 + 0.4)) * 0.8)
        assert s.alpha == pytest.approx(0.6, abs=1e-12)
        assert s.beta == pytest.approx(0.8, abs=1e-12)
        assert s.phi == pytest.approx(0.4, abs=1e-12)

    def test_pole_state_phase_is_zero(self):
        s = TimeBinState.from_amplitudes(0.0, np.exp(1j * 2.0))
        assert s.alpha == 0.0 and s.beta == 1.0 and s.phi == 0.0

    @pytest.mark.parametrize("label", CARDINALS)
    def test_cardinal_states_normalized(self, label):
        k = SETTINGS[label].state.ket()
        assert np.vdot(k, k).real == pytest.approx(1.0, abs=1e-12)


class TestPauliY:
    def test_early_maps_to_late(self):
        out = pauli_y_transform(TimeBinState.early())
        assert out.isclose(TimeBinState.late(), tol=1e-12)

    def test_plus_maps_to_minus(self):
        out = pauli_y_transform(TimeBinState.plus())
        assert out.isclose(TimeBinState.minus(), tol=1e-12)

    def test_plus_i_is_eigenstate(self):
        out = pauli_y_transform(TimeBinState.plus_i())
        assert out.isclose(TimeBinState.plus_i(), tol=1e-12)

    def test_involution_on_random_states(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            s = random_pure(rng)
            ss = pauli_y_transform(pauli_y_transform(s))
            assert abs(ss.alpha - s.alpha) < 1e-12
            assert abs(ss.beta - s.beta) < 1e-12
            if s.alpha > 1e-9 and s.beta > 1e-9:
                dphi = (ss.phi - s.phi) % (2 * np.pi)
                assert min(dphi, 2 * np.pi - dphi) < 1e-11


class TestDensityMatrix:
    def test_rejects_non_hermitian(self):
        with pytest.raises(PhysicalityError):
            DensityMatrix(np.array([[0.5, 0.4], [0.1, 0.5]]))

    def test_rejects_bad_trace(self):
        with pytest.raises(PhysicalityError):
            DensityMatrix(np.eye(2))

    def test_rejects_negative_eigenvalue(self):
        with pytest.raises(PhysicalityError):
            DensityMatrix(np.array([[1.2, 0.0], [0.0, -0.2]]))

    def test_tolerates_numerical_noise(self):
        rho = DensityMatrix(np.array([[1.0 + 5e-11, 0], [0, -5e-11]]))
        assert rho.eigenvalues().min() >= -1e-10

    def test_flat8_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            rho = random_rho(rng)
            back = DensityMatrix.from_flat8(rho.to_flat8())
            assert np.allclose(back.mat, rho.mat, atol=1e-14)

    def test_flat8_is_row_major_interleaved(self):
        rho = TimeBinState.plus_i().projector()
        flat = rho.to_flat8()
        # element (0,1) of |+i><+i| is -i/2
        assert flat[2] == pytest.approx(0.0, abs=1e-12)
        assert flat[3] == pytest.approx(-0.5, abs=1e-12)


class TestFidelity:
    def test_self_fidelity_is_one(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            s = random_pure(rng)
            assert fidelity(DensityMatrix.from_state(s), s) == pytest.approx(1.0, abs=1e-12)

    def test_maximally_mixed_gives_half(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            s = random_pure(rng)
            assert fidelity(DensityMatrix.maximally_mixed(), s) == pytest.approx(0.5, abs=1e-12)

    def test_rejects_unphysical_rho(self):
        bad = DensityMatrix(np.eye(2) * 0.5, validate=False)
        bad.mat = np.array([[1.5, 0], [0, -0.5]], dtype=complex)
        with pytest.raises(PhysicalityError):
            fidelity(bad, TimeBinState.early())

    def test_pure_pure_equals_overlap_squared(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            a, b = random_pure(rng), random_pure(rng)
            f = fidelity(DensityMatrix.from_state(a), b)
            assert f == pytest.approx(abs(overlap(b, a)) ** 2, abs=1e-12)


class TestAverageFidelity:
    def test_all_ones(self):
        assert average_fidelity(1, 1, 1, 1) == pytest.approx(1.0)

    def test_classical_bound_fixed_point(self):
        f = 2.0 / 3.0
        assert average_fidelity(f, f, f, f) == pytest.approx(2.0 / 3.0, abs=1e-15)

    def test_weights_sum_to_one(self):
        # coefficient of each argument recovered by unit probes
        w = [average_fidelity(*(1.0 if i == j else 0.0 for j in range(4))) for i in range(4)]
        assert w == pytest.approx([1 / 6, 1 / 6, 2 / 6, 2 / 6])
        assert sum(w) == pytest.approx(1.0)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            average_fidelity(1.2, 0.5, 0.5, 0.5)


class TestFidelityFromVisibility:
    def test_classical_bound_maps_to_classical_bound(self):
        assert fidelity_from_visibility(1.0 / 3.0) == pytest.approx(2.0 / 3.0, abs=1e-15)

    def test_unit_visibility(self):
        assert fidelity_from_visibility(1.0) == pytest.approx(1.0)

    def test_measured_visibility_example(self):
        assert fidelity_from_visibility(0.38) == pytest.approx(0.69, abs=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            fidelity_from_visibility(1.5)


class TestBornProbability:
    def test_early_on_e_setting(self):
        assert born_probability(TimeBinState.early(), SETTINGS["E"]) == pytest.approx(1.0)

    def test_mutually_unbiased(self):
        assert born_probability(TimeBinState.plus(), SETTINGS["PLUS_I"]) == pytest.approx(0.5, abs=1e-12)

    def test_orthogonal(self):
        assert born_probability(TimeBinState.plus_i(), SETTINGS["MINUS_I"]) == pytest.approx(0.0, abs=1e-12)

    def test_complement_pairs_sum_to_one(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            rho = random_rho(rng)
            for label, comp in COMPLEMENT.items():
                total = born_probability(rho, SETTINGS[label]) + born_probability(rho, SETTINGS[comp])
                assert total == pytest.approx(1.0, abs=1e-10)

    def test_projectors_idempotent(self):
        for s in SETTINGS.values():
            p = s.projector.mat
            assert np.allclose(p @ p, p, atol=1e-10)
