"""Tests for the truncated-Fock-space oracle."""

import numpy as np
import pytest

from teleportsim.fock import (
    PSI_MINUS_PATTERNS,
    DetectorModel,
    SourceSpec,
    TruncationError,
    apply_beamsplitter,
    apply_loss,
    bsm_pattern_probabilities,
    build_coherent,
    build_fock_state,
    build_single_photon,
    build_spdc_pair,
    hom_summary,
    partial_overlap_embed,
    teleport_summary,
    teleported_conditional_state,
    tensor,
    vacuum,
)
from teleportsim.qubit import SETTINGS, TimeBinState, fidelity, pauli_y_transform

IDEAL = DetectorModel(efficiency=1.0, dark_count_prob=0.0)
CARDINALS = ["E", "L", "PLUS", "MINUS", "PLUS_I", "MINUS_I"]


class TestBuilders:
    def test_coherent_mu_zero_is_vacuum(self):
        reg = build_coherent(0.0)
        assert reg.probability({("alice", "e", 0): 0, ("alice", "l", 0): 0}) == pytest.approx(1.0)

    @pytest.mark.parametrize("mu", [0.014, 0.028])
    def test_coherent_poisson_ratios(self, mu):
        reg = build_coherent(mu, cutoff=3)
        dist = reg.total_number_distribution("alice")
        assert dist[1] / dist[0] == pytest.approx(mu, abs=1e-6 * mu)
        assert dist[2] / dist[1] == pytest.approx(mu / 2.0, rel=1e-6)

    def test_coherent_cutoff_too_small(self):
        with pytest.raises(TruncationError):
            build_coherent(2.0, cutoff=2)

    def test_coherent_leakage_tracked(self):
        import math

        reg = build_coherent(0.06, cutoff=3)
        exact_tail = 1.0 - np.exp(-0.06) * sum(0.06**n / math.factorial(n) for n in range(4))
        assert reg.leakage == pytest.approx(exact_tail, rel=1e-6)

    def test_spdc_mu_zero_is_vacuum(self):
        reg = build_spdc_pair(0.0)
        assert reg.total_number_distribution()[0] == pytest.approx(1.0)

    def test_spdc_single_pair_is_phi_plus(self):
        reg = build_spdc_pair(0.045, pair_cutoff=2)
        a_ee = reg.amps[reg.index[(1, 0, 1, 0)]]
        a_ll = reg.amps[reg.index[(0, 1, 0, 1)]]
        assert a_ee == pytest.approx(a_ll)
        # no cross terms |e,l> in the single-pair sector
        assert abs(reg.amps[reg.index[(1, 0, 0, 1)]]) < 1e-15

    def test_spdc_thermal_pair_ratio(self):
        mu = 0.045
        reg = build_spdc_pair(mu, pair_cutoff=3)
        # pairs = photons/2 in the lossless source
        dist = np.zeros(4)
        for i, occ in enumerate(reg.basis):
            tot = occ.sum()
            if tot % 2 == 0:
                dist[tot // 2] += abs(reg.amps[i]) ** 2
        assert dist[2] / dist[1] == pytest.approx(mu / (1.0 + mu), rel=1e-9)

    def test_single_photon_state(self):
        reg = build_single_photon(TimeBinState.plus_i())
        assert reg.probability({("alice", "e", 0): 1}) == pytest.approx(0.5)


class TestBeamsplitter:
    def test_full_transmission_identity(self):
        reg = build_fock_state({(1, 0): 1.0}, (("a", "e", 0), ("b", "e", 0)), 2)
        out = apply_beamsplitter(reg, "a", "b", 1.0)
        assert out.probability({("a", "e", 0): 1, ("b", "e", 0): 0}) == pytest.approx(1.0)

    def test_hom_bunching(self):
        reg = build_fock_state({(1, 1): 1.0}, (("a", "e", 0), ("b", "e", 0)), 2)
        out = apply_beamsplitter(reg, "a", "b", 0.5)
        i20 = out.index[(2, 0)]
        i02 = out.index[(0, 2)]
        i11 = out.index[(1, 1)]
        assert out.amps[i20] == pytest.approx(1 / np.sqrt(2), abs=1e-12)
        assert out.amps[i02] == pytest.approx(-1 / np.sqrt(2), abs=1e-12)
        assert abs(out.amps[i11]) < 1e-12

    def test_two_photon_splitting(self):
        reg = build_fock_state({(2, 0): 1.0}, (("a", "e", 0), ("b", "e", 0)), 2)
        out = apply_beamsplitter(reg, "a", "b", 0.5)
        amps = {occ: out.amps[out.index[occ]] for occ in [(2, 0), (1, 1), (0, 2)]}
        assert abs(amps[(2, 0)]) == pytest.approx(0.5, abs=1e-12)
        assert abs(amps[(1, 1)]) == pytest.approx(1 / np.sqrt(2), abs=1e-12)
        assert abs(amps[(0, 2)]) == pytest.approx(0.5, abs=1e-12)

    def test_unitarity_on_random_registers(self):
        rng = np.random.default_rng(5)
        modes = (("a", "e", 0), ("a", "l", 0), ("b", "e", 0), ("b", "l", 0))
        for _ in range(20):
            reg = vacuum(modes, 3)
            amps = rng.normal(size=reg.amps.shape) + 1j * rng.normal(size=reg.amps.shape)
            reg.amps = amps / np.linalg.norm(amps)
            out = apply_beamsplitter(reg, "a", "b", rng.uniform(0.1, 0.9))
            assert out.norm_sq() == pytest.approx(1.0, abs=1e-9)

    def test_port_missing_raises(self):
        reg = build_coherent(0.01)
        with pytest.raises(ValueError):
            apply_beamsplitter(reg, "nope_a", "nope_b", 0.5)


class TestOverlapEmbed:
    def test_full_overlap_is_noop(self):
        reg = build_single_photon(TimeBinState.plus())
        out = partial_overlap_embed(reg, "alice", 1.0)
        assert out.modes == reg.modes
        np.testing.assert_allclose(out.amps, reg.amps)

    def test_out_of_range(self):
        reg = build_single_photon(TimeBinState.plus())
        with pytest.raises(ValueError):
            partial_overlap_embed(reg, "alice", 1.2)

    @pytest.mark.parametrize("w,expected", [(1.0, 0.0), (0.0, 0.5), (0.5, 0.25)])
    def test_single_photon_hom_coincidence(self, w, expected):
        summary = hom_summary(
            SourceSpec("single"), SourceSpec("single"), overlap=w, cutoff=2
        )
        p_cc = summary.coincidence_probability("same_bin", IDEAL, IDEAL)
        assert p_cc == pytest.approx(expected, abs=1e-9)


class TestLoss:
    def test_branch_probabilities_sum_to_one(self):
        reg = build_spdc_pair(0.05, pair_cutoff=2)
        branches = apply_loss(reg, "idler", 0.3)
        assert sum(b.norm_sq() for b in branches) == pytest.approx(1.0, abs=1e-12)

    def test_single_photon_loss(self):
        reg = build_single_photon(TimeBinState.early())
        branches = apply_loss(reg, "alice", 0.25)
        probs = sorted(b.norm_sq() for b in branches)
        assert probs == pytest.approx([0.25, 0.75])

    def test_coherent_loss_matches_scaled_mu(self):
        # loss on a coherent state is exactly a coherent state of mean t*mu
        reg = build_coherent(0.05, cutoff=3)
        branches = apply_loss(reg, "alice", 0.4)
        dist = np.zeros(4)
        for b in branches:
            dist += b.total_number_distribution("alice")
        ref = build_coherent(0.02, cutoff=3).total_number_distribution("alice")
        np.testing.assert_allclose(dist, ref, atol=2e-4)


class TestBsmPatterns:
    def test_vacuum_no_darks_gives_no_clicks(self):
        reg = tensor(
            vacuum((("alice", "e", 0), ("alice", "l", 0)), 1),
            vacuum((("idler", "e", 0), ("idler", "l", 0)), 1),
        )
        probs = bsm_pattern_probabilities(reg, IDEAL, IDEAL)
        assert probs[(False, False, False, False)] == pytest.approx(1.0)

    def test_pattern_probabilities_sum_to_one(self):
        summary = teleport_summary(
            TimeBinState.plus(), mu_a=0.02, t_alice=0.3, mu_spdc=0.05, t_idler=0.3,
            overlap=0.9, n_phases=8,
        )
        det = DetectorModel(0.7, 1e-6)
        probs = summary.pattern_probabilities(det, det)
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-9)

    def test_ideal_psi_minus_input_always_flags(self):
        # psi-minus across the two input ports: (|e,l> - |l,e>)/sqrt(2)
        modes = (("alice", "e", 0), ("alice", "l", 0), ("idler", "e", 0), ("idler", "l", 0))
        reg = build_fock_state(
            {(1, 0, 0, 1): 1 / np.sqrt(2), (0, 1, 1, 0): -1 / np.sqrt(2)}, modes, 2
        )
        probs = bsm_pattern_probabilities(reg, IDEAL, IDEAL)
        flag = sum(probs[p] for p in PSI_MINUS_PATTERNS)
        assert flag == pytest.approx(1.0, abs=1e-12)

    def test_dark_counts_only(self):
        d = 1e-3
        det = DetectorModel(efficiency=1.0, dark_count_prob=d)
        reg = tensor(
            vacuum((("alice", "e", 0), ("alice", "l", 0)), 1),
            vacuum((("idler", "e", 0), ("idler", "l", 0)), 1),
        )
        probs = bsm_pattern_probabilities(reg, det, det)
        flag = sum(probs[p] for p in PSI_MINUS_PATTERNS)
        # two exclusive cross patterns, each d^2 (1-d)^2
        assert flag == pytest.approx(2 * d**2 * (1 - d) ** 2, rel=1e-12)


class TestTeleportation:
    @pytest.mark.parametrize("label", CARDINALS)
    def test_protocol_identity_single_photon(self, label):
        state = SETTINGS[label].state
        summary = teleport_summary(
            state, mu_a=0.0, t_alice=1.0, mu_spdc=0.04, t_idler=1.0,
            overlap=1.0, alice_kind="single", pair_cutoff=1,
        )
        rho, post, p_flag = summary.conditional_qubit_state(IDEAL, IDEAL)
        target = pauli_y_transform(state)
        assert fidelity(rho, target) >= 1.0 - 1e-9

    def test_plus_i_eigenstate(self):
        state = TimeBinState.plus_i()
        summary = teleport_summary(
            state, 0.0, 1.0, 0.04, 1.0, overlap=1.0, alice_kind="single", pair_cutoff=1
        )
        rho, _, _ = summary.conditional_qubit_state(IDEAL, IDEAL)
        assert fidelity(rho, TimeBinState.plus_i()) >= 1.0 - 1e-9

    def test_undefined_state_error_at_zero_probability(self):
        summary = teleport_summary(
            TimeBinState.early(), 0.0, 1.0, 0.0, 1.0, alice_kind="off"
        )
        with pytest.raises(ValueError):
            summary.conditional_qubit_state(IDEAL, IDEAL)

    def test_fidelity_declines_with_multi_pair_emission(self):
        fids = []
        for mu_s in [0.02, 0.045, 0.06]:
            summary = teleport_summary(
                TimeBinState.plus(), mu_a=0.014, t_alice=0.25, mu_spdc=mu_s,
                t_idler=0.27, overlap=1.0, n_phases=8,
            ).with_receiver_loss(0.2)
            det = DetectorModel(0.7, 0.0)
            rho, _, _ = summary.conditional_qubit_state(det, det)
            fids.append(fidelity(rho, TimeBinState.minus()))
        assert fids[0] > fids[1] > fids[2]

    def test_overlap_zero_kills_equator_coherence(self):
        summary = teleport_summary(
            TimeBinState.plus(), mu_a=0.014, t_alice=0.3, mu_spdc=0.05,
            t_idler=0.3, overlap=0.0, n_phases=8,
        )
        rho, _, _ = summary.conditional_qubit_state(IDEAL, IDEAL)
        assert abs(rho.mat[0, 1]) < 1e-9


class TestHomCorrelator:
    def test_coherent_coherent_visibility_half(self):
        # cutoff 5 keeps the truncation bias of the correlator below 1e-7
        mu = 0.05
        r_interfering = hom_summary(
            SourceSpec("coherent", mu), SourceSpec("coherent", mu), overlap=1.0, n_phases=8, cutoff=5
        ).mean_coincidence_product()
        r_far = hom_summary(
            SourceSpec("coherent", mu), SourceSpec("coherent", mu), overlap=0.0, n_phases=8, cutoff=5
        ).mean_coincidence_product()
        vis = 1.0 - r_interfering / r_far
        assert vis == pytest.approx(0.5, abs=1e-6)

    def test_coincidence_linear_in_overlap(self):
        mu = 0.05
        rates = [
            hom_summary(
                SourceSpec("coherent", mu), SourceSpec("coherent", mu), overlap=w, n_phases=8
            ).mean_coincidence_product()
            for w in [0.0, 0.5, 1.0]
        ]
        assert rates[1] == pytest.approx(0.5 * (rates[0] + rates[2]), rel=1e-9)
