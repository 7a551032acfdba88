"""Tests for the fast analytic model, including oracle-equivalence checks."""

import numpy as np
import pytest

from teleportsim import fock, model
from teleportsim.qubit import SETTINGS, TimeBinState, fidelity, pauli_y_transform


def make_params(mu_a=0.014, mu_spdc=0.045, overlap=0.9, receiver=0.3, dark=1e-6):
    return model.ExperimentParams(
        sources=model.SourceParams(mu_a=mu_a, mu_spdc=mu_spdc),
        alice_channel=model.ChannelParams(6.0),
        idler_channel=model.ChannelParams(5.7),
        receiver_transmission=receiver,
        bsm_detector=fock.DetectorModel(0.7, dark),
        receiver_dark_prob=dark,
        overlap=overlap,
    )


def oracle_summary(params, state, mu_a=None, pair_cutoff=2, total_cutoff=5, alice_kind="coherent"):
    mu = params.sources.mu_a if mu_a is None else mu_a
    return fock.teleport_summary(
        state,
        mu_a=mu,
        t_alice=params.t_alice,
        mu_spdc=params.sources.mu_spdc,
        t_idler=params.t_idler,
        overlap=params.overlap,
        n_phases=params.n_phases,
        pair_cutoff=pair_cutoff,
        total_cutoff=total_cutoff,
        alice_kind=alice_kind,
    ).with_receiver_loss(params.receiver_transmission)


class TestChannel:
    def test_zero_loss(self):
        assert model.transmittance(model.ChannelParams(0.0)) == pytest.approx(1.0)

    def test_deployed_fibre_losses(self):
        assert model.transmittance(model.ChannelParams(6.0)) == pytest.approx(0.2512, abs=5e-5)
        assert model.transmittance(model.ChannelParams(5.7)) == pytest.approx(0.2692, abs=5e-5)

    def test_negative_loss_rejected(self):
        with pytest.raises(ValueError):
            model.ChannelParams(-1.0)


class TestParamValidation:
    def test_mu_range(self):
        with pytest.raises(ValueError):
            model.SourceParams(mu_a=0.5)
        with pytest.raises(ValueError):
            model.SourceParams(mu_spdc=-0.01)

    def test_pulse_sigma_positive(self):
        with pytest.raises(ValueError):
            model.SourceParams(pulse_sigma=0.0)

    def test_overlap_range(self):
        with pytest.raises(ValueError):
            make_params(overlap=1.2)


class TestOracleEquivalence:
    @pytest.mark.parametrize("mu_a", [0.0, 0.028])
    @pytest.mark.parametrize("mu_spdc", [0.02, 0.06])
    @pytest.mark.parametrize("overlap", [0.8, 1.0])
    def test_pattern_probabilities(self, mu_a, mu_spdc, overlap):
        params = make_params(mu_a=mu_a, mu_spdc=mu_spdc, overlap=overlap)
        pm = model.pattern_probabilities(params, TimeBinState.plus())
        po = oracle_summary(
            params, TimeBinState.plus(), alice_kind="coherent" if mu_a else "off"
        ).pattern_probabilities(params.bsm_detector, params.bsm_detector)
        for pat in pm:
            assert pm[pat] == pytest.approx(po[pat], abs=1e-4)
        assert sum(pm.values()) == pytest.approx(1.0, abs=1e-9)

    def test_conditional_state_trace_distance(self):
        params = make_params()
        state = TimeBinState.plus()
        rho_m, post_m, pf_m = model.teleported_state_model(state, params)
        summ = oracle_summary(params, state, pair_cutoff=3, total_cutoff=7)
        rho_o, post_o, pf_o = summ.conditional_qubit_state(params.bsm_detector, params.bsm_detector)
        td = 0.5 * np.sum(np.abs(np.linalg.eigvalsh(rho_m.mat - rho_o.mat)))
        assert td < 1e-3
        assert post_m == pytest.approx(post_o, rel=5e-3)

    def test_conditional_state_converges_with_oracle_depth(self):
        # the oracle approaches the (untruncated) model as the pair cutoff grows
        params = make_params()
        state = TimeBinState.plus_i()
        rho_m, _, pf_m = model.teleported_state_model(state, params)
        tds = []
        for pc in (2, 3):
            summ = oracle_summary(params, state, pair_cutoff=pc, total_cutoff=pc * 2 + 3)
            rho_o, _, pf_o = summ.conditional_qubit_state(params.bsm_detector, params.bsm_detector)
            tds.append(0.5 * np.sum(np.abs(np.linalg.eigvalsh(rho_m.mat - rho_o.mat))))
        assert tds[1] < tds[0]
        assert tds[1] < 1e-3

    def test_triple_probability(self):
        params = make_params()
        state = TimeBinState.plus()
        p_m = model.triple_outcome_probability(params, state, "MINUS")
        summ = oracle_summary(params, state, pair_cutoff=3, total_cutoff=7)
        p_o = summ.bob_click_probability(
            SETTINGS["MINUS"].state, 1.0, params.receiver_dark_prob,
            params.bsm_detector, params.bsm_detector,
        )
        assert p_m == pytest.approx(p_o, rel=2e-2)

    def test_monitor_coincidence_operating_point(self):
        # at full source strength the truncated oracle converges slowly in the
        # pair cutoff (same-bin coincidences are multi-pair dominated); at
        # pair cutoff 3 the residual truncation bias is ~1e-2 relative
        params = make_params()
        state = TimeBinState.plus()
        p_m = model.monitor_coincidence_probability(params, state)
        summ = oracle_summary(params, state, pair_cutoff=3, total_cutoff=7)
        p_o = summ.coincidence_probability("same_bin", params.bsm_detector, params.bsm_detector)
        assert p_m == pytest.approx(p_o, rel=1.5e-2)

    @pytest.mark.parametrize("mu_spdc", [0.01, 0.02])
    def test_monitor_coincidence_verification_grid(self, mu_spdc):
        # configured verification grid: full overlap (no slot modes) and a
        # deep pair cutoff, where oracle truncation (dropped >= 5-pair and
        # joint > 8-photon sectors, ~5e-5 relative) sits below the tolerance
        params = make_params(mu_spdc=mu_spdc, overlap=1.0)
        state = TimeBinState.plus()
        p_m = model.monitor_coincidence_probability(params, state)
        summ = oracle_summary(params, state, pair_cutoff=4, total_cutoff=8)
        p_o = summ.coincidence_probability("same_bin", params.bsm_detector, params.bsm_detector)
        assert p_m == pytest.approx(p_o, rel=1e-4)


class TestDarkCountsOnly:
    def test_flag_probability_closed_form(self):
        d = 1e-3
        params = model.ExperimentParams(
            sources=model.SourceParams(mu_a=0.0, mu_spdc=0.0),
            bsm_detector=fock.DetectorModel(1.0, d),
            receiver_dark_prob=0.0,
        )
        p = model.bsm_success_probability(params, TimeBinState.plus())
        assert p == pytest.approx(2 * d**2 * (1 - d) ** 2, rel=1e-9)


class TestProtocolIdentity:
    def test_ideal_fidelities(self):
        fids = model.ideal_protocol_fidelities()
        for label, f in fids.items():
            assert f >= 1.0 - 1e-9, label

    def test_single_photon_state_ideal_conditions(self):
        params = model.ExperimentParams(
            sources=model.SourceParams(mu_a=0.014, mu_spdc=0.02),
            alice_channel=model.ChannelParams(0.0),
            idler_channel=model.ChannelParams(0.0),
            receiver_transmission=1.0,
            bsm_detector=fock.DetectorModel(1.0, 0.0),
            receiver_dark_prob=0.0,
            overlap=1.0,
        )
        rho, y1 = model.teleported_state_single_photon("PLUS_I", params)
        # single photon + perfect overlap: residual error is multi-pair only
        assert fidelity(rho, TimeBinState.plus_i()) > 0.995
        assert 0.0 < y1 < 1.0


class TestSinglePhotonFidelity:
    def test_matches_oracle_single_photon_route(self):
        params = make_params(mu_spdc=0.06)
        for label in ("E", "PLUS"):
            f_model = model.single_photon_fidelity(params, label)
            state = SETTINGS[label].state
            summ = oracle_summary(params, state, pair_cutoff=3, total_cutoff=7, alice_kind="single")
            target = pauli_y_transform(state)
            t_label = next(k for k, v in SETTINGS.items() if v.state.isclose(target, tol=1e-9))
            from teleportsim.qubit import COMPLEMENT

            p_t = summ.bob_click_probability(
                SETTINGS[t_label].state, 1.0, params.receiver_dark_prob,
                params.bsm_detector, params.bsm_detector,
            )
            p_o = summ.bob_click_probability(
                SETTINGS[COMPLEMENT[t_label]].state, 1.0, params.receiver_dark_prob,
                params.bsm_detector, params.bsm_detector,
            )
            assert f_model == pytest.approx(p_t / (p_t + p_o), abs=2e-3)


class TestStructuralInvariants:
    def test_pole_fidelity_nearly_invariant_to_overlap(self):
        # pole populations need no interference, but exact physics couples
        # them to the overlap at order mu_a*mu_spdc (a sender photon can HOM-
        # interfere with a two-pair idler in the same bin), so the invariance
        # is approximate at the operating point and sharpens as sources weaken
        pole_shift, equator_shift = [], []
        for w in (0.7, 1.0):
            params = make_params(overlap=w)
            rho_p, _, _ = model.teleported_state_model(TimeBinState.early(), params)
            rho_q, _, _ = model.teleported_state_model(TimeBinState.plus(), params)
            pole_shift.append(fidelity(rho_p, TimeBinState.late()))
            equator_shift.append(fidelity(rho_q, TimeBinState.minus()))
        d_pole = abs(pole_shift[0] - pole_shift[1])
        d_eq = abs(equator_shift[0] - equator_shift[1])
        assert d_pole < 1e-4
        assert d_pole < 1e-2 * d_eq

    def test_equator_fidelity_monotone_in_mu_spdc(self):
        fids = []
        for mu_s in (0.02, 0.045, 0.06):
            params = make_params(mu_spdc=mu_s)
            rho, _, _ = model.teleported_state_model(TimeBinState.plus(), params)
            fids.append(fidelity(rho, TimeBinState.minus()))
        assert fids[0] > fids[1] > fids[2]

    def test_equator_fidelity_monotone_in_overlap(self):
        fids = []
        for w in (0.6, 0.8, 1.0):
            params = make_params(overlap=w)
            rho, _, _ = model.teleported_state_model(TimeBinState.plus(), params)
            fids.append(fidelity(rho, TimeBinState.minus()))
        assert fids[0] < fids[1] < fids[2]

    def test_overlap_zero_kills_equator_coherence(self):
        params = make_params(overlap=0.0)
        rho, _, _ = model.teleported_state_model(TimeBinState.plus(), params)
        assert abs(rho.mat[0, 1]) < 1e-9

    def test_flag_probability_setting_independent(self):
        params = make_params()
        state = TimeBinState.plus()
        base = model.bsm_success_probability(params, state)
        for label in ("E", "PLUS_I"):
            p = model.triple_outcome_probability(params, state, label)
            p_perp = model.triple_outcome_probability(
                params, state, {"E": "L", "PLUS_I": "MINUS_I"}[label]
            )
            assert p + p_perp <= base * (1 + 1e-9)


class TestHomDip:
    def test_rate_symmetric_in_delta_t(self):
        params = make_params()
        for dt in (30.0, 111.0):
            r_plus = model.hom_coincidence_rate(params, dt)
            r_minus = model.hom_coincidence_rate(params, -dt)
            assert r_plus == pytest.approx(r_minus, rel=1e-9)

    def test_far_from_dip_reaches_baseline(self):
        params = make_params()
        curve = model.hom_dip_curve(params)
        r_far = model.hom_coincidence_rate(params, 900.0)
        assert r_far == pytest.approx(curve.baseline_rate, rel=1e-3)

    def test_dip_center_matches_curve(self):
        params = make_params()
        curve = model.hom_dip_curve(params)
        assert model.hom_coincidence_rate(params, 0.0) == pytest.approx(curve.rate(0.0), rel=1e-9)

    def test_delta_t_out_of_range(self):
        with pytest.raises(ValueError):
            model.hom_coincidence_rate(make_params(), 1500.0)

    def test_curve_invariants(self):
        with pytest.raises(ValueError):
            model.HomDipCurve(100.0, 1.2, 0.0, 42.0)
        curve = model.HomDipCurve(100.0, 0.5, 0.0, 42.0)
        assert curve.rate(0.0) == pytest.approx(50.0)

    def test_overlap_at_offset(self):
        sigma = 29.7
        assert model.overlap_at_offset(0.0, sigma) == pytest.approx(1.0)
        assert model.overlap_at_offset(2 * sigma, sigma) == pytest.approx(np.exp(-1.0))


class TestCorrelatorVisibility:
    def test_coherent_coherent_is_half(self):
        assert model.hom_visibility_correlator(0.05, 1.0, 0.05, 1.0) == pytest.approx(0.5, abs=1e-12)

    def test_single_photons_reach_unity(self):
        assert model.hom_visibility_correlator(1.0, 0.0, 1.0, 0.0) == pytest.approx(1.0)

    def test_coherent_thermal_below_half(self):
        v = model.hom_visibility_correlator(0.01, 1.0, 0.01, 2.0)
        assert 0.0 < v < 0.5
