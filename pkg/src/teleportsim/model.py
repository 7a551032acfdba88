"""Fast analytic photon-statistics model (the simulator's hot path).

The full optical train, from the two sources through fibre loss, the
distinguishability embedding, the Bell-state-measurement beamsplitter and
the receiver analyzer, is a passive linear network acting on a displaced,
pair-squeezed Gaussian state, so every click probability follows in closed
form from the calculus in :mod:`teleportsim.gaussian`.

Two ensemble averages make the treatment exact rather than perturbative:

- Phase randomization of the sender's laser is a uniform average over a
  discrete phase grid; with more grid points than the relevant photon-number
  coherence order the average is exact for all measured probabilities.
- The pair source's *total*-pair-number distribution is thermal,
  P(N) = mu^N/(1+mu)^(N+1), while each N-pair sector carries the coherent
  time-bin-entangled structure.  That state is not Gaussian, but it is an
  exact mixture of two-mode-squeezed states: with lam0 = mu/(1+mu),
  mixing TMSV(lam) with density (1-lam0)/(lam0 (1-lam)^2) on [0, lam0]
  reproduces every photon-number-sector observable.  The mixture integral
  is evaluated by Gauss-Legendre quadrature (exactly, since the integrand
  is a low-order polynomial in lam after the substitution u = 1/(1-lam)).

Genuine single-photon input at the sender (needed for decoy-state ground
truth) is obtained from the same machinery by the decoy transform itself:
any measured quantity Q(mu) = sum_n e^(-mu) mu^n/n! Y_n yields the
single-photon yield Y_1 as the linear Taylor coefficient of e^mu Q(mu),
extracted by polynomial fitting over a mu grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .fock import PATTERNS, PSI_MINUS_PATTERNS, DetectorModel
from .gaussian import (
    analyzer_2x2,
    batch_expectations,
    beamsplitter_2x2,
    grouped_expectations,
    loss_2x2,
    two_mode_map,
)
from .qubit import COMPLEMENT, SETTINGS, DensityMatrix, TimeBinState, teleported_target

# mode layout: sender (slot 0/1), idler (slot 0/1), receiver, loss sinks
A_E0, A_L0, A_E1, A_L1 = 0, 1, 2, 3
I_E0, I_L0, I_E1, I_L1 = 4, 5, 6, 7
S_E, S_L = 8, 9
K_IE, K_IL, K_SE, K_SL = 10, 11, 12, 13
N_MODES = 14

DET_BIN_MODES = {
    "d1e": (A_E0, A_E1),
    "d1l": (A_L0, A_L1),
    "d2e": (I_E0, I_E1),
    "d2l": (I_L0, I_L1),
}
DET_BIN_ORDER = ("d1e", "d1l", "d2e", "d2l")

SECTOR_FIT_DEGREE = 8  # receiver-sector series truncated below lam0^9
MU_FIT_DEGREE = 9      # single-photon extraction aliases above mu_max^9/9!
MU_FIT_MAX = 0.3


@dataclass(frozen=True)
class SourceParams:
    """Source settings: mean photon number per qubit at the sender,
    mean pair number per pulse, and the RMS photon duration."""

    mu_a: float = 0.014
    mu_spdc: float = 0.045
    pulse_sigma: float = 29.7  # ps RMS (70 ps FWHM)

    def __post_init__(self):
        if not 0.0 <= self.mu_a <= 0.1:
            raise ValueError("mu_a must be in [0, 0.1]")
        if not 0.0 <= self.mu_spdc <= 0.1:
            raise ValueError("mu_spdc must be in [0, 0.1]")
        if self.pulse_sigma <= 0:
            raise ValueError("pulse_sigma must be positive")


@dataclass(frozen=True)
class ChannelParams:
    """Fibre channel: attenuation and propagation delay."""

    loss_db: float
    base_delay_ns: float = 0.0

    def __post_init__(self):
        if self.loss_db < 0:
            raise ValueError("loss_db must be >= 0")


def transmittance(ch: ChannelParams) -> float:
    """Power transmission 10^(-loss_db/10)."""
    return 10.0 ** (-ch.loss_db / 10.0)


@dataclass(frozen=True)
class ExperimentParams:
    """Everything the photon-statistics model needs for one operating point.

    ``alice_channel`` / ``idler_channel`` include deployed-fibre loss plus
    any excess (coupling, filtering) loss.  ``receiver_transmission``
    collects the receiver arm: analyzer and coupling loss times detector
    efficiency.  ``overlap`` is the squared wavepacket overlap of the two
    photons at the beamsplitter at zero arrival-time offset.
    """

    sources: SourceParams = SourceParams()
    alice_channel: ChannelParams = ChannelParams(loss_db=6.0)
    idler_channel: ChannelParams = ChannelParams(loss_db=5.7)
    receiver_transmission: float = 0.65
    bsm_detector: DetectorModel = DetectorModel(efficiency=0.7, dark_count_prob=1e-6)
    receiver_dark_prob: float = 1e-6
    overlap: float = 1.0
    clock_rate_hz: float = 80e6
    n_phases: int = 8
    n_lambda: int = 8

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must be in [0, 1]")
        if not 0.0 < self.receiver_transmission <= 1.0:
            raise ValueError("receiver_transmission must be in (0, 1]")

    @property
    def t_alice(self) -> float:
        return transmittance(self.alice_channel)

    @property
    def t_idler(self) -> float:
        return transmittance(self.idler_channel)


@dataclass(frozen=True)
class HomDipCurve:
    """Gaussian dip: rate(dt) = baseline * (1 - visibility * exp(-dt^2 / (2 w^2)))."""

    baseline_rate: float
    visibility: float
    center: float
    width_sigma: float

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must be in [0, 1]")
        if self.baseline_rate < 0 or self.width_sigma <= 0:
            raise ValueError("baseline_rate >= 0 and width_sigma > 0 required")

    def rate(self, delta_t_ps: float) -> float:
        arg = (delta_t_ps - self.center) ** 2 / (2.0 * self.width_sigma**2)
        return self.baseline_rate * (1.0 - self.visibility * np.exp(-arg))


def overlap_at_offset(delta_t_ps: float, pulse_sigma_ps: float) -> float:
    """Squared wavepacket overlap of two equal Gaussian photons offset by dt."""
    return float(np.exp(-(delta_t_ps**2) / (4.0 * pulse_sigma_ps**2)))


# ---------------------------------------------------------------------------
# ensemble construction

def _lambda_nodes(mu_pair: float, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes/weights for the thermal-total TMSV mixture."""
    if mu_pair <= 0:
        return np.array([0.0]), np.array([1.0])
    lam0 = mu_pair / (1.0 + mu_pair)
    u_hi = 1.0 / (1.0 - lam0)
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    u = 0.5 * (u_hi - 1.0) * (x + 1.0) + 1.0
    lam = 1.0 - 1.0 / u
    weights = w * 0.5 * (u_hi - 1.0) * (1.0 - lam0) / lam0
    return lam, weights


def _source_configs(
    params: ExperimentParams,
    input_state: TimeBinState,
    mu_a: float | None = None,
    alice_scale: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pre-network (c, Z) config batch and mixture weights."""
    mu = params.sources.mu_a if mu_a is None else mu_a
    amp = np.sqrt(mu * params.t_alice * alice_scale)
    ket = input_state.ket()
    lam, w_lam = _lambda_nodes(params.sources.mu_spdc, params.n_lambda)
    n_th = params.n_phases if amp > 0 else 1
    thetas = np.arange(n_th) * 2.0 * np.pi / n_th
    n_cfg = len(lam) * n_th
    c = np.zeros((n_cfg, N_MODES), dtype=complex)
    z = np.zeros((n_cfg, N_MODES, N_MODES), dtype=complex)
    weights = np.empty(n_cfg)
    k = 0
    for i, (lm, wl) in enumerate(zip(lam, w_lam)):
        xi = np.sqrt(lm)
        for th in thetas:
            c[k, A_E0] = amp * ket[0] * np.exp(1j * th)
            c[k, A_L0] = amp * ket[1] * np.exp(1j * th)
            z[k, I_E0, S_E] = z[k, S_E, I_E0] = xi
            z[k, I_L0, S_L] = z[k, S_L, I_L0] = xi
            weights[k] = wl / n_th
            k += 1
    return c, z, weights


@lru_cache(maxsize=128)
def _network_map(
    overlap: float,
    t_idler: float,
    t_receiver: float,
    setting_key: tuple | None,
) -> np.ndarray:
    """Linear map for embed + losses + BSM beamsplitter (+ analyzer)."""
    r = np.eye(N_MODES, dtype=complex)
    emb = np.array(
        [
            [np.sqrt(overlap), np.sqrt(1.0 - overlap)],
            [-np.sqrt(1.0 - overlap), np.sqrt(overlap)],
        ],
        dtype=complex,
    )
    for i, j in ((A_E0, A_E1), (A_L0, A_L1)):
        r = r @ two_mode_map(N_MODES, i, j, emb)
    for i, j in ((I_E0, K_IE), (I_L0, K_IL)):
        r = r @ two_mode_map(N_MODES, i, j, loss_2x2(t_idler))
    for i, j in ((S_E, K_SE), (S_L, K_SL)):
        r = r @ two_mode_map(N_MODES, i, j, loss_2x2(t_receiver))
    bs = beamsplitter_2x2(0.5)
    for i, j in ((A_E0, I_E0), (A_L0, I_L0), (A_E1, I_E1), (A_L1, I_L1)):
        r = r @ two_mode_map(N_MODES, i, j, bs)
    if setting_key is not None:
        u_e, u_l = setting_key
        r = r @ two_mode_map(N_MODES, S_E, S_L, analyzer_2x2(u_e, u_l))
    return r


def _transformed_configs(
    params, input_state, setting: TimeBinState | None = None, mu_a=None, alice_scale=1.0
):
    c, z, w = _source_configs(params, input_state, mu_a=mu_a, alice_scale=alice_scale)
    key = None
    if setting is not None:
        k_e, k_l = setting.ket()
        key = (complex(k_e), complex(k_l))
    r = _network_map(params.overlap, params.t_idler, params.receiver_transmission, key)
    c = c @ r
    z = np.swapaxes(r, 0, 1) @ z @ r
    return c, z, w


# ---------------------------------------------------------------------------
# click assembly

def _noclick_s(eta: float, bins: tuple[str, ...], extra: dict | None = None) -> np.ndarray:
    s = np.ones(N_MODES)
    for b in bins:
        for m in DET_BIN_MODES[b]:
            s[m] = 1.0 - eta
    if extra:
        for m, v in extra.items():
            s[m] = v
    return s


def _pattern_terms(pattern, eta: float, dark: float, extra: dict | None = None):
    """Inclusion-exclusion expansion of an exclusive click pattern into
    no-click evaluations: (sign, dark_factor, s_vector) triples."""
    clicks = [b for b, hit in zip(DET_BIN_ORDER, pattern) if hit]
    noclicks = [b for b, hit in zip(DET_BIN_ORDER, pattern) if not hit]
    terms = []
    for k in range(len(clicks) + 1):
        for sub in itertools.combinations(clicks, k):
            bins = tuple(noclicks) + sub
            dark_factor = (1.0 - dark) ** len(bins)
            terms.append(((-1.0) ** k, dark_factor, _noclick_s(eta, bins, extra)))
    return terms


def _event_probability(c, z, w, patterns, det: DetectorModel, extra: dict | None = None) -> float:
    signs, facs, svecs = [], [], []
    for pat in patterns:
        for sign, fac, s in _pattern_terms(pat, det.efficiency, det.dark_count_prob, extra):
            signs.append(sign)
            facs.append(fac)
            svecs.append(s)
    vals = np.real(batch_expectations(c, z, np.array(svecs), w))
    return float(np.sum(np.array(signs) * np.array(facs) * vals))


def pattern_probabilities(
    params: ExperimentParams,
    input_state: TimeBinState,
    mu_a: float | None = None,
    alice_scale: float = 1.0,
) -> dict:
    """Probabilities of all 16 exclusive BSM click patterns per clock cycle."""
    c, z, w = _transformed_configs(params, input_state, mu_a=mu_a, alice_scale=alice_scale)
    det = params.bsm_detector
    return {pat: _event_probability(c, z, w, [pat], det) for pat in PATTERNS}


def bsm_success_probability(
    params: ExperimentParams,
    input_state: TimeBinState,
    mu_a: float | None = None,
    alice_scale: float = 1.0,
) -> float:
    """Per-clock-cycle probability of the psi-minus flag (the two exclusive
    cross-bin click patterns), including multi-photon and dark-count false
    positives."""
    c, z, w = _transformed_configs(params, input_state, mu_a=mu_a, alice_scale=alice_scale)
    return _event_probability(c, z, w, PSI_MINUS_PATTERNS, params.bsm_detector)


def monitor_coincidence_probability(
    params: ExperimentParams, input_state: TimeBinState, mu_a: float | None = None
) -> float:
    """Per-cycle probability of a HOM-monitor event: cross-detector
    coincidence in the same bin (early-early or late-late), counted once per
    bin combination."""
    c, z, w = _transformed_configs(params, input_state, mu_a=mu_a)
    det = params.bsm_detector
    total = 0.0
    for pair in (("d1e", "d2e"), ("d1l", "d2l")):
        # P(A and B) = 1 - P(!A) - P(!B) + P(!A and !B)
        eta, d = det.efficiency, det.dark_count_prob
        svecs = [_noclick_s(eta, (pair[0],)), _noclick_s(eta, (pair[1],)), _noclick_s(eta, pair)]
        vals = np.real(batch_expectations(c, z, np.array(svecs), w))
        total += 1.0 - (1 - d) * vals[0] - (1 - d) * vals[1] + (1 - d) ** 2 * vals[2]
    return float(total)


def singles_probability(params: ExperimentParams, input_state: TimeBinState, detector: int = 1) -> float:
    """Per-cycle click probability of one BSM detector (both bins)."""
    c, z, w = _transformed_configs(params, input_state)
    det = params.bsm_detector
    bins = ("d1e", "d1l") if detector == 1 else ("d2e", "d2l")
    val = np.real(batch_expectations(c, z, _noclick_s(det.efficiency, bins)[None, :], w))[0]
    return float(1.0 - (1.0 - det.dark_count_prob) ** 2 * val)


def triple_outcome_probability(
    params: ExperimentParams,
    input_state: TimeBinState,
    setting_label: str,
    mu_a: float | None = None,
    alice_scale: float = 1.0,
    patterns=None,
) -> float:
    """P(flag pattern AND receiver click on the analyzer output projecting
    onto the given setting) per clock cycle.  ``patterns`` restricts the
    flag to a subset of its click patterns (default: both cross patterns)."""
    if patterns is None:
        patterns = PSI_MINUS_PATTERNS
    setting = SETTINGS[setting_label].state
    c, z, w = _transformed_configs(
        params, input_state, setting=setting, mu_a=mu_a, alice_scale=alice_scale
    )
    det = params.bsm_detector
    p_flag = _event_probability(c, z, w, patterns, det)
    p_flag_nobob = _event_probability(
        c, z, w, patterns, det, extra={S_E: 0.0}
    ) * (1.0 - params.receiver_dark_prob)
    return float(p_flag - p_flag_nobob)


def _sector_populations(c, z, w, det: DetectorModel) -> float:
    """P(flag AND exactly one receiver photon in the projected mode)."""
    ts = 0.5 * (1.0 + np.cos(np.pi * np.arange(SECTOR_FIT_DEGREE + 1) / SECTOR_FIT_DEGREE))
    vals = np.zeros(len(ts))
    for i, t in enumerate(ts):
        vals[i] = _event_probability(
            c, z, w, PSI_MINUS_PATTERNS, det, extra={S_E: t, S_L: 0.0}
        )
    coeffs = np.polynomial.polynomial.polyfit(ts, vals, SECTOR_FIT_DEGREE)
    return float(coeffs[1])


def teleported_state_model(
    input_state: TimeBinState, params: ExperimentParams, mu_a: float | None = None
) -> tuple[DensityMatrix, float, float]:
    """Conditional teleported state from the analytic model.

    Computes the six single-photon-sector populations <m|rho~|m> (projected
    mode holds exactly one photon, its complement none) for the cardinal
    analyzer bases and inverts them to the 2x2 conditional state.  Returns
    (state, post_selection_prob, flag_prob), matching the brute-force
    oracle's conditioning semantics.
    """
    det = params.bsm_detector
    pops = {}
    for label in ("E", "L", "PLUS", "MINUS", "PLUS_I", "MINUS_I"):
        c, z, w = _transformed_configs(
            params, input_state, setting=SETTINGS[label].state, mu_a=mu_a
        )
        pops[label] = _sector_populations(c, z, w, det)
    trace = pops["E"] + pops["L"]
    re_el = 0.5 * (pops["PLUS"] - pops["MINUS"])
    im_el = 0.5 * (pops["MINUS_I"] - pops["PLUS_I"])
    rho = np.array(
        [[pops["E"], re_el + 1j * im_el], [re_el - 1j * im_el, pops["L"]]]
    )
    c0, z0, w0 = _transformed_configs(params, input_state, mu_a=mu_a)
    p_flag = _event_probability(c0, z0, w0, PSI_MINUS_PATTERNS, det)
    state = DensityMatrix(_nearest_physical(rho / trace))
    return state, trace / p_flag, p_flag


def _nearest_physical(mat: np.ndarray) -> np.ndarray:
    """Clip tiny negative eigenvalues from numerical extraction noise."""
    h = 0.5 * (mat + mat.conj().T)
    evals, vecs = np.linalg.eigh(h)
    evals = np.clip(evals, 0.0, None)
    h = (vecs * evals) @ vecs.conj().T
    return h / np.real(np.trace(h))


# ---------------------------------------------------------------------------
# single-photon (decoy-transform) quantities

def _cheb_grid(lo: float, hi: float, n_points: int) -> np.ndarray:
    k = np.arange(n_points)
    return lo + (hi - lo) * 0.5 * (1.0 + np.cos(np.pi * k / (n_points - 1)))


def _mu_grid() -> np.ndarray:
    return _cheb_grid(0.0, MU_FIT_MAX, MU_FIT_DEGREE + 1)


def single_photon_yield(fn, degree: int = MU_FIT_DEGREE) -> float:
    """Y_1 from Q(mu) = sum_n e^(-mu) mu^n / n! Y_n via Taylor extraction.

    ``fn(mu)`` must evaluate the Poisson-averaged quantity at sender mean
    photon number mu; the linear coefficient of e^mu Q(mu) is returned.
    """
    grid = _cheb_grid(0.0, MU_FIT_MAX, degree + 1)
    vals = np.array([np.exp(mu) * fn(mu) for mu in grid])
    coeffs = np.polynomial.polynomial.polyfit(grid, vals, degree)
    return float(coeffs[1])


def _event_svectors(patterns, eta: float, dark: float, extra: dict | None = None):
    """Signed no-click expansion of a pattern set: (coeffs, s_rows)."""
    coeffs, svecs = [], []
    for pat in patterns:
        for sign, fac, s in _pattern_terms(pat, eta, dark, extra):
            coeffs.append(sign * fac)
            svecs.append(s)
    return np.array(coeffs), np.array(svecs)


def _triple_svectors(det: DetectorModel, receiver_dark: float):
    """Expansion of P(flag AND receiver click on the projected mode)."""
    c_flag, s_flag = _event_svectors(PSI_MINUS_PATTERNS, det.efficiency, det.dark_count_prob)
    c_nob, s_nob = _event_svectors(
        PSI_MINUS_PATTERNS, det.efficiency, det.dark_count_prob, extra={S_E: 0.0}
    )
    coeffs = np.concatenate([c_flag, -(1.0 - receiver_dark) * c_nob])
    return coeffs, np.vstack([s_flag, s_nob])


def _grid_blocks(
    mu_values,
    input_state: TimeBinState,
    network: np.ndarray,
    spdc: tuple,
    t_alice: float,
    n_theta: int,
):
    """Concatenated config blocks over a mu grid (x an optional lam grid).

    ``spdc`` is ("mixture", mu_spdc, n_lambda) for the thermal-total source
    or ("pure", lam_values) for bare two-mode-squeezed states (used by the
    single-pair extraction).  Returns (c, z, w, bounds, n_blocks).
    """
    ket = input_state.ket()
    if spdc[0] == "mixture":
        lam, w_lam = _lambda_nodes(spdc[1], spdc[2])
        lam_blocks = [(lam, w_lam)]
    else:
        lam_blocks = [(np.array([l]), np.array([1.0])) for l in spdc[1]]
    thetas = np.arange(n_theta) * 2.0 * np.pi / n_theta
    cs, zs, ws, bounds = [], [], [], [0]
    for mu in mu_values:
        amp = np.sqrt(mu * t_alice)
        for lam, w_lam in lam_blocks:
            n_cfg = len(lam) * n_theta
            c = np.zeros((n_cfg, N_MODES), dtype=complex)
            z = np.zeros((n_cfg, N_MODES, N_MODES), dtype=complex)
            w = np.empty(n_cfg)
            k = 0
            for lm, wl in zip(lam, w_lam):
                xi = np.sqrt(lm)
                for th in thetas:
                    c[k, A_E0] = amp * ket[0] * np.exp(1j * th)
                    c[k, A_L0] = amp * ket[1] * np.exp(1j * th)
                    z[k, I_E0, S_E] = z[k, S_E, I_E0] = xi
                    z[k, I_L0, S_L] = z[k, S_L, I_L0] = xi
                    w[k] = wl / n_theta
                    k += 1
            cs.append(c @ network)
            zs.append(np.swapaxes(network, 0, 1) @ z @ network)
            ws.append(w)
            bounds.append(bounds[-1] + n_cfg)
    return np.vstack(cs), np.concatenate(zs), np.concatenate(ws), np.array(bounds)


def single_photon_fidelity(params: ExperimentParams, prepared_label: str) -> float:
    """Teleportation fidelity of the single-photon component of the sender's
    attenuated pulses, at the configured operating point.

    This is the decoy-transform ground truth: the triple-coincidence yields
    conditioned on exactly one photon leaving the sender, measured in the
    target basis pair, give F1 = Y1(target) / (Y1(target) + Y1(orthogonal)).
    """
    input_state = SETTINGS[prepared_label].state
    mu_grid = _mu_grid()
    det = params.bsm_detector
    coeffs, svecs = _triple_svectors(det, params.receiver_dark_prob)
    yields = {}
    for label, setting in _target_pair(prepared_label):
        k_e, k_l = setting.ket()
        net = _network_map(
            params.overlap, params.t_idler, params.receiver_transmission,
            (complex(k_e), complex(k_l)),
        )
        c, z, w, bounds = _grid_blocks(
            mu_grid, input_state, net,
            ("mixture", params.sources.mu_spdc, params.n_lambda),
            params.t_alice, params.n_phases,
        )
        vals = grouped_expectations(c, z, w, svecs, bounds) @ coeffs
        poly = np.polynomial.polynomial.polyfit(mu_grid, np.exp(mu_grid) * vals, MU_FIT_DEGREE)
        yields[label] = poly[1]
    y_t = yields["target"]
    y_o = yields["orthogonal"]
    return float(y_t / (y_t + y_o))


def _target_pair(prepared_label: str):
    target = teleported_target(prepared_label)
    for label, setting in SETTINGS.items():
        if setting.state.isclose(target, tol=1e-12):
            yield "target", setting.state
            yield "orthogonal", SETTINGS[COMPLEMENT[label]].state
            return
    raise ValueError(f"no cardinal target for {prepared_label!r}")


def ideal_protocol_fidelities(
    prepared_labels=("E", "L", "PLUS", "MINUS", "PLUS_I", "MINUS_I"),
    n_theta: int = 4,
    mu_deg: int = 7,
    lam_deg: int = 7,
) -> dict[str, float]:
    """Teleportation fidelities of the ideal protocol: one photon at the
    sender, one entangled pair, no loss, no darks, perfect overlap.

    Neither restriction is Gaussian, so both are reached by Taylor
    extraction: the sender's single-photon component via the mu expansion
    and the source's single-pair component via the squeezing expansion
    (sector weights of a two-bin squeezed state are (N+1)(1-lam)^2 lam^N,
    so Q/(1-lam)^2 is polynomial in lam with linear coefficient 2*Y1).
    All requested states are evaluated in one batched pass.
    """
    mu_grid = _cheb_grid(0.0, 0.25, mu_deg + 1)
    lam_grid = _cheb_grid(0.0, 0.04, lam_deg + 1)
    det = DetectorModel(efficiency=1.0, dark_count_prob=0.0)
    coeffs, svecs = _triple_svectors(det, 0.0)
    pairs = []  # (prepared, which, c, z, w, bounds)
    cs, zs, ws = [], [], []
    bounds_all = [0]
    index = []
    for prepared in prepared_labels:
        input_state = SETTINGS[prepared].state
        for which, setting in _target_pair(prepared):
            k_e, k_l = setting.ket()
            net = _network_map(1.0, 1.0, 1.0, (complex(k_e), complex(k_l)))
            c, z, w, bounds = _grid_blocks(
                mu_grid, input_state, net, ("pure", lam_grid), 1.0, n_theta
            )
            offset = bounds_all[-1]
            cs.append(c)
            zs.append(z)
            ws.append(w)
            bounds_all.extend((bounds[1:] + offset).tolist())
            index.append((prepared, which))
    vals = grouped_expectations(
        np.vstack(cs), np.concatenate(zs), np.concatenate(ws), svecs, np.array(bounds_all)
    ) @ coeffs
    n_grid = len(mu_grid) * len(lam_grid)
    yields: dict[tuple, float] = {}
    for i, key in enumerate(index):
        grid_vals = vals[i * n_grid : (i + 1) * n_grid].reshape(len(mu_grid), len(lam_grid))
        y1_mu = np.polynomial.polynomial.polyfit(
            mu_grid, np.exp(mu_grid)[:, None] * grid_vals, mu_deg
        )[1]
        g = y1_mu / (1.0 - lam_grid) ** 2
        yields[key] = 0.5 * np.polynomial.polynomial.polyfit(lam_grid, g, lam_deg)[1]
    return {
        p: float(yields[(p, "target")] / (yields[(p, "target")] + yields[(p, "orthogonal")]))
        for p in prepared_labels
    }


def ideal_protocol_fidelity(prepared_label: str, **kw) -> float:
    return ideal_protocol_fidelities((prepared_label,), **kw)[prepared_label]


def teleported_state_single_photon(
    input_state_label: str, params: ExperimentParams
) -> tuple[DensityMatrix, float]:
    """Conditional teleported state for a true single-photon input,
    obtained by the decoy transform of the coherent-input model.

    Returns (state, flag_yield): flag_yield is the psi-minus probability
    conditioned on a single photon leaving the sender.
    """
    input_state = SETTINGS[input_state_label].state
    det = params.bsm_detector
    mu_grid = _mu_grid()
    ts = 0.5 * (1.0 + np.cos(np.pi * np.arange(SECTOR_FIT_DEGREE + 1) / SECTOR_FIT_DEGREE))
    flag_coeffs, flag_svecs = _event_svectors(
        PSI_MINUS_PATTERNS, det.efficiency, det.dark_count_prob
    )
    pops = {}
    for label in ("E", "L", "PLUS", "MINUS", "PLUS_I", "MINUS_I"):
        k_e, k_l = SETTINGS[label].state.ket()
        net = _network_map(
            params.overlap, params.t_idler, params.receiver_transmission,
            (complex(k_e), complex(k_l)),
        )
        c, z, w, bounds = _grid_blocks(
            mu_grid, input_state, net,
            ("mixture", params.sources.mu_spdc, params.n_lambda),
            params.t_alice, params.n_phases,
        )
        # sector curve in t for every mu block, then dual extraction
        svecs = []
        for t in ts:
            rows = flag_svecs.copy()
            rows[:, S_E] = t
            rows[:, S_L] = 0.0
            svecs.append(rows)
        vals = grouped_expectations(c, z, w, np.vstack(svecs), bounds)
        curves = vals.reshape(len(mu_grid), len(ts), len(flag_coeffs)) @ flag_coeffs
        sector = np.polynomial.polynomial.polyfit(ts, curves.T, SECTOR_FIT_DEGREE)[1]
        pops[label] = np.polynomial.polynomial.polyfit(
            mu_grid, np.exp(mu_grid) * sector, MU_FIT_DEGREE
        )[1]
    trace = pops["E"] + pops["L"]
    re_el = 0.5 * (pops["PLUS"] - pops["MINUS"])
    im_el = 0.5 * (pops["MINUS_I"] - pops["PLUS_I"])
    rho = np.array([[pops["E"], re_el + 1j * im_el], [re_el - 1j * im_el, pops["L"]]])
    flag_yield = single_photon_yield(
        lambda mu: bsm_success_probability(params, input_state, mu_a=mu)
    )
    return DensityMatrix(_nearest_physical(rho / trace)), flag_yield


# ---------------------------------------------------------------------------
# HOM dip

def hom_coincidence_rate(
    params: ExperimentParams,
    delta_t_ps: float,
    input_state: TimeBinState | None = None,
    window_s: float = 10.0,
) -> float:
    """Expected HOM-monitor coincidences per window at arrival-time offset
    delta_t, using threshold detectors on the live configuration."""
    if abs(delta_t_ps) > 1000.0:
        raise ValueError("|delta_t| must be <= 1000 ps")
    if input_state is None:
        input_state = TimeBinState.plus()
    w_eff = params.overlap * overlap_at_offset(delta_t_ps, params.sources.pulse_sigma)
    p = monitor_coincidence_probability(replace(params, overlap=w_eff), input_state)
    return p * params.clock_rate_hz * window_s


def hom_dip_curve(
    params: ExperimentParams, input_state: TimeBinState | None = None, window_s: float = 10.0
) -> HomDipCurve:
    """Closed-form dip parameters of the monitor rate vs arrival-time offset.

    The coincidence probability is linear in the effective overlap, so two
    evaluations (w = 0 and w = overlap) determine the full Gaussian curve
    with width sqrt(2) * pulse_sigma.
    """
    if input_state is None:
        input_state = TimeBinState.plus()
    p_far = monitor_coincidence_probability(replace(params, overlap=0.0), input_state)
    p_dip = monitor_coincidence_probability(params, input_state)
    baseline = p_far * params.clock_rate_hz * window_s
    vis = (p_far - p_dip) / p_far if p_far > 0 else 0.0
    return HomDipCurve(
        baseline_rate=baseline,
        visibility=max(vis, 0.0),
        center=0.0,
        width_sigma=np.sqrt(2.0) * params.sources.pulse_sigma,
    )


def hom_visibility_correlator(mu_a: float, g2_a: float, mu_b: float, g2_b: float) -> float:
    """Ideal dip visibility of the photon-number cross-correlator.

    For two independent sources with mean photon numbers mu and zero-delay
    autocorrelations g2 meeting at a 50:50 beamsplitter with wavepacket
    overlap w, the cross-port correlator is

        <n1 n2>(w) = [g2_a mu_a^2 + g2_b mu_b^2 + 2 mu_a mu_b (1 - w)] / 4,

    so the dip visibility (w: 0 -> 1) is

        V = 2 mu_a mu_b / (g2_a mu_a^2 + g2_b mu_b^2 + 2 mu_a mu_b).

    Equal phase-averaged coherent states (g2 = 1) give exactly 1/2; a
    coherent-thermal pair is lower; ideal single photons reach 1.
    """
    if mu_a <= 0 or mu_b <= 0:
        raise ValueError("mean photon numbers must be positive")
    cross = 2.0 * mu_a * mu_b
    return cross / (g2_a * mu_a**2 + g2_b * mu_b**2 + cross)
