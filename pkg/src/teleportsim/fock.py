"""Brute-force reference model on a truncated multi-mode Fock space.

This is the slow-but-exact oracle used to validate the fast analytic model
and generate ground-truth values.  A register holds complex amplitudes over
all occupation tuples with total photon number <= ``cutoff`` for a list of
modes labelled ``(port, bin, slot)``:

- ``port``  spatial channel ("alice", "idler", "signal", ...)
- ``bin``   temporal mode, "e" (early) or "l" (late)
- ``slot``  distinguishability slot: 0 = shared wavepacket, 1 = orthogonal

All operations return new registers; registers are immutable values.

Beamsplitter sign convention (fixed once, used everywhere):
``a+ -> sqrt(T) a+ - sqrt(1-T) b+`` and ``b+ -> sqrt(1-T) a+ + sqrt(T) b+``,
so two identical photons at T=1/2 bunch as (|2,0> - |0,2>)/sqrt(2).

Mixed states produced by loss are represented as lists of sub-normalized
pure registers (one per loss Kraus branch); squared norms sum to <= 1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb, factorial, sqrt

import numpy as np
from scipy import sparse

from .qubit import DensityMatrix, TimeBinState

Mode = tuple[str, str, int]  # (port, bin, slot)

BINS = ("e", "l")

# Exclusive detector click patterns are 4-tuples of bools over
# (det1-early, det1-late, det2-early, det2-late).
PATTERNS: list[tuple[bool, bool, bool, bool]] = [
    tuple(bool(b) for b in bits) for bits in itertools.product((0, 1), repeat=4)
]
# psi-minus flag: exactly one early and one late click on *different* detectors
PSI_MINUS_PATTERNS = [(True, False, False, True), (False, True, True, False)]


class TruncationError(ValueError):
    """Cutoff too small: discarded probability mass exceeds tolerance."""


@dataclass(frozen=True)
class DetectorModel:
    """Threshold detector: click for >= 1 surviving photon.

    ``efficiency`` thins arriving photons binomially; ``dark_count_prob``
    is an independent per-slot (per time-bin) dark-click probability.
    """

    efficiency: float = 1.0
    dark_count_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must be in [0, 1]")
        if not 0.0 <= self.dark_count_prob <= 1.0:
            raise ValueError("dark_count_prob must be in [0, 1]")

    def p_no_click(self, n: int) -> float:
        return (1.0 - self.efficiency) ** n * (1.0 - self.dark_count_prob)

    def p_click(self, n: int) -> float:
        return 1.0 - self.p_no_click(n)


# ---------------------------------------------------------------------------
# basis bookkeeping (cached by structure)

_BASIS_CACHE: dict = {}
_OP_CACHE: dict = {}
_EXPAND_CACHE: dict = {}
_TENSOR_CACHE: dict = {}


def basis_tuples(n_modes: int, cutoff: int) -> tuple[np.ndarray, dict]:
    """All occupation tuples with total <= cutoff, plus index lookup."""
    key = (n_modes, cutoff)
    if key not in _BASIS_CACHE:
        tuples = []

        def rec(prefix, remaining, left):
            if remaining == 0:
                tuples.append(tuple(prefix))
                return
            for n in range(left + 1):
                rec(prefix + [n], remaining - 1, left - n)

        rec([], n_modes, cutoff)
        arr = np.array(tuples, dtype=np.int64)
        index = {t: i for i, t in enumerate(tuples)}
        _BASIS_CACHE[key] = (arr, index)
    return _BASIS_CACHE[key]


@dataclass
class FockRegister:
    """Truncated multi-mode photon-number state."""

    modes: tuple[Mode, ...]
    cutoff: int
    amps: np.ndarray
    leakage: float = 0.0

    @property
    def basis(self) -> np.ndarray:
        return basis_tuples(len(self.modes), self.cutoff)[0]

    @property
    def index(self) -> dict:
        return basis_tuples(len(self.modes), self.cutoff)[1]

    def norm_sq(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def mode_position(self, mode: Mode) -> int:
        return self.modes.index(mode)

    def port_positions(self, port: str) -> list[int]:
        return [i for i, m in enumerate(self.modes) if m[0] == port]

    def probability(self, occupation: dict[Mode, int]) -> float:
        """Marginal probability of the given occupations (others summed)."""
        cols = [self.mode_position(m) for m in occupation]
        target = np.array([occupation[m] for m in occupation])
        mask = np.all(self.basis[:, cols] == target, axis=1)
        return float(np.sum(np.abs(self.amps[mask]) ** 2))

    def total_number_distribution(self, port: str | None = None) -> np.ndarray:
        """P(total photons) over a port (or the whole register)."""
        cols = self.port_positions(port) if port else list(range(len(self.modes)))
        totals = self.basis[:, cols].sum(axis=1)
        out = np.zeros(self.cutoff + 1)
        np.add.at(out, totals, np.abs(self.amps) ** 2)
        return out

    def mean_photon_product(self, mode_i: Mode, mode_j: Mode) -> float:
        """<n_i n_j> photon-number correlator."""
        ci = self.mode_position(mode_i)
        cj = self.mode_position(mode_j)
        n = self.basis
        return float(np.sum(np.abs(self.amps) ** 2 * n[:, ci] * n[:, cj]))


def vacuum(modes, cutoff: int) -> FockRegister:
    modes = tuple(modes)
    arr, index = basis_tuples(len(modes), cutoff)
    amps = np.zeros(len(arr), dtype=complex)
    amps[index[(0,) * len(modes)]] = 1.0
    return FockRegister(modes, cutoff, amps)


def build_fock_state(occupation_amps: dict[tuple[int, ...], complex], modes, cutoff: int) -> FockRegister:
    """Register from explicit occupation-tuple amplitudes (then normalized)."""
    reg = vacuum(modes, cutoff)
    reg.amps[:] = 0.0
    for occ, amp in occupation_amps.items():
        reg.amps[reg.index[occ]] = amp
    n = sqrt(reg.norm_sq())
    if n == 0:
        raise ValueError("zero state")
    reg.amps /= n
    return reg


def build_coherent(
    mu: float,
    phase: float = 0.0,
    port: str = "alice",
    qubit: TimeBinState | None = None,
    cutoff: int = 3,
    leakage_tol: float = 1e-3,
) -> FockRegister:
    """Coherent state of mean photon number ``mu`` in a two-bin port.

    The qubit structure (default |e>) splits the displacement over the
    early/late bins; ``phase`` is the overall (randomizable) optical phase.
    The photon-number distribution is Poissonian, renormalized after
    truncation at ``cutoff`` total photons.
    """
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if qubit is None:
        qubit = TimeBinState.early()
    modes = ((port, "e", 0), (port, "l", 0))
    arr, _ = basis_tuples(2, cutoff)
    alpha = np.sqrt(mu) * np.exp(1j * phase) * qubit.ket()
    amps = np.empty(len(arr), dtype=complex)
    for i, (ne, nl) in enumerate(arr):
        amps[i] = alpha[0] ** ne * alpha[1] ** nl / sqrt(factorial(ne) * factorial(nl))
    amps *= np.exp(-mu / 2.0)
    kept = float(np.vdot(amps, amps).real)
    leak = 1.0 - kept
    if leak > leakage_tol:
        raise TruncationError(
            f"coherent cutoff {cutoff} too small for mu={mu}: leakage {leak:.2e}"
        )
    amps /= sqrt(kept)
    return FockRegister(modes, cutoff, amps, leakage=max(leak, 0.0))


def build_spdc_pair(
    mu_pair: float,
    idler_port: str = "idler",
    signal_port: str = "signal",
    pair_cutoff: int = 2,
    leakage_tol: float = 1e-2,
) -> FockRegister:
    """Time-bin-entangled pair source with thermal pair statistics.

    Per pulse, the total pair number N is thermal,
    P(N) = mu^N / (1+mu)^(N+1), and each N-pair component is the coherent
    symmetric state [(i_e+ s_e+ + i_l+ s_l+)/sqrt(2)]^N |0> (normalized),
    so the single-pair component is exactly |phi+> = (|e,e> + |l,l>)/sqrt(2).
    This is the single-temporal-mode idealization appropriate after tight
    spectral filtering.
    """
    if not 0.0 <= mu_pair <= 0.2:
        raise ValueError("mu_pair must be in [0, 0.2]")
    modes = (
        (idler_port, "e", 0),
        (idler_port, "l", 0),
        (signal_port, "e", 0),
        (signal_port, "l", 0),
    )
    cutoff = 2 * pair_cutoff
    arr, index = basis_tuples(4, cutoff)
    amps = np.zeros(len(arr), dtype=complex)
    kept = 0.0
    for n_pairs in range(pair_cutoff + 1):
        p_n = mu_pair**n_pairs / (1.0 + mu_pair) ** (n_pairs + 1)
        kept += p_n
        amp_each = sqrt(p_n / (n_pairs + 1))
        for k in range(n_pairs + 1):
            amps[index[(k, n_pairs - k, k, n_pairs - k)]] = amp_each
    leak = 1.0 - kept
    if leak > leakage_tol:
        raise TruncationError(
            f"pair cutoff {pair_cutoff} too small for mu={mu_pair}: leakage {leak:.2e}"
        )
    amps /= sqrt(kept)
    return FockRegister(modes, cutoff, amps, leakage=max(leak, 0.0))


def build_single_photon(qubit: TimeBinState, port: str = "alice", cutoff: int = 1) -> FockRegister:
    """One photon in the given time-bin qubit state."""
    k = qubit.ket()
    return build_fock_state(
        {(1, 0): k[0], (0, 1): k[1]},
        ((port, "e", 0), (port, "l", 0)),
        cutoff,
    )


# ---------------------------------------------------------------------------
# linear optics

def two_mode_unitary_coeffs(m: int, n: int, u: np.ndarray) -> dict[tuple[int, int], complex]:
    """Expansion of |m, n> under a+ -> u00 a+ + u01 b+, b+ -> u10 a+ + u11 b+."""
    out: dict[tuple[int, int], complex] = {}
    total = m + n
    for p in range(total + 1):
        q = total - p
        c = 0.0 + 0.0j
        for j in range(max(0, p - n), min(m, p) + 1):
            c += (
                comb(m, j)
                * comb(n, p - j)
                * u[0, 0] ** j
                * u[0, 1] ** (m - j)
                * u[1, 0] ** (p - j)
                * u[1, 1] ** (n - (p - j))
            )
        if c != 0:
            out[(p, q)] = c * sqrt(factorial(p) * factorial(q) / (factorial(m) * factorial(n)))
    return out


def _two_mode_op_matrix(n_modes: int, cutoff: int, pos_a: int, pos_b: int, u: np.ndarray):
    """Sparse matrix applying a 2x2 creation-operator map on one mode pair."""
    key = (n_modes, cutoff, pos_a, pos_b, np.round(u, 14).tobytes())
    if key in _OP_CACHE:
        return _OP_CACHE[key]
    arr, index = basis_tuples(n_modes, cutoff)
    rows, cols, vals = [], [], []
    coeff_cache: dict[tuple[int, int], dict] = {}
    for i, occ in enumerate(arr):
        m, n = int(occ[pos_a]), int(occ[pos_b])
        if (m, n) not in coeff_cache:
            coeff_cache[(m, n)] = two_mode_unitary_coeffs(m, n, u)
        base = list(occ)
        for (p, q), c in coeff_cache[(m, n)].items():
            base[pos_a], base[pos_b] = p, q
            j = index[tuple(base)]
            rows.append(j)
            cols.append(i)
            vals.append(c)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(len(arr), len(arr)), dtype=complex)
    _OP_CACHE[key] = mat
    return mat


def bs_matrix(transmittance: float) -> np.ndarray:
    t = sqrt(transmittance)
    r = sqrt(1.0 - transmittance)
    return np.array([[t, -r], [r, t]])


def _expand_modes(reg: FockRegister, new_modes: tuple[Mode, ...]) -> FockRegister:
    """Append vacuum modes (same cutoff)."""
    missing = tuple(m for m in new_modes if m not in reg.modes)
    if not missing:
        return reg
    modes = reg.modes + missing
    key = (reg.modes, missing, reg.cutoff)
    if key not in _EXPAND_CACHE:
        _, new_index = basis_tuples(len(modes), reg.cutoff)
        old_arr, _ = basis_tuples(len(reg.modes), reg.cutoff)
        mapping = np.array(
            [new_index[tuple(occ) + (0,) * len(missing)] for occ in old_arr], dtype=np.int64
        )
        _EXPAND_CACHE[key] = mapping
    mapping = _EXPAND_CACHE[key]
    arr, _ = basis_tuples(len(modes), reg.cutoff)
    amps = np.zeros(len(arr), dtype=complex)
    amps[mapping] = reg.amps
    return FockRegister(modes, reg.cutoff, amps, reg.leakage)


def apply_two_mode_unitary(reg: FockRegister, mode_a: Mode, mode_b: Mode, u: np.ndarray) -> FockRegister:
    reg = _expand_modes(reg, (mode_a, mode_b))
    mat = _two_mode_op_matrix(
        len(reg.modes), reg.cutoff, reg.mode_position(mode_a), reg.mode_position(mode_b), u
    )
    return FockRegister(reg.modes, reg.cutoff, mat @ reg.amps, reg.leakage)


def apply_beamsplitter(
    reg: FockRegister, port_a: str, port_b: str, transmittance: float
) -> FockRegister:
    """Bosonic beamsplitter between two ports, acting identically on every
    (bin, slot) pair present in either port."""
    if not 0.0 <= transmittance <= 1.0:
        raise ValueError("transmittance must be in [0, 1]")
    slots_a = {(m[1], m[2]) for m in reg.modes if m[0] == port_a}
    slots_b = {(m[1], m[2]) for m in reg.modes if m[0] == port_b}
    pairs = sorted(slots_a | slots_b)
    if not pairs:
        raise ValueError(f"ports {port_a!r}/{port_b!r} not present in register")
    u = bs_matrix(transmittance)
    for b, s in pairs:
        reg = apply_two_mode_unitary(reg, (port_a, b, s), (port_b, b, s), u)
    return reg


def partial_overlap_embed(reg: FockRegister, port: str, overlap: float) -> FockRegister:
    """Split the port's photons between the shared wavepacket slot (0) and an
    orthogonal slot (1) with amplitude sqrt(overlap) / sqrt(1-overlap).

    HOM coincidence suppression then scales linearly in ``overlap`` (the
    squared single-photon wavefunction overlap).
    """
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must be in [0, 1]")
    if overlap == 1.0:
        return reg
    bins = sorted({m[1] for m in reg.modes if m[0] == port})
    if not bins:
        raise ValueError(f"port {port!r} not present")
    u = np.array([[sqrt(overlap), sqrt(1.0 - overlap)], [-sqrt(1.0 - overlap), sqrt(overlap)]])
    for b in bins:
        reg = apply_two_mode_unitary(reg, (port, b, 0), (port, b, 1), u)
    return reg


def apply_loss(reg: FockRegister, port: str, transmittance: float, prune: float = 1e-16) -> list[FockRegister]:
    """Photon loss on all modes of a port; returns Kraus branches.

    Each branch is a sub-normalized pure register; squared norms sum to 1
    (up to pruning of negligible branches).
    """
    if not 0.0 <= transmittance <= 1.0:
        raise ValueError("transmittance must be in [0, 1]")
    if transmittance == 1.0:
        return [reg]
    branches = [reg]
    for mode in [m for m in reg.modes if m[0] == port]:
        new_branches = []
        for br in branches:
            pos = br.mode_position(mode)
            occ_n = br.basis[:, pos]
            for lost in range(br.cutoff + 1):
                keep_n = occ_n - lost
                mask = keep_n >= 0
                if not np.any(mask & (np.abs(br.amps) > 0)):
                    continue
                amps = np.zeros_like(br.amps)
                src = np.nonzero(mask)[0]
                fac = np.array(
                    [
                        sqrt(comb(int(n), lost))
                        * transmittance ** ((int(n) - lost) / 2.0)
                        * (1.0 - transmittance) ** (lost / 2.0)
                        for n in occ_n[src]
                    ]
                )
                dest_occ = br.basis[src].copy()
                dest_occ[:, pos] -= lost
                idx = br.index
                dest = np.array([idx[tuple(o)] for o in dest_occ], dtype=np.int64)
                np.add.at(amps, dest, br.amps[src] * fac)
                out = FockRegister(br.modes, br.cutoff, amps, br.leakage)
                if out.norm_sq() > prune:
                    new_branches.append(out)
        branches = new_branches
    return branches


def tensor(a: FockRegister, b: FockRegister, cutoff: int | None = None) -> FockRegister:
    """Tensor product register; default cutoff is the sum (lossless)."""
    if set(a.modes) & set(b.modes):
        raise ValueError("registers share modes")
    cut = a.cutoff + b.cutoff if cutoff is None else cutoff
    modes = a.modes + b.modes
    key = (a.modes, a.cutoff, b.modes, b.cutoff, cut)
    if key not in _TENSOR_CACHE:
        arr_a, _ = basis_tuples(len(a.modes), a.cutoff)
        arr_b, _ = basis_tuples(len(b.modes), b.cutoff)
        _, index = basis_tuples(len(modes), cut)
        flat = np.full((len(arr_a), len(arr_b)), -1, dtype=np.int64)
        for i, occ_a in enumerate(arr_a):
            ta = tuple(occ_a)
            sa = int(occ_a.sum())
            for j, occ_b in enumerate(arr_b):
                if sa + int(occ_b.sum()) <= cut:
                    flat[i, j] = index[ta + tuple(occ_b)]
        _TENSOR_CACHE[key] = flat
    flat = _TENSOR_CACHE[key]
    arr, _ = basis_tuples(len(modes), cut)
    amps = np.zeros(len(arr), dtype=complex)
    prod = np.outer(a.amps, b.amps)
    valid = flat >= 0
    np.add.at(amps, flat[valid], prod[valid])
    dropped = float(np.sum(np.abs(prod[~valid]) ** 2))
    return FockRegister(modes, cut, amps, a.leakage + b.leakage + dropped)


# ---------------------------------------------------------------------------
# detection

def _det_click_factors(pattern, totals, det1: DetectorModel, det2: DetectorModel) -> np.ndarray:
    """Probability of an exclusive click pattern given detector-bin totals.

    ``totals`` is an (G, 4) array of photon counts per
    (det1-e, det1-l, det2-e, det2-l); detector efficiency thins binomially
    and dark counts fire independently per detector per bin.
    """
    dets = (det1, det1, det2, det2)
    out = np.ones(totals.shape[0])
    for k in range(4):
        no_click = (1.0 - dets[k].efficiency) ** totals[:, k] * (1.0 - dets[k].dark_count_prob)
        out *= (1.0 - no_click) if pattern[k] else no_click
    return out


@dataclass
class BsmSummary:
    """Detector-sector decomposition after the Bell-state-measurement BS.

    ``det_totals[g]`` are photon totals per (d1e, d1l, d2e, d2l); and
    ``rho_bob[g]`` the (unnormalized) receiver-mode density block for that
    sector, over ``bob_basis`` occupations of (signal-e, signal-l).
    Everything downstream (click patterns, conditional teleported states,
    triple-coincidence probabilities) is assembled from this.
    """

    det_totals: np.ndarray
    rho_bob: np.ndarray
    bob_basis: np.ndarray
    leakage: float = 0.0

    @property
    def sector_weights(self) -> np.ndarray:
        return np.real(np.einsum("gii->g", self.rho_bob))

    def pattern_probabilities(self, det1: DetectorModel, det2: DetectorModel) -> dict:
        w = self.sector_weights
        return {
            pat: float(np.sum(w * _det_click_factors(pat, self.det_totals, det1, det2)))
            for pat in PATTERNS
        }

    def psi_minus_probability(self, det1: DetectorModel, det2: DetectorModel) -> float:
        probs = self.pattern_probabilities(det1, det2)
        return sum(probs[p] for p in PSI_MINUS_PATTERNS)

    def coincidence_probability(self, kind: str, det1: DetectorModel, det2: DetectorModel) -> float:
        """Expected cross-detector coincidence count per clock cycle.

        kind = "same_bin" gives the HOM-monitor combination (both early or
        both late); "cross_bin" gives the cross combination.  Each satisfied
        bin combination increments the counter, so a slot firing both
        combinations contributes two counts (matching coincidence logic).
        """
        probs = self.pattern_probabilities(det1, det2)
        total = 0.0
        for pat, p in probs.items():
            d1e, d1l, d2e, d2l = pat
            if kind == "same_bin":
                hits = int(d1e and d2e) + int(d1l and d2l)
            elif kind == "cross_bin":
                hits = int(d1e and d2l) + int(d1l and d2e)
            else:
                raise ValueError(kind)
            total += hits * p
        return total

    def mean_coincidence_product(self) -> float:
        """<n_d1e n_d2e> + <n_d1l n_d2l>: efficiency-free HOM-monitor correlator."""
        w = self.sector_weights
        t = self.det_totals
        return float(np.sum(w * (t[:, 0] * t[:, 2] + t[:, 1] * t[:, 3])))

    def with_receiver_loss(self, transmittance: float) -> "BsmSummary":
        """Apply photon loss on the receiver modes to every sector block.

        Receiver-arm transmission (and detector efficiency, if desired)
        must act *before* single-photon post-selection: it thins
        multi-photon components into the qubit subspace, which is how
        multi-pair emission contaminates the teleported state.
        """
        if not 0.0 <= transmittance <= 1.0:
            raise ValueError("transmittance must be in [0, 1]")
        if transmittance == 1.0:
            return self
        kraus = _receiver_loss_kraus(self.bob_basis, transmittance)
        rho = np.zeros_like(self.rho_bob)
        for k in kraus:
            rho += k @ self.rho_bob @ k.conj().T
        return BsmSummary(self.det_totals, rho, self.bob_basis, self.leakage)

    def conditional_bob_block(
        self, patterns, det1: DetectorModel, det2: DetectorModel
    ) -> np.ndarray:
        """Unnormalized receiver density block conditioned on a pattern set."""
        block = np.zeros_like(self.rho_bob[0])
        for pat in patterns:
            f = _det_click_factors(pat, self.det_totals, det1, det2)
            block += np.einsum("g,gij->ij", f, self.rho_bob)
        return block

    def conditional_qubit_state(
        self, det1: DetectorModel, det2: DetectorModel, patterns=None
    ) -> tuple[DensityMatrix, float, float]:
        """Teleported qubit state conditioned on the psi-minus flag.

        Returns (state, post_selection_prob, flag_prob): the flag probability
        is the total pattern probability; post_selection_prob is the share of
        it in which the receiver mode holds exactly one photon.
        """
        if patterns is None:
            patterns = PSI_MINUS_PATTERNS
        block = self.conditional_bob_block(patterns, det1, det2)
        p_flag = float(np.real(np.trace(block)))
        if p_flag < 1e-15:
            raise ValueError("conditioning probability below 1e-15: state undefined")
        idx = {tuple(occ): i for i, occ in enumerate(self.bob_basis)}
        i_e, i_l = idx[(1, 0)], idx[(0, 1)]
        qubit = np.array(
            [[block[i_e, i_e], block[i_e, i_l]], [block[i_l, i_e], block[i_l, i_l]]]
        )
        p_qubit = float(np.real(np.trace(qubit)))
        if p_qubit < 1e-15:
            raise ValueError("single-photon post-selection probability below 1e-15")
        return DensityMatrix(qubit / p_qubit), p_qubit / p_flag, p_flag

    def bob_click_probability(
        self,
        setting_state: TimeBinState,
        bob_efficiency: float,
        bob_dark_prob: float,
        det1: DetectorModel,
        det2: DetectorModel,
        patterns=None,
    ) -> float:
        """P(flag pattern AND threshold click on the analyzer output that
        projects onto ``setting_state``)."""
        if patterns is None:
            patterns = PSI_MINUS_PATTERNS
        block = self.conditional_bob_block(patterns, det1, det2)
        rot = _bob_rotation_matrix(self.bob_basis, setting_state)
        diag = np.real(np.diagonal(rot @ block @ rot.conj().T))
        n_m = self.bob_basis[:, 0]  # occupation of the projected mode after rotation
        p_no = (1.0 - bob_efficiency) ** n_m * (1.0 - bob_dark_prob)
        return float(np.sum(diag * (1.0 - p_no)))


_RECEIVER_LOSS_CACHE: dict = {}


def _receiver_loss_kraus(bob_basis: np.ndarray, eta: float) -> list[np.ndarray]:
    """Kraus operators for equal loss on both receiver modes, indexed by the
    number of photons lost from each bin."""
    key = (bob_basis.tobytes(), round(eta, 14))
    if key in _RECEIVER_LOSS_CACHE:
        return _RECEIVER_LOSS_CACHE[key]
    index = {tuple(occ): i for i, occ in enumerate(bob_basis)}
    n_max = int(bob_basis.sum(axis=1).max())
    ops = []
    for le in range(n_max + 1):
        for ll in range(n_max + 1 - le):
            k = np.zeros((len(bob_basis), len(bob_basis)))
            hit = False
            for j, (ne, nl) in enumerate(bob_basis):
                ne, nl = int(ne), int(nl)
                if le <= ne and ll <= nl and (ne - le, nl - ll) in index:
                    k[index[(ne - le, nl - ll)], j] = sqrt(
                        comb(ne, le)
                        * comb(nl, ll)
                        * eta ** (ne + nl - le - ll)
                        * (1.0 - eta) ** (le + ll)
                    )
                    hit = True
            if hit:
                ops.append(k)
    _RECEIVER_LOSS_CACHE[key] = ops
    return ops


_BOB_ROT_CACHE: dict = {}


def _bob_rotation_matrix(bob_basis: np.ndarray, setting_state: TimeBinState) -> np.ndarray:
    """Fock-basis matrix of the analyzer rotation (e,l) -> (m, m_perp)."""
    key = (bob_basis.tobytes(), round(setting_state.alpha, 14), round(setting_state.beta, 14), round(setting_state.phi, 14))
    if key in _BOB_ROT_CACHE:
        return _BOB_ROT_CACHE[key]
    u_e, u_l = setting_state.ket()
    # b_e+ = conj(u_e) b_m+ - u_l b_perp+ ; b_l+ = conj(u_l) b_m+ + u_e b_perp+
    r = np.array([[np.conj(u_e), -u_l], [np.conj(u_l), u_e]])
    index = {tuple(occ): i for i, occ in enumerate(bob_basis)}
    mat = np.zeros((len(bob_basis), len(bob_basis)), dtype=complex)
    for j, occ in enumerate(bob_basis):
        for (p, q), c in two_mode_unitary_coeffs(int(occ[0]), int(occ[1]), r).items():
            if (p, q) in index:
                mat[index[(p, q)], j] = c
    _BOB_ROT_CACHE[key] = mat
    return mat


_SECTOR_CACHE: dict = {}


def _sector_maps(modes: tuple[Mode, ...], cutoff: int, port_a: str, port_b: str, bob_port: str):
    """Cached index arrays mapping each basis state to its non-receiver
    occupation group, its receiver occupation, and detector-bin totals."""
    key = (modes, cutoff, port_a, port_b, bob_port)
    if key in _SECTOR_CACHE:
        return _SECTOR_CACHE[key]
    arr, _ = basis_tuples(len(modes), cutoff)
    bob_pos = [i for i, m in enumerate(modes) if m[0] == bob_port]
    other = [i for i in range(len(modes)) if i not in bob_pos]
    cols = {
        0: [i for i, m in enumerate(modes) if m[0] == port_a and m[1] == "e"],
        1: [i for i, m in enumerate(modes) if m[0] == port_a and m[1] == "l"],
        2: [i for i, m in enumerate(modes) if m[0] == port_b and m[1] == "e"],
        3: [i for i, m in enumerate(modes) if m[0] == port_b and m[1] == "l"],
    }
    group_index: dict = {}
    bob_index: dict = {}
    g_ids = np.empty(len(arr), dtype=np.int64)
    b_ids = np.empty(len(arr), dtype=np.int64)
    group_tot4 = []
    for i, row in enumerate(arr):
        key_other = tuple(int(row[c]) for c in other)
        if key_other not in group_index:
            group_index[key_other] = len(group_index)
            group_tot4.append(
                tuple(int(sum(row[c] for c in cols[k])) for k in range(4))
            )
        g_ids[i] = group_index[key_other]
        bob_occ = tuple(int(row[c]) for c in bob_pos)
        if bob_occ not in bob_index:
            bob_index[bob_occ] = len(bob_index)
        b_ids[i] = bob_index[bob_occ]
    bob_basis = np.array(sorted(bob_index, key=bob_index.get), dtype=np.int64)
    # order groups by detector-bin totals so per-class reduction is a slice
    tot4_arr = np.array(group_tot4, dtype=np.int64)
    classes = sorted(set(map(tuple, tot4_arr.tolist())))
    class_of = {t: i for i, t in enumerate(classes)}
    g_class = np.array([class_of[tuple(t)] for t in tot4_arr], dtype=np.int64)
    order = np.argsort(g_class, kind="stable")
    g_rank = np.empty_like(order)
    g_rank[order] = np.arange(len(order))
    g_ids = g_rank[g_ids]  # re-label groups in class-sorted order
    bounds = np.searchsorted(g_class[order], np.arange(len(classes) + 1))
    maps = (
        g_ids,
        b_ids,
        np.array(classes, dtype=np.int64),
        bounds,
        len(group_index),
        bob_basis,
        {tuple(occ): i for i, occ in enumerate(bob_basis)},
    )
    _SECTOR_CACHE[key] = maps
    return maps


def bsm_summary(
    registers,
    port_a: str = "alice",
    port_b: str = "idler",
    bob_port: str = "signal",
    transmittance: float = 0.5,
    weights=None,
) -> BsmSummary:
    """Apply the BSM beamsplitter to an ensemble of registers and reduce to
    the detector-sector decomposition.

    After the beamsplitter, ``port_a`` modes feed detector 1 and ``port_b``
    modes feed detector 2.  Registers may be sub-normalized Kraus branches;
    ``weights`` (default all 1) multiply the squared amplitudes.  Ensemble
    members combine incoherently (each contributes its own outer products);
    within one pure register, coherences between different non-receiver
    occupations at equal detector-bin totals are dropped, which is exact for
    any number-diagonal threshold measurement.
    """
    if isinstance(registers, FockRegister):
        registers = [registers]
    if weights is None:
        weights = [1.0] * len(registers)
    rho_bob = None
    det_totals = None
    bob_basis = None
    leakage = 0.0
    for reg, w in zip(registers, weights):
        out = apply_beamsplitter(reg, port_a, port_b, transmittance)
        leakage += w * out.leakage
        if not out.port_positions(bob_port):
            raise ValueError(f"receiver port {bob_port!r} missing")
        g_ids, b_ids, classes, bounds, n_groups, bbasis, _ = _sector_maps(
            out.modes, out.cutoff, port_a, port_b, bob_port
        )
        if rho_bob is None:
            det_totals = classes
            bob_basis = bbasis
            rho_bob = np.zeros((len(classes), len(bbasis), len(bbasis)), dtype=complex)
        elif len(bbasis) != len(bob_basis) or not np.array_equal(classes, det_totals):
            raise ValueError("ensemble registers have incompatible structure")
        m = np.zeros((n_groups, len(bbasis)), dtype=complex)
        np.add.at(m, (g_ids, b_ids), out.amps)
        for c in range(len(classes)):
            seg = m[bounds[c] : bounds[c + 1]]
            if seg.size:
                rho_bob[c] += w * (seg.T @ seg.conj())
    return BsmSummary(det_totals, rho_bob, bob_basis, leakage)


def bsm_pattern_probabilities(
    registers,
    det1: DetectorModel,
    det2: DetectorModel,
    port_a: str = "alice",
    port_b: str = "idler",
    bob_port: str | None = None,
    transmittance: float = 0.5,
) -> dict:
    """Click-pattern probabilities for the Bell-state measurement.

    Applies the 50:50 (or given) beamsplitter between the two input ports
    and returns the probability of every exclusive click pattern over
    (det1, det2) x (early, late), including detector efficiency and dark
    counts.  The psi-minus flag is the pair of cross patterns.
    """
    if isinstance(registers, FockRegister):
        registers = [registers]
    # a receiver port is not required for pattern probabilities: tuck any
    # non-BSM modes into the sector decomposition via a dummy empty port
    regs = registers
    if bob_port is None:
        probe = regs[0]
        extra = ("_probe", "e", 0)
        regs = [_expand_modes(r, (extra,)) for r in regs]
        bob_port = "_probe"
    summary = bsm_summary(regs, port_a, port_b, bob_port, transmittance)
    return summary.pattern_probabilities(det1, det2)


def teleported_conditional_state(
    registers,
    det1: DetectorModel,
    det2: DetectorModel,
    port_a: str = "alice",
    port_b: str = "idler",
    bob_port: str = "signal",
    patterns=None,
) -> tuple[DensityMatrix, float, float]:
    """Receiver qubit state conditioned on the psi-minus flag.

    Returns (state, post_selection_prob, flag_prob); vacuum and multi-photon
    receiver components are folded into post_selection_prob.
    """
    summary = bsm_summary(registers, port_a, port_b, bob_port)
    return summary.conditional_qubit_state(det1, det2, patterns)


# ---------------------------------------------------------------------------
# experiment drivers: phase randomization + loss branching + BSM reduction

@dataclass(frozen=True)
class SourceSpec:
    """One input arm of a beamsplitter experiment.

    kind: "coherent" (phase-randomized attenuated laser), "single"
    (one-photon Fock state) or "off" (vacuum).  ``mu`` is the mean photon
    number *at the beamsplitter* (propagation loss already folded in for
    coherent states; for single photons apply loss separately).
    """

    kind: str
    mu: float = 0.0
    qubit: TimeBinState | None = None

    def __post_init__(self):
        if self.kind not in ("coherent", "single", "off"):
            raise ValueError(f"unknown source kind {self.kind!r}")


def _source_registers(spec: SourceSpec, port: str, phase: float, cutoff: int):
    if spec.kind == "off":
        return vacuum(((port, "e", 0), (port, "l", 0)), cutoff)
    if spec.kind == "coherent":
        return build_coherent(spec.mu, phase, port, spec.qubit, cutoff)
    qubit = spec.qubit if spec.qubit is not None else TimeBinState.early()
    return build_single_photon(qubit, port, cutoff)


def hom_summary(
    a: SourceSpec,
    b: SourceSpec,
    overlap: float = 1.0,
    n_phases: int = 16,
    cutoff: int = 3,
    total_cutoff: int | None = None,
) -> BsmSummary:
    """Two independent sources meeting at the 50:50 beamsplitter.

    Phase randomization is realized by averaging over a uniform grid of the
    relative optical phase; with ``n_phases`` > cutoff the averaged click
    statistics are exact.  ``total_cutoff`` caps the joint photon number
    (default: same as the per-source cutoff; the dropped cross-tail mass is
    tracked as leakage).
    """
    if total_cutoff is None:
        total_cutoff = cutoff
    phases = (
        np.arange(n_phases) * 2.0 * np.pi / n_phases
        if a.kind == "coherent" or b.kind == "coherent"
        else np.array([0.0])
    )
    regs, weights = [], []
    for th in phases:
        ra = _source_registers(a, "alice", th, cutoff)
        ra = partial_overlap_embed(ra, "alice", overlap)
        rb = _source_registers(b, "idler", 0.0, cutoff)
        regs.append(tensor(ra, rb, cutoff=total_cutoff))
        weights.append(1.0 / len(phases))
    probe = ("_probe", "e", 0)
    regs = [_expand_modes(r, (probe,)) for r in regs]
    return bsm_summary(regs, "alice", "idler", "_probe", weights=weights)


def teleport_summary(
    input_state: TimeBinState,
    mu_a: float,
    t_alice: float,
    mu_spdc: float,
    t_idler: float,
    overlap: float = 1.0,
    alice_kind: str = "coherent",
    n_phases: int = 16,
    alice_cutoff: int = 3,
    pair_cutoff: int = 2,
    total_cutoff: int | None = None,
) -> BsmSummary:
    """Full teleportation configuration reduced to a BSM summary.

    Alice's qubit (coherent with mean photon number ``mu_a``, or a true
    single photon) meets the idler of the pair source at the 50:50
    beamsplitter after channel transmissions ``t_alice`` / ``t_idler``; the
    signal photon stays at the receiver.  Receiver-arm transmission and
    detector efficiency are applied downstream via
    ``BsmSummary.with_receiver_loss`` so that multi-photon thinning into the
    qubit subspace is captured.  ``total_cutoff`` (default: exact sum of the
    source cutoffs) caps the joint photon number; dropped cross-tail mass is
    tracked as leakage.
    """
    if total_cutoff is None:
        total_cutoff = alice_cutoff + 2 * pair_cutoff
    spdc = build_spdc_pair(mu_spdc, pair_cutoff=pair_cutoff) if mu_spdc > 0 else vacuum(
        (("idler", "e", 0), ("idler", "l", 0), ("signal", "e", 0), ("signal", "l", 0)), 0
    )
    idler_branches = apply_loss(spdc, "idler", t_idler)

    regs, weights = [], []
    if alice_kind == "coherent":
        phases = np.arange(n_phases) * 2.0 * np.pi / n_phases
        for th in phases:
            ra = build_coherent(mu_a * t_alice, th, "alice", input_state, alice_cutoff)
            ra = partial_overlap_embed(ra, "alice", overlap)
            for br in idler_branches:
                regs.append(tensor(ra, br, cutoff=total_cutoff))
                weights.append(1.0 / n_phases)
    elif alice_kind == "single":
        ra = build_single_photon(input_state, "alice", cutoff=1)
        for surv in apply_loss(ra, "alice", t_alice):
            remb = partial_overlap_embed(surv, "alice", overlap)
            for br in idler_branches:
                regs.append(tensor(remb, br, cutoff=min(total_cutoff, 1 + 2 * pair_cutoff)))
                weights.append(1.0)
    elif alice_kind == "off":
        ra = vacuum((("alice", "e", 0), ("alice", "l", 0)), 0)
        for br in idler_branches:
            regs.append(tensor(ra, br, cutoff=total_cutoff))
            weights.append(1.0)
    else:
        raise ValueError(f"unknown alice_kind {alice_kind!r}")
    return bsm_summary(regs, "alice", "idler", "signal", weights=weights)
