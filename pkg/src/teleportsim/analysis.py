"""Statistical reduction of count tables into physics results.

Inputs are triple-coincidence tallies per (prepared state, analyzer
setting, sender mean-photon-number level); outputs are reconstructed
density matrices, fidelities with Monte-Carlo error bars, vacuum+weak
decoy-state bounds on the single-photon fidelity, interference-visibility
fits, and sigma-distances from the classical teleportation thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .qubit import (
    COMPLEMENT,
    IDENTITY2,
    SETTINGS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DensityMatrix,
    TimeBinState,
    average_fidelity,
    fidelity,
    teleported_target,
)

SETTING_ORDER = ("E", "L", "PLUS", "MINUS", "PLUS_I", "MINUS_I")
BASIS_PAIRS = (("E", "L"), ("PLUS", "MINUS"), ("PLUS_I", "MINUS_I"))


class DecoyInfeasibleError(ValueError):
    """Decoy data cannot bound the single-photon yield (Y1 lower bound <= 0
    or error rates inconsistent with the Poisson source model)."""


@dataclass
class CellCounts:
    triples: int
    bsm_flags: int
    elapsed_s: float

    def __post_init__(self):
        if self.triples < 0 or self.bsm_flags < 0:
            raise ValueError("counts must be non-negative")
        if self.elapsed_s <= 0:
            raise ValueError("elapsed time must be positive")


@dataclass
class CountTable:
    """Tallies per (prepared_state, measurement_setting, mu_a level).

    ``metadata`` carries the acquisition context (mu_spdc, clock rate,
    config hash, seed) needed to interpret the counts.
    """

    cells: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, prepared: str, setting: str, mu_level: float, counts: CellCounts):
        self.cells[(prepared, setting, float(mu_level))] = counts

    def get(self, prepared: str, setting: str, mu_level: float) -> CellCounts:
        return self.cells[(prepared, setting, float(mu_level))]

    def mu_levels(self) -> list[float]:
        return sorted({k[2] for k in self.cells})

    def prepared_states(self) -> list[str]:
        return sorted({k[0] for k in self.cells})

    def setting_counts(self, prepared: str, mu_level: float) -> dict[str, int]:
        out = {}
        for (p, s, m), cell in self.cells.items():
            if p == prepared and m == float(mu_level):
                out[s] = cell.triples
        return out

    # --- delimited-text round trip -----------------------------------------
    HEADER = "prepared\tsetting\tmu_a\ttriples\tbsm_flags\telapsed_s"

    def to_text(self) -> str:
        lines = [f"# {k}: {v}" for k, v in sorted(self.metadata.items())]
        lines.append(self.HEADER)
        for (p, s, m), cell in sorted(self.cells.items()):
            lines.append(
                f"{p}\t{s}\t{m:.6g}\t{cell.triples}\t{cell.bsm_flags}\t{cell.elapsed_s:.6g}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CountTable":
        table = cls()
        header_seen = False
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, val = body.split(":", 1)
                    table.metadata[key.strip()] = val.strip()
                continue
            if not header_seen:
                if line.split() != cls.HEADER.split("\t"):
                    raise ValueError(f"line {ln}: unexpected header {line!r}")
                header_seen = True
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 6:
                raise ValueError(f"line {ln}: expected 6 columns, got {len(parts)}")
            p, s, m, t, f, e = parts
            if s not in SETTINGS and not s.startswith("PHI_"):
                raise ValueError(f"line {ln}: unknown setting {s!r}")
            try:
                table.add(p, s, float(m), CellCounts(int(t), int(f), float(e)))
            except ValueError as exc:
                raise ValueError(f"line {ln}: {exc}") from exc
        if not header_seen:
            raise ValueError("missing header row")
        return table


# ---------------------------------------------------------------------------
# tomography

def tomography_reconstruct(setting_counts: dict[str, float], method: str = "linear") -> DensityMatrix:
    """Reconstruct the qubit state from counts in the six analyzer settings.

    Linear inversion via the three basis asymmetries (Stokes parameters),
    then projection to the closest physical state by clipping negative
    eigenvalues and renormalizing.  ``method="mle"`` refines the estimate
    with the iterative R*rho*R maximum-likelihood update.
    """
    for label in SETTING_ORDER:
        if label not in setting_counts:
            raise ValueError(f"missing setting {label}")
    stokes = []
    for hi, lo in (("E", "L"), ("PLUS", "MINUS"), ("PLUS_I", "MINUS_I")):
        n_hi, n_lo = setting_counts[hi], setting_counts[lo]
        total = n_hi + n_lo
        if total <= 0:
            raise ValueError(f"zero total counts in basis {hi}/{lo}")
        stokes.append((n_hi - n_lo) / total)
    sx, sy = stokes[1], stokes[2]
    sz = stokes[0]
    raw = 0.5 * (IDENTITY2 + sx * SIGMA_X + sy * SIGMA_Y + sz * SIGMA_Z)
    rho = _clip_to_physical(raw)
    if method == "mle":
        rho = _mle_refine(rho, setting_counts)
    elif method != "linear":
        raise ValueError(f"unknown method {method!r}")
    return DensityMatrix(rho)


def _clip_to_physical(mat: np.ndarray) -> np.ndarray:
    evals, vecs = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    evals = np.clip(evals, 0.0, None)
    if evals.sum() <= 0:
        return 0.5 * IDENTITY2.copy()
    out = (vecs * evals) @ vecs.conj().T
    return out / np.real(np.trace(out))


def _mle_refine(rho: np.ndarray, setting_counts: dict, iterations: int = 300, tol: float = 1e-12):
    projectors = {k: SETTINGS[k].projector.mat for k in SETTING_ORDER}
    counts = np.array([setting_counts[k] for k in SETTING_ORDER], dtype=float)
    for _ in range(iterations):
        probs = np.array([max(np.real(np.trace(projectors[k] @ rho)), 1e-12) for k in SETTING_ORDER])
        r = sum((c / p) * projectors[k] for k, c, p in zip(SETTING_ORDER, counts, probs))
        new = r @ rho @ r
        new /= np.real(np.trace(new))
        if np.max(np.abs(new - rho)) < tol:
            rho = new
            break
        rho = new
    return _clip_to_physical(rho)


# ---------------------------------------------------------------------------
# Monte-Carlo error propagation

def monte_carlo_errors(
    counts: dict, statistic, n_resamples: int = 1000, seed: int = 0
) -> float:
    """Standard deviation of a statistic under Poisson resampling.

    Each count cell is resampled as Poisson(observed); the statistic is
    recomputed per replica.  Replica generators are spawned from the root
    seed, so results are deterministic and order-independent.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    keys = sorted(counts)
    observed = np.array([counts[k] for k in keys], dtype=float)
    seeds = np.random.SeedSequence(seed).spawn(n_resamples)
    values = np.empty(n_resamples)
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        resampled = dict(zip(keys, rng.poisson(observed)))
        values[i] = statistic(resampled)
    return float(np.std(values))


# ---------------------------------------------------------------------------
# decoy-state bounds

@dataclass(frozen=True)
class DecoyEstimates:
    """Vacuum + weak-decoy bounds for one prepared state."""

    q_mu: float
    q_nu: float
    y_0: float
    e_mu: float
    e_nu: float
    y1_lower: float
    e1_upper: float
    f1_lower: float

    def __post_init__(self):
        for name in ("q_mu", "q_nu", "y_0", "e_mu", "e_nu", "y1_lower", "e1_upper", "f1_lower"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def decoy_bounds(
    mu: float, nu: float, q_mu: float, e_mu: float, q_nu: float, e_nu: float, y_0: float
) -> DecoyEstimates:
    """Single-photon yield/error bounds from gains at two intensities plus
    vacuum.

    Y1 >= mu/(mu nu - nu^2) [Q_nu e^nu - Q_mu e^mu nu^2/mu^2
                             - (mu^2 - nu^2)/mu^2 Y_0]
    e1 <= (E_nu Q_nu e^nu - Y_0/2) / (nu Y1_lower)

    with the vacuum error fixed at 1/2 (phase-randomized vacuum gives
    uniformly random flag-conditioned outcomes).  F1_lower = 1 - e1_upper.
    Infeasible data (Y1 bound <= 0, or error bounds inconsistent with the
    Poisson model) raises DecoyInfeasibleError rather than clamping.
    """
    if not mu > nu > 0:
        raise ValueError("need mu > nu > 0")
    for name, g in (("q_mu", q_mu), ("q_nu", q_nu)):
        if not 0.0 < g < 1.0:
            raise DecoyInfeasibleError(f"gain {name}={g} outside (0, 1)")
    if not 0.0 <= y_0 <= 1.0:
        raise ValueError("y_0 outside [0, 1]")
    y1 = (mu / (mu * nu - nu**2)) * (
        q_nu * math.exp(nu)
        - q_mu * math.exp(mu) * nu**2 / mu**2
        - (mu**2 - nu**2) / mu**2 * y_0
    )
    if y1 <= 0.0:
        raise DecoyInfeasibleError(f"Y1 lower bound {y1:.3e} <= 0: insufficient statistics")
    y1 = min(y1, 1.0)
    e1 = (e_nu * q_nu * math.exp(nu) - 0.5 * y_0) / (nu * y1)
    if e1 < -1e-9:
        raise DecoyInfeasibleError(f"e1 upper bound {e1:.3e} < 0: inconsistent error rates")
    e1 = min(max(e1, 0.0), 1.0)
    return DecoyEstimates(
        q_mu=q_mu, q_nu=q_nu, y_0=y_0, e_mu=e_mu, e_nu=e_nu,
        y1_lower=y1, e1_upper=e1, f1_lower=1.0 - e1,
    )


def decoy_from_table(
    table: CountTable,
    prepared: str,
    mu: float,
    nu: float,
    pulses_per_second: float,
) -> DecoyEstimates:
    """Per-state decoy bounds from a count table with levels {0, nu, mu}.

    The error rate of a prepared state is the fraction of triples landing in
    the outcome orthogonal to its teleported target, among the target-basis
    pair of settings; the gain is the triple probability per emitted pulse
    over that pair.
    """
    target = teleported_target(prepared)
    t_label = next(k for k, v in SETTINGS.items() if v.state.isclose(target, tol=1e-9))
    o_label = COMPLEMENT[t_label]

    def gain_error(level: float) -> tuple[float, float]:
        n_t = table.get(prepared, t_label, level).triples
        n_o = table.get(prepared, o_label, level).triples
        elapsed = table.get(prepared, t_label, level).elapsed_s + table.get(
            prepared, o_label, level
        ).elapsed_s
        pulses = elapsed * pulses_per_second
        total = n_t + n_o
        q = total / pulses if pulses > 0 else 0.0
        e = n_o / total if total > 0 else 0.5
        return q, e

    q_mu, e_mu = gain_error(mu)
    q_nu, e_nu = gain_error(nu)
    y_0, _ = gain_error(0.0)
    return decoy_bounds(mu, nu, q_mu, e_mu, q_nu, e_nu, y_0)


# ---------------------------------------------------------------------------
# visibility fit

@dataclass(frozen=True)
class VisibilityFit:
    visibility: float
    amplitude: float
    phase_offset: float
    mean_rate: float


def visibility_fit(phases, counts) -> VisibilityFit:
    """Least-squares fit of R(theta) = R0 (1 + V cos(theta - theta0)).

    Linear in (R0, R0 V cos(theta0), R0 V sin(theta0)), so the fit is exact
    for noiseless sinusoids.  Requires >= 4 distinct phases spanning >= pi.
    """
    phases = np.asarray(phases, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if phases.shape != counts.shape or phases.ndim != 1:
        raise ValueError("phases and counts must be 1-d arrays of equal length")
    distinct = np.unique(np.round(phases % (2 * np.pi), 12))
    if len(distinct) < 4:
        raise ValueError("need >= 4 distinct phases")
    if np.ptp(phases) < np.pi - 1e-9:
        raise ValueError("phase scan must span at least pi")
    design = np.column_stack([np.ones_like(phases), np.cos(phases), np.sin(phases)])
    coef, *_ = np.linalg.lstsq(design, counts, rcond=None)
    a, b, c = coef
    if a <= 0:
        return VisibilityFit(0.0, 0.0, 0.0, float(max(a, 0.0)))
    amp = float(np.hypot(b, c))
    return VisibilityFit(
        visibility=amp / a,
        amplitude=amp,
        phase_offset=float(np.arctan2(c, b) % (2 * np.pi)),
        mean_rate=float(a),
    )


# ---------------------------------------------------------------------------
# classical thresholds

@dataclass(frozen=True)
class ThresholdReport:
    name: str
    value: float
    sigma: float
    bound: float
    sigma_distance: float


FIDELITY_BOUND = 2.0 / 3.0
VISIBILITY_BOUND = 1.0 / 3.0


def classical_threshold_tests(
    fidelities: dict[str, tuple[float, float]] | None = None,
    visibility: tuple[float, float] | None = None,
) -> list[ThresholdReport]:
    """Sigma-distances of measured quantities from the classical bounds.

    ``fidelities`` maps prepared-state labels (and optionally "AVERAGE") to
    (value, sigma) pairs, compared against 2/3; if the four cardinal states
    are present and no explicit average is given, the 1:1:2:2 weighted
    average is added automatically.  ``visibility`` is compared against 1/3.
    """
    reports = []
    fidelities = dict(fidelities or {})
    if all(k in fidelities for k in ("E", "L", "PLUS", "PLUS_I")) and "AVERAGE" not in fidelities:
        vals = {k: fidelities[k][0] for k in ("E", "L", "PLUS", "PLUS_I")}
        sigs = {k: fidelities[k][1] for k in ("E", "L", "PLUS", "PLUS_I")}
        avg = average_fidelity(vals["E"], vals["L"], vals["PLUS"], vals["PLUS_I"])
        sig = math.sqrt(
            sigs["E"] ** 2 + sigs["L"] ** 2 + 4 * sigs["PLUS"] ** 2 + 4 * sigs["PLUS_I"] ** 2
        ) / 6.0
        fidelities["AVERAGE"] = (avg, sig)
    for name, (value, sigma) in sorted(fidelities.items()):
        if sigma <= 0:
            raise ValueError(f"{name}: error bar must be positive")
        reports.append(
            ThresholdReport(name, value, sigma, FIDELITY_BOUND, (value - FIDELITY_BOUND) / sigma)
        )
    if visibility is not None:
        v, sigma = visibility
        if sigma <= 0:
            raise ValueError("visibility error bar must be positive")
        reports.append(
            ThresholdReport("VISIBILITY", v, sigma, VISIBILITY_BOUND, (v - VISIBILITY_BOUND) / sigma)
        )
    return reports


# ---------------------------------------------------------------------------
# convenience reductions used by the CLI

def tomography_summary(
    table: CountTable,
    mu_level: float,
    method: str = "linear",
    n_resamples: int = 1000,
    seed: int = 0,
) -> dict:
    """Per-state density matrices and fidelities (with Monte-Carlo errors)."""
    out = {}
    for prepared in table.prepared_states():
        counts = {s: table.get(prepared, s, mu_level).triples for s in SETTING_ORDER}
        rho = tomography_reconstruct(counts, method=method)
        target = teleported_target(prepared)
        f_val = fidelity(rho, target)

        def stat(resampled, _target=target, _method=method):
            return fidelity(tomography_reconstruct(resampled, method=_method), _target)

        sigma = monte_carlo_errors(counts, stat, n_resamples=n_resamples, seed=seed)
        out[prepared] = {"rho": rho, "fidelity": f_val, "sigma": max(sigma, 1e-12)}
    return out
