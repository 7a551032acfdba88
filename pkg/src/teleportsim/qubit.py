"""Exact single-qubit algebra for time-bin qubits.

States live in the {|e>, |l>} (early/late temporal mode) basis.  A pure
qubit is parametrized as ``alpha|e> + beta*exp(i*phi)|l>`` with real
``alpha, beta >= 0``; the global phase is canonicalized away so every
physical pure state has a unique representative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-12
PHYS_TOL = 1e-10  # tolerance on hermiticity / trace / eigenvalue checks


class PhysicalityError(ValueError):
    """Raised when a matrix fails density-matrix validity checks."""


def _canonical_angles(c_e: complex, c_l: complex) -> tuple[float, float, float]:
    """Strip the global phase from a two-component amplitude vector."""
    a = abs(c_e)
    b = abs(c_l)
    norm = np.hypot(a, b)
    if norm < NORM_TOL:
        raise ValueError("cannot canonicalize a zero state vector")
    a /= norm
    b /= norm
    if a < NORM_TOL:
        return 0.0, 1.0, 0.0
    if b < NORM_TOL:
        return 1.0, 0.0, 0.0
    phi = float(np.angle(c_l) - np.angle(c_e)) % (2.0 * np.pi)
    return float(a), float(b), phi


@dataclass(frozen=True)
class TimeBinState:
    """Pure time-bin qubit ``alpha|e> + beta*exp(i*phi)|l>``.

    alpha, beta are real and non-negative; the relative phase phi is in
    radians.  Normalization alpha**2 + beta**2 = 1 is enforced on
    construction.
    """

    alpha: float
    beta: float
    phi: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("amplitudes must be non-negative (phase lives in phi)")
        if abs(self.alpha**2 + self.beta**2 - 1.0) > 1e-9:
            raise ValueError("state is not normalized: alpha^2 + beta^2 != 1")
        # Re-canonicalize exactly (fixes e.g. phi on pole states).
        a, b, p = _canonical_angles(self.alpha, self.beta * np.exp(1j * self.phi))
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "phi", p)

    @classmethod
    def from_amplitudes(cls, c_e: complex, c_l: complex) -> "TimeBinState":
        a, b, p = _canonical_angles(c_e, c_l)
        return cls(a, b, p)

    @classmethod
    def early(cls) -> "TimeBinState":
        return cls(1.0, 0.0)

    @classmethod
    def late(cls) -> "TimeBinState":
        return cls(0.0, 1.0)

    @classmethod
    def plus(cls) -> "TimeBinState":
        return cls(np.sqrt(0.5), np.sqrt(0.5), 0.0)

    @classmethod
    def minus(cls) -> "TimeBinState":
        return cls(np.sqrt(0.5), np.sqrt(0.5), np.pi)

    @classmethod
    def plus_i(cls) -> "TimeBinState":
        return cls(np.sqrt(0.5), np.sqrt(0.5), np.pi / 2)

    @classmethod
    def minus_i(cls) -> "TimeBinState":
        return cls(np.sqrt(0.5), np.sqrt(0.5), 3 * np.pi / 2)

    def ket(self) -> np.ndarray:
        """Amplitude vector [c_e, c_l] with the canonical global phase."""
        return np.array([self.alpha, self.beta * np.exp(1j * self.phi)], dtype=complex)

    def projector(self) -> "DensityMatrix":
        k = self.ket()
        return DensityMatrix(np.outer(k, k.conj()))

    def isclose(self, other: "TimeBinState", tol: float = 1e-9) -> bool:
        return abs(overlap(self, other)) ** 2 > 1.0 - tol


def overlap(a: TimeBinState, b: TimeBinState) -> complex:
    """Inner product <a|b> of the canonical representatives."""
    return complex(np.vdot(a.ket(), b.ket()))


SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)


class DensityMatrix:
    """2x2 Hermitian, unit-trace, positive-semidefinite matrix in {|e>,|l>}."""

    __slots__ = ("mat",)

    def __init__(self, elements, validate: bool = True):
        mat = np.asarray(elements, dtype=complex).reshape(2, 2)
        if validate:
            if np.max(np.abs(mat - mat.conj().T)) > PHYS_TOL:
                raise PhysicalityError("matrix is not Hermitian")
            if abs(np.trace(mat).real - 1.0) > PHYS_TOL or abs(np.trace(mat).imag) > PHYS_TOL:
                raise PhysicalityError("matrix trace is not 1")
            evals = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
            if evals.min() < -PHYS_TOL:
                raise PhysicalityError(f"negative eigenvalue {evals.min():.3e}")
        self.mat = 0.5 * (mat + mat.conj().T)

    @classmethod
    def from_state(cls, state: TimeBinState) -> "DensityMatrix":
        k = state.ket()
        return cls(np.outer(k, k.conj()))

    @classmethod
    def maximally_mixed(cls) -> "DensityMatrix":
        return cls(0.5 * IDENTITY2)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.mat)

    def purity(self) -> float:
        return float(np.real(np.trace(self.mat @ self.mat)))

    def bloch_vector(self) -> np.ndarray:
        return np.real(
            [
                np.trace(self.mat @ SIGMA_X),
                np.trace(self.mat @ SIGMA_Y),
                np.trace(self.mat @ SIGMA_Z),
            ]
        )

    def to_flat8(self) -> np.ndarray:
        """Row-major, re/im-interleaved flat array (structured-text format)."""
        out = np.empty(8, dtype=float)
        flat = self.mat.reshape(-1)
        out[0::2] = flat.real
        out[1::2] = flat.imag
        return out

    @classmethod
    def from_flat8(cls, values, validate: bool = True) -> "DensityMatrix":
        v = np.asarray(values, dtype=float).reshape(8)
        mat = (v[0::2] + 1j * v[1::2]).reshape(2, 2)
        return cls(mat, validate=validate)

    def __repr__(self):
        return f"DensityMatrix({self.mat!r})"


@dataclass(frozen=True)
class MeasurementSetting:
    """One of the six canonical analyzer settings with its rank-1 projector."""

    label: str
    state: TimeBinState

    @property
    def projector(self) -> DensityMatrix:
        return self.state.projector()


SETTINGS: dict[str, MeasurementSetting] = {
    "E": MeasurementSetting("E", TimeBinState.early()),
    "L": MeasurementSetting("L", TimeBinState.late()),
    "PLUS": MeasurementSetting("PLUS", TimeBinState.plus()),
    "MINUS": MeasurementSetting("MINUS", TimeBinState.minus()),
    "PLUS_I": MeasurementSetting("PLUS_I", TimeBinState.plus_i()),
    "MINUS_I": MeasurementSetting("MINUS_I", TimeBinState.minus_i()),
}

COMPLEMENT = {
    "E": "L",
    "L": "E",
    "PLUS": "MINUS",
    "MINUS": "PLUS",
    "PLUS_I": "MINUS_I",
    "MINUS_I": "PLUS_I",
}

# Prepared states used in the teleportation runs and the target each one
# maps to under the sigma_y byproduct of the psi-minus projection.
PREPARED_STATES = ("E", "L", "PLUS", "PLUS_I")


def pauli_y_transform(state: TimeBinState) -> TimeBinState:
    """Apply sigma_y (bit-flip + phase-flip) and drop the global phase.

    This is the byproduct unitary of a successful psi-minus Bell-state
    measurement: the receiver's photon carries sigma_y |psi_in>.
    """
    vec = SIGMA_Y @ state.ket()
    return TimeBinState.from_amplitudes(vec[0], vec[1])


def teleported_target(prepared_label: str) -> TimeBinState:
    return pauli_y_transform(SETTINGS[prepared_label].state)


def fidelity(rho: DensityMatrix, target: TimeBinState) -> float:
    """<target| rho |target> for a physical rho and a pure target."""
    evals = rho.eigenvalues()
    if evals.min() < -PHYS_TOL:
        raise PhysicalityError(f"rho has negative eigenvalue {evals.min():.3e}")
    k = target.ket()
    val = float(np.real(k.conj() @ rho.mat @ k))
    return min(max(val, 0.0), 1.0)


def average_fidelity(f_e: float, f_l: float, f_plus: float, f_plus_i: float) -> float:
    """Weighted mean [F_e + F_l + 2(F_+ + F_+i)] / 6.

    The 1:1:2:2 weights make the four measured states representative of a
    uniform average over the Bloch sphere (each equator state stands for
    two of the six cardinal directions).
    """
    for f in (f_e, f_l, f_plus, f_plus_i):
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"fidelity {f} outside [0, 1]")
    return (f_e + f_l + 2.0 * (f_plus + f_plus_i)) / 6.0


def fidelity_from_visibility(v: float) -> float:
    """Map an interference visibility to an equator-state fidelity, (1+V)/2.

    Sends the classical visibility bound 1/3 to the classical fidelity
    bound 2/3, and V=1 to perfect fidelity.
    """
    if not -1.0 <= v <= 1.0:
        raise ValueError(f"visibility {v} outside [-1, 1]")
    return 0.5 * (1.0 + v)


def born_probability(state_or_rho, setting: MeasurementSetting) -> float:
    """Projection probability trace(P_setting * rho)."""
    if isinstance(state_or_rho, TimeBinState):
        rho = DensityMatrix.from_state(state_or_rho)
    else:
        rho = state_or_rho
    p = float(np.real(np.trace(setting.projector.mat @ rho.mat)))
    return min(max(p, 0.0), 1.0)
