"""Closed-form click calculus for displaced, pair-squeezed Gaussian states.

Every state used by the fast model is pure and of the exponential form

    |Psi> = N * exp( c . a+  +  1/2 a+^T Z a+ ) |0>,

with a complex displacement vector ``c`` and a complex symmetric pair
matrix ``Z`` (two-mode squeezing populates off-diagonal entries).  Passive
linear optics (beamsplitters, loss-to-sink couplings, analyzer rotations)
act as a matrix R on creation operators, a_i+ -> sum_j R[i,j] a_j+, which
maps (c, Z) -> (R^T c, R^T Z R).

The only expectation value ever needed is the factorial-moment generating
function

    G(s) = <Psi| prod_i s_i^(n_i) |Psi> / <Psi|Psi>,

because threshold-detector no-click probabilities, photon-number sector
probabilities (via polynomial coefficient extraction in s) and vacuum
projections (s = 0) are all of this form.  Using
s^n a+ s^-n = s a+, the numerator is the vacuum overlap

    O(u, A; v, B) = <0| e^(u.a + 1/2 a A a) e^(v.a+ + 1/2 a+ B a+) |0>
                  = det(I - AB)^(-1/2)
                    * exp[ u (I-BA)^(-1) v + 1/2 u (I-BA)^(-1) B u
                           + 1/2 v A (I-BA)^(-1) v ]

with u = conj(c), A = conj(Z), v = s*c, B = diag(s) Z diag(s).  All the
squeezing parameters in this package are small (|lambda| < 0.1), so the
principal determinant branch is always the correct one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def exp_overlap(u: np.ndarray, a: np.ndarray, v: np.ndarray, b: np.ndarray) -> complex:
    """Vacuum overlap O(u, A; v, B) of two exponential-form states."""
    n = len(u)
    eye = np.eye(n)
    m = eye - b @ a
    det = np.linalg.det(eye - a @ b)
    sol_v = np.linalg.solve(m, v)
    sol_bu = np.linalg.solve(m, b @ u)
    expo = u @ sol_v + 0.5 * u @ sol_bu + 0.5 * v @ (a @ sol_v)
    return det ** (-0.5) * np.exp(expo)


@dataclass
class GaussianState:
    """Pure exponential-form state (c, Z); normalization handled internally."""

    c: np.ndarray
    z: np.ndarray

    @classmethod
    def vacuum(cls, n_modes: int) -> "GaussianState":
        return cls(np.zeros(n_modes, dtype=complex), np.zeros((n_modes, n_modes), dtype=complex))

    def displaced(self, mode: int, alpha: complex) -> "GaussianState":
        c = self.c.copy()
        c[mode] += alpha
        return GaussianState(c, self.z)

    def pair_squeezed(self, mode_i: int, mode_j: int, lam: float) -> "GaussianState":
        """Two-mode squeezing exp(lam a_i+ a_j+); pair-number distribution is
        geometric with ratio lam^2."""
        if abs(lam) >= 1:
            raise ValueError("two-mode squeezing parameter must satisfy |lam| < 1")
        z = self.z.copy()
        z[mode_i, mode_j] += lam
        z[mode_j, mode_i] += lam
        return GaussianState(self.c, z)

    def transformed(self, r: np.ndarray) -> "GaussianState":
        return GaussianState(r.T @ self.c, r.T @ self.z @ r)

    def norm_sq(self) -> float:
        val = exp_overlap(np.conj(self.c), np.conj(self.z), self.c, self.z)
        return float(np.real(val))

    def expectation_s(self, s_batch: np.ndarray) -> np.ndarray:
        """G(s) for a batch of s vectors, shape (K, n_modes) -> (K,)."""
        s_batch = np.atleast_2d(np.asarray(s_batch, dtype=complex))
        vals = _batch_overlap(self.c[None, :], self.z[None, :, :], s_batch)[0]
        norm = self.norm_sq()
        return vals / norm


_CHUNK_PAIRS = 1 << 14  # cap C*K pairs per chunk to bound memory


def _batch_overlap(c_batch: np.ndarray, z_batch: np.ndarray, s_batch: np.ndarray) -> np.ndarray:
    """O(conj(c), conj(Z); s*c, sZs) for all (config, s) pairs.

    c_batch: (C, N), z_batch: (C, N, N), s_batch: (K, N) -> (C, K) complex.
    """
    cc, kk = c_batch.shape[0], s_batch.shape[0]
    if cc * kk > _CHUNK_PAIRS and cc > 1:
        step = max(1, _CHUNK_PAIRS // max(kk, 1))
        out = np.empty((cc, kk), dtype=complex)
        for lo in range(0, cc, step):
            hi = min(lo + step, cc)
            out[lo:hi] = _batch_overlap(c_batch[lo:hi], z_batch[lo:hi], s_batch)
        return out
    n = c_batch.shape[1]
    eye = np.eye(n)
    a = np.conj(z_batch)[:, None, :, :]  # (C,1,N,N)
    u = np.conj(c_batch)[:, None, :]  # (C,1,N)
    ds = s_batch[None, :, :]  # (1,K,N)
    b = ds[..., :, None] * z_batch[:, None, :, :] * ds[..., None, :]  # (C,K,N,N)
    v = ds * c_batch[:, None, :]  # (C,K,N)
    ab = a @ b
    ba = b @ a
    det = np.linalg.det(eye - ab)
    rhs = np.concatenate([v[..., None], b @ u[..., None]], axis=-1)  # (C,K,N,2)
    sol = np.linalg.solve(np.broadcast_to(eye, (cc, kk, n, n)) - ba, rhs)
    sol_v, sol_bu = sol[..., 0], sol[..., 1]
    expo = (
        np.einsum("cki,cki->ck", np.broadcast_to(u, (cc, kk, n)), sol_v)
        + 0.5 * np.einsum("cki,cki->ck", np.broadcast_to(u, (cc, kk, n)), sol_bu)
        + 0.5 * np.einsum("cki,ckij,ckj->ck", v, np.broadcast_to(a, (cc, kk, n, n)), sol_v)
    )
    return det ** (-0.5) * np.exp(expo)


def _compress_modes(c_batch, z_batch, s_batch):
    """Drop modes that are vacuum and uncoupled in every config.

    Such modes always hold zero photons, so their s value is irrelevant and
    they only inflate the matrix algebra.
    """
    active = (np.abs(c_batch) > 0).any(axis=0)
    active |= (np.abs(z_batch) > 0).any(axis=(0, 1))
    active |= (np.abs(z_batch) > 0).any(axis=(0, 2))
    if active.all():
        return c_batch, z_batch, s_batch
    idx = np.nonzero(active)[0]
    return c_batch[:, idx], z_batch[np.ix_(range(len(z_batch)), idx, idx)], s_batch[:, idx]


def grouped_expectations(
    c_batch: np.ndarray,
    z_batch: np.ndarray,
    weights: np.ndarray,
    s_batch: np.ndarray,
    block_bounds: np.ndarray,
) -> np.ndarray:
    """Per-block mixture averages of G(s).

    Configs are concatenated blocks (``block_bounds`` holds B+1 slice
    indices); each block is an independent mixture whose members carry the
    given weights.  Returns a (B, K) array of real expectation values.
    """
    c_batch = np.asarray(c_batch, dtype=complex)
    z_batch = np.asarray(z_batch, dtype=complex)
    s_batch = np.asarray(s_batch, dtype=complex)
    c_batch, z_batch, s_batch = _compress_modes(c_batch, z_batch, s_batch)
    ones = np.ones((1, c_batch.shape[1]))
    norms = np.real(_batch_overlap(c_batch, z_batch, ones)[:, 0])
    vals = np.real(_batch_overlap(c_batch, z_batch, s_batch))
    scaled = (weights / norms)[:, None] * vals
    nb = len(block_bounds) - 1
    out = np.empty((nb, vals.shape[1]))
    for b in range(nb):
        out[b] = scaled[block_bounds[b] : block_bounds[b + 1]].sum(axis=0)
    return out


def batch_expectations(
    c_batch: np.ndarray, z_batch: np.ndarray, s_batch: np.ndarray, weights: np.ndarray | None = None
) -> np.ndarray:
    """Ensemble-averaged G(s): sum_c w_c G_c(s), normalized per config.

    Configs (phase-grid points, squeezing-mixture nodes) are independent
    pure states mixed with the given weights (default: equal).
    """
    c_batch = np.asarray(c_batch, dtype=complex)
    z_batch = np.asarray(z_batch, dtype=complex)
    cc = c_batch.shape[0]
    if weights is None:
        weights = np.full(cc, 1.0 / cc)
    c_batch, z_batch, s_batch = _compress_modes(
        c_batch, z_batch, np.asarray(s_batch, dtype=complex)
    )
    ones = np.ones((1, c_batch.shape[1]))
    norms = np.real(_batch_overlap(c_batch, z_batch, ones)[:, 0])
    vals = _batch_overlap(c_batch, z_batch, s_batch)
    return (weights / norms) @ vals


# linear-optics matrix builders ------------------------------------------------

def identity_map(n: int) -> np.ndarray:
    return np.eye(n, dtype=complex)


def two_mode_map(n: int, i: int, j: int, u2: np.ndarray) -> np.ndarray:
    """Embed a 2x2 creation-operator map into an N-mode identity."""
    r = np.eye(n, dtype=complex)
    r[i, i], r[i, j] = u2[0, 0], u2[0, 1]
    r[j, i], r[j, j] = u2[1, 0], u2[1, 1]
    return r


def beamsplitter_2x2(transmittance: float) -> np.ndarray:
    t = np.sqrt(transmittance)
    r = np.sqrt(1.0 - transmittance)
    return np.array([[t, -r], [r, t]], dtype=complex)


def loss_2x2(transmittance: float) -> np.ndarray:
    """Coupling of a mode to a vacuum sink: same algebra as a beamsplitter."""
    t = np.sqrt(transmittance)
    r = np.sqrt(1.0 - transmittance)
    return np.array([[t, r], [-r, t]], dtype=complex)


def analyzer_2x2(u_e: complex, u_l: complex) -> np.ndarray:
    """Rotation (e, l) -> (m, m_perp) for projection onto u_e|e> + u_l|l>."""
    return np.array([[np.conj(u_e), -u_l], [np.conj(u_l), u_e]])
