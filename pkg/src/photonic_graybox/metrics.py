"""Error measures and Mach-Zehnder amplitude reconstruction.

An interferometer that mixes an output amplitude ``alpha`` with a unit
reference at phase ``theta`` reads ``P(theta) = |alpha + exp(i theta)|^2 / 4``.
The readings at ``theta = 0`` and ``pi/2`` fix ``alpha`` up to the choice of
root of a quadratic in ``|alpha|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from photonic_graybox.errors import ContractViolation, ReconstructionError
from photonic_graybox.linalg import unitarity_error

UNITARY_TOL = 1e-8
RESIDUAL_TOL = 1e-6
ASSEMBLY_TOL = 1e-6


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ContractViolation(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def infidelity_batch(u, v, check: bool = True) -> np.ndarray:
    """``1 - |tr(U^H V)|^2 / d^2`` over matching stacks of unitaries."""
    u, v = np.asarray(u), np.asarray(v)
    if u.shape[-2:] != v.shape[-2:] or u.shape[-1] != u.shape[-2]:
        raise ContractViolation(f"dimension mismatch {u.shape} vs {v.shape}")
    if check:
        worst = max(np.max(unitarity_error(u), initial=0.0), np.max(unitarity_error(v), initial=0.0))
        if worst > UNITARY_TOL:
            raise ContractViolation(f"argument not unitary (error {worst:.2e})")
    d = u.shape[-1]
    tr = np.einsum("...ij,...ij->...", np.conj(u), v)
    return np.clip(1.0 - np.abs(tr) ** 2 / d**2, 0.0, 1.0)


def gate_infidelity(u, v) -> float:
    """Phase-insensitive distance between two unitaries, in ``[0, 1]``."""
    u, v = np.asarray(u), np.asarray(v)
    if u.ndim != 2 or v.ndim != 2:
        raise ContractViolation("gate_infidelity compares two matrices")
    return float(infidelity_batch(u, v))


@dataclass(frozen=True)
class InterferometerPair:
    p0: float
    p_half: float


def interferometer_pair(alpha) -> InterferometerPair:
    alpha = complex(alpha)
    return InterferometerPair(0.25 * abs(alpha + 1) ** 2, 0.25 * abs(alpha + 1j) ** 2)


def _residual(alpha, p0, p_half):
    r0 = 0.25 * np.abs(alpha + 1.0) ** 2 - p0
    r1 = 0.25 * np.abs(alpha + 1j) ** 2 - p_half
    return np.maximum(np.abs(r0), np.abs(r1))


def _candidates(p0, p_half):
    """Both roots of the reconstruction quadratic with their residuals.

    Residuals are ``inf`` for roots off the physical disk ``|alpha| <= 1``.
    """
    a = 4.0 * p0 - 1.0
    b = 4.0 * p_half - 1.0
    lin = a + b + 2.0
    const = 0.5 * (a * a + b * b)
    disc = lin * lin - 4.0 * const
    disc = np.where((disc < 0) & (disc > -1e-9), 0.0, disc)
    root = np.sqrt(np.maximum(disc, 0.0))
    # cancellation-free pair: large root directly, small one through the product
    s_big = 0.5 * (lin + root)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_small = np.where(s_big > 0, const / s_big, 0.0)
    out = []
    for s in (s_small, s_big):
        alpha = 0.5 * ((a - s) + 1j * (b - s))
        ok = (np.abs(alpha) <= 1.0 + 1e-9) & (disc >= 0)
        out.append((alpha, np.where(ok, _residual(alpha, p0, p_half), np.inf)))
    return out


def reconstruct_amplitudes(p0, p_half, *, strict: bool = True):
    """Vectorized inverse of the two interferometer readings.

    With ``a = 4 P(0) - 1`` and ``b = 4 P(pi/2) - 1`` the unknown ``s = |alpha|^2``
    solves ``s^2 - (a + b + 2) s + (a^2 + b^2) / 2 = 0`` and then
    ``alpha = ((a - s) + i (b - s)) / 2``. Roots outside ``|alpha| <= 1`` are
    rejected; if both qualify the one with the smaller residual wins and ties
    go to the smaller magnitude.

    Both roots are exact when ``alpha`` and its mirror image across the line
    ``Re + Im = -1`` lie in the unit disk, so a lone pair from that region
    cannot be told apart. :func:`unitary_from_trace` resolves it using the
    other columns.

    Returns ``(alpha, residual)``. With ``strict`` an inconsistent reading
    raises :class:`ReconstructionError`.
    """
    p0 = np.asarray(p0, dtype=float)
    p_half = np.asarray(p_half, dtype=float)
    (al_s, res_s), (al_b, res_b) = _candidates(p0, p_half)
    pick_small = (res_s <= res_b + 1e-12)
    alpha = np.where(pick_small, al_s, al_b)
    residual = np.where(pick_small, res_s, res_b)
    if strict:
        bad = ~(residual < RESIDUAL_TOL)
        if np.any(bad):
            worst = float(np.max(residual))
            raise ReconstructionError(f"{int(bad.sum())} inconsistent interferometer reading(s)", worst)
    return alpha, residual


def ambiguous(p0, p_half, tol: float = RESIDUAL_TOL) -> np.ndarray:
    """True where both roots are physical and consistent with the readings."""
    (al_s, res_s), (al_b, res_b) = _candidates(np.asarray(p0, float), np.asarray(p_half, float))
    return (res_s < tol) & (res_b < tol) & (np.abs(al_s - al_b) > 1e-12)


def reconstruct_amplitude(pair: InterferometerPair) -> complex:
    alpha, _ = reconstruct_amplitudes(pair.p0, pair.p_half)
    return complex(alpha)


@dataclass
class UnitaryReconstruction:
    matrix: np.ndarray
    unitarity_residual: float
    flagged: bool


def _assemble(blocks: np.ndarray, n: int):
    p0, ph = blocks[:, :n], blocks[:, n:]
    alpha, _ = reconstruct_amplitudes(p0, ph)
    amb = ambiguous(p0, ph)
    if np.any(amb):
        # try every flip of the ambiguous entries, keep the most unitary one
        (al_s, _), (al_b, _) = _candidates(p0, ph)
        other = np.where(np.isclose(alpha, al_s, rtol=0, atol=1e-15), al_b, al_s)
        where = np.argwhere(amb)
        flips = (np.arange(2 ** len(where))[:, None] >> np.arange(len(where))) & 1
        trial = np.broadcast_to(alpha, (len(flips),) + alpha.shape).copy()
        for j, (m, k) in enumerate(where):
            trial[:, m, k] = np.where(flips[:, j] == 1, other[m, k], alpha[m, k])
        err = np.linalg.norm(np.conj(trial) @ np.swapaxes(trial, -1, -2) - np.eye(n), axis=(-2, -1))
        alpha = trial[int(np.argmin(err))]
    return alpha.T.copy()  # row m of alpha is input m


def unitary_from_trace(step, n: int | None = None) -> UnitaryReconstruction:
    """Assemble the matrix from one step of quantum-mode readings.

    ``step`` holds ``2 n^2`` values, ``2n`` per input basis state ``m``:
    ``P_k(0)`` for every output ``k`` followed by ``P_k(pi/2)``. Column ``m``
    of the result holds the reconstructed ``alpha_k``. Entries whose reading
    admits two physical amplitudes are settled by choosing the combination
    closest to unitary. The result is flagged, not rejected, when it is
    further than 1e-6 from unitary.
    """
    step = np.asarray(step, dtype=float).reshape(-1)
    if n is None:
        n = int(round(np.sqrt(step.size / 2)))
    if step.size != 2 * n * n:
        raise ContractViolation(f"expected {2 * n * n} readings, got {step.size}")
    u = _assemble(step.reshape(n, 2 * n), n)
    resid = float(unitarity_error(u))
    return UnitaryReconstruction(u, resid, resid > ASSEMBLY_TOL)


def unitaries_from_traces(channels, n: int) -> np.ndarray:
    """Batch form of :func:`unitary_from_trace` over ``(..., 2 n^2)`` readings."""
    channels = np.asarray(channels, dtype=float)
    flat = channels.reshape(-1, n, 2 * n)
    out = np.stack([_assemble(b, n) for b in flat]) if len(flat) else np.zeros((0, n, n), complex)
    return out.reshape(channels.shape[:-1] + (n, n))
