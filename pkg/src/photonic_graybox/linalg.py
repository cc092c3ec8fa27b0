"""Dense kernels for small Hermitian and unitary matrices.

The exponential, its adjoint and the logarithm all go through one
eigendecomposition. Batched variants take ``(B, n, n)`` stacks and dispatch to
the compiled extension when it is available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from photonic_graybox._backend import kernels
from photonic_graybox.errors import ContractViolation

#: relative gap below which the divided difference takes its confluent limit
DEGENERACY_TOL = 1e-9
#: eigenphases this close to -pi are reported as +pi
BRANCH_TOL = 1e-10


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def _as_stack(h):
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim < 2 or h.shape[-1] != h.shape[-2]:
        raise ContractViolation(f"expected square matrices, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ContractViolation("matrix has non-finite entries")
    return h


def hermitian_part(m):
    m = np.asarray(m)
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


def herm_eig_batch(h):
    """Eigenvalues (ascending) and eigenvectors of a ``(..., n, n)`` stack."""
    h = _as_stack(h)
    lead = h.shape[:-2]
    n = h.shape[-1]
    w, v = kernels.herm_eig_batch(hermitian_part(h).reshape(-1, n, n))
    return w.reshape(*lead, n), v.reshape(*lead, n, n)


def herm_eig(h) -> Spectrum:
    """Eigendecomposition of one Hermitian matrix.

    Raises:
        ConvergenceError: if the Jacobi sweeps do not converge.
    """
    h = _as_stack(h)
    if h.ndim != 2:
        raise ContractViolation("herm_eig takes a single matrix; use herm_eig_batch")
    w, v = herm_eig_batch(h[None])
    return Spectrum(w[0], v[0])


def expm_from_eig(w, v, length):
    n = v.shape[-1]
    lead = v.shape[:-2]
    u = kernels.expm_from_eig(w.reshape(-1, n), v.reshape(-1, n, n), float(length))
    return u.reshape(*lead, n, n)


def expm_unitary_batch(h, length):
    """``exp(-i H l)`` for a stack; also returns the factorization for reuse."""
    if not length > 0:
        raise ContractViolation(f"length must be positive, got {length}")
    w, v = herm_eig_batch(h)
    return expm_from_eig(w, v, length), w, v


def mat_exp_unitary(h, length: float) -> np.ndarray:
    """Propagator ``U = exp(-i H l)`` of a Hermitian matrix over length ``l``."""
    u, _, _ = expm_unitary_batch(h, length)
    return u


def exp_adjoint_from_eig(w, v, length, upstream):
    """Adjoint of ``H -> exp(-i H l)`` given the factorization of ``H``.

    ``upstream`` holds dL/dRe(U) + i dL/dIm(U); the return value has the same
    convention for H, projected onto Hermitian matrices.
    """
    n = v.shape[-1]
    lead = v.shape[:-2]
    g = np.broadcast_to(np.asarray(upstream, dtype=np.complex128), v.shape)
    out = kernels.exp_adjoint_batch(
        w.reshape(-1, n), v.reshape(-1, n, n), float(length), g.reshape(-1, n, n), DEGENERACY_TOL
    )
    return out.reshape(*lead, n, n)


def exp_frechet_adjoint(h, length: float, upstream) -> np.ndarray:
    w, v = herm_eig_batch(h)
    return exp_adjoint_from_eig(w, v, length, upstream)


def unitarity_error(u) -> float:
    u = np.asarray(u)
    eye = np.eye(u.shape[-1])
    return float(np.max(np.linalg.norm(np.conj(np.swapaxes(u, -1, -2)) @ u - eye, axis=(-2, -1))))


def _unitary_eig(u):
    # A unitary matrix shares its eigenvectors with the commuting Hermitian
    # pair (U + U^H)/2 and (U - U^H)/2i; diagonalize a generic combination
    # and retry with another mixing weight if two eigenphases collided.
    herm = hermitian_part(u)
    anti = (u - np.conj(u.T)) / 2j
    for alpha in (0.5772156649015329, 1.4142135623730951, -0.6931471805599453, 2.718281828459045):
        spec = herm_eig(herm + alpha * anti)
        d = spec.eigenvectors.conj().T @ u @ spec.eigenvectors
        off = d - np.diag(np.diag(d))
        if np.linalg.norm(off) < 1e-10:
            return np.diag(d), spec.eigenvectors
    raise ContractViolation("could not diagonalize unitary (not normal?)")


def principal_phases(z):
    """Angles in (-pi, pi]; values within BRANCH_TOL of -pi map to +pi."""
    theta = np.angle(z)
    return np.where(theta <= -np.pi + BRANCH_TOL, np.pi, theta)


def mat_log_unitary(u, length: float) -> np.ndarray:
    """Principal Hamiltonian ``H = (i/l) log U``.

    Raises:
        ContractViolation: if ``u`` is not unitary within 1e-8.
    """
    u = _as_stack(u)
    if u.ndim != 2:
        raise ContractViolation("mat_log_unitary takes a single matrix")
    if not length > 0:
        raise ContractViolation(f"length must be positive, got {length}")
    if unitarity_error(u) > 1e-8:
        raise ContractViolation("input is not unitary within 1e-8")
    eigvals, vecs = _unitary_eig(u)
    lam = -principal_phases(eigvals) / length
    return hermitian_part((vecs * lam) @ vecs.conj().T)
