"""Pure-numpy versions of the routines in ``_kernels.pyx``.

Used when the compiled extension is unavailable or when
``PHOTONIC_GRAYBOX_PURE=1`` is set. Results agree with the compiled path to
round-off; eigenvector phases may differ, but every quantity built from them
(exponentials, adjoints) does not.
"""

import numpy as np

from photonic_graybox.errors import ConvergenceError


def herm_eig_batch(h):
    h = np.asarray(h, dtype=np.complex128)
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(str(exc)) from exc
    return w, v


def expm_from_eig(w, v, length):
    e = np.exp(-1j * np.asarray(w) * length)
    return (v * e[:, None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def exp_adjoint_batch(w, v, length, g, rel_tol):
    w = np.asarray(w, dtype=np.float64)
    e = np.exp(-1j * w * length)
    d = w[:, :, None] - w[:, None, :]
    tol = rel_tol * np.maximum(1.0, np.abs(w).max(axis=1))[:, None, None]
    close = np.abs(d) < tol
    with np.errstate(divide="ignore", invalid="ignore"):
        kern = (e[:, :, None] - e[:, None, :]) / np.where(close, 1.0, d)
    kern = np.where(close, (-1j * length * e)[:, :, None], kern)
    vh = np.conj(np.swapaxes(v, -1, -2))
    inner = (vh @ g @ v) * np.conj(kern)
    out = v @ inner @ vh
    return 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))
