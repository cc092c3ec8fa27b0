"""Ground-truth simulator of the electro-optic waveguide-array chip.

Voltages on ``2n`` electrodes set the propagation constants and nearest
neighbour couplings of an ``n``-waveguide array. Slow trapped-charge dynamics
distort the applied waveforms before they reach the waveguides, and
chip-to-fibre coupling losses skew the measured power distribution.

Units: waveforms in milliseconds and volts, geometry in meters, Hamiltonian
entries in rad/m.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import yaml

from photonic_graybox.errors import ContractViolation
from photonic_graybox.linalg import expm_unitary_batch

Mode = Literal["classical", "quantum"]
MODES = ("classical", "quantum")


@dataclass(frozen=True)
class DistortionParams:
    tau_charge: float = 20.0  # ms
    tau_diffuse: float = 50.0  # ms
    gain: float = 0.3

    def __post_init__(self):
        if not (self.tau_charge > 0 and self.tau_diffuse > 0):
            raise ContractViolation("distortion time constants must be positive")
        if not 0.0 <= self.gain <= 1.0:
            raise ContractViolation("distortion gain must lie in [0, 1]")


def default_electrode_map(n: int) -> np.ndarray:
    """Rows ``0..n-1`` give the voltage across each waveguide, rows
    ``n..2n-2`` the voltage across each inter-waveguide gap."""
    m = np.zeros((2 * n - 1, 2 * n))
    for i in range(n):
        m[i, 2 * i] = 1.0
        m[i, 2 * i + 1] = -1.0
    for i in range(n - 1):
        m[n + i, 2 * i + 1] = 1.0
        m[n + i, 2 * i + 2] = -1.0
    return m


@dataclass(frozen=True)
class ChipParams:
    """Physical constants of the simulated device.

    ``lambda_`` is stored under the key ``lambda`` in configuration files.
    """

    n: int = 3
    lambda_: float = 808e-9
    l: float = 3.6e-2  # noqa: E741
    n0: float = 2.1753
    delta_n: float = 5e-6
    c0: float = 100.0
    delta_c1: float = 1.5
    delta_c2: float = -1.3
    eps: tuple = (0.9, 0.8, 0.5)
    v_max: float = 10.0
    distortion: DistortionParams = field(default_factory=DistortionParams)
    electrode_map: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        if self.n < 2:
            raise ContractViolation("need at least two waveguides")
        if len(self.eps) != self.n:
            raise ContractViolation(f"eps has {len(self.eps)} entries, expected {self.n}")
        if not all(0.0 < e <= 1.0 for e in self.eps):
            raise ContractViolation("loss coefficients must lie in (0, 1]")
        if not (self.lambda_ > 0 and self.l > 0 and self.v_max > 0):
            raise ContractViolation("wavelength, length and v_max must be positive")
        if self.electrode_map is not None:
            m = np.asarray(self.electrode_map, dtype=float)
            if m.shape != (2 * self.n - 1, 2 * self.n):
                raise ContractViolation(f"electrode map must be {(2 * self.n - 1, 2 * self.n)}")
            object.__setattr__(self, "electrode_map", tuple(map(tuple, m)))

    @property
    def field_map(self) -> np.ndarray:
        if self.electrode_map is None:
            return default_electrode_map(self.n)
        return np.asarray(self.electrode_map, dtype=float)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        d["eps"] = list(self.eps)
        if self.electrode_map is None:
            d.pop("electrode_map")
        else:
            d["electrode_map"] = [list(r) for r in self.electrode_map]
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "ChipParams":
        d = dict(d or {})
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ContractViolation(f"unknown chip parameter(s): {sorted(unknown)}")
        dist = d.pop("distortion", None)
        if isinstance(dist, dict):
            d["distortion"] = DistortionParams(**dist)
        elif dist is not None:
            d["distortion"] = dist
        if "n" in d and "eps" not in d and d["n"] != 3:
            d["eps"] = (1.0,) * int(d["n"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ChipParams":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_distortion(self, **kw) -> "ChipParams":
        return replace(self, distortion=replace(self.distortion, **kw))


@dataclass
class VoltageSequence:
    dt: float
    samples: np.ndarray  # (T, 2n) volts

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.dt <= 0:
            raise ContractViolation("dt must be positive")
        if self.samples.ndim != 2:
            raise ContractViolation("samples must be a (T, 2n) array")
        if not np.all(np.isfinite(self.samples)):
            raise ContractViolation("voltage samples must be finite")

    @property
    def steps(self) -> int:
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps) * self.dt


@dataclass
class MeasurementTrace:
    dt: float
    mode: str
    channels: np.ndarray  # (T, n^2) or (T, 2 n^2)

    @property
    def steps(self) -> int:
        return self.channels.shape[0]


def electrode_fields(v, params: ChipParams):
    """Split electrode voltages into per-waveguide and per-gap differences.

    Works on any leading shape; the last axis must have length ``2n``.
    """
    v = np.asarray(v, dtype=np.float64)
    n = params.n
    if v.shape[-1] != 2 * n:
        raise ContractViolation(f"expected {2 * n} electrode voltages, got {v.shape[-1]}")
    d = v @ params.field_map.T
    return d[..., :n], d[..., n:]


def build_hamiltonian(v, params: ChipParams) -> np.ndarray:
    """Real symmetric tridiagonal Hamiltonian for voltages ``v`` (..., 2n)."""
    dv_wg, dv_gap = electrode_fields(v, params)
    n = params.n
    k0 = 2.0 * np.pi / params.lambda_
    h = np.zeros(dv_wg.shape[:-1] + (n, n))
    idx = np.arange(n)
    h[..., idx, idx] = k0 * (params.n0 + params.delta_n * dv_wg)
    coupling = (
        params.c0
        + params.delta_c1 * dv_gap
        + params.delta_c2 * (dv_wg[..., :-1] + dv_wg[..., 1:])
    )
    h[..., idx[:-1], idx[1:]] = coupling
    h[..., idx[1:], idx[:-1]] = coupling
    return h


def distort_samples(samples, dt: float, dist: DistortionParams) -> np.ndarray:
    """Trapped-charge distortion along axis -2 (time) of ``samples``.

    ``q`` starts at zero and integrates the drive while leaking with
    ``tau_diffuse``; the waveguides see ``v - gain * q``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    out = np.empty_like(samples)
    q = np.zeros(samples.shape[:-2] + samples.shape[-1:])
    a = dt / dist.tau_charge
    b = 1.0 - dt / dist.tau_diffuse
    for t in range(samples.shape[-2]):
        vt = samples[..., t, :]
        out[..., t, :] = vt - dist.gain * q
        q = b * q + a * vt
    return out


def distort(seq: VoltageSequence, params: ChipParams) -> VoltageSequence:
    return VoltageSequence(seq.dt, distort_samples(seq.samples, seq.dt, params.distortion))


def apply_coupling_loss(p, eps) -> np.ndarray:
    """Lossy, renormalized power distribution along the last axis."""
    p = np.asarray(p, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps <= 0):
        raise ContractViolation("loss coefficients must be positive")
    weighted = p * eps
    total = weighted.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ContractViolation("power vector is identically zero")
    return weighted / total


def ideal_powers(u) -> np.ndarray:
    """``|U[k, m]|^2`` arranged as ``[..., m, k]`` (input-major)."""
    u = np.asarray(u)
    return np.abs(np.swapaxes(u, -1, -2)) ** 2


def interferometer_readings(u) -> np.ndarray:
    """Mach-Zehnder readings ``P_k(0), P_k(pi/2)`` for every input column.

    Output shape ``(..., n, 2n)``: for input ``m`` the first ``n`` entries are
    ``|alpha_k + 1|^2 / 4`` and the last ``n`` are ``|alpha_k + i|^2 / 4``.
    """
    alpha = np.swapaxes(np.asarray(u), -1, -2)
    p0 = 0.25 * np.abs(alpha + 1.0) ** 2
    p_half = 0.25 * np.abs(alpha + 1j) ** 2
    return np.concatenate([p0, p_half], axis=-1)


def readings_from_unitaries(u, mode: str, eps=None) -> np.ndarray:
    """Flatten per-step unitaries ``(..., n, n)`` into measurement channels."""
    u = np.asarray(u)
    lead = u.shape[:-2]
    if mode == "classical":
        p = ideal_powers(u)
        if eps is not None:
            p = apply_coupling_loss(p, eps)
        return p.reshape(*lead, -1)
    if mode == "quantum":
        if eps is not None:
            u = u * np.sqrt(np.asarray(eps, dtype=float))[:, None]
        return interferometer_readings(u).reshape(*lead, -1)
    raise ContractViolation(f"unknown mode {mode!r}")


def n_channels(n: int, mode: str) -> int:
    return n * n if mode == "classical" else 2 * n * n


def simulate_samples(samples, dt: float, params: ChipParams, mode: str = "classical",
                     quantum_loss: bool = False):
    """Array-level simulator: ``(..., T, 2n)`` volts -> channels and unitaries."""
    if mode not in MODES:
        raise ContractViolation(f"unknown mode {mode!r}")
    v_eff = distort_samples(samples, dt, params.distortion)
    h = build_hamiltonian(v_eff, params)
    u, _, _ = expm_unitary_batch(h, params.l)
    eps = params.eps if (mode == "classical" or quantum_loss) else None
    return readings_from_unitaries(u, mode, eps), u


def simulate(seq: VoltageSequence, params: ChipParams, mode: str = "classical",
             quantum_loss: bool = False) -> MeasurementTrace:
    """Measurement record the chip produces under the drive ``seq``.

    Classical mode reports lossy normalized powers, ``n`` channels per input
    waveguide. Quantum mode reports interferometer readings, ``2n`` channels
    per input, without the coupling-loss layer unless ``quantum_loss`` is set
    (then each output amplitude is scaled by ``sqrt(eps_k)``).
    """
    if seq.samples.shape[-1] != 2 * params.n:
        raise ContractViolation(f"expected {2 * params.n} electrodes")
    channels, _ = simulate_samples(seq.samples, seq.dt, params, mode, quantum_loss)
    return MeasurementTrace(seq.dt, mode, channels)


def simulate_unitaries(seq: VoltageSequence, params: ChipParams) -> np.ndarray:
    _, u = simulate_samples(seq.samples, seq.dt, params)
    return u


def load_params(path: str | Path | None = None, overrides: dict | None = None) -> ChipParams:
    base = {}
    if path is not None:
        with open(path) as fh:
            base = yaml.safe_load(fh) or {}
    base.update(overrides or {})
    return ChipParams.from_dict(base)


def normalized_eps(eps: Sequence[float]) -> np.ndarray:
    e = np.asarray(eps, dtype=float)
    return e / e.max()
