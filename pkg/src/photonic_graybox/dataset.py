"""Random square-pulse datasets and their on-disk container.

Every example is one synchronized pulse: a shared start time and duration,
and an independent amplitude on each inner electrode (the outermost two are
grounded). Examples get their own seed stream spawned from the dataset seed,
so any subset can be regenerated independently.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from photonic_graybox.chip import (
    ChipParams,
    MeasurementTrace,
    VoltageSequence,
    n_channels,
    simulate_samples,
)
from photonic_graybox.errors import ContractViolation

FORMAT_MAGIC = b"PGDS"
FORMAT_VERSION = 1
AMPLITUDE_LIMIT = 5.0


@dataclass(frozen=True)
class PulseSpec:
    t_start: float
    duration: float
    amplitudes: np.ndarray

    def check(self, horizon: float):
        a = np.asarray(self.amplitudes)
        if self.t_start < 0 or self.duration < 0 or self.t_start + self.duration > horizon + 1e-12:
            raise ContractViolation("pulse window outside the horizon")
        if a[0] != 0 or a[-1] != 0:
            raise ContractViolation("outer electrodes must stay grounded")
        if np.any(np.abs(a) > AMPLITUDE_LIMIT):
            raise ContractViolation("pulse amplitude beyond 5 V")


@dataclass
class Example:
    voltages: VoltageSequence
    trace: MeasurementTrace


@dataclass
class Dataset:
    voltages: np.ndarray  # (N, T, 2n) volts
    traces: np.ndarray  # (N, T, channels)
    split: str
    seed: int
    mode: str
    dt: float
    horizon: float
    n: int
    chip_digest: str = ""
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self):
        return len(self.voltages)

    @property
    def examples(self) -> list:
        return [Example(VoltageSequence(self.dt, v), MeasurementTrace(self.dt, self.mode, y))
                for v, y in zip(self.voltages, self.traces)]

    def header(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "mode": self.mode,
            "n": self.n,
            "dt": self.dt,
            "horizon": self.horizon,
            "seed": self.seed,
            "chip_params_hash": self.chip_digest,
            "split": self.split,
            "count": len(self),
            "steps": int(self.voltages.shape[1]) if len(self) else 0,
            "channels": int(self.traces.shape[2]) if len(self) else n_channels(self.n, self.mode),
            "indices": [int(i) for i in self.indices],
        }


def steps_for(horizon: float, dt: float) -> int:
    steps = int(round(horizon / dt))
    if steps < 1 or abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ContractViolation(f"dt={dt} does not divide horizon={horizon}")
    return steps


def gen_pulse(rng: np.random.Generator, horizon: float, n: int) -> PulseSpec:
    """Draw one synchronized square pulse inside ``[0, horizon]``."""
    if horizon <= 0:
        raise ContractViolation("horizon must be positive")
    t_start = rng.uniform(0.0, horizon)
    duration = rng.uniform(0.0, horizon - t_start)
    amplitudes = np.zeros(2 * n)
    amplitudes[1:-1] = rng.uniform(-AMPLITUDE_LIMIT, AMPLITUDE_LIMIT, size=2 * n - 2)
    return PulseSpec(t_start, duration, amplitudes)


def render(spec: PulseSpec, dt: float, horizon: float) -> VoltageSequence:
    """Sample the pulse on the grid ``t_k = k dt``; active for
    ``t_start <= t_k < t_start + duration``."""
    steps = steps_for(horizon, dt)
    tol = 1e-9
    k0 = math.ceil(spec.t_start / dt - tol)
    k1 = math.ceil((spec.t_start + spec.duration) / dt - tol)
    k0, k1 = max(0, min(k0, steps)), max(0, min(k1, steps))
    samples = np.zeros((steps, len(spec.amplitudes)))
    if k1 > k0:
        samples[k0:k1] = spec.amplitudes
    return VoltageSequence(dt, samples)


def example_rngs(seed: int, count: int) -> list:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def generate_voltages(count: int, params: ChipParams, seed: int, horizon: float, dt: float):
    return np.stack([
        render(gen_pulse(rng, horizon, params.n), dt, horizon).samples
        for rng in example_rngs(seed, count)
    ]) if count else np.zeros((0, steps_for(horizon, dt), 2 * params.n))


def simulate_batch(voltages, params: ChipParams, mode: str, dt: float, chunk: int = 128):
    out = []
    for start in range(0, len(voltages), chunk):
        try:
            channels, _ = simulate_samples(voltages[start:start + chunk], dt, params, mode)
        except Exception as exc:
            raise RuntimeError(f"simulation failed in examples {start}..{start + chunk - 1}: {exc}") from exc
        out.append(channels)
    return np.concatenate(out) if out else np.zeros((0,) + voltages.shape[1:2] + (n_channels(params.n, mode),))


def build_dataset(count: int, split_ratio: float, params: ChipParams, mode: str = "classical",
                  seed: int = 0, horizon: float = 200.0, dt: float = 0.2):
    """Generate, simulate and split ``count`` examples.

    The first ``ceil(split_ratio * count)`` examples form the training set.
    """
    if count < 2:
        raise ContractViolation("need at least two examples")
    if not 0.0 < split_ratio < 1.0:
        raise ContractViolation("split ratio must lie in (0, 1)")
    voltages = generate_voltages(count, params, seed, horizon, dt)
    traces = simulate_batch(voltages, params, mode, dt)
    return split_dataset(voltages, traces, split_ratio, params, mode, seed, horizon, dt)


def split_dataset(voltages, traces, split_ratio: float, params: ChipParams, mode: str,
                  seed: int, horizon: float, dt: float):
    count = len(voltages)
    n_train = min(count - 1, math.ceil(split_ratio * count - 1e-9))
    common = dict(seed=seed, mode=mode, dt=dt, horizon=horizon, n=params.n,
                  chip_digest=params.digest())
    idx = np.arange(count)
    train = Dataset(voltages[:n_train], traces[:n_train], "train", indices=idx[:n_train], **common)
    test = Dataset(voltages[n_train:], traces[n_train:], "test", indices=idx[n_train:], **common)
    return train, test


def zero_voltage_readings(params: ChipParams, mode: str = "classical") -> np.ndarray:
    """Static readings with every electrode grounded: ``n^2`` (or ``2n^2``) values."""
    channels, _ = simulate_samples(np.zeros((1, 2 * params.n)), 1.0, params, mode)
    return channels[0]


# -- persistence ----------------------------------------------------------------


def save_dataset(ds: Dataset, path) -> Path:
    """Write the binary container and a ``.json`` sidecar next to it.

    Container: magic, u32 version, u32 header length, header JSON, then one
    record per example with little-endian float32 voltages (T x 2n) followed
    by the trace (T x channels), both row-major.
    """
    path = Path(path)
    header = ds.header()
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for v, y in zip(ds.voltages, ds.traces):
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(y, dtype="<f4").tobytes())
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")
    return path


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(4) != FORMAT_MAGIC:
            raise ContractViolation(f"{path} is not a dataset container")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ContractViolation(f"unsupported dataset version {version}")
        h = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    count, steps, ch, n = h["count"], h["steps"], h["channels"], h["n"]
    rec = steps * (2 * n + ch)
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != count * rec:
        raise ContractViolation(f"{path}: truncated payload")
    data = data.reshape(count, rec)
    volts = data[:, : steps * 2 * n].reshape(count, steps, 2 * n).astype(np.float64)
    traces = data[:, steps * 2 * n:].reshape(count, steps, ch).astype(np.float64)
    return Dataset(volts, traces, h["split"], h["seed"], h["mode"], h["dt"], h["horizon"], n,
                   h["chip_params_hash"], np.asarray(h["indices"], dtype=int))
