"""Control-voltage synthesis through a frozen graybox model.

A fresh GRU + dense front-end turns a target schedule (one target gate per
time step) into ``2n - 2`` bounded electrode voltages; the outer two
electrodes are pinned to ground. The voltages drive a frozen copy of the
trained model without its loss layer, and the front-end is optimized so the
model's ideal outputs match those of the target gates. Voltages are read off
the front-end afterwards.
"""

from __future__ import annotations

import ast
import csv
import logging
import math
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from photonic_graybox import autodiff as ad
from photonic_graybox import nn
from photonic_graybox.chip import ChipParams, VoltageSequence, readings_from_unitaries, simulate_samples
from photonic_graybox.errors import ContractViolation, TrainingDivergence
from photonic_graybox.linalg import mat_exp_unitary, mat_log_unitary, unitarity_error
from photonic_graybox.metrics import infidelity_batch
from photonic_graybox.model import ModelState, PredictionBundle, forward, forward_tensors

log = logging.getLogger(__name__)

BOUNDARY_GUARD = 2  # samples excluded on each side of a segment edge


# -- gates --------------------------------------------------------------------


def _pair(name: str, n: int, symbol=""):
    i, j = int(name[0]) - 1, int(name[1]) - 1
    if not (0 <= i < n and 0 <= j < n and i != j):
        raise ContractViolation(f"gate {symbol or name!r}: indices {name} out of range for n={n}")
    return i, j


def gate_x(i: int, j: int, n: int) -> np.ndarray:
    u = np.eye(n, dtype=complex)
    u[[i, j]] = u[[j, i]]
    return u


def gate_h(i: int, j: int, n: int) -> np.ndarray:
    u = np.eye(n, dtype=complex)
    s = 1.0 / math.sqrt(2.0)
    u[i, i], u[i, j], u[j, i], u[j, j] = s, s, s, -s
    return u


def gate_z(i: int, j: int, n: int) -> np.ndarray:
    u = np.eye(n, dtype=complex)
    u[j, j] = -1.0
    return u


_ANGLE_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
              ast.Div: operator.truediv, ast.USub: operator.neg, ast.UAdd: operator.pos}


def parse_angle(text: str) -> float:
    """Evaluate a numeric angle such as ``pi/4`` or ``-0.1``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _ANGLE_OPS:
            return _ANGLE_OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _ANGLE_OPS:
            return _ANGLE_OPS[type(node.op)](ev(node.operand))
        raise ContractViolation(f"cannot parse angle {text!r}")

    try:
        return ev(ast.parse(str(text).strip(), mode="eval"))
    except SyntaxError as exc:
        raise ContractViolation(f"cannot parse angle {text!r}") from exc


_GATE_RE = re.compile(r"^(I|X|H|Z|RX|RZ)(\d\d)?(?:\((.+)\))?$")


def gate(symbol, n: int = 3) -> np.ndarray:
    """Unitary for a gate symbol: ``I``, ``X13``, ``H13``, ``X12``, ``Z13``,
    ``RX13(theta)`` = exp(-i theta X13), ``RZ13(theta)`` = exp(-i theta Z13).
    Two-digit suffixes are 1-based waveguide indices, so any pair works.
    A list of ``2 n^2`` numbers is read as an inline matrix: real parts
    row-major, then imaginary parts.
    """
    if isinstance(symbol, (list, tuple)):
        vals = np.asarray(symbol, dtype=float)
        if vals.size != 2 * n * n:
            raise ContractViolation(f"inline unitary needs {2 * n * n} values, got {vals.size}")
        u = (vals[: n * n] + 1j * vals[n * n:]).reshape(n, n)
    else:
        text = str(symbol).replace(" ", "")
        m = _GATE_RE.match(text)
        if m is None:
            raise ContractViolation(f"unknown gate symbol {symbol!r}")
        kind, idx, arg = m.groups()
        if kind == "I":
            if idx or arg:
                raise ContractViolation(f"unknown gate symbol {symbol!r}")
            return np.eye(n, dtype=complex)
        if idx is None:
            raise ContractViolation(f"gate {symbol!r} needs a waveguide pair, e.g. {kind}13")
        i, j = _pair(idx, n, symbol)
        if kind in ("RX", "RZ"):
            if arg is None:
                raise ContractViolation(f"gate {symbol!r} needs an angle")
            gen = gate_x(i, j, n) if kind == "RX" else gate_z(i, j, n)
            try:
                theta = parse_angle(arg)
            except ContractViolation as exc:
                raise ContractViolation(f"gate {symbol!r}: {exc}") from exc
            u = mat_exp_unitary(theta * gen, 1.0)
        elif arg is not None:
            raise ContractViolation(f"gate {symbol!r} takes no angle")
        else:
            u = {"X": gate_x, "H": gate_h, "Z": gate_z}[kind](i, j, n)
    if unitarity_error(u) > 1e-10:
        raise ContractViolation(f"gate {symbol!r} is not unitary")
    return u


# -- schedules ----------------------------------------------------------------


def snap(t: float, dt: float) -> int:
    """Nearest sample index of time ``t``; exact halves round down."""
    return int(math.ceil(t / dt - 0.5 - 1e-9))


@dataclass
class Segment:
    start: float
    end: float
    unitary: np.ndarray
    label: str = ""


@dataclass
class TargetSchedule:
    dt: float
    horizon: float
    segments: list = field(default_factory=list)
    n: int = 3
    default: np.ndarray | None = None

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise ContractViolation("dt and horizon must be positive")
        if self.default is None:
            self.default = np.eye(self.n, dtype=complex)
        spans = sorted((s.start, s.end) for s in self.segments)
        for s in self.segments:
            if not (0 <= s.start < s.end <= self.horizon + 1e-9):
                raise ContractViolation(f"segment [{s.start}, {s.end}) outside [0, {self.horizon}]")
            if s.unitary.shape != (self.n, self.n) or unitarity_error(s.unitary) > 1e-10:
                raise ContractViolation(f"segment {s.label or (s.start, s.end)} is not a unitary")
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ContractViolation(f"segments [{a0}, {a1}) and [{b0}, {b1}) overlap")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps) * self.dt

    def step_ranges(self):
        return [(snap(s.start, self.dt), min(snap(s.end, self.dt), self.steps)) for s in self.segments]

    def unitaries(self) -> np.ndarray:
        """Target gate at every sample, ``(T, n, n)``."""
        out = np.broadcast_to(self.default, (self.steps, self.n, self.n)).copy()
        for seg, (k0, k1) in zip(self.segments, self.step_ranges()):
            out[k0:k1] = seg.unitary
        return out

    def boundary_mask(self, guard: int = BOUNDARY_GUARD) -> np.ndarray:
        """True for steady samples: those at least ``guard + 1`` samples
        from any segment edge (edges at the first sample of a segment and
        the first sample after it)."""
        keep = np.ones(self.steps, dtype=bool)
        for k0, k1 in self.step_ranges():
            for edge in (k0, k1):
                keep[max(0, edge - guard):min(self.steps, edge + guard + 1)] = False
        return keep

    @classmethod
    def from_dict(cls, d: dict, dt: float | None = None) -> "TargetSchedule":
        d = dict(d)
        n = int(d.get("n", 3))
        segs = []
        for raw in d.get("segments", []):
            if isinstance(raw, dict):
                start, end, sym = raw["start"], raw["end"], raw["gate"]
            else:
                start, end, sym = raw
            segs.append(Segment(float(start), float(end), gate(sym, n), str(sym)))
        return cls(dt=float(dt if dt is not None else d.get("dt", 0.2)),
                   horizon=float(d["horizon"]), segments=segs, n=n)

    @classmethod
    def from_file(cls, path, dt: float | None = None) -> "TargetSchedule":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh), dt)


def schedule_to_inputs(sched: TargetSchedule, kind: str, l: float) -> np.ndarray:  # noqa: E741
    """Front-end inputs, ``(T, d)``.

    ``"hamiltonian"``: real upper triangle of ``H = (i/l) log U`` per step,
    times ``l`` so entries are phases of order one. ``"unitary"``: real then
    imaginary parts of ``U``, row-major (``2 n^2`` values).
    """
    u = sched.unitaries()
    n = sched.n
    if kind == "unitary":
        flat = u.reshape(len(u), -1)
        return np.concatenate([flat.real, flat.imag], axis=1)
    if kind != "hamiltonian":
        raise ContractViolation(f"unknown input kind {kind!r}")
    iu = np.triu_indices(n)
    cache = {}
    rows = np.empty((len(u), len(iu[0])))
    for t, ut in enumerate(u):
        key = ut.tobytes()
        if key not in cache:
            cache[key] = (mat_log_unitary(ut, l) * l)[iu].real
        rows[t] = cache[key]
    return rows


# -- controller ---------------------------------------------------------------


@dataclass
class ControllerConfig:
    hidden: int = 60
    v_max: float = 10.0
    input_kind: str | None = None  # None: hamiltonian (classical), unitary (quantum)
    iterations: int = 500
    lr: float = 1e-2
    lr_final: float | None = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    seed: int = 0
    precision: str = "float64"


@dataclass
class Controller:
    config: ControllerConfig
    model: ModelState
    gru: nn.GruWeights
    out_w: nn.Parameter
    out_b: nn.Parameter
    input_kind: str
    history: list = field(default_factory=list)

    def parameters(self):
        return [*self.gru.parameters(), self.out_w, self.out_b]


def build_controller(cfg: ControllerConfig, frozen_model: ModelState) -> Controller:
    if not (frozen_model.stage1_done and frozen_model.stage2_done):
        raise ContractViolation("controller needs a model with both training stages done")
    mc = frozen_model.config
    frozen_model.freeze_all()
    kind = cfg.input_kind or ("hamiltonian" if mc.mode == "classical" else "unitary")
    d_in = mc.n * (mc.n + 1) // 2 if kind == "hamiltonian" else 2 * mc.n * mc.n
    rng = np.random.default_rng(cfg.seed)
    n_out = 2 * mc.n - 2
    return Controller(
        config=cfg,
        model=frozen_model,
        gru=nn.GruWeights.init(d_in, cfg.hidden, rng, prefix="ctrl.gru"),
        out_w=nn.Parameter(nn.glorot_uniform(rng, cfg.hidden, n_out).T.copy(), "ctrl.out.w"),
        out_b=nn.Parameter(np.zeros(n_out), "ctrl.out.b"),
        input_kind=kind,
    )


def emit_voltages(ctrl: Controller, inputs) -> ad.Tensor:
    """Front-end pass: ``(B, T, d)`` inputs -> ``(B, T, 2n)`` voltages with
    the first and last electrode fixed at exactly zero."""
    hidden = nn.gru_forward(inputs, ctrl.gru, dtype=np.dtype(ctrl.config.precision))
    inner = nn.dense_timedistributed(hidden, ctrl.out_w, ctrl.out_b,
                                     lambda y: nn.scaled_tanh(y, ctrl.config.v_max))
    shape = inner.shape[:-1] + (inner.shape[-1] + 2,)
    return ad.scatter(inner, shape, (Ellipsis, slice(1, -1)))


def target_outputs(sched: TargetSchedule, mode: str) -> np.ndarray:
    return readings_from_unitaries(sched.unitaries(), mode, None)


@dataclass
class ControlSolution:
    voltages: VoltageSequence
    predicted: PredictionBundle
    infidelity_trace: np.ndarray
    history: list
    final_mse: float


def solve(ctrl: Controller, sched: TargetSchedule, iterations: int | None = None,
          callback=None) -> ControlSolution:
    """Optimize the front-end so the frozen model reproduces ``sched``."""
    cfg = ctrl.config
    mc = ctrl.model.config
    if sched.n != mc.n:
        raise ContractViolation(f"schedule is for n={sched.n}, model has n={mc.n}")
    iterations = cfg.iterations if iterations is None else iterations
    x = schedule_to_inputs(sched, ctrl.input_kind, mc.l)[None]
    target = target_outputs(sched, mc.mode)[None]
    params = ctrl.parameters()
    state = {}
    for it in range(iterations):
        frac = it / max(1, iterations - 1)
        lr = cfg.lr if cfg.lr_final is None else cfg.lr * (cfg.lr_final / cfg.lr) ** frac
        for p in params:
            p.grad = None
        volts = emit_voltages(ctrl, x)
        pred = forward_tensors(volts, ctrl.model, with_loss=False)[3]
        loss = ad.mse_loss(pred, target)
        loss.backward()
        value = float(loss.data)
        ctrl.history.append(value)
        if not np.isfinite(value):
            raise TrainingDivergence(f"controller loss became {value} at iteration {it}", it, ctrl.history)
        for p in params:
            nn.rmsprop_step(p, p.grad, state, lr, cfg.rho, cfg.eps)
        if callback is not None:
            callback(it, value)
    volts = emit_voltages(ctrl, x).data[0]
    bundle = forward(volts, ctrl.model)
    final = float(np.mean((_ideal_outputs(bundle, mc.mode) - target[0]) ** 2))
    infid = infidelity_batch(bundle.u, sched.unitaries(), check=False)
    return ControlSolution(VoltageSequence(sched.dt, volts), bundle, infid, list(ctrl.history), final)


def _ideal_outputs(bundle: PredictionBundle, mode: str) -> np.ndarray:
    return readings_from_unitaries(bundle.u, mode, None)


@dataclass
class VerificationReport:
    infidelity_sim: np.ndarray  # simulator unitary vs target, per step
    infidelity_model: np.ndarray  # model unitary vs target, per step
    model_vs_sim: np.ndarray  # model unitary vs simulator unitary, per step
    steady: np.ndarray  # mask of steps away from segment edges
    mse_sim: float  # simulator ideal outputs vs target outputs
    mse_model: float
    output_divergence: float  # model vs simulator ideal outputs

    @property
    def worst_steady_sim(self) -> float:
        return float(self.infidelity_sim[self.steady].max(initial=0.0))

    @property
    def worst_steady_model(self) -> float:
        return float(self.infidelity_model[self.steady].max(initial=0.0))

    def summary(self) -> dict:
        return {
            "worst_steady_infidelity_sim": self.worst_steady_sim,
            "worst_steady_infidelity_model": self.worst_steady_model,
            "mean_steady_infidelity_sim": _mean(self.infidelity_sim[self.steady]),
            "mean_steady_infidelity_model": _mean(self.infidelity_model[self.steady]),
            "mse_sim": self.mse_sim,
            "mse_model": self.mse_model,
            "model_vs_sim_output_mse": self.output_divergence,
        }


def _mean(x) -> float:
    return float(x.mean()) if x.size else 0.0


def verify(sol: ControlSolution, params: ChipParams, sched: TargetSchedule,
           mode: str = "classical") -> VerificationReport:
    """Drive the ground-truth simulator with the solved voltages."""
    _, u_sim = simulate_samples(sol.voltages.samples, sol.voltages.dt, params, mode)
    targets = sched.unitaries()
    ideal_target = readings_from_unitaries(targets, mode, None)
    ideal_sim = readings_from_unitaries(u_sim, mode, None)
    ideal_model = readings_from_unitaries(sol.predicted.u, mode, None)
    return VerificationReport(
        infidelity_sim=infidelity_batch(u_sim, targets, check=False),
        infidelity_model=infidelity_batch(sol.predicted.u, targets, check=False),
        model_vs_sim=infidelity_batch(sol.predicted.u, u_sim, check=False),
        steady=sched.boundary_mask(),
        mse_sim=float(np.mean((ideal_sim - ideal_target) ** 2)),
        mse_model=float(np.mean((ideal_model - ideal_target) ** 2)),
        output_divergence=float(np.mean((ideal_model - ideal_sim) ** 2)),
    )


def write_solution_csv(path, sol: ControlSolution, report: VerificationReport | None = None) -> Path:
    """Columns: time (ms), electrode voltages (V), model infidelity, and the
    simulator infidelity when a report is given."""
    path = Path(path)
    v = sol.voltages.samples
    header = ["time_ms"] + [f"v{k}_V" for k in range(v.shape[1])] + ["infidelity_model"]
    if report is not None:
        header += ["infidelity_sim", "steady"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(len(v)):
            row = [f"{t * sol.voltages.dt:.6g}"] + [f"{x:.9g}" for x in v[t]]
            row.append(f"{sol.infidelity_trace[t]:.9g}")
            if report is not None:
                row += [f"{report.infidelity_sim[t]:.9g}", int(report.steady[t])]
            w.writerow(row)
    return path
