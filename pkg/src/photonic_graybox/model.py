"""Graybox model of the chip.

Blackbox part: a GRU followed by a time-distributed linear layer maps the
control voltages to the free parameters of the interaction Hamiltonian.
Whitebox part: Hamiltonian assembly (plus the learned zero-voltage
Hamiltonian), quantum evolution ``exp(-i H l)`` applied to every basis input
state, and measurement (lossy powers, or Mach-Zehnder readings).

Head outputs and ``h0_params`` are dimensionless phases; the Hamiltonian in
rad/m is obtained by dividing by the chip length.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from photonic_graybox import autodiff as ad
from photonic_graybox import nn
from photonic_graybox.autodiff import Tensor
from photonic_graybox.errors import ContractViolation, TrainingDivergence

log = logging.getLogger(__name__)


def head_width(n: int, mode: str) -> int:
    if mode == "classical":
        return n * (n + 1) // 2
    if mode == "quantum":
        return n * n
    raise ContractViolation(f"unknown mode {mode!r}")


@dataclass
class GrayboxConfig:
    n: int = 3
    hidden: int = 60
    mode: str = "classical"
    l: float = 3.6e-2  # noqa: E741
    input_scale: float = 5.0  # volts mapped to unit GRU input
    output_scale: float = 1.0  # radians per unit head output
    head_init: str = "glorot"  # "zero" starts stage 2 at the static fit
    seed: int = 0
    precision: str = "float64"  # working precision of the GRU recurrence

    def __post_init__(self):
        head_width(self.n, self.mode)
        if self.hidden < 1 or self.l <= 0 or self.input_scale <= 0 or self.output_scale <= 0:
            raise ContractViolation("invalid graybox configuration")
        if self.head_init not in ("glorot", "zero"):
            raise ContractViolation(f"unknown head_init {self.head_init!r}")
        if self.precision not in ("float32", "float64"):
            raise ContractViolation(f"unsupported precision {self.precision!r}")

    @property
    def d_in(self) -> int:
        return 2 * self.n

    @property
    def head(self) -> int:
        return head_width(self.n, self.mode)

    @property
    def channels(self) -> int:
        return self.n * self.n * (1 if self.mode == "classical" else 2)


def construct_hamiltonian(head_out, h0_params=None, mode: str = "classical", n: int | None = None,
                          scale: float = 1.0) -> Tensor:
    """Assemble Hermitian matrices from head outputs (last axis).

    Classical: the ``n(n+1)/2`` values fill the upper triangle (row-major,
    diagonal included) and the matrix is summed with its transpose, so the
    diagonal is doubled. Quantum: the first ``n(n+1)/2`` values are the real
    upper triangle, the remaining ``n(n-1)/2`` fill the strict lower triangle
    (row-major) and are multiplied by ``i``; the matrix is summed with its
    Hermitian conjugate. ``h0_params`` is materialized with the same recipe
    and added. Everything is finally multiplied by ``scale``.
    """
    head_out = ad.as_tensor(head_out)
    k = head_out.shape[-1]
    if n is None:
        n = int(round((math.sqrt(8 * k + 1) - 1) / 2)) if mode == "classical" else int(round(math.sqrt(k)))
    if k != head_width(n, mode):
        raise ContractViolation(f"head width {k} does not match mode {mode!r} with n={n}")
    m = _triangles(head_out, n, mode)
    if h0_params is not None:
        h0_params = ad.as_tensor(h0_params)
        if h0_params.shape != (k,):
            raise ContractViolation(f"h0_params must have shape {(k,)}")
        m = m + _triangles(h0_params, n, mode)
    h = m + ad.hermitian_conj(m)
    return ad.scale(h, scale) if scale != 1.0 else h


def _triangles(vals: Tensor, n: int, mode: str) -> Tensor:
    lead = vals.shape[:-1]
    iu = np.triu_indices(n)
    nu = len(iu[0])
    full = lead + (n, n)
    idx_u = (Ellipsis,) + iu
    if mode == "classical":
        upper = ad.scatter(vals, full, idx_u)
        return ad.complex_from(upper)
    il = np.tril_indices(n, -1)
    upper = ad.scatter(vals[..., :nu], full, idx_u)
    lower = ad.scatter(vals[..., nu:], full, (Ellipsis,) + il)
    return ad.complex_from(upper, lower)


def lossy_powers(powers: Tensor, eps: Tensor) -> Tensor:
    """Coupling-loss layer on the last axis (output waveguide)."""
    num = powers * eps
    return num * ad.reciprocal(num.sum(axis=-1, keepdims=True))


def measure(u: Tensor, mode: str, eps: Tensor | None = None) -> Tensor:
    """Turn ``(..., n, n)`` unitaries into ``(..., channels)`` readings."""
    alpha = ad.swapaxes(u, -1, -2)  # [..., input m, output k]
    lead = u.shape[:-2]
    if mode == "classical":
        p = ad.abs2(alpha)
        if eps is not None:
            p = lossy_powers(p, eps)
        return p.reshape(lead + (-1,))
    p0 = ad.scale(ad.abs2(alpha + 1.0), 0.25)
    p_half = ad.scale(ad.abs2(alpha + 1j), 0.25)
    return ad.concatenate([p0, p_half], axis=-1).reshape(lead + (-1,))


@dataclass
class PredictionBundle:
    h_interaction: np.ndarray  # (T, n, n) rad/m
    h_total: np.ndarray
    u: np.ndarray
    ideal_outputs: np.ndarray  # (T, n, n) or (T, n, 2n): per input state, before loss
    measured_outputs: np.ndarray  # (T, channels)


@dataclass
class ModelState:
    config: GrayboxConfig
    gru: nn.GruWeights
    head_w: nn.Parameter
    head_b: nn.Parameter
    h0_params: nn.Parameter
    eps_params: nn.Parameter
    stage1_done: bool = False
    stage2_done: bool = False
    chip_digest: str = ""
    history: dict = field(default_factory=dict)
    opt_state: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: GrayboxConfig, rng: np.random.Generator | None = None) -> "ModelState":
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        k = config.head
        gru = nn.GruWeights.init(config.d_in, config.hidden, rng, prefix="model.gru")
        head_w = nn.glorot_uniform(rng, config.hidden, k).T.copy()
        if config.head_init == "zero":
            head_w[:] = 0.0
        return cls(
            config=config,
            gru=gru,
            head_w=nn.Parameter(head_w, "model.head.w"),
            head_b=nn.Parameter(np.zeros(k), "model.head.b"),
            h0_params=nn.Parameter(np.zeros(k), "model.h0"),
            eps_params=nn.Parameter(np.zeros(config.n), "model.log_eps"),
        )

    def blackbox_parameters(self) -> list:
        return [*self.gru.parameters(), self.head_w, self.head_b]

    def whitebox_parameters(self) -> list:
        return [self.h0_params, self.eps_params]

    def parameters(self) -> list:
        return self.blackbox_parameters() + self.whitebox_parameters()

    def freeze_all(self):
        for p in self.parameters():
            p.freeze()

    @property
    def scale(self) -> float:
        return 1.0 / self.config.l

    def eps(self) -> Tensor:
        return ad.exp(self.eps_params)

    def eps_normalized(self) -> np.ndarray:
        e = np.exp(self.eps_params.data)
        return e / e.max()

    def h0(self) -> np.ndarray:
        """Learned zero-voltage Hamiltonian in rad/m."""
        zero = Tensor(np.zeros(self.config.head))
        return construct_hamiltonian(zero, self.h0_params.data, self.config.mode, self.config.n,
                                     self.scale).data

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.parameters():
            h.update(p.name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()[:16]

    # -- persistence --------------------------------------------------------

    def header(self) -> dict:
        c = self.config
        return {
            "kind": "graybox",
            "mode": c.mode, "n": c.n, "hidden": c.hidden, "l": c.l,
            "input_scale": c.input_scale, "output_scale": c.output_scale,
            "head_init": c.head_init, "seed": c.seed, "precision": c.precision,
            "stage1_done": self.stage1_done, "stage2_done": self.stage2_done,
            "chip_digest": self.chip_digest,
            "history": {k: v for k, v in self.history.items()},
        }

    def save(self, path):
        """Parameters plus optimizer accumulators (``opt/<name>``) so stage 2
        can resume where it stopped."""
        tensors = {p.name: p.data for p in self.parameters()}
        tensors.update({f"opt/{k}": v for k, v in self.opt_state.items()})
        nn.save_tensors(path, tensors, self.header())

    @classmethod
    def load(cls, path) -> "ModelState":
        header, tensors = nn.load_tensors(path)
        if header.get("kind") != "graybox":
            raise ContractViolation(f"{path} is not a graybox checkpoint")
        cfg = GrayboxConfig(n=header["n"], hidden=header["hidden"], mode=header["mode"],
                            l=header["l"], input_scale=header["input_scale"],
                            output_scale=header.get("output_scale", 1.0),
                            head_init=header.get("head_init", "glorot"), seed=header["seed"],
                            precision=header.get("precision", "float64"))
        state = cls.init(cfg)
        opt = {k[4:]: v for k, v in tensors.items() if k.startswith("opt/")}
        nn.load_into(state.parameters(), {k: v for k, v in tensors.items() if not k.startswith("opt/")})
        state.opt_state = opt
        state.history = dict(header.get("history", {}))
        state.stage1_done = header["stage1_done"]
        state.stage2_done = header["stage2_done"]
        state.chip_digest = header.get("chip_digest", "")
        return state


# -- forward passes -----------------------------------------------------------


def blackbox(v, model: ModelState) -> Tensor:
    """Voltages ``(B, T, 2n)`` -> head outputs ``(B, T, k)``."""
    x = ad.scale(ad.as_tensor(v), 1.0 / model.config.input_scale)
    hidden = nn.gru_forward(x, model.gru, dtype=np.dtype(model.config.precision))
    head = nn.dense_timedistributed(hidden, model.head_w, model.head_b)
    scale = model.config.output_scale
    return ad.scale(head, scale) if scale != 1.0 else head


def forward_tensors(v, model: ModelState, with_loss: bool = True):
    """Differentiable forward pass; returns ``(head, H, U, outputs)``."""
    cfg = model.config
    head = blackbox(v, model)
    h = construct_hamiltonian(head, model.h0_params, cfg.mode, cfg.n, model.scale)
    u = ad.expm_unitary(h, cfg.l)
    eps = model.eps() if (with_loss and cfg.mode == "classical") else None
    return head, h, u, measure(u, cfg.mode, eps)


def predict_outputs(v, model: ModelState, with_loss: bool = True) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    squeeze = v.ndim == 2
    out = forward_tensors(v[None] if squeeze else v, model, with_loss)[3].data
    return out[0] if squeeze else out


def forward(v, model: ModelState) -> PredictionBundle:
    """Run one voltage sequence ``(T, 2n)`` and expose every layer."""
    samples = v.samples if hasattr(v, "samples") else np.asarray(v, dtype=float)
    cfg = model.config
    head, h, u, measured = forward_tensors(samples[None], model)
    h_int = construct_hamiltonian(head, None, cfg.mode, cfg.n, model.scale).data[0]
    ideal = measure(u, cfg.mode, None).data[0]
    per_input = 2 * cfg.n if cfg.mode == "quantum" else cfg.n
    return PredictionBundle(
        h_interaction=h_int,
        h_total=h.data[0],
        u=u.data[0],
        ideal_outputs=ideal.reshape(-1, cfg.n, per_input),
        measured_outputs=measured.data[0],
    )


def static_forward(model: ModelState) -> Tensor:
    """Zero-voltage readings with the blackbox detached (stage-1 path)."""
    cfg = model.config
    zero = Tensor(np.zeros((1, cfg.head)))
    h = construct_hamiltonian(zero, model.h0_params, cfg.mode, cfg.n, model.scale)
    u = ad.expm_unitary(h, cfg.l)
    eps = model.eps() if cfg.mode == "classical" else None
    return measure(u, cfg.mode, eps)[0]


# -- training -----------------------------------------------------------------


@dataclass
class TrainSettings:
    iterations: int = 2000
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    batch_size: int | None = None  # None: full batch
    lr_final: float | None = None  # geometric decay target, None: constant
    log_every: int = 100
    seed: int = 0


def _lr_at(settings: TrainSettings, it: int) -> float:
    if settings.lr_final is None or settings.iterations <= 1:
        return settings.lr
    frac = it / (settings.iterations - 1)
    return settings.lr * (settings.lr_final / settings.lr) ** frac


def _check_finite(loss: float, it: int, history: Sequence[float]):
    if not np.isfinite(loss):
        raise TrainingDivergence(f"loss became {loss} at iteration {it}", it, history)


def train_stage1(model: ModelState, static_data, iterations: int = 3000,
                 settings: TrainSettings | None = None, restarts: int = 4) -> ModelState:
    """Fit the zero-voltage Hamiltonian and loss coefficients.

    ``static_data`` is the flat vector of zero-voltage readings. Several
    seeded starting points are tried and the best fit is kept, since the map
    from Hamiltonian to powers is periodic and has spurious minima.
    """
    cfg = model.config
    target = np.asarray(static_data, dtype=float).reshape(-1)
    if target.shape != (cfg.channels,):
        raise ContractViolation(f"expected {cfg.channels} static readings, got {target.shape}")
    settings = settings or TrainSettings(iterations=iterations, lr=2e-2, lr_final=1e-5)
    settings.iterations = iterations
    for p in model.blackbox_parameters():
        p.freeze()
    for p in model.whitebox_parameters():
        p.unfreeze()
    if cfg.mode != "classical":
        model.eps_params.freeze()
    if iterations == 0:
        return model

    rng = np.random.default_rng(settings.seed)
    start_h0 = model.h0_params.data.copy()
    start_eps = model.eps_params.data.copy()
    best = (np.inf, start_h0, start_eps, [])
    for attempt in range(max(1, restarts)):
        if attempt == 0:
            model.h0_params.data[:] = start_h0
        else:
            model.h0_params.data[:] = rng.uniform(-2.0, 2.0, size=cfg.head)
        model.eps_params.data[:] = start_eps
        params = [p for p in model.whitebox_parameters() if p.trainable]
        state = {}
        history = []
        for it in range(iterations):
            for p in params:
                p.grad = None
            loss = ad.mse_loss(static_forward(model), target)
            loss.backward()
            value = float(loss.data)
            history.append(value)
            _check_finite(value, it, history)
            lr = _lr_at(settings, it)
            for p in params:
                nn.rmsprop_step(p, p.grad, state, lr, settings.rho, settings.eps)
        final = float(ad.mse_loss(static_forward(model), target).data)
        log.info("stage 1 attempt %d: static MSE %.3e", attempt, final)
        if final < best[0]:
            best = (final, model.h0_params.data.copy(), model.eps_params.data.copy(), history)
        if final < 1e-12:
            break
    model.h0_params.data[:] = best[1]
    model.eps_params.data[:] = best[2]
    # only the direction of eps is identifiable; pin the largest at 1
    model.eps_params.data -= model.eps_params.data.max()
    for p in model.whitebox_parameters():
        p.freeze()
    model.stage1_done = True
    model.history["stage1"] = best[3]
    model.history["stage1_mse"] = best[0]
    return model


def _batches(n_examples: int, batch_size: int | None, rng: np.random.Generator):
    if batch_size is None or batch_size >= n_examples:
        return [slice(None)]
    order = rng.permutation(n_examples)
    return [order[i:i + batch_size] for i in range(0, n_examples, batch_size)]


def train_stage2(model: ModelState, voltages, targets, settings: TrainSettings | None = None,
                 callback=None):
    """Fit the blackbox on voltage/trace pairs; whitebox parameters stay frozen.

    ``voltages`` is ``(N, T, 2n)`` and ``targets`` ``(N, T, channels)``.
    Returns the model and the per-iteration loss history.
    """
    if not model.stage1_done:
        raise ContractViolation("stage 2 requires a completed stage 1")
    settings = settings or TrainSettings()
    voltages = np.asarray(voltages, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if targets.shape[-1] != model.config.channels:
        raise ContractViolation(f"targets need {model.config.channels} channels")
    for p in model.whitebox_parameters():
        p.freeze()
    params = model.blackbox_parameters()
    for p in params:
        p.unfreeze()
    state = model.opt_state
    rng = np.random.default_rng(settings.seed)
    history = model.history.setdefault("stage2", [])
    for it in range(settings.iterations):
        lr = _lr_at(settings, it)
        for idx in _batches(len(voltages), settings.batch_size, rng):
            for p in params:
                p.grad = None
            pred = forward_tensors(voltages[idx], model)[3]
            loss = ad.mse_loss(pred, targets[idx])
            loss.backward()
            value = float(loss.data)
            _check_finite(value, len(history), history)
            for p in params:
                nn.rmsprop_step(p, p.grad, state, lr, settings.rho, settings.eps)
        history.append(value)
        if settings.log_every and (it % settings.log_every == 0 or it == settings.iterations - 1):
            log.info("stage 2 iteration %d: loss %.4e (lr %.2e)", it, value, lr)
        if callback is not None:
            callback(it, value)
    model.stage2_done = True
    return model, history


def evaluate(model: ModelState, voltages, targets, batch: int = 256):
    """Aggregate MSE and per-example predictions on a held-out set."""
    voltages = np.asarray(voltages, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(voltages) == 0:
        raise ContractViolation("cannot evaluate on an empty set")
    preds = np.concatenate([predict_outputs(voltages[i:i + batch], model)
                            for i in range(0, len(voltages), batch)])
    mse = float(np.mean((preds - targets) ** 2))
    return mse, preds
