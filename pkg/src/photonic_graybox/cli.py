"""Command-line front-end: dataset generation, training, prediction,
control synthesis and evaluation.

Configuration is layered: the bundled desk or paper preset, then the file
given with ``--config``, then ``PGBX_<SECTION>__<KEY>`` environment variables
(values parsed as YAML), then explicit flags.

Exit codes: 0 success, 2 configuration or parse error, 3 I/O error,
4 training divergence, 5 missing artifact.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from photonic_graybox import chip as chipmod
from photonic_graybox import controller as ctl
from photonic_graybox import dataset as dsmod
from photonic_graybox import model as mdl
from photonic_graybox.errors import ContractViolation, ReconstructionError, TrainingDivergence
from photonic_graybox.metrics import infidelity_batch

log = logging.getLogger("photonic_graybox")

ENV_PREFIX = "PGBX_"
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_MISSING = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


class MissingArtifact(Exception):
    pass


# -- configuration --------------------------------------------------------------


def data_path(name: str) -> Path:
    return Path(str(resources.files("photonic_graybox") / "data" / name))


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def env_overrides(environ=None) -> dict:
    """``PGBX_TRAIN__LR=3e-3`` -> ``{"train": {"lr": 0.003}}``."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        node = out
        for p in path[:-1]:
            node = node.setdefault(p, {})
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {key}={raw!r}") from exc
        node[path[-1]] = _number(value)
    return out


def _number(value):
    # YAML 1.1 reads "3e-3" as a string
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
    return value


def load_config(scale: str = "desk", path=None, environ=None) -> dict:
    if scale not in ("desk", "paper"):
        raise ConfigError(f"unknown scale {scale!r}")
    with open(data_path(f"{scale}.yaml")) as fh:
        cfg = yaml.safe_load(fh)
    base_dir = None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            user = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, user)
        base_dir = path.parent
    cfg = _merge(cfg, env_overrides(environ))
    cfg["_base_dir"] = str(base_dir) if base_dir else None
    unknown = set(cfg) - {"mode", "chip", "dataset", "train", "control", "_base_dir"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    if cfg.get("mode") not in chipmod.MODES:
        raise ConfigError(f"mode must be one of {chipmod.MODES}")
    return cfg


def _resolve(cfg: dict, name) -> Path:
    p = Path(name)
    if p.is_absolute() and p.exists():
        return p
    if cfg.get("_base_dir") and (Path(cfg["_base_dir"]) / p).exists():
        return Path(cfg["_base_dir"]) / p
    if p.exists():
        return p
    bundled = data_path(str(name))
    if bundled.exists():
        return bundled
    raise ConfigError(f"referenced file {name} not found")


def chip_params(cfg: dict) -> chipmod.ChipParams:
    spec = cfg.get("chip", "chip_default.yaml")
    if isinstance(spec, dict):
        return chipmod.ChipParams.from_dict(spec)
    return chipmod.ChipParams.from_file(_resolve(cfg, spec))


def _section(cfg, name, allowed):
    sec = dict(cfg.get(name) or {})
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {sorted(unknown)}")
    return sec


DATASET_KEYS = ("count", "split", "horizon", "dt", "seed")
TRAIN_KEYS = ("stage1_iterations", "stage1_restarts", "iterations", "iterations_quantum", "lr",
              "lr_final", "rho", "eps", "batch_size", "hidden", "precision", "seed", "log_every",
              "input_scale", "output_scale", "head_init")
CONTROL_KEYS = ("schedule", "schedule_classical", "schedule_quantum", "iterations", "lr",
                "lr_final", "v_max", "hidden", "seed", "input_kind", "precision")


def train_settings(cfg: dict) -> tuple:
    t = _section(cfg, "train", TRAIN_KEYS)
    iterations = t.get("iterations", 2000)
    if cfg["mode"] == "quantum" and t.get("iterations_quantum") is not None:
        iterations = t["iterations_quantum"]
    settings = mdl.TrainSettings(
        iterations=int(iterations), lr=float(t.get("lr", 1e-3)),
        rho=float(t.get("rho", 0.9)), eps=float(t.get("eps", 1e-8)),
        batch_size=t.get("batch_size"),
        lr_final=None if t.get("lr_final") is None else float(t["lr_final"]),
        log_every=int(t.get("log_every", 100)), seed=int(t.get("seed", 0)))
    return settings, t


# -- artifacts ------------------------------------------------------------------


def _paths(out: Path) -> dict:
    return {
        "train": out / "train.pgds",
        "test": out / "test.pgds",
        "model": out / "model.pgbx",
    }


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{what} not found at {path}")
    return path


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _simulate_chunk(args):
    volts, params_dict, mode, dt = args
    return dsmod.simulate_batch(volts, chipmod.ChipParams.from_dict(params_dict), mode, dt)


def build_dataset_parallel(count, split, params, mode, seed, horizon, dt, workers: int):
    if workers <= 1:
        return dsmod.build_dataset(count, split, params, mode, seed, horizon, dt)
    # examples carry their own seed streams, so chunking does not change the data
    volts = dsmod.generate_voltages(count, params, seed, horizon, dt)
    chunks = np.array_split(volts, workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        traces = np.concatenate(list(pool.map(
            _simulate_chunk, [(c, params.to_dict(), mode, dt) for c in chunks])))
    return dsmod.split_dataset(volts, traces, split, params, mode, seed, horizon, dt)


# -- commands -------------------------------------------------------------------


def cmd_gen_dataset(cfg: dict, out: Path, workers: int = 1) -> dict:
    d = _section(cfg, "dataset", DATASET_KEYS)
    params = chip_params(cfg)
    try:
        train, test = build_dataset_parallel(
            int(d.get("count", 500)), float(d.get("split", 0.9)), params, cfg["mode"],
            int(d.get("seed", 0)), float(d.get("horizon", 20.0)), float(d.get("dt", 0.2)), workers)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)
    p = _paths(out)
    dsmod.save_dataset(train, p["train"])
    dsmod.save_dataset(test, p["test"])
    summary = {"count": len(train) + len(test), "train": len(train), "test": len(test),
               "mode": cfg["mode"], "steps": int(train.voltages.shape[1]),
               "input_width": int(train.voltages.shape[2]), "channels": int(train.traces.shape[2])}
    print(f"dataset: {summary['count']} examples ({summary['train']} train / {summary['test']} test), "
          f"{summary['steps']} steps, {summary['input_width']} inputs, {summary['channels']} channels")
    return summary


def _load_sets(out: Path):
    p = _paths(out)
    return (dsmod.load_dataset(_require(p["train"], "training set")),
            dsmod.load_dataset(_require(p["test"], "test set")))


def cmd_train(cfg: dict, out: Path, resume: bool = False) -> dict:
    settings, t = train_settings(cfg)
    params = chip_params(cfg)
    train, test = _load_sets(out)
    if train.mode != cfg["mode"]:
        raise ConfigError(f"dataset mode {train.mode} does not match config mode {cfg['mode']}")
    p = _paths(out)
    if resume:
        model = mdl.ModelState.load(_require(p["model"], "checkpoint"))
    else:
        mc = mdl.GrayboxConfig(n=params.n, hidden=int(t.get("hidden", 60)), mode=cfg["mode"],
                               l=params.l, seed=settings.seed,
                               input_scale=float(t.get("input_scale", 5.0)),
                               output_scale=float(t.get("output_scale", 1.0)),
                               head_init=t.get("head_init", "glorot"),
                               precision=t.get("precision", "float64"))
        model = mdl.ModelState.init(mc)
        model.chip_digest = params.digest()
        static = dsmod.zero_voltage_readings(params, cfg["mode"])
        mdl.train_stage1(model, static, iterations=int(t.get("stage1_iterations", 3000)),
                         restarts=int(t.get("stage1_restarts", 4)))
        _write_csv(out / "loss_stage1.csv", ["iteration", "mse"],
                   enumerate(model.history.get("stage1", [])))
        model.save(p["model"])
    mdl.train_stage2(model, train.voltages, train.traces, settings)
    model.save(p["model"])
    hist = model.history["stage2"]
    budget = settings.iterations
    _write_csv(out / "loss_stage2.csv", ["iteration", f"mse (budget {budget} iterations)"],
               enumerate(hist))
    train_mse, _ = mdl.evaluate(model, train.voltages, train.traces)
    test_mse, _ = mdl.evaluate(model, test.voltages, test.traces)
    summary = {"mode": cfg["mode"], "iterations": len(hist), "train_mse": train_mse,
               "test_mse": test_mse, "stage1_mse": model.history.get("stage1_mse"),
               "eps_normalized": model.eps_normalized().tolist(), "model_digest": model.digest()}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"train MSE {train_mse:.4e}  test MSE {test_mse:.4e}")
    return summary


def _load_model(out: Path) -> mdl.ModelState:
    return mdl.ModelState.load(_require(_paths(out)["model"], "checkpoint"))


def _read_voltage_csv(path: Path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] < 2:
        raise ConfigError(f"{path}: need a time column and electrode columns")
    times, volts = rows[:, 0], rows[:, 1:]
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.2
    return volts, dt


def cmd_predict(cfg: dict, out: Path, example: int | None = None, voltages=None,
                split: str = "test") -> Path:
    model = _load_model(out)
    params = chip_params(cfg)
    mode = model.config.mode
    if voltages is not None:
        volts, dt = _read_voltage_csv(Path(voltages))
        tag = Path(voltages).stem
    else:
        train, test = _load_sets(out)
        ds = test if split == "test" else train
        k = 0 if example is None else int(example)
        if not 0 <= k < len(ds):
            raise ConfigError(f"example {k} out of range (0..{len(ds) - 1})")
        volts, dt = ds.voltages[k], ds.dt
        tag = f"{split}{k}"
    if volts.shape[1] != 2 * model.config.n:
        raise ConfigError(f"voltage file needs {2 * model.config.n} electrode columns")
    bundle = mdl.forward(volts, model)
    sim, u_sim = chipmod.simulate_samples(volts, dt, params, mode)
    n = model.config.n
    iu = np.triu_indices(n)
    header = ["time_ms"] + [f"v{k}_V" for k in range(2 * n)]
    header += [f"HI_{i}{j}_re_rad_per_m" for i, j in zip(*iu)]
    header += [f"HI_{i}{j}_im_rad_per_m" for i, j in zip(*iu)]
    header += [f"H_{i}{j}_re_rad_per_m" for i, j in zip(*iu)]
    header += [f"H_{i}{j}_im_rad_per_m" for i, j in zip(*iu)]
    per = bundle.ideal_outputs.shape[-1]
    header += [f"ideal_in{m}_ch{k}" for m in range(n) for k in range(per)]
    header += [f"pred_ch{c}" for c in range(bundle.measured_outputs.shape[-1])]
    header += [f"sim_ch{c}" for c in range(sim.shape[-1])]
    if mode == "quantum":
        header.append("infidelity_pred_vs_sim")
        infid = infidelity_batch(bundle.u, u_sim, check=False)
    rows = []
    for t in range(len(volts)):
        row = [t * dt, *volts[t]]
        row += list(bundle.h_interaction[t][iu].real) + list(bundle.h_interaction[t][iu].imag)
        row += list(bundle.h_total[t][iu].real) + list(bundle.h_total[t][iu].imag)
        row += list(bundle.ideal_outputs[t].reshape(-1))
        row += list(bundle.measured_outputs[t]) + list(sim[t])
        if mode == "quantum":
            row.append(infid[t])
        rows.append([f"{x:.9g}" for x in row])
    path = out / f"predict_{tag}.csv"
    _write_csv(path, header, rows)
    print(f"wrote {path}")
    return path


def control_config(cfg: dict, mode: str) -> tuple:
    c = _section(cfg, "control", CONTROL_KEYS)
    sched = c.get(f"schedule_{mode}") or c.get("schedule")
    if sched is None:
        sched = f"schedule_{mode}.yaml"
    cc = ctl.ControllerConfig(
        hidden=int(c.get("hidden", 60)), v_max=float(c.get("v_max", 10.0)),
        input_kind=c.get("input_kind"), iterations=int(c.get("iterations", 500)),
        lr=float(c.get("lr", 1e-2)),
        lr_final=None if c.get("lr_final") is None else float(c["lr_final"]),
        seed=int(c.get("seed", 0)), precision=c.get("precision", "float64"))
    return cc, sched


def cmd_control(cfg: dict, out: Path, schedule=None) -> dict:
    model = _load_model(out)
    params = chip_params(cfg)
    mode = model.config.mode
    cc, sched_name = control_config(cfg, mode)
    sched_path = Path(schedule) if schedule is not None else _resolve(cfg, sched_name)
    if not sched_path.exists():
        raise ConfigError(f"schedule file {sched_path} not found")
    try:
        sched = ctl.TargetSchedule.from_file(sched_path)
    except (KeyError, TypeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{sched_path}: malformed schedule ({exc})") from exc
    before = model.digest()
    controller = ctl.build_controller(cc, model)
    sol = ctl.solve(controller, sched)
    if model.digest() != before:
        raise RuntimeError("frozen model changed during control synthesis")
    report = ctl.verify(sol, params, sched, mode)
    ctl.write_solution_csv(out / f"control_{mode}.csv", sol, report)
    _write_csv(out / f"control_{mode}_loss.csv", ["iteration", "mse"], enumerate(sol.history))
    target = ctl.target_outputs(sched, mode)
    sim_ideal = chipmod.readings_from_unitaries(
        chipmod.simulate_samples(sol.voltages.samples, sched.dt, params, mode)[1], mode, None)
    pred_ideal = chipmod.readings_from_unitaries(sol.predicted.u, mode, None)
    ch = target.shape[1]
    header = ["time_ms"] + [f"target_ch{c}" for c in range(ch)] + [f"pred_ch{c}" for c in range(ch)] \
        + [f"sim_ch{c}" for c in range(ch)]
    _write_csv(out / f"control_{mode}_outputs.csv", header,
               ([f"{t * sched.dt:.6g}", *(f"{x:.9g}" for x in np.concatenate(
                   [target[t], pred_ideal[t], sim_ideal[t]]))] for t in range(sched.steps)))
    summary = {"mode": mode, "final_mse": sol.final_mse, **report.summary()}
    (out / f"control_{mode}_report.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"control: model MSE {sol.final_mse:.4e}, worst steady infidelity "
          f"model {report.worst_steady_model:.3e} / simulator {report.worst_steady_sim:.3e}")
    return summary


def cmd_eval(cfg: dict, out: Path) -> dict:
    model = _load_model(out)
    train, test = _load_sets(out)
    result = {}
    for name, ds in (("train", train), ("test", test)):
        mse, preds = mdl.evaluate(model, ds.voltages, ds.traces)
        per = np.mean((preds - ds.traces) ** 2, axis=(1, 2))
        result[f"{name}_mse"] = mse
        _write_csv(out / f"eval_{name}.csv", ["example", "mse"],
                   ((int(i), f"{v:.9g}") for i, v in zip(ds.indices, per)))
    (out / "eval.json").write_text(json.dumps(result, indent=2) + "\n")
    print(f"train MSE {result['train_mse']:.4e}  test MSE {result['test_mse']:.4e}")
    return result


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--out", type=Path, default=Path("runs/default"), help="output directory")
    common.add_argument("--seed", type=int, help="seed for data, training and control")
    common.add_argument("--workers", type=int, default=1, help="cap on worker processes")
    common.add_argument("--scale", choices=("desk", "paper"), default="desk")
    common.add_argument("--mode", choices=chipmod.MODES, help="override the configured mode")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="photonic-graybox", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-dataset", parents=[common], help="generate and simulate a pulse dataset")
    p = sub.add_parser("train", parents=[common], help="run both training stages")
    p.add_argument("--resume", action="store_true", help="continue stage 2 from the checkpoint")
    p = sub.add_parser("predict", parents=[common], help="per-layer traces for one input")
    p.add_argument("--example", type=int, help="index into the chosen split")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--voltages", type=Path, help="CSV with time_ms and electrode columns")
    p = sub.add_parser("control", parents=[common], help="synthesize and verify control voltages")
    p.add_argument("--schedule", type=Path, help="target schedule YAML")
    sub.add_parser("eval", parents=[common], help="MSE on the training and test sets")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.scale, args.config)
        if args.mode:
            cfg["mode"] = args.mode
        if args.seed is not None:
            for sec in ("dataset", "train", "control"):
                cfg.setdefault(sec, {})["seed"] = args.seed
        out = args.out
        if args.command == "gen-dataset":
            cmd_gen_dataset(cfg, out, max(1, args.workers))
        elif args.command == "train":
            cmd_train(cfg, out, args.resume)
        elif args.command == "predict":
            cmd_predict(cfg, out, args.example, args.voltages, args.split)
        elif args.command == "control":
            cmd_control(cfg, out, args.schedule)
        elif args.command == "eval":
            cmd_eval(cfg, out)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ContractViolation, ReconstructionError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
