"""Command-line experiment runner.

Every subcommand resolves a configuration (built-in defaults, then an
optional JSON config file, then command-line flags), seeds all random
streams from one integer, runs one study and writes into the output
directory:

    results.csv     the main table of the study
    history.csv     per-iteration training metrics (training commands)
    checkpoint.json the trained model or solution coefficients
    manifest.json   the fully resolved configuration, status and metrics

Exit codes: 0 success, 2 configuration or usage error, 3 diverged run.

Config files are strict JSON::

    {"command": "train-pinn", "seed": 3, "output_dir": "runs/pinn",
     "precision": 17, "params": {"iterations": 2000}}

``command`` is required; unknown keys are rejected, and errors name the
offending location as a JSON pointer (``/params/iterations``).

Floats in CSV files are written with ``precision`` significant digits
(17 by default, which round-trips every double). Checkpoints always use
the shortest round-trip decimal repr, so save -> load -> save reproduces
the same bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import convnet, dynamics, generative, nn, optim, pdesolve, pinn
from .operatornet import deeponet, fno
from .tensor import Rng

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "COMMANDS",
    "config_load",
    "config_from_dict",
    "checkpoint_save",
    "checkpoint_load",
    "checkpoint_dumps",
    "run",
    "main",
]

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3
DEFAULT_OUTPUT = "sciml-out"
DEFAULT_PRECISION = 17


class ConfigError(ValueError):
    """Schema violation; ``pointer`` is the JSON-pointer location."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


# ---------------------------------------------------------------------------
# schemas: name -> (type, default, help)
#   types: int, float, str, bool, "ints" (list of int), or a tuple of choices

_OPT = ("gd", "momentum", "adam")
_SCHED = ("constant", "inverse_sqrt", "linear")

COMMANDS = {
    "solve-fd": {
        "a": (float, 1.0, "advection speed"),
        "kappa": (float, 1.0, "diffusivity"),
        "ell": (float, 1.0, "domain length"),
        "n": (int, 64, "number of grid intervals"),
    },
    "solve-spectral": {
        "a": (float, 1.0, "advection speed"),
        "kappa": (float, 1.0, "diffusivity"),
        "ell": (float, 1.0, "domain length"),
        "n": (int, 20, "polynomial degree"),
        "rule": (("cgl", "uniform"), "cgl", "collocation point rule"),
        "check_points": (int, 101, "uniform points for the error report"),
    },
    "train-mlp": {
        "widths": ("ints", [1, 20, 20, 1], "layer widths, input to output"),
        "activation": (nn.ACTIVATIONS, "tanh", "hidden activation"),
        "target": (("sin", "quadratic", "abs"), "sin", "function to regress on [0, 1]"),
        "n_samples": (int, 200, "training samples"),
        "noise": (float, 0.0, "Gaussian noise level added to targets"),
        "optimizer": (_OPT, "adam", "optimizer"),
        "lr": (float, 1e-2, "learning rate"),
        "lr_schedule": (_SCHED, "constant", "learning-rate schedule"),
        "epochs": (int, 500, "epochs"),
        "n_batches": (int, 1, "mini-batches per epoch"),
    },
    "train-pinn": {
        "a": (float, 1.0, "advection speed"),
        "kappa": (float, 1.0, "diffusivity"),
        "width": (int, 20, "hidden width"),
        "depth": (int, 3, "hidden layers"),
        "activation": (nn.SMOOTH_ACTIVATIONS, "tanh", "hidden activation"),
        "n_interior": (int, 64, "interior collocation points"),
        "lam_b": (float, 10.0, "boundary penalty weight"),
        "iterations": (int, 5000, "Adam iterations"),
        "lr": (float, 1e-3, "learning rate"),
    },
    "train-deeponet": {
        "n_sensors": (int, 32, "sensor count M"),
        "p": (int, 16, "latent dimension"),
        "branch_hidden": ("ints", [], "branch hidden widths (empty: affine branch)"),
        "trunk_hidden": ("ints", [40, 40], "trunk hidden widths"),
        "n_train": (int, 100, "training functions"),
        "n_test": (int, 20, "held-out functions"),
        "n_points": (int, 32, "output points per training function"),
        "modes": (int, 5, "Fourier modes of the random inputs"),
        "decay": (float, 2.0, "amplitude decay exponent of the modes"),
        "optimizer": (("lbfgs", "adam"), "lbfgs", "optimizer"),
        "lr": (float, 1e-3, "Adam learning rate"),
        "iterations": (int, 6000, "iterations"),
    },
    "train-fno": {
        "n_grid": (int, 64, "grid points (power of two)"),
        "width": (int, 16, "channel width"),
        "layers": (int, 2, "Fourier layers"),
        "kmax": (int, 12, "retained modes"),
        "n_train": (int, 100, "training fields"),
        "n_test": (int, 20, "held-out fields"),
        "modes": (int, 8, "modes of the random input fields"),
        "iterations": (int, 500, "Adam iterations"),
        "lr": (float, 1e-2, "learning rate"),
    },
    "train-node": {
        "rate": (float, 1.0, "growth rate r of x' = r x"),
        "T": (float, 1.0, "time horizon"),
        "dt": (float, 0.1, "step size"),
        "method": (("rk4", "euler"), "rk4", "integrator"),
        "hidden": ("ints", [16, 16], "hidden widths of the rhs network"),
        "n_samples": (int, 200, "training states on [-1, 1]"),
        "iterations": (int, 300, "Adam iterations"),
        "lr": (float, 1e-2, "learning rate"),
    },
    "train-wgan": {
        "mean": ("floats", [1.0, 1.0], "target mean"),
        "var": (float, 0.25, "target variance (isotropic)"),
        "n_data": (int, 512, "training samples"),
        "hidden": ("ints", [32, 32], "hidden widths of generator and critic"),
        "K": (int, 5, "critic steps per generator step"),
        "lam": (float, 10.0, "gradient-penalty weight"),
        "lr_d": (float, 1e-3, "critic learning rate"),
        "lr_g": (float, 1e-4, "generator learning rate"),
        "optimizer": (("gd", "adam"), "adam", "optimizer"),
        "lr_schedule": (("constant", "linear"), "linear", "learning-rate schedule"),
        "epochs": (int, 2000, "outer iterations"),
        "batch_size": (int, 0, "mini-batch size (0: full batch)"),
        "n_generated": (int, 1000, "samples written to results.csv"),
    },
    "conv-demo": {
        "max_kernel": (int, 4, "largest kernel size in the checkerboard table"),
        "max_stride": (int, 3, "largest stride in the checkerboard table"),
        "levels": (int, 5, "grid refinements for the stencil study"),
    },
    "sgd-toy": {
        "lr": (float, 0.4, "initial learning rate"),
        "lr_schedule": (("constant", "inverse_sqrt"), "inverse_sqrt", "learning-rate schedule"),
        "iterations": (int, 10_000, "SGD steps"),
        "sampling": (("shuffle", "iid"), "shuffle", "sample selection"),
    },
    "gradcheck": {
        "n_nets": (int, 20, "random networks"),
        "max_depth": (int, 5, "largest hidden depth"),
        "max_width": (int, 6, "largest hidden width"),
        "step": (float, 1e-6, "central-difference step"),
    },
}

_GLOBAL_KEYS = ("command", "seed", "output_dir", "precision", "params")


@dataclass
class ExperimentConfig:
    command: str
    seed: int = 0
    output_dir: str = DEFAULT_OUTPUT
    precision: int = DEFAULT_PRECISION
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "precision": self.precision,
            "params": dict(self.params),
        }


def _check_value(kind, value, pointer):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(pointer, f"expected a boolean, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(pointer, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(pointer, f"expected a finite number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(pointer, f"expected a string, got {value!r}")
        return value
    if kind in ("ints", "floats"):
        if not isinstance(value, list):
            raise ConfigError(pointer, f"expected a list, got {value!r}")
        inner = int if kind == "ints" else float
        return [_check_value(inner, v, f"{pointer}/{i}") for i, v in enumerate(value)]
    if isinstance(kind, tuple):
        if value not in kind:
            raise ConfigError(pointer, f"expected one of {list(kind)}, got {value!r}")
        return value
    raise TypeError(kind)


def _check_params(command, params, pointer="/params"):
    schema = COMMANDS[command]
    if not isinstance(params, dict):
        raise ConfigError(pointer, "expected an object")
    for key in params:
        if key not in schema:
            raise ConfigError(f"{pointer}/{key}", f"unknown key for {command}")
    return {key: _check_value(schema[key][0], params[key], f"{pointer}/{key}") for key in params}


def _validate_ranges(cfg: ExperimentConfig):
    p = cfg.params
    if cfg.seed < 0:
        raise ConfigError("/seed", "must be non-negative")
    if not 1 <= cfg.precision <= 17:
        raise ConfigError("/precision", "must lie in [1, 17]")
    positive = [k for k, (kind, _, _) in COMMANDS[cfg.command].items() if kind in (int, float)]
    allow_zero = {"noise", "lam_b", "lam", "batch_size", "a", "rate"}
    for k in positive:
        v = p[k]
        if k in ("a", "rate"):
            continue
        if v < 0 or (v == 0 and k not in allow_zero):
            raise ConfigError(f"/params/{k}", f"must be positive, got {v!r}")
    for k in ("widths", "branch_hidden", "trunk_hidden", "hidden"):
        if k in p and any(w < 1 for w in p[k]):
            raise ConfigError(f"/params/{k}", "widths must be positive")
    if cfg.command == "train-mlp" and (len(p["widths"]) < 2 or p["widths"][0] != 1 or p["widths"][-1] != 1):
        raise ConfigError("/params/widths", "need scalar input and output, e.g. [1, 20, 1]")
    if cfg.command == "train-fno" and p["n_grid"] & (p["n_grid"] - 1):
        raise ConfigError("/params/n_grid", "must be a power of two")
    if cfg.command == "train-wgan" and len(p["mean"]) < 1:
        raise ConfigError("/params/mean", "need at least one component")


def _loads_strict(text: str, source: str):
    def pairs(items):
        out = {}
        for k, v in items:
            if k in out:
                raise ConfigError(f"/{k}", "duplicate key")
            out[k] = v
        return out

    def bad_constant(name):
        raise ConfigError("", f"non-standard JSON constant {name}")

    try:
        return json.loads(text, object_pairs_hook=pairs, parse_constant=bad_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{source} is not valid JSON: {exc}") from exc


def config_from_dict(doc) -> ExperimentConfig:
    """Strictly validate a config document and fill in defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("", "config must be a JSON object")
    for key in doc:
        if key not in _GLOBAL_KEYS:
            raise ConfigError(f"/{key}", "unknown key")
    if "command" not in doc:
        raise ConfigError("/command", "missing required key 'command'")
    command = doc["command"]
    if command not in COMMANDS:
        raise ConfigError("/command", f"unknown command {command!r}")
    params = {k: d for k, (_, d, _) in COMMANDS[command].items()}
    params.update(_check_params(command, doc.get("params", {})))
    cfg = ExperimentConfig(
        command,
        _check_value(int, doc.get("seed", 0), "/seed"),
        _check_value(str, doc.get("output_dir", DEFAULT_OUTPUT), "/output_dir"),
        _check_value(int, doc.get("precision", DEFAULT_PRECISION), "/precision"),
        params,
    )
    _validate_ranges(cfg)
    return cfg


def config_load(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from exc
    return config_from_dict(_loads_strict(text, str(path)))


# ---------------------------------------------------------------------------
# checkpoints


def _mlp_doc(cfg, params):
    return nn.to_jsonable(cfg, params)


def checkpoint_dumps(model) -> str:
    """Serialise a model to the checkpoint text (sorted keys, repr floats)."""
    if isinstance(model, tuple) and len(model) == 2 and isinstance(model[0], nn.MlpConfig):
        doc = {"kind": "mlp", **_mlp_doc(*model)}
    elif isinstance(model, dynamics.NodeResult):
        doc = {"kind": "node", "T": model.T, "dt": model.dt, "method": model.method,
               "rhs": _mlp_doc(model.cfg, model.params)}
    elif isinstance(model, deeponet.DeepOnet):
        doc = {
            "kind": "deeponet",
            "sensors": model.sensors.tolist(),
            "trunk_domain": None if model.trunk_domain is None else [float(v) for v in model.trunk_domain],
            "branch": _mlp_doc(model.branch_cfg, model.branch),
            "trunk": _mlp_doc(model.trunk_cfg, model.trunk),
        }
    elif isinstance(model, fno.Fno):
        doc = fno.fno_to_jsonable(model)
    elif isinstance(model, generative.WganModel):
        doc = {"kind": "wgan", "lam": model.lam, "K": model.K, "lr_d": model.lr_d, "lr_g": model.lr_g,
               "generator": _mlp_doc(model.gen_cfg, model.gen), "critic": _mlp_doc(model.critic_cfg, model.critic)}
    elif isinstance(model, pdesolve.SpectralSolution):
        doc = {"kind": "chebyshev", "ell": model.ell, "coeffs": model.coeffs.tolist()}
    else:
        raise TypeError(f"no checkpoint format for {type(model).__name__}")
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def checkpoint_save(model, path) -> None:
    text = checkpoint_dumps(model)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def checkpoint_load(path):
    """Inverse of :func:`checkpoint_save`; MLPs come back as ``(cfg, params)``."""
    doc = _loads_strict(Path(path).read_text(), str(path))
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind == "mlp":
        return nn.from_jsonable(doc)
    if kind == "node":
        cfg, params = nn.from_jsonable(doc["rhs"])
        return dynamics.NodeResult(cfg, params, doc["T"], doc["dt"], doc["method"])
    if kind == "deeponet":
        bc, bp = nn.from_jsonable(doc["branch"])
        tc, tp = nn.from_jsonable(doc["trunk"])
        td = None if doc["trunk_domain"] is None else tuple(doc["trunk_domain"])
        return deeponet.DeepOnet(np.array(doc["sensors"], dtype=np.float64), bc, tc, bp, tp, td)
    if kind == "fno":
        return fno.fno_from_jsonable(doc)
    if kind == "wgan":
        gc, gp = nn.from_jsonable(doc["generator"])
        dc, dp = nn.from_jsonable(doc["critic"])
        return generative.WganModel(gc, gp, dc, dp, doc["lam"], doc["K"], doc["lr_d"], doc["lr_g"])
    if kind == "chebyshev":
        return pdesolve.SpectralSolution(np.array(doc["coeffs"], dtype=np.float64), doc["ell"])
    raise ConfigError("/kind", f"unknown checkpoint kind {kind!r}")


# ---------------------------------------------------------------------------
# output


class _Outputs:
    def __init__(self, cfg: ExperimentConfig):
        self.dir = Path(cfg.output_dir)
        self.precision = cfg.precision
        self.files = []

    def _fmt(self, v):
        if isinstance(v, (bool, np.bool_)):
            return str(int(v))
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return format(float(v), f".{self.precision}g")
        return str(v)

    def csv(self, name, header, rows):
        self.dir.mkdir(parents=True, exist_ok=True)
        with open(self.dir / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([self._fmt(v) for v in row])
        self.files.append(name)

    def checkpoint(self, model):
        self.dir.mkdir(parents=True, exist_ok=True)
        checkpoint_save(model, self.dir / "checkpoint.json")
        self.files.append("checkpoint.json")


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


# ---------------------------------------------------------------------------
# studies; each returns (status, metrics)


def _solve_fd(p, seed, out):
    prob = pdesolve.AdvDiffProblem(p["a"], p["kappa"], p["ell"])
    sol = pdesolve.solve_fd(prob, p["n"])
    exact = pdesolve.exact_adv_diff(prob, sol.x)
    err = np.abs(sol.u - exact)
    out.csv("results.csv", ["x", "u", "exact", "error"], zip(sol.x, sol.u, exact, err))
    return "ok", {"max_error": float(err.max()), "peclet": prob.peclet}


def _solve_spectral(p, seed, out):
    prob = pdesolve.AdvDiffProblem(p["a"], p["kappa"], p["ell"])
    sol = pdesolve.solve_spectral(prob, p["n"], p["rule"])
    x = np.linspace(0.0, p["ell"], p["check_points"])
    u = sol(x)
    exact = pdesolve.exact_adv_diff(prob, x)
    err = np.abs(u - exact)
    out.csv("results.csv", ["x", "u", "exact", "error"], zip(x, u, exact, err))
    out.csv("history.csv", ["n", "coefficient"], enumerate(sol.coeffs))
    out.checkpoint(sol)
    return "ok", {"max_error": float(err.max()), "peclet": prob.peclet}


_TARGETS = {
    "sin": lambda x: np.sin(2 * np.pi * x),
    "quadratic": lambda x: x**2,
    "abs": lambda x: np.abs(x - 0.5),
}


def _train_mlp(p, seed, out):
    rng = Rng(seed)
    f = _TARGETS[p["target"]]
    x = rng.spawn(1).uniform((p["n_samples"], 1))
    y = f(x) + p["noise"] * rng.spawn(2).normal(x.shape)
    xv = np.linspace(0.0, 1.0, 101).reshape(-1, 1)
    yv = f(xv)
    cfg = nn.MlpConfig(p["widths"], p["activation"])
    if not 1 <= p["n_batches"] <= p["n_samples"]:
        raise ConfigError("/params/n_batches", f"must lie in [1, {p['n_samples']}]")
    theta0 = nn.init_params(cfg, rng.spawn(3)).flat()

    def mse(theta, X, Y):
        return float(np.mean((nn.mlp_forward(cfg, nn.MlpParams.from_flat(cfg.widths, theta), X) - Y) ** 2))

    def loss_grad(theta, idx):
        tape = ad.Tape()
        params, leaves = nn.MlpParams.from_flat(cfg.widths, theta).on_tape(tape)
        L = nn.loss("mse", nn.mlp_forward(cfg, params, x[idx]), y[idx])
        return float(L.value), np.concatenate([g.reshape(-1) for g in ad.grad(L, leaves)])

    state = optim.OptimizerState(p["optimizer"], p["lr"], p["lr_schedule"],
                                 horizon=p["epochs"] * p["n_batches"] if p["lr_schedule"] == "linear" else None)
    with np.errstate(all="ignore"):
        res = optim.minibatch_train(theta0, p["n_samples"], loss_grad, state, p["epochs"], p["n_batches"],
                                    rng.spawn(4), val_loss=lambda t: mse(t, xv, yv), train_loss=lambda t: mse(t, x, y))
    out.csv("history.csv", ["epoch", "train_loss", "val_loss"], res.history)
    if res.status != "ok":
        return res.status, {"epochs_run": len(res.history)}
    params = nn.MlpParams.from_flat(cfg.widths, res.theta)
    pred = nn.mlp_forward(cfg, params, xv)
    out.csv("results.csv", ["x", "target", "prediction"], zip(xv[:, 0], yv[:, 0], pred[:, 0]))
    out.checkpoint((cfg, params))
    return "ok", {"train_mse": res.history[-1][1], "grid_mse": res.history[-1][2]}


def _train_pinn(p, seed, out):
    base = pdesolve.AdvDiffProblem(p["a"], p["kappa"])
    prob = pinn.advdiff_problem(base, p["n_interior"], p["lam_b"])
    cfg = nn.MlpConfig([1] + [p["width"]] * p["depth"] + [1], p["activation"])
    with np.errstate(all="ignore"):
        res = pinn.train_pinn(prob, cfg, optim.OptimizerState("adam", p["lr"]), p["iterations"], seed)
    out.csv("history.csv", ["iteration", "loss", "pi_interior", "pi_boundary"], res.history)
    if res.status != "ok":
        return res.status, {"iterations_run": len(res.history)}
    x = np.linspace(0.0, 1.0, 101)
    u = res.predict(x)
    exact = pdesolve.exact_adv_diff(base, x)
    out.csv("results.csv", ["x", "u", "exact", "error"], zip(x, u, exact, np.abs(u - exact)))
    out.checkpoint((cfg, res.params))
    report = pinn.error_bound_report(prob, cfg, res.params)
    return "ok", {
        "rel_l2_error": res.rel_l2_error,
        "residual_l2": report["residual_l2"],
        "quadrature_gaps": [r["gap"] for r in report["rows"]],
    }


def _train_deeponet(p, seed, out):
    rng = Rng(seed)
    sensors = np.linspace(0.0, 1.0, p["n_sensors"])
    n = p["n_train"] + p["n_test"]
    f = deeponet.random_fourier_functions(n, p["modes"], int(rng.spawn(1).integer(2**31)), p["decay"])
    data = deeponet.build_deeponet_dataset(f, deeponet.antiderivative_oracle, sensors, n, p["n_points"],
                                           int(rng.spawn(2).integer(2**31)))
    tr = deeponet.DeepOnetDataset(data.A[: p["n_train"]], data.X[: p["n_train"]], data.U[: p["n_train"]])
    model = deeponet.init_deeponet(sensors, p["p"], tuple(p["branch_hidden"]), tuple(p["trunk_hidden"]),
                                   seed=int(rng.spawn(3).integer(2**31)))
    opt = "lbfgs" if p["optimizer"] == "lbfgs" else optim.OptimizerState("adam", p["lr"])
    with np.errstate(all="ignore"):
        res = deeponet.deeponet_train(model, tr, p["iterations"], opt, seed=seed)
    out.csv("history.csv", ["iteration", "loss"], res.history)
    if res.status != "ok":
        return res.status, {"iterations_run": len(res.history)}
    grid = np.linspace(0.0, 1.0, 101)
    fine = np.linspace(0.0, 1.0, 1025)
    G = deeponet.antiderivative_oracle(f(fine), fine)[p["n_train"]:]
    target = np.array([np.interp(grid, fine, g) for g in G])
    pred = deeponet.deeponet_predict_grid(res.model, data.A[p["n_train"]:], grid[:, None])
    errs = np.linalg.norm(pred - target, axis=1) / np.linalg.norm(target, axis=1)
    out.csv("results.csv", ["test_function", "relative_l2"], enumerate(errs))
    out.checkpoint(res.model)
    return "ok", {"test_relative_l2": float(errs.mean()), "final_loss": res.history[-1][1] if res.history else None}


def _train_fno(p, seed, out):
    rng = Rng(seed)
    N = p["n_grid"]
    n = p["n_train"] + p["n_test"]
    a = fno.random_periodic_fields(n, N, p["modes"], seed=int(rng.spawn(1).integer(2**31)))
    u = fno.periodic_helmholtz_oracle(a)
    A, U = a[:, :, None], u[:, :, None]
    if p["kmax"] > N // 2:
        raise ConfigError("/params/kmax", f"must not exceed n_grid / 2 = {N // 2}")
    model = fno.init_fno(p["width"], p["layers"], (p["kmax"], 0), seed=int(rng.spawn(2).integer(2**31)))
    with np.errstate(all="ignore"):
        res = fno.fno_train(model, A[: p["n_train"]], U[: p["n_train"]], p["iterations"],
                            optim.OptimizerState("adam", p["lr"]), seed=seed)
    out.csv("history.csv", ["iteration", "loss"], res.history)
    if res.status != "ok":
        return res.status, {"iterations_run": len(res.history)}
    pred = fno.fno_forward(res.model, A[p["n_train"]:])
    tgt = U[p["n_train"]:]
    errs = np.linalg.norm((pred - tgt).reshape(len(tgt), -1), axis=1) / np.linalg.norm(tgt.reshape(len(tgt), -1), axis=1)
    out.csv("results.csv", ["test_field", "relative_l2"], enumerate(errs))
    out.checkpoint(res.model)
    return "ok", {"test_relative_l2": float(errs.mean())}


def _train_node(p, seed, out):
    x = np.linspace(-1.0, 1.0, p["n_samples"])
    y = math.exp(p["rate"] * p["T"]) * x
    cfg = nn.MlpConfig([2, *p["hidden"], 1], "tanh")
    try:
        dynamics.OdeSystem(lambda s, t: s, 1, p["T"], p["dt"]).n_steps
    except ValueError as exc:
        raise ConfigError("/params/dt", str(exc)) from exc
    with np.errstate(all="ignore"):
        res = dynamics.node_train(cfg, x, y, p["T"], p["dt"], p["method"], optim.OptimizerState("adam", p["lr"]),
                                  p["iterations"], seed)
    out.csv("history.csv", ["iteration", "loss"], res.history)
    if res.status != "ok":
        return res.status, {"iterations_run": len(res.history)}
    xt = np.linspace(-1.0, 1.0, 101)[:, None]
    yt = math.exp(p["rate"] * p["T"]) * xt
    pred = res.predict(xt)
    out.csv("results.csv", ["x", "target", "prediction"], zip(xt[:, 0], yt[:, 0], pred[:, 0]))
    out.checkpoint(res)
    return "ok", {"relative_error": float(np.linalg.norm(pred - yt) / np.linalg.norm(yt))}


def _train_wgan(p, seed, out):
    rng = Rng(seed)
    d = len(p["mean"])
    target = generative.gaussian_sampler(p["mean"], p["var"] * np.eye(d))
    data = generative.sample(target, p["n_data"], rng.spawn(1))
    model = generative.init_wgan(d, d, tuple(p["hidden"]), tuple(p["hidden"]), lam=p["lam"], K=p["K"],
                                 lr_d=p["lr_d"], lr_g=p["lr_g"], seed=int(rng.spawn(2).integer(2**31)))
    bs = p["batch_size"] or None
    if bs is not None and bs > p["n_data"]:
        raise ConfigError("/params/batch_size", f"must not exceed n_data = {p['n_data']}")
    with np.errstate(all="ignore"):
        res = generative.train_wgan(model, data, p["epochs"], seed, bs, p["optimizer"], p["lr_schedule"])
    out.csv("history.csv", ["epoch", "objective", "penalty"], res.history)
    if res.status != "ok":
        return res.status, {"epochs_run": len(res.history)}
    G = generative.generate(res.model, p["n_generated"], int(rng.spawn(3).integer(2**31)))
    out.csv("results.csv", [f"x{i + 1}" for i in range(d)], G)
    out.checkpoint(res.model)
    stats = generative.empirical_stats(generative.generate(res.model, 100_000, int(rng.spawn(4).integer(2**31))))
    mean_err = float(np.max(np.abs(stats["mean"] - np.asarray(p["mean"]))))
    cov_err = float(np.linalg.norm(stats["covariance"] - p["var"] * np.eye(d)))
    return "ok", {"mean_error": mean_err, "cov_frobenius_error": cov_err}


def _conv_demo(p, seed, out):
    rows = []
    for k in range(1, p["max_kernel"] + 1):
        for s in range(1, p["max_stride"] + 1):
            c = convnet.contribution_counts(k + 2 * s + 2, k, s, crop=False, dims=1)
            steady = c[k - 1 : len(c) - k + 1] if len(c) > 2 * (k - 1) else c
            rows.append((k, s, convnet.checkerboard_uniform(k, s), k % s == 0, int(steady.min()), int(steady.max())))
    out.csv("results.csv", ["kernel", "stride", "uniform", "kernel_multiple_of_stride", "min_count", "max_count"], rows)
    hist = []
    for lvl in range(p["levels"]):
        N = 8 * 2**lvl
        h = 1.0 / (N - 1)
        e = convnet.fd_equivalence_check(lambda x1, x2: np.sin(x1 + 2 * x2), lambda x1, x2: np.cos(x1 + 2 * x2),
                                         "ddx", h, N)
        hist.append((N, h, e))
    out.csv("history.csv", ["n", "h", "ddx_error_sin"], hist)
    orders = [math.log2(a[2] / b[2]) * 1.0 / math.log2(a[1] / b[1]) for a, b in zip(hist[:-1], hist[1:])]
    return "ok", {
        "uniform_iff_multiple": all(r[2] == r[3] for r in rows),
        "stencil_orders": orders,
    }


def _sgd_toy(p, seed, out):
    path = optim.sgd_toy(p["lr"], p["lr_schedule"], p["iterations"], seed=seed, sampling=p["sampling"])
    star = optim.sgd_toy_minimizer()
    dist = np.linalg.norm(path - star, axis=1)
    out.csv("results.csv", ["k", "theta1", "theta2", "distance"], ((k, *path[k], dist[k]) for k in range(len(path))))
    tail = dist[-min(1000, len(dist)):]
    return "ok", {"minimizer": star.tolist(), "final_distance": float(dist[-1]),
                  "min_distance_last_1000": float(tail.min())}


def _gradcheck(p, seed, out):
    rng = Rng(seed)
    rows = []
    for i in range(p["n_nets"]):
        r = rng.spawn(i + 1)
        depth = 1 + int(r.integer(p["max_depth"]))
        act = ("tanh", "sine")[int(r.integer(2))]
        d_in = 1 + int(r.integer(3))
        widths = [d_in] + [1 + int(r.integer(p["max_width"])) for _ in range(depth)] + [1]
        cfg = nn.MlpConfig(widths, act)
        params = nn.init_params(cfg, r.spawn(1))
        x = r.spawn(2).normal((1, d_in))

        def f(xv, *arrs):
            return ad.sum(nn.mlp_forward(cfg, nn.MlpParams.from_arrays(list(arrs)), xv))

        tape = ad.record(f, x, *params.arrays())
        first = ad.grad_check(tape, p["step"]).max_rel_error
        second = ad.grad_check(ad.extend(tape), p["step"] * 100, roots=[tape.roots[0]]).max_rel_error
        rows.append((i, act, depth, "-".join(map(str, widths)), first, second))
    out.csv("results.csv", ["net", "activation", "depth", "widths", "first_order_rel_error", "second_order_rel_error"],
            rows)
    return "ok", {"max_rel_error": max(r[4] for r in rows), "max_second_order_rel_error": max(r[5] for r in rows)}


_RUNNERS = {
    "solve-fd": _solve_fd,
    "solve-spectral": _solve_spectral,
    "train-mlp": _train_mlp,
    "train-pinn": _train_pinn,
    "train-deeponet": _train_deeponet,
    "train-fno": _train_fno,
    "train-node": _train_node,
    "train-wgan": _train_wgan,
    "conv-demo": _conv_demo,
    "sgd-toy": _sgd_toy,
    "gradcheck": _gradcheck,
}


def execute(cfg: ExperimentConfig) -> tuple[str, dict]:
    """Run a validated config; writes artifacts and returns (status, metrics)."""
    out = _Outputs(cfg)
    out.dir.mkdir(parents=True, exist_ok=True)
    status, metrics = _RUNNERS[cfg.command](cfg.params, cfg.seed, out)
    manifest = {
        "config": cfg.to_dict(),
        "status": status,
        "metrics": _jsonable(metrics),
        "files": sorted(out.files) + ["manifest.json"],
    }
    with open(out.dir / "manifest.json", "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return status, metrics


# ---------------------------------------------------------------------------
# argument parsing


def _flag(name):
    return "--" + name.replace("_", "-")


def _parse_list(kind):
    conv = int if kind == "ints" else float

    def parse(text):
        text = text.strip()
        if not text:
            return []
        try:
            return [conv(t) for t in text.split(",")]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"expected comma-separated {kind}, got {text!r}") from exc

    return parse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError("", message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sciml", description="Scientific machine learning experiment runner.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, schema in COMMANDS.items():
        sp = sub.add_parser(name, help=f"run {name}", argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="JSON config file (flags override its values)")
        sp.add_argument("--seed", type=int, help="random seed (fallback: $SCIML_SEED, then 0)")
        sp.add_argument("--output-dir", dest="output_dir", help=f"output directory (default {DEFAULT_OUTPUT})")
        sp.add_argument("--precision", type=int, help="significant digits of floats in CSV files (default 17)")
        for key, (kind, default, text) in schema.items():
            kw = {"dest": f"p_{key}", "help": f"{text} (default {default!r})"}
            if isinstance(kind, tuple):
                kw["choices"] = kind
            elif kind in ("ints", "floats"):
                kw["type"] = _parse_list(kind)
            elif kind is bool:
                kw["type"] = lambda s: s.lower() in ("1", "true", "yes")
            else:
                kw["type"] = kind
            sp.add_argument(_flag(key), **kw)
    return parser


def resolve(argv) -> ExperimentConfig:
    """Merge defaults, the optional config file and flags into a validated config."""
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command", None)
    if command is None:
        build_parser().print_usage(sys.stderr)
        raise ConfigError("/command", "no subcommand given")
    doc = {"command": command}
    if "config" in ns:
        text_path = ns.pop("config")
        try:
            raw = _loads_strict(Path(text_path).read_text(), text_path)
        except OSError as exc:
            raise ConfigError("", f"cannot read {text_path}: {exc.strerror}") from exc
        base = config_from_dict(raw)
        if base.command != command:
            raise ConfigError("/command", f"config is for {base.command!r}, not {command!r}")
        doc = {k: v for k, v in raw.items()}
    params = dict(doc.get("params", {}))
    for key in list(ns):
        if key.startswith("p_"):
            params[key[2:]] = ns.pop(key)
    doc["params"] = params
    if "seed" in ns:
        doc["seed"] = ns["seed"]
    elif "seed" not in doc and os.environ.get("SCIML_SEED", "").strip():
        try:
            doc["seed"] = int(os.environ["SCIML_SEED"])
        except ValueError as exc:
            raise ConfigError("/seed", f"SCIML_SEED must be an integer, got {os.environ['SCIML_SEED']!r}") from exc
    for key in ("output_dir", "precision"):
        if key in ns:
            doc[key] = ns[key]
    return config_from_dict(doc)


def run(argv=None) -> int:
    """Parse, run and report; returns the process exit status."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = resolve(argv)
        status, metrics = execute(cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ConfigError, ValueError) as exc:
        print(f"sciml: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for k, v in _jsonable(metrics).items():
        print(f"{k}: {v}")
    print(f"status: {status}; artifacts in {cfg.output_dir}")
    return EXIT_OK if status == "ok" else EXIT_DIVERGED


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
