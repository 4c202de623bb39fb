"""YAML run configuration with strict key checking.

Example::

    task:
      seed: 0
      dims: [64, 64]        # layer widths, input first
      r_star: 4             # planted rank
      k_star: 8             # planted nonzero columns
      noise_std: 0.05
      n_train: 2048
      n_val: 1024
    budget: {total_ratio: 0.2, lowrank_ratio: 0.05}
    schedule: {T: 2000, t_i: 200, t_f: 400}
    optim: {alpha: 4.0, batch_size: 64, beta: 0.85}
    mode: losparse
    literal_schedule_formula: false
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .decomposition import CompressionBudget
from .errors import BudgetError, ConfigError, StorageError
from .harness import TrainConfig

_SECTIONS = {
    "task": {"seed": True, "dims": True, "r_star": True, "k_star": True, "noise_std": True,
             "n_train": True, "n_val": True, "sparse_scale": False},
    "budget": {"total_ratio": True, "lowrank_ratio": True},
    "schedule": {"T": True, "t_i": True, "t_f": True},
    "optim": {"alpha": True, "batch_size": True, "beta": True},
}
_TOP = {"task", "budget", "schedule", "optim", "mode", "literal_schedule_formula"}


@dataclass(frozen=True)
class TaskSpec:
    seed: int
    dims: tuple
    r_star: int
    k_star: int
    noise_std: float
    n_train: int
    n_val: int
    sparse_scale: float | None = None

    @property
    def d_in(self):
        return self.dims[0]

    @property
    def d_out(self):
        return self.dims[-1]


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec
    train: TrainConfig


def _int(value, where):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return value


def _float(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _section(doc, name):
    body = doc.get(name)
    if not isinstance(body, dict):
        raise ConfigError(f"{name}: expected a mapping")
    allowed = _SECTIONS[name]
    unknown = sorted(set(body) - set(allowed))
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(map(str, unknown))}")
    missing = sorted(k for k, required in allowed.items() if required and k not in body)
    if missing:
        raise ConfigError(f"{name}: missing key(s) {', '.join(missing)}")
    return body


def parse_config(doc) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at the top level")
    unknown = sorted(set(doc) - _TOP)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(map(str, unknown))}")

    t = _section(doc, "task")
    dims = t["dims"]
    if not isinstance(dims, list) or len(dims) < 2:
        raise ConfigError("task.dims: expected a list of at least two layer widths")
    dims = tuple(_int(d, "task.dims") for d in dims)
    if min(dims) < 1:
        raise ConfigError("task.dims: widths must be positive")
    scale = t.get("sparse_scale")
    task = TaskSpec(
        seed=_int(t["seed"], "task.seed"),
        dims=dims,
        r_star=_int(t["r_star"], "task.r_star"),
        k_star=_int(t["k_star"], "task.k_star"),
        noise_std=_float(t["noise_std"], "task.noise_std"),
        n_train=_int(t["n_train"], "task.n_train"),
        n_val=_int(t["n_val"], "task.n_val"),
        sparse_scale=None if scale is None else _float(scale, "task.sparse_scale"),
    )

    b = _section(doc, "budget")
    s = _section(doc, "schedule")
    o = _section(doc, "optim")
    literal = doc.get("literal_schedule_formula", False)
    if not isinstance(literal, bool):
        raise ConfigError(f"literal_schedule_formula: expected true or false, got {literal!r}")
    try:
        budget = CompressionBudget(_float(b["total_ratio"], "budget.total_ratio"),
                                   _float(b["lowrank_ratio"], "budget.lowrank_ratio"))
        train = TrainConfig(
            learning_rate=_float(o["alpha"], "optim.alpha"),
            total_steps=_int(s["T"], "schedule.T"),
            warmup_steps=_int(s["t_i"], "schedule.t_i"),
            final_steps=_int(s["t_f"], "schedule.t_f"),
            beta=_float(o["beta"], "optim.beta"),
            budget=budget,
            batch_size=_int(o["batch_size"], "optim.batch_size"),
            seed=task.seed,
            mode=doc.get("mode", "losparse"),
            literal_schedule=literal,
        )
    except BudgetError as exc:
        raise ConfigError(f"budget: {exc}") from exc
    if train.warmup_steps < 0 or train.final_steps < 0 or train.warmup_steps + train.final_steps >= train.total_steps:
        raise ConfigError("schedule: need t_i, t_f >= 0 and t_i + t_f < T")
    return RunConfig(task, train)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return parse_config(doc)
