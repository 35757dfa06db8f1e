"""
Run configuration.

Precedence, lowest first: dataclass defaults, a flat TOML file (keys are
field names), then command-line flags. Logging verbosity comes from the
DPERM_LOG environment variable.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
import logging
import os
from pathlib import Path
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]
from typing import Any

from dperm.core import BudgetSplit, IntervalMethod, PrivacyKind
from dperm.erm import Solver, TrainConfig
from dperm.errors import ConfigError
from dperm.evaluation import EvalConfig, SweepParameter
from dperm.intervals import CISpec
from dperm.losses import LossModel, LossName
from dperm.synthetic import SynthModel
from dperm.workflows.private_intervals import TrainingMechanism

LOG_ENV = "DPERM_LOG"
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging() -> int:
    """Install a stderr handler at the level DPERM_LOG names (default error)."""
    name = os.environ.get(LOG_ENV, "error").strip().lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"{LOG_ENV} must be one of {sorted(LOG_LEVELS)}, got {name!r}", field=LOG_ENV)
    logging.basicConfig(level=LOG_LEVELS[name], format=LOG_FORMAT, force=True)
    return LOG_LEVELS[name]


class Command(str, Enum):
    TRAIN = "train"
    CI = "ci"
    EVALUATE = "evaluate"
    SYNTH = "synth"


@dataclass(frozen=True)
class RunConfig:
    command: Command = Command.TRAIN
    input_path: str = ""
    schema_path: str = ""
    output_path: str = ""
    fit_path: str = ""
    loss: LossName = LossName.LOGISTIC
    h: float = 1.0
    c: float = 0.001
    tol: float = 1e-8
    max_iter: int = 200
    solver: Solver = Solver.NEWTON
    mechanism: TrainingMechanism = TrainingMechanism.OBJECTIVE
    privacy: PrivacyKind = PrivacyKind.PURE_DP
    phi1: float = 0.5
    phi2: float = 0.25
    phi3: float = 0.25
    alpha: float = 0.05
    m: int = 2000
    method: IntervalMethod | None = None
    k: int = 200
    m_vi: int = 1000
    seed: int | None = None
    workers: int = 1
    n: int | None = None
    d: int | None = None
    model: SynthModel = SynthModel.LOGISTIC
    theta_star: tuple[float, ...] | None = None
    n1: int | None = None
    d1: int | None = None
    sweep: SweepParameter | None = None
    values: tuple[float, ...] = ()
    plot_path: str = ""
    delta: float | None = None

    def __post_init__(self) -> None:
        coerce = {
            "command": Command,
            "loss": LossName,
            "solver": Solver,
            "mechanism": TrainingMechanism,
            "privacy": PrivacyKind,
            "model": SynthModel,
            "method": IntervalMethod,
            "sweep": SweepParameter,
        }
        for name, enum in coerce.items():
            value = getattr(self, name)
            if value is None:
                continue
            try:
                object.__setattr__(self, name, enum(value))
            except ValueError as e:
                choices = ", ".join(member.value for member in enum)
                raise ConfigError(f"{name} must be one of {choices}, got {value!r}", field=name) from e
        if self.theta_star is not None:
            object.__setattr__(self, "theta_star", tuple(float(v) for v in self.theta_star))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    # ---------- serialization ----------

    def to_dict(self) -> dict[str, Any]:
        """Plain JSON/TOML-ready values; enums become their string values."""
        out: dict[str, Any] = {}
        for key, value in asdict(self).items():
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = list(value)
            out[key] = value
        return out

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}", field=unknown[0])
        try:
            return cls(**{key: _coerce_sequence(value) for key, value in data.items()})
        except TypeError as e:
            raise ConfigError(f"malformed config: {e}") from e

    # ---------- derived settings ----------

    def loss_model(self) -> LossModel:
        return LossModel(self.loss, self.h)

    def train_config(self) -> TrainConfig:
        return TrainConfig(c=self.c, tol=self.tol, max_iter=self.max_iter, solver=self.solver)

    def budget_split(self) -> BudgetSplit:
        return BudgetSplit.of(self.privacy, self.phi1, self.phi2, self.phi3)

    def ci_spec(self) -> CISpec:
        return CISpec(
            alpha=self.alpha,
            m=self.m,
            method=self.method or IntervalMethod.MONTE_CARLO,
            workers=self.workers,
        )

    def eval_config(self, seed: int) -> EvalConfig:
        return EvalConfig(
            k=self.k,
            m_vi=self.m_vi,
            alpha=self.alpha,
            seed=seed,
            budget_split=self.budget_split(),
            mechanism=self.mechanism,
            loss=self.loss_model(),
            train=self.train_config(),
            m=self.m,
            workers=self.workers,
            method=self.method,
        )


def _coerce_sequence(value: Any) -> Any:
    return tuple(value) if isinstance(value, list) else value


REQUIRED_PATHS: dict[Command, tuple[str, ...]] = {
    Command.TRAIN: ("input_path", "output_path"),
    Command.CI: ("input_path", "fit_path", "output_path"),
    Command.EVALUATE: ("output_path",),
    Command.SYNTH: ("output_path",),
}


def validate(cfg: RunConfig) -> RunConfig:
    """
    Check the settings the chosen command depends on.

    Building the derived objects runs their own checks, so a bad c, budget
    or alpha surfaces here with the field it belongs to.
    """
    for name in REQUIRED_PATHS[cfg.command]:
        if not getattr(cfg, name):
            raise ConfigError(f"{cfg.command.value} needs --{_flag(name)}", field=name)
    if cfg.command is Command.SYNTH or (cfg.command is Command.EVALUATE and not cfg.input_path):
        for name in ("n", "d"):
            if getattr(cfg, name) is None:
                raise ConfigError(f"synthetic data needs --{name}", field=name)
    if cfg.sweep is not None and not cfg.values:
        raise ConfigError("--sweep needs --values", field="values")
    for name in ("phi1", "phi2", "phi3"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be positive, got {getattr(cfg, name)}", field=name)
    if cfg.delta is not None and not 0 < cfg.delta < 1:
        raise ConfigError(f"delta must lie in (0, 1), got {cfg.delta}", field="delta")

    cfg.loss_model()
    cfg.train_config()
    cfg.budget_split()
    if cfg.command is not Command.SYNTH:
        cfg.ci_spec()
    if cfg.command is Command.EVALUATE:
        cfg.eval_config(cfg.seed or 0)
    return cfg


def _flag(name: str) -> str:
    flags = {"input_path": "input", "output_path": "out", "fit_path": "fit", "schema_path": "schema"}
    return flags.get(name, name.replace("_", "-"))


def read_toml(path: str | Path) -> dict[str, Any]:
    try:
        with Path(path).open("rb") as f:
            return tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}", field="config") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config {path} is not valid TOML: {e}", field="config") from e


def load_config(
    command: Command | str,
    config_path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Defaults, then the TOML file, then `overrides` (None values are skipped)."""
    data: dict[str, Any] = {}
    if config_path:
        data.update(read_toml(config_path))
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})
    data["command"] = command
    return validate(RunConfig.from_mapping(data))


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, seed=seed)
