"""Project configuration file and the wiring of engines from it.

One JSON file holds everything except the API key, which is read from the
environment variable named by ``backend.api_key_env``. Relative paths are
resolved against the directory containing the config file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError

from .backward import BackwardEngine, OptimizerConfig
from .errors import ConfigInvalid
from .evaluation import Judge
from .forward import ForwardConfig, ForwardEngine, LogicalClock
from .llm import Gateway, LiveBackend, ScriptedBackend, ScriptedOracle
from .training import RunConfig, RunRecorder, Toggles, Trainer

DEFAULT_API_KEY_ENV = "ANN_API_KEY"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OptimizerSection(_Strict):
    beta: float = Field(0.5, ge=0, le=1)
    alpha: float = Field(0.5, ge=0, le=1)
    eta: float = Field(1.0, gt=0, le=1)
    max_update_attempts: int = Field(3, ge=1)
    max_node_additions: int = Field(3, ge=0)
    perf_validation_sample: int = Field(4, ge=1)


class TogglesSection(_Strict):
    momentum: bool = True
    performance_validation: bool = True
    backward: bool = True


class ModelsSection(_Strict):
    agent: str = "gpt-4o-mini"
    selector: str = "gpt-4o-mini"
    judge: str = "gpt-4o-mini"
    optimizer: str = "gpt-4o-mini"


class BackendSection(_Strict):
    kind: Literal["live", "scripted"] = "scripted"
    script: str | None = None
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = Field(60.0, gt=0)
    max_retries: int = Field(3, ge=0)
    max_parallel: int = Field(4, ge=1)
    # model name -> [input, output] price per million tokens
    prices: dict[str, tuple[float, float]] = Field(default_factory=dict)
    cost_budget: float | None = Field(None, ge=0)


class ProjectConfig(_Strict):
    network: str
    train: str | None = None
    validation: str | None = None
    runs_dir: str = "runs"
    epochs: int = Field(1, ge=1)
    seed: int = 0
    parallel_tasks: int = Field(1, ge=1)
    node_parallelism: int = Field(4, ge=1)
    routing_input_chars: int = Field(2000, ge=1)
    rubric_threshold: float = Field(7.0, ge=0, le=10)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    toggles: TogglesSection = Field(default_factory=TogglesSection)
    models: ModelsSection = Field(default_factory=ModelsSection)
    backend: BackendSection = Field(default_factory=BackendSection)

    # directory the relative paths are anchored to; not part of the file
    _base_dir: Path = PrivateAttr(default=Path("."))

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def run_config(self) -> RunConfig:
        return RunConfig(
            epochs=self.epochs,
            train_path=str(self.path(self.train)) if self.train else None,
            validation_path=str(self.path(self.validation)) if self.validation else None,
            optimizer=OptimizerConfig(
                **self.optimizer.model_dump(), model=self.models.optimizer
            ),
            toggles=Toggles(**self.toggles.model_dump()),
            seed=self.seed,
            parallel_tasks=self.parallel_tasks,
        )


def _problems(err: ValidationError) -> list[str]:
    return [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in err.errors()]


def parse_config(obj: dict, base_dir: Path = Path(".")) -> ProjectConfig:
    try:
        cfg = ProjectConfig.model_validate(obj)
    except ValidationError as e:
        raise ConfigInvalid(_problems(e)) from None
    cfg._base_dir = base_dir
    return cfg


def load_config(path: str | Path) -> ProjectConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigInvalid([f"{path}: file not found"]) from None
    except json.JSONDecodeError as e:
        raise ConfigInvalid([f"{path}: not valid JSON ({e})"]) from None
    if not isinstance(obj, dict):
        raise ConfigInvalid([f"{path}: top level must be an object"])
    return parse_config(obj, path.parent)


def load_oracle(spec: str, base_dir: Path = Path(".")) -> ScriptedOracle:
    """``builtin:<name>`` for a bundled script, otherwise a JSON rules file."""
    if spec.startswith("builtin:"):
        from .suites import BUILTIN_SCRIPTS

        name = spec[len("builtin:"):]
        if name not in BUILTIN_SCRIPTS:
            raise ConfigInvalid([f"backend.script: unknown builtin script {name!r} (have {sorted(BUILTIN_SCRIPTS)})"])
        return BUILTIN_SCRIPTS[name]()
    path = Path(spec)
    if not path.is_absolute():
        path = base_dir / path
    try:
        return ScriptedOracle.from_json(path)
    except FileNotFoundError:
        raise ConfigInvalid([f"backend.script: {path} not found"]) from None
    except (ValueError, json.JSONDecodeError) as e:
        raise ConfigInvalid([f"backend.script: {e}"]) from None


@dataclass
class Session:
    gateway: Gateway
    forward: ForwardEngine
    judge: Judge
    backward: BackwardEngine
    run_config: RunConfig

    def trainer(self, run_dir: str | Path | None = None) -> Trainer:
        return Trainer(self.gateway, self.forward, self.judge, self.backward, self.run_config, RunRecorder(run_dir))


def build_session(cfg: ProjectConfig, env: dict[str, str] | None = None) -> Session:
    env = os.environ if env is None else env
    b = cfg.backend
    if b.kind == "scripted":
        if not b.script:
            raise ConfigInvalid(["backend.script: required for the scripted backend"])
        backend = ScriptedBackend(load_oracle(b.script, cfg.base_dir))
        clock = LogicalClock()
    else:
        key = env.get(b.api_key_env)
        if not key:
            raise ConfigInvalid([f"backend: environment variable {b.api_key_env} is not set"])
        backend = LiveBackend(b.base_url, key, timeout=b.timeout)
        clock = None
    gateway = Gateway(backend, max_retries=b.max_retries, max_parallel=b.max_parallel, prices=b.prices)
    fconf = ForwardConfig(
        agent_model=cfg.models.agent,
        selector_model=cfg.models.selector,
        routing_input_chars=cfg.routing_input_chars,
        node_parallelism=cfg.node_parallelism,
    )
    forward = ForwardEngine(gateway, fconf, clock=clock) if clock else ForwardEngine(gateway, fconf)
    judge = Judge(gateway, cfg.models.judge, cfg.rubric_threshold)
    run_config = cfg.run_config()
    backward = BackwardEngine(gateway, forward, judge, run_config.optimizer, seed=cfg.seed)
    return Session(gateway, forward, judge, backward, run_config)
