"""Layered agent-team networks: forward routing, textual-gradient training."""

from .backward import BackwardEngine, OptimizerConfig, VelocityStore, run_backward
from .config import ProjectConfig, build_session, load_config
from .errors import AnnError
from .evaluation import EvalOutcome, Judge, dataset_metric
from .forward import ForwardConfig, ForwardEngine, TaskInstance, Trajectory
from .graph import (
    BlockVariant,
    CrossBlockOutput,
    LayerInput,
    LayerSlot,
    Network,
    NodeOutput,
    NodeSpec,
    StateVar,
    VariableRef,
    render_prompt,
    topological_order,
    validate_block,
)
from .llm import ChatRequest, Gateway, LiveBackend, Rule, ScriptedBackend, ScriptedOracle
from .serialize import load_network, save_network
from .training import EpochMetrics, RunConfig, Toggles, Trainer, load_tasks

__all__ = [
    "AnnError", "BackwardEngine", "BlockVariant", "ChatRequest", "CrossBlockOutput", "EpochMetrics",
    "EvalOutcome", "ForwardConfig", "ForwardEngine", "Gateway", "Judge", "LayerInput", "LayerSlot",
    "LiveBackend", "Network", "NodeOutput", "NodeSpec", "OptimizerConfig", "ProjectConfig", "Rule",
    "RunConfig", "ScriptedBackend", "ScriptedOracle", "StateVar", "TaskInstance", "Toggles", "Trainer",
    "Trajectory", "VariableRef", "VelocityStore", "build_session", "dataset_metric", "load_config",
    "load_network", "load_tasks", "render_prompt", "run_backward", "save_network", "topological_order",
    "validate_block",
]
