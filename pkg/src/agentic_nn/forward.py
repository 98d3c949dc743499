"""Forward pass: route each layer to a block variant, run its nodes, chain outputs."""

from __future__ import annotations

import itertools
import json
import logging
import re
import threading
import time
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

from .errors import (
    AnnError,
    LayerExecutionFailed,
    MissingTag,
    NodeExecutionFailed,
    UnbalancedTag,
    UnresolvableVariable,
)
from .graph import (
    END_KEY,
    STATE_KEYS,
    BlockVariant,
    CrossBlockOutput,
    LayerInput,
    Network,
    NodeOutput,
    NodeSpec,
    StateVar,
    node_ancestors,
    predecessors,
    render_prompt,
    topological_order,
)
from .llm import ChatRequest, Gateway, UsageRecord
from .parsing import extract_tagged
from . import prompts

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskInstance:
    task_id: str
    task_prompt: str
    task_data: str | None = None
    ground_truth: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TaskInstance:
        return cls(
            task_id=str(d["task_id"]),
            task_prompt=str(d["task_prompt"]),
            task_data=d.get("task_data"),
            ground_truth=None if d.get("ground_truth") is None else str(d["ground_truth"]),
        )


@dataclass(frozen=True)
class NodeRecord:
    node_name: str
    rendered_prompt: str
    node_output: str
    usage: UsageRecord


@dataclass(frozen=True)
class LayerRecord:
    layer_index: int
    selected_block_id: int
    block_input: str
    block_output: str
    node_records: tuple[NodeRecord, ...]

    def output_of(self, key: str) -> str:
        if key == END_KEY:
            return self.block_output
        for rec in self.node_records:
            if rec.node_name == key:
                return rec.node_output
        raise KeyError(key)


@dataclass(frozen=True)
class RoutingFallback:
    layer_index: int
    reason: str
    chosen_block_id: int


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    layer_records: tuple[LayerRecord, ...]
    final_output: str
    started: float
    finished: float
    events: tuple[RoutingFallback, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Trajectory:
        layers = tuple(
            LayerRecord(
                layer_index=lr["layer_index"],
                selected_block_id=lr["selected_block_id"],
                block_input=lr["block_input"],
                block_output=lr["block_output"],
                node_records=tuple(
                    NodeRecord(nr["node_name"], nr["rendered_prompt"], nr["node_output"], UsageRecord(**nr["usage"]))
                    for nr in lr["node_records"]
                ),
            )
            for lr in d["layer_records"]
        )
        return cls(
            task_id=d["task_id"],
            layer_records=layers,
            final_output=d["final_output"],
            started=d["started"],
            finished=d["finished"],
            events=tuple(RoutingFallback(**e) for e in d.get("events", [])),
        )

    def save(self, run_dir: str | Path) -> Path:
        path = Path(run_dir) / f"{self.task_id}.trajectory.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> Trajectory:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class LogicalClock:
    """Deterministic stand-in for ``time.time``: 0, 1, 2, ..."""

    def __init__(self) -> None:
        self._ticks = itertools.count()
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            return float(next(self._ticks))


def first_layer_input(task: TaskInstance) -> str:
    if task.task_data:
        return f"Task:\n{task.task_prompt}\n\nData:\n{task.task_data}"
    return task.task_prompt


@dataclass
class ForwardConfig:
    agent_model: str = "gpt-4o-mini"
    selector_model: str = "gpt-4o-mini"
    agent_temperature: float = 0.0
    max_output_tokens: int = 1024
    # characters of the layer input shown to the selector
    routing_input_chars: int = 2000
    node_parallelism: int = 4


class ForwardEngine:
    def __init__(self, gateway: Gateway, config: ForwardConfig | None = None, clock: Callable[[], float] = time.time):
        self.gateway = gateway
        self.config = config or ForwardConfig()
        self.clock = clock

    # -- routing ------------------------------------------------------------

    def dynamic_routing_select(
        self,
        pool: Sequence[BlockVariant],
        layer_index: int,
        layer_input: str,
        task: TaskInstance,
        *,
        active_hint: int | None = None,
        events: list[RoutingFallback] | None = None,
    ) -> int:
        """Choose a block id for this layer.

        A singleton pool is returned without a model call. Any failure to get a
        usable id from the selector falls back to ``active_hint``, then to the
        lowest block id, and appends a :class:`RoutingFallback` to ``events``.
        """
        if not pool:
            raise ValueError("cannot route over an empty pool")
        if len(pool) == 1:
            return pool[0].block_id
        ids = {b.block_id for b in pool}
        try:
            reply = self.gateway.complete(
                ChatRequest(
                    model_name=self.config.selector_model,
                    user_text=self._selection_prompt(pool, layer_index, layer_input, task),
                    temperature=0.0,
                    max_output_tokens=64,
                    purpose="selector",
                )
            )
            raw = extract_tagged(reply.text, "selected_agg_func")
            m = re.search(r"(\d+)\s*$", raw)
            if m and int(m.group(1)) in ids:
                return int(m.group(1))
            reason = f"UnrecognizedId: {raw!r}"
        except (MissingTag, UnbalancedTag) as e:
            reason = f"{type(e).__name__}: {e}"
        except AnnError as e:
            reason = f"GatewayFailure: {type(e).__name__}: {e}"
        chosen = active_hint if active_hint in ids else min(ids)
        log.warning("routing fallback at layer %d (%s); using block %d", layer_index, reason, chosen)
        if events is not None:
            events.append(RoutingFallback(layer_index, reason, chosen))
        return chosen

    def _selection_prompt(self, pool, layer_index, layer_input, task) -> str:
        lines = []
        for b in pool:
            lines.append(f"- block_id {b.block_id} ({b.name}): {b.structure_description}")
            lines.extend(f"    * {d}" for d in b.structure_description_details)
        return render_prompt(
            prompts.SELECT,
            {
                "layer_index": str(layer_index),
                "task_prompt": task.task_prompt,
                "layer_input": layer_input[: self.config.routing_input_chars],
                "blocks_structure_descriptions": "\n".join(lines),
            },
        )

    # -- execution ----------------------------------------------------------

    def execute_layer(
        self,
        block: BlockVariant,
        layer_input: str,
        task: TaskInstance,
        prior_layers: Sequence[LayerRecord] = (),
        *,
        layer_index: int | None = None,
    ) -> LayerRecord:
        """Run every node of ``block`` in dependency order and return the layer record.

        All variable references are checked before the first model call.
        Nodes with no path between them run concurrently (bounded by
        ``node_parallelism``); records are stored in topological order.
        """
        if layer_index is None:
            layer_index = len(prior_layers)
        order = topological_order(block)
        prior = {r.layer_index: r for r in prior_layers}
        ancestors = node_ancestors(block)
        for name in order:
            for var in block.node(name).input_variables:
                self._check_resolvable(name, var, ancestors[name], prior, layer_index)

        preds = predecessors(block)
        outputs: dict[str, NodeRecord] = {}
        workers = max(1, self.config.node_parallelism)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            while len(outputs) < len(order):
                ready = [n for n in order if n not in outputs and preds[n] <= outputs.keys()]
                if len(ready) == 1 or workers == 1:
                    results = [self._run_node(block.node(n), layer_input, task, prior, outputs) for n in ready]
                else:
                    futs = [pool.submit(self._run_node, block.node(n), layer_input, task, prior, outputs) for n in ready]
                    results = [f.result() for f in futs]
                for rec in results:
                    outputs[rec.node_name] = rec

        records = tuple(outputs[n] for n in order)
        return LayerRecord(
            layer_index=layer_index,
            selected_block_id=block.block_id,
            block_input=layer_input,
            block_output=outputs[block.end_node].node_output,
            node_records=records,
        )

    @staticmethod
    def _check_resolvable(node, var, ancestors, prior, layer_index) -> None:
        src = var.source
        if isinstance(src, StateVar):
            if src.key not in STATE_KEYS:
                raise UnresolvableVariable(node, var.placeholder, f"unknown state variable {src.key!r}")
        elif isinstance(src, NodeOutput):
            if src.node_name not in ancestors:
                raise UnresolvableVariable(node, var.placeholder, f"{src.node_name!r} does not run before {node!r}")
        elif isinstance(src, CrossBlockOutput):
            if src.layer_index >= layer_index or src.layer_index not in prior:
                raise UnresolvableVariable(node, var.placeholder, f"layer {src.layer_index} has not run")
            try:
                prior[src.layer_index].output_of(src.output_key)
            except KeyError:
                raise UnresolvableVariable(
                    node, var.placeholder, f"layer {src.layer_index} has no output {src.output_key!r}"
                ) from None
        elif not isinstance(src, LayerInput):
            raise UnresolvableVariable(node, var.placeholder, f"unsupported source {src!r}")

    def _bind(self, node: NodeSpec, layer_input, task, prior, outputs) -> dict[str, str]:
        values = {}
        for var in node.input_variables:
            src = var.source
            if isinstance(src, StateVar):
                values[var.placeholder] = getattr(task, src.key) or ""
            elif isinstance(src, NodeOutput):
                values[var.placeholder] = outputs[src.node_name].node_output
            elif isinstance(src, CrossBlockOutput):
                values[var.placeholder] = prior[src.layer_index].output_of(src.output_key)
            else:
                values[var.placeholder] = layer_input
        return values

    def _run_node(self, node: NodeSpec, layer_input, task, prior, outputs) -> NodeRecord:
        prompt = render_prompt(node.prompt_template, self._bind(node, layer_input, task, prior, outputs))
        system = f"You are {node.agent_role}."
        if node.constraints:
            system += f"\nConstraints: {node.constraints}"
        if node.output_format:
            system += f"\nOutput format: {node.output_format}"
        temperature = self.config.agent_temperature if node.temperature is None else node.temperature
        try:
            reply = self.gateway.complete(
                ChatRequest(
                    model_name=self.config.agent_model,
                    user_text=prompt,
                    system_text=system,
                    temperature=temperature,
                    max_output_tokens=self.config.max_output_tokens,
                    purpose="agent",
                )
            )
        except AnnError as e:
            raise NodeExecutionFailed(node.node_name, e) from e
        return NodeRecord(node.node_name, prompt, reply.text, reply.usage)

    # -- whole network ------------------------------------------------------

    def run_forward(
        self,
        network: Network,
        task: TaskInstance,
        *,
        force: Mapping[int, BlockVariant] | None = None,
    ) -> Trajectory:
        """One forward pass. ``force`` pins a layer to a given block (no routing)."""
        started = self.clock()
        events: list[RoutingFallback] = []
        records: list[LayerRecord] = []
        layer_input = first_layer_input(task)
        for layer in network.layers:
            idx = layer.layer_index
            try:
                if force and idx in force:
                    block = force[idx]
                else:
                    chosen = self.dynamic_routing_select(
                        layer.pool, idx, layer_input, task, active_hint=layer.active_hint, events=events
                    )
                    block = layer.block(chosen)
                record = self.execute_layer(block, layer_input, task, records, layer_index=idx)
            except AnnError as e:
                raise LayerExecutionFailed(idx, e) from e
            records.append(record)
            layer_input = record.block_output
        return Trajectory(
            task_id=task.task_id,
            layer_records=tuple(records),
            final_output=records[-1].block_output,
            started=started,
            finished=self.clock(),
            events=tuple(events),
        )
