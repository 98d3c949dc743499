"""Backward pass: textual gradients, momentum merging and validated block updates.

The numerical knobs (``beta``, ``alpha``, ``eta``) have no arithmetic meaning
on text. Each one picks an instruction in the corresponding prompt instead:

* ``beta`` - how strongly the block critique should follow global feedback;
* ``alpha`` - how much the merged feedback keeps from the previous direction;
* ``eta`` - how much of a block an update may change (prompts only, plus
  rewiring, plus new nodes). The parser enforces this scope.

New variants are only ever appended to a layer's pool.
"""

from __future__ import annotations

import json
import logging
import random
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from typing import Any, Union

from .errors import (
    AnnError,
    EditBudgetExceeded,
    GradientUnparseable,
    LayerwiseUnparseable,
    MissingTag,
    UnbalancedTag,
)
from .evaluation import EvalOutcome, Judge, dataset_metric, failed_outcome
from .forward import ForwardEngine, TaskInstance, Trajectory
from .graph import BlockVariant, Network, render_prompt, validate_block
from .llm import ChatRequest, Gateway
from .parsing import extract_tagged, first_json_object
from .serialize import block_to_dict, node_from_dict
from . import prompts

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class PromptSuggestion:
    node_name: str
    suggestion: str


@dataclass(frozen=True)
class BlockFeedback:
    layer_index: int
    block_name: str
    structure_suggestion: str | None = None
    prompt_suggestions: tuple[PromptSuggestion, ...] = ()

    @property
    def has_suggestions(self) -> bool:
        return bool(self.structure_suggestion) or bool(self.prompt_suggestions)


@dataclass(frozen=True)
class GlobalLossReport:
    global_analysis: str
    per_block: tuple[BlockFeedback, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class LocalGradient:
    layer_index: int
    target_block_id: int
    critique: str
    proposed: BlockVariant | None = None


@dataclass
class Velocity:
    text: str
    updated_at_step: int


class VelocityStore:
    """Previous adjustment direction per (layer, block)."""

    def __init__(self) -> None:
        self._data: dict[tuple[int, int], Velocity] = {}

    def get(self, layer_index: int, block_id: int) -> Velocity | None:
        return self._data.get((layer_index, block_id))

    def put(self, layer_index: int, block_id: int, text: str, step: int) -> None:
        self._data[(layer_index, block_id)] = Velocity(text, step)

    def clear(self) -> None:
        self._data.clear()

    def __len__(self) -> int:
        return len(self._data)


@dataclass(frozen=True)
class OptimizerConfig:
    beta: float = 0.5
    alpha: float = 0.5
    eta: float = 1.0
    max_update_attempts: int = 3
    max_node_additions: int = 3
    perf_validation_sample: int = 4
    model: str = "gpt-4o-mini"

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.max_update_attempts < 1:
            raise ValueError("max_update_attempts must be >= 1")
        if self.max_node_additions < 0:
            raise ValueError("max_node_additions must be >= 0")
        if self.perf_validation_sample < 1:
            raise ValueError("perf_validation_sample must be >= 1")


@dataclass(frozen=True)
class GlobalUpdate:
    network: Network
    flagged_layers: frozenset[int]
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class AttemptFailure:
    attempt: int
    check: str  # a validation Check value, or Format / EditBudget / Performance / Provider
    details: tuple[str, ...]


@dataclass(frozen=True)
class Accepted:
    block: BlockVariant
    network: Network
    attempts: int


@dataclass(frozen=True)
class Rejected:
    failures: tuple[AttemptFailure, ...]


UpdateResult = Union[Accepted, Rejected]


# ---------------------------------------------------------------------------
# parsing


def parse_global_report(text: str) -> GlobalLossReport:
    try:
        body = extract_tagged(text, "output_format")
    except (MissingTag, UnbalancedTag):
        body = text
    obj = first_json_object(body)
    if obj is None:
        raise GradientUnparseable("no JSON object in global report")
    analysis = obj.get("global_analysis")
    if not isinstance(analysis, str) or not analysis.strip():
        raise GradientUnparseable("missing global_analysis")
    blocks = obj.get("blocks", obj.get("per_block", []))
    if not isinstance(blocks, list):
        raise GradientUnparseable("'blocks' must be a list")
    entries = []
    for i, b in enumerate(blocks):
        try:
            suggestions = tuple(
                PromptSuggestion(str(p["node_name"]), str(p["suggestion"]))
                for p in (b.get("prompt_suggestions") or [])
            )
            structure = b.get("structure_suggestion")
            entries.append(
                BlockFeedback(
                    layer_index=int(b["layer_index"]),
                    block_name=str(b.get("block_name", "")),
                    structure_suggestion=None if structure in (None, "") else str(structure),
                    prompt_suggestions=suggestions,
                )
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise GradientUnparseable(f"malformed block entry {i}: {e}") from e
    return GlobalLossReport(analysis.strip(), tuple(entries))


def parse_layerwise(
    text: str,
    original: BlockVariant,
    scope: prompts.EditScope,
    new_block_id: int,
) -> tuple[str, BlockVariant | None]:
    """Read a layerwise reply into ``(critique, proposed block or None)``.

    Raises :class:`LayerwiseUnparseable` for unreadable replies or arrow-style
    edges, and :class:`EditBudgetExceeded` when the proposal changes more of the
    block than ``scope`` allows.
    """
    obj = first_json_object(text)
    if obj is None:
        raise LayerwiseUnparseable("no JSON object in reply")
    critique = obj.get("critique", "")
    if not isinstance(critique, str):
        raise LayerwiseUnparseable("critique must be a string")
    nodes = obj.get("nodes") or obj.get("all_nodes")
    if not nodes:
        if not critique.strip():
            raise LayerwiseUnparseable("reply has neither a critique nor a structure")
        return critique.strip(), None

    raw_edges = obj.get("edges", obj.get("all_edges_now", []))
    edges = []
    for e in raw_edges or []:
        if isinstance(e, str):
            raise LayerwiseUnparseable(f"edge {e!r} is not a two-element array")
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise LayerwiseUnparseable(f"edge {e!r} is not a two-element array")
        edges.append((str(e[0]), str(e[1])))
    try:
        node_specs = tuple(node_from_dict(n) for n in nodes)
        proposed = BlockVariant(
            block_id=new_block_id,
            name=f"{original.base_name}{new_block_id}",
            nodes=node_specs,
            edges=tuple(edges),
            entry_node=str(obj["entry_node"]),
            end_node=str(obj["end_node"]),
            structure_description=str(obj.get("block_structure_description", "")),
            structure_description_details=tuple(str(d) for d in obj.get("block_structure_description_details", [])),
            lineage=original.block_id,
        )
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise LayerwiseUnparseable(f"malformed structure: {e}") from e

    old_nodes = set(original.node_names)
    added = [n for n in proposed.node_names if n not in old_nodes]
    if len(added) > scope.node_additions:
        raise EditBudgetExceeded(f"{len(added)} new nodes {added}, at most {scope.node_additions} allowed")
    if not scope.rewire and (
        set(proposed.edges) != set(original.edges) or set(proposed.node_names) != old_nodes
    ):
        raise EditBudgetExceeded("only prompt edits are allowed at this step size")
    return critique.strip(), proposed


# ---------------------------------------------------------------------------
# engine


def _trajectory_view(network: Network, trajectory: Trajectory) -> list[dict[str, Any]]:
    view = []
    for rec in trajectory.layer_records:
        layer = network.layers[rec.layer_index]
        try:
            name = layer.block(rec.selected_block_id).name
        except KeyError:
            name = f"block {rec.selected_block_id}"
        view.append(
            {
                "layer_index": rec.layer_index,
                "block_name": name,
                "block_input": rec.block_input,
                "block_output": rec.block_output,
                "nodes": [
                    {"node_name": n.node_name, "node_input": n.rendered_prompt, "node_output": n.node_output}
                    for n in rec.node_records
                ],
            }
        )
    return view


class BackwardEngine:
    def __init__(
        self,
        gateway: Gateway,
        forward: ForwardEngine,
        judge: Judge,
        config: OptimizerConfig | None = None,
        seed: int = 0,
    ):
        self.gateway = gateway
        self.forward = forward
        self.judge = judge
        self.config = config or OptimizerConfig()
        self.seed = seed
        self.momentum_calls = 0
        self.warnings: list[str] = []

    def _warn(self, msg: str) -> None:
        log.warning(msg)
        self.warnings.append(msg)

    def _ask(self, text: str, purpose: str, max_tokens: int = 4096) -> str:
        return self.gateway.complete(
            ChatRequest(
                model_name=self.config.model,
                user_text=text,
                temperature=0.0,
                max_output_tokens=max_tokens,
                purpose=purpose,
            )
        ).text

    # -- global ---------------------------------------------------------------

    def compute_global_gradient(
        self,
        network: Network,
        trajectory: Trajectory,
        outcome: EvalOutcome,
        task: TaskInstance,
    ) -> GlobalLossReport:
        result = outcome.raw_judge_text or outcome.error or ("passed" if outcome.passed else "failed")
        text = render_prompt(
            prompts.GLOBAL,
            {
                "task_prompt": task.task_prompt,
                "final_result": result,
                "canonical_solution": task.ground_truth or "(no canonical solution)",
                "generated_solution": trajectory.final_output,
                "trajectory": json.dumps(_trajectory_view(network, trajectory), indent=2, ensure_ascii=False),
                "global_loss_format": prompts.GLOBAL_LOSS_FORMAT,
            },
        )
        return parse_global_report(self._ask(text, "global_gradient"))

    def global_gradient_update(
        self, network: Network, report: GlobalLossReport, trajectory: Trajectory | None = None
    ) -> GlobalUpdate:
        """Attach block feedback to its layers and flag them for local work.

        Block structures are untouched here. The revision goes up by one when at
        least one layer is flagged.
        """
        warnings = []
        critiques: dict[int, list[str]] = {}
        for fb in report.per_block:
            if not 0 <= fb.layer_index < len(network):
                msg = f"UnknownLayerReference: layer {fb.layer_index} ({fb.block_name}) skipped"
                warnings.append(msg)
                self._warn(msg)
                continue
            if not fb.has_suggestions:
                continue
            lines = []
            if fb.structure_suggestion:
                lines.append(f"Structure ({fb.block_name}): {fb.structure_suggestion}")
            lines += [f"Prompt for {p.node_name}: {p.suggestion}" for p in fb.prompt_suggestions]
            critiques.setdefault(fb.layer_index, []).extend(lines)
        pending = {
            idx: f"Global analysis: {report.global_analysis}\n" + "\n".join(lines)
            for idx, lines in critiques.items()
        }
        return GlobalUpdate(network.with_pending_critiques(pending), frozenset(pending), tuple(warnings))

    # -- local ----------------------------------------------------------------

    def _available_agents(self, network: Network) -> str:
        roles = {}
        for layer in network.layers:
            for b in layer.pool:
                for n in b.nodes:
                    roles.setdefault(n.agent_role, n.constraints)
        return "\n".join(f"- {r}" + (f" (constraints: {c})" if c else "") for r, c in sorted(roles.items()))

    def _blocks_log(self, block: BlockVariant, layer_index: int, trajectory: Trajectory) -> str:
        log_obj: dict[str, Any] = {"structure": block_to_dict(block)}
        for rec in trajectory.layer_records:
            if rec.layer_index == layer_index and rec.selected_block_id == block.block_id:
                log_obj["execution"] = {
                    "block_input": rec.block_input,
                    "block_output": rec.block_output,
                    "nodes": [
                        {"node_name": n.node_name, "node_input": n.rendered_prompt, "node_output": n.node_output}
                        for n in rec.node_records
                    ],
                }
        return json.dumps(log_obj, indent=2, ensure_ascii=False)

    def compute_local_gradient(
        self,
        layer_index: int,
        block: BlockVariant,
        trajectory: Trajectory,
        report: GlobalLossReport,
        beta: float | None = None,
        *,
        network: Network,
        task: TaskInstance,
    ) -> LocalGradient:
        """Block-level critique, optionally with a proposed replacement structure."""
        beta = self.config.beta if beta is None else beta
        layer = network.layers[layer_index]
        scope = prompts.edit_scope(self.config.eta, self.config.max_node_additions)
        feedback = report.global_analysis
        if layer.pending_critique:
            feedback = layer.pending_critique
        text = render_prompt(
            prompts.LOCAL,
            {
                "block_name": block.name,
                "layer_index": str(layer_index),
                "global_loss_feedback": feedback,
                "emphasis": prompts.emphasis_directive(beta),
                "blocks_log": self._blocks_log(block, layer_index, trajectory),
                "canonical_solution": task.ground_truth or "(no canonical solution)",
                "task_prompt": task.task_prompt,
                "available_agents": self._available_agents(network),
                "edit_scope": scope.text,
                "new_block_id": str(layer.next_block_id),
                "base_name": block.base_name,
                "layerwise_loss_format": prompts.LAYERWISE_LOSS_FORMAT,
            },
        )
        critique, proposed = parse_layerwise(self._ask(text, "local_gradient"), block, scope, layer.next_block_id)
        return LocalGradient(layer_index, block.block_id, critique, proposed)

    def apply_momentum(
        self,
        layer_index: int,
        block_id: int,
        gradient: LocalGradient,
        store: VelocityStore,
        alpha: float | None = None,
        *,
        step: int = 0,
        block: BlockVariant | None = None,
        trajectory: Trajectory | None = None,
        result_text: str = "",
    ) -> LocalGradient:
        """Merge the gradient with the stored velocity for (layer, block).

        Cold start returns the gradient unchanged and seeds the velocity. An
        untagged merger reply keeps the current critique (with a warning).
        """
        self.momentum_calls += 1
        alpha = self.config.alpha if alpha is None else alpha
        previous = store.get(layer_index, block_id)
        if previous is None:
            store.put(layer_index, block_id, gradient.critique, step)
            return gradient

        record = None
        if trajectory is not None:
            record = next(
                (r for r in trajectory.layer_records if r.layer_index == layer_index and r.selected_block_id == block_id),
                None,
            )
        nodes_info = []
        if record is not None:
            nodes_info = [
                {"node_name": n.node_name, "node_input": n.rendered_prompt, "node_output": n.node_output}
                for n in record.node_records
            ]
        text = render_prompt(
            prompts.MOMENTUM,
            {
                "block_name": block.name if block else f"layer {layer_index} block {block_id}",
                "current_block": json.dumps(block_to_dict(block), ensure_ascii=False) if block else "",
                "current_task_results": result_text,
                "current_gradient": gradient.critique,
                "velocity": previous.text,
                "block_input": record.block_input if record else "",
                "block_output": record.block_output if record else "",
                "nodes_info": json.dumps(nodes_info, ensure_ascii=False),
                "weighting": prompts.momentum_directive(alpha),
            },
        )
        try:
            merged = extract_tagged(self._ask(text, "momentum"), "adjusted feedback")
        except (MissingTag, UnbalancedTag) as e:
            self._warn(f"momentum merge for layer {layer_index} block {block_id} unusable ({e}); keeping current feedback")
            store.put(layer_index, block_id, gradient.critique, step)
            return gradient
        except AnnError as e:
            self._warn(f"momentum merge for layer {layer_index} block {block_id} failed ({e}); keeping current feedback")
            store.put(layer_index, block_id, gradient.critique, step)
            return gradient
        store.put(layer_index, block_id, merged, step)
        return LocalGradient(gradient.layer_index, gradient.target_block_id, merged, gradient.proposed)

    def validate_performance(
        self,
        candidate: BlockVariant,
        incumbent: BlockVariant,
        layer_index: int,
        network: Network,
        validation_tasks: Sequence[TaskInstance],
        sample_size: int | None = None,
    ) -> bool:
        """Candidate vs incumbent on the same fixed-seed sample; ties go to the candidate."""
        if not validation_tasks:
            return True
        k = min(sample_size or self.config.perf_validation_sample, len(validation_tasks))
        sample = random.Random(self.seed).sample(list(validation_tasks), k)

        def outcomes(block: BlockVariant, strict: bool) -> list[EvalOutcome] | None:
            out = []
            for task in sample:
                try:
                    traj = self.forward.run_forward(network, task, force={layer_index: block})
                except AnnError as e:
                    if strict:
                        return None
                    out.append(failed_outcome(task, f"{type(e).__name__}: {e}"))
                    continue
                out.append(self.judge.evaluate(task, traj.final_output))
            return out

        cand = outcomes(candidate, strict=True)
        if cand is None:
            return False
        inc = outcomes(incumbent, strict=False)
        return dataset_metric(cand) >= dataset_metric(inc)

    def local_gradient_update(
        self,
        network: Network,
        layer_index: int,
        block: BlockVariant,
        gradient: LocalGradient,
        validation_tasks: Sequence[TaskInstance] = (),
        *,
        perf_validation: bool = True,
    ) -> UpdateResult:
        """Ask for a revised block up to ``max_update_attempts`` times.

        Each attempt is checked structurally against the layer pool and then,
        if enabled, against the incumbent on validation tasks. The first
        candidate to pass is appended to the pool.
        """
        pool = network.layers[layer_index].pool
        new_id = network.layers[layer_index].next_block_id
        scope = prompts.edit_scope(self.config.eta, self.config.max_node_additions)
        draft = json.dumps(block_to_dict(gradient.proposed), indent=2, ensure_ascii=False) if gradient.proposed else "none"
        failures: list[AttemptFailure] = []

        for attempt in range(1, self.config.max_update_attempts + 1):
            previous = "none"
            if failures:
                previous = "\n".join(
                    f"attempt {f.attempt} failed {f.check}: " + "; ".join(f.details) for f in failures
                )
            text = render_prompt(
                prompts.UPDATE,
                {
                    "block_name": block.name,
                    "layer_index": str(layer_index),
                    "current_block": json.dumps(block_to_dict(block), indent=2, ensure_ascii=False),
                    "critique": gradient.critique,
                    "draft": draft,
                    "previous_failures": previous,
                    "edit_scope": scope.text,
                    "new_block_id": str(new_id),
                    "base_name": block.base_name,
                    "layerwise_loss_format": prompts.LAYERWISE_LOSS_FORMAT,
                },
            )
            try:
                reply = self._ask(text, "optimizer")
            except AnnError as e:
                failures.append(AttemptFailure(attempt, "Provider", (str(e),)))
                continue
            try:
                _, candidate = parse_layerwise(reply, block, scope, new_id)
            except EditBudgetExceeded as e:
                failures.append(AttemptFailure(attempt, "EditBudget", (str(e),)))
                continue
            except LayerwiseUnparseable as e:
                failures.append(AttemptFailure(attempt, "Format", (str(e),)))
                continue
            if candidate is None:
                failures.append(AttemptFailure(attempt, "Format", ("reply carries no block structure",)))
                continue

            report = validate_block(candidate, pool)
            if not report.passed:
                first = report.failures[0].check.value
                failures.append(AttemptFailure(attempt, first, tuple(f"{f.check.value}: {f.detail}" for f in report.failures)))
                continue
            if perf_validation and not self.validate_performance(
                candidate, block, layer_index, network, validation_tasks
            ):
                failures.append(AttemptFailure(attempt, "Performance", ("candidate scored below the incumbent",)))
                continue
            return Accepted(candidate, network.with_block_appended(layer_index, candidate), attempt)
        return Rejected(tuple(failures))


# ---------------------------------------------------------------------------
# one full backward pass


@dataclass
class BackwardResult:
    network: Network
    report: GlobalLossReport | None
    flagged_layers: frozenset[int] = frozenset()
    layer_order: list[int] = field(default_factory=list)
    accepted: list[tuple[int, BlockVariant]] = field(default_factory=list)
    rejected: list[tuple[int, Rejected]] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def run_backward(
    engine: BackwardEngine,
    network: Network,
    trajectory: Trajectory,
    outcome: EvalOutcome,
    task: TaskInstance,
    velocity: VelocityStore,
    *,
    momentum: bool = True,
    perf_validation: bool = True,
    validation_tasks: Sequence[TaskInstance] = (),
    step: int = 0,
    on_layer: Callable[[int], None] | None = None,
) -> BackwardResult:
    """Global gradient, then local updates for flagged layers, last layer first."""
    try:
        report = engine.compute_global_gradient(network, trajectory, outcome, task)
    except AnnError as e:
        return BackwardResult(network, None, errors=[f"global: {type(e).__name__}: {e}"])
    update = engine.global_gradient_update(network, report, trajectory)
    result = BackwardResult(update.network, report, update.flagged_layers)
    net = update.network
    result_text = outcome.raw_judge_text or outcome.error or ""
    for layer_index in sorted(update.flagged_layers, reverse=True):
        result.layer_order.append(layer_index)
        if on_layer:
            on_layer(layer_index)
        rec = trajectory.layer_records[layer_index]
        block = net.layers[layer_index].block(rec.selected_block_id)
        try:
            grad = engine.compute_local_gradient(layer_index, block, trajectory, report, network=net, task=task)
        except AnnError as e:
            result.errors.append(f"local {layer_index}: {type(e).__name__}: {e}")
            continue
        if momentum:
            grad = engine.apply_momentum(
                layer_index, block.block_id, grad, velocity,
                step=step, block=block, trajectory=trajectory, result_text=result_text,
            )
        outcome_u = engine.local_gradient_update(
            net, layer_index, block, grad, validation_tasks, perf_validation=perf_validation
        )
        if isinstance(outcome_u, Accepted):
            net = outcome_u.network
            result.accepted.append((layer_index, outcome_u.block))
        else:
            result.rejected.append((layer_index, outcome_u))
    result.network = net
    return result
