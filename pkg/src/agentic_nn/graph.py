"""Agent-graph data model and the structural checks applied to block variants.

A :class:`Network` is an ordered list of layers. Each layer holds a pool of
candidate :class:`BlockVariant` objects; a block is a small DAG of prompted
agent nodes with one entry node and one end node. Everything here is an
immutable value. "Mutation" returns a new :class:`Network` with the revision
bumped by one.
"""

from __future__ import annotations

import enum
import heapq
import re
import warnings
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Union

from .errors import CycleDetected, MissingBinding, UnusedBindingWarning

STATE_KEYS = frozenset({"task_data", "task_prompt", "task_id"})
END_KEY = "__end__"

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_TRAILING_DIGITS = re.compile(r"^(.*?)(\d+)$")


# ---------------------------------------------------------------------------
# variable sources


@dataclass(frozen=True)
class StateVar:
    key: str


@dataclass(frozen=True)
class NodeOutput:
    node_name: str


@dataclass(frozen=True)
class CrossBlockOutput:
    """Output of a node in an earlier layer's selected block.

    ``output_key`` is a node name, or ``"__end__"`` for that layer's block output.
    Resolved at execution time because the producing variant is chosen by routing.
    """

    layer_index: int
    output_key: str = END_KEY


@dataclass(frozen=True)
class LayerInput:
    """The input handed to the current layer (the previous layer's output)."""


Source = Union[StateVar, NodeOutput, CrossBlockOutput, LayerInput]


@dataclass(frozen=True)
class VariableRef:
    placeholder: str
    source: Source


# ---------------------------------------------------------------------------
# blocks and networks


def _tuple(obj, name: str, value) -> None:
    if not isinstance(value, tuple):
        object.__setattr__(obj, name, tuple(value))


@dataclass(frozen=True)
class NodeSpec:
    node_name: str
    agent_role: str
    prompt_template: str
    input_variables: tuple[VariableRef, ...] = ()
    output_format: str = "Plain text."
    constraints: str = ""
    temperature: float | None = None

    def __post_init__(self) -> None:
        _tuple(self, "input_variables", self.input_variables)


@dataclass(frozen=True)
class BlockVariant:
    block_id: int
    name: str
    nodes: tuple[NodeSpec, ...]
    edges: tuple[tuple[str, str], ...]
    entry_node: str
    end_node: str
    structure_description: str = ""
    structure_description_details: tuple[str, ...] = ()
    lineage: int | None = None

    def __post_init__(self) -> None:
        _tuple(self, "nodes", self.nodes)
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        _tuple(self, "structure_description_details", self.structure_description_details)

    @property
    def base_name(self) -> str:
        m = _TRAILING_DIGITS.match(self.name)
        return m.group(1) if m else self.name

    @property
    def node_names(self) -> list[str]:
        return [n.node_name for n in self.nodes]

    def node(self, name: str) -> NodeSpec:
        for n in self.nodes:
            if n.node_name == name:
                return n
        raise KeyError(name)

    def renamed(self, block_id: int, lineage: int | None) -> BlockVariant:
        """Copy carrying a new id, the matching ``<base><id>`` name and a parent id."""
        return replace(self, block_id=block_id, name=f"{self.base_name}{block_id}", lineage=lineage)


@dataclass(frozen=True)
class LayerSlot:
    layer_index: int
    pool: tuple[BlockVariant, ...]
    active_hint: int | None = None
    pending_critique: str = ""

    def __post_init__(self) -> None:
        _tuple(self, "pool", self.pool)
        if not self.pool:
            raise ValueError(f"layer {self.layer_index} has an empty pool")
        ids = [b.block_id for b in self.pool]
        if len(set(ids)) != len(ids):
            raise ValueError(f"layer {self.layer_index} has duplicate block ids {ids}")
        if self.active_hint is not None and self.active_hint not in ids:
            raise ValueError(f"active_hint {self.active_hint} is not in layer {self.layer_index}")

    def block(self, block_id: int) -> BlockVariant:
        for b in self.pool:
            if b.block_id == block_id:
                return b
        raise KeyError(block_id)

    @property
    def next_block_id(self) -> int:
        return max(b.block_id for b in self.pool) + 1


@dataclass(frozen=True)
class Network:
    layers: tuple[LayerSlot, ...]
    task_profile: str = ""
    revision: int = 0

    def __post_init__(self) -> None:
        _tuple(self, "layers", self.layers)
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.layer_index != i:
                raise ValueError(f"layer at position {i} claims index {layer.layer_index}")

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def pool_sizes(self) -> list[int]:
        return [len(layer.pool) for layer in self.layers]

    def _with_layer(self, layer: LayerSlot) -> Network:
        layers = list(self.layers)
        layers[layer.layer_index] = layer
        return replace(self, layers=tuple(layers), revision=self.revision + 1)

    def with_block_appended(self, layer_index: int, block: BlockVariant) -> Network:
        """Append ``block`` to a layer's pool and make it the active hint."""
        layer = self.layers[layer_index]
        return self._with_layer(
            replace(layer, pool=layer.pool + (block,), active_hint=block.block_id)
        )

    def with_block_substituted(self, layer_index: int, block: BlockVariant) -> Network:
        """Network whose layer holds only ``block``; used for side-by-side trials."""
        layer = self.layers[layer_index]
        return self._with_layer(replace(layer, pool=(block,), active_hint=None))

    def with_pending_critiques(self, critiques: Mapping[int, str]) -> Network:
        """Attach critique text to layers; one revision bump for the whole batch."""
        if not critiques:
            return self
        layers = list(self.layers)
        for idx, text in critiques.items():
            layers[idx] = replace(layers[idx], pending_critique=text)
        return replace(self, layers=tuple(layers), revision=self.revision + 1)


# ---------------------------------------------------------------------------
# prompts


def placeholders(template: str) -> list[str]:
    """Placeholder names in order of appearance, duplicates kept."""
    return _PLACEHOLDER.findall(template)


def render_prompt(template: str, bindings: Mapping[str, str]) -> str:
    """Substitute ``{name}`` slots in one pass.

    Only ``{identifier}`` counts as a slot, so JSON snippets in a template are
    left alone. Inserted values are never re-scanned.
    """
    used: set[str] = set()

    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in bindings:
            raise MissingBinding(name)
        used.add(name)
        return str(bindings[name])

    out = _PLACEHOLDER.sub(sub, template)
    unused = set(bindings) - used
    if unused:
        warnings.warn(f"unused bindings: {sorted(unused)}", UnusedBindingWarning, stacklevel=2)
    return out


# ---------------------------------------------------------------------------
# validation


class Check(str, enum.Enum):
    VARIABLE_SOURCES = "VariableSources"
    FORMAT = "Format"
    EDGES = "Edges"
    ACYCLICITY = "Acyclicity"
    UNIQUENESS = "Uniqueness"


@dataclass(frozen=True)
class Failure:
    check: Check
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    failures: tuple[Failure, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def checks(self) -> set[Check]:
        return {f.check for f in self.failures}


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def structural_key(block: BlockVariant) -> tuple[frozenset, frozenset]:
    """Identity used by the uniqueness check. Descriptions do not count."""
    nodes = frozenset(
        (n.node_name, n.agent_role, _normalize_ws(n.prompt_template)) for n in block.nodes
    )
    return nodes, frozenset(block.edges)


def structurally_equal(a: BlockVariant, b: BlockVariant) -> bool:
    return structural_key(a) == structural_key(b)


def _adjacency(block: BlockVariant) -> dict[str, list[str]]:
    names = set(block.node_names)
    adj: dict[str, list[str]] = {n: [] for n in block.node_names}
    for a, b in block.edges:
        if a in names and b in names:
            adj[a].append(b)
    return adj


def _ancestors(adj: Mapping[str, Sequence[str]]) -> dict[str, set[str]]:
    parents: dict[str, set[str]] = {n: set() for n in adj}
    for a, succ in adj.items():
        for b in succ:
            parents[b].add(a)
    out: dict[str, set[str]] = {}
    for node in adj:
        seen: set[str] = set()
        stack = list(parents[node])
        while stack:
            p = stack.pop()
            if p not in seen:
                seen.add(p)
                stack.extend(parents[p])
        out[node] = seen
    return out


def _has_cycle(adj: Mapping[str, Sequence[str]]) -> bool:
    indeg = {n: 0 for n in adj}
    for succ in adj.values():
        for b in succ:
            indeg[b] += 1
    ready = [n for n, d in indeg.items() if d == 0]
    seen = 0
    while ready:
        n = ready.pop()
        seen += 1
        for b in adj[n]:
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
    return seen != len(adj)


def _check_sources(block: BlockVariant, adj) -> list[Failure]:
    out = []
    names = set(block.node_names)
    ancestors = _ancestors(adj)
    for node in block.nodes:
        for var in node.input_variables:
            src = var.source
            where = f"{node.node_name}.{var.placeholder}"
            if isinstance(src, StateVar):
                if src.key not in STATE_KEYS:
                    out.append(Failure(Check.VARIABLE_SOURCES, f"{where}: unknown state variable {src.key!r}"))
            elif isinstance(src, NodeOutput):
                if src.node_name not in names:
                    out.append(Failure(Check.VARIABLE_SOURCES, f"{where}: no node named {src.node_name!r}"))
                elif src.node_name not in ancestors.get(node.node_name, ()):
                    out.append(
                        Failure(
                            Check.VARIABLE_SOURCES,
                            f"{where}: {src.node_name!r} does not precede {node.node_name!r}",
                        )
                    )
            elif isinstance(src, CrossBlockOutput):
                if src.layer_index < 0 or not src.output_key:
                    out.append(Failure(Check.VARIABLE_SOURCES, f"{where}: bad cross-block reference {src}"))
            elif not isinstance(src, LayerInput):
                out.append(Failure(Check.VARIABLE_SOURCES, f"{where}: unsupported source {src!r}"))
    return out


def _check_format(block: BlockVariant) -> list[Failure]:
    out = []
    fail = lambda msg: out.append(Failure(Check.FORMAT, msg))  # noqa: E731
    if block.block_id < 1:
        fail(f"block_id must be positive, got {block.block_id}")
    m = _TRAILING_DIGITS.match(block.name)
    if not m or m.group(2) != str(block.block_id) or not m.group(1):
        fail(f"name {block.name!r} must be <base_name>{block.block_id}")
    seen: set[str] = set()
    for n in block.nodes:
        if not n.node_name:
            fail("empty node name")
        if n.node_name in seen:
            fail(f"duplicate node name {n.node_name!r}")
        seen.add(n.node_name)
    if not block.nodes:
        fail("block has no nodes")
    if block.entry_node not in seen:
        fail(f"entry_node {block.entry_node!r} is not a node")
    if block.end_node not in seen:
        fail(f"end_node {block.end_node!r} is not a node")
    for n in block.nodes:
        if not n.prompt_template.strip():
            fail(f"{n.node_name}: empty prompt_template")
        if not n.output_format.strip():
            fail(f"{n.node_name}: empty output_format")
        slots = set(placeholders(n.prompt_template))
        declared = [v.placeholder for v in n.input_variables]
        for p in sorted({p for p in declared if declared.count(p) > 1}):
            fail(f"{n.node_name}: placeholder {{{p}}} declared more than once")
        for p in sorted(slots - set(declared)):
            fail(f"{n.node_name}: placeholder {{{p}}} has no input variable")
        for p in sorted(set(declared) - slots):
            fail(f"{n.node_name}: input variable {p!r} is not used by the template")
    return out


def _check_edges(block: BlockVariant, adj) -> list[Failure]:
    out = []
    names = set(block.node_names)
    for a, b in block.edges:
        for end in (a, b):
            if end not in names:
                out.append(Failure(Check.EDGES, f"edge ({a}, {b}) names unknown node {end!r}"))
    for n in block.node_names:
        if n != block.end_node and not adj[n]:
            out.append(Failure(Check.EDGES, f"node {n!r} has no outgoing edge"))
    return out


def validate_block(block: BlockVariant, pool: Iterable[BlockVariant] = ()) -> ValidationReport:
    """Run every structural check and report all failures.

    Checks run in a fixed order: variable sources, format, edges, acyclicity,
    uniqueness against ``pool``. When re-validating a member of a pool, leave
    that member out of ``pool``.
    """
    adj = _adjacency(block)
    failures = _check_sources(block, adj) + _check_format(block) + _check_edges(block, adj)
    if _has_cycle(adj):
        failures.append(Failure(Check.ACYCLICITY, "edges contain a cycle"))
    key = structural_key(block)
    for other in pool:
        if structural_key(other) == key:
            failures.append(
                Failure(Check.UNIQUENESS, f"structure duplicates {other.name} (block_id {other.block_id})")
            )
            break
    return ValidationReport(tuple(failures))


def topological_order(block: BlockVariant) -> list[str]:
    """Deterministic execution order.

    The entry node goes first when it has no predecessors; remaining ties are
    broken by node name, which yields the lexicographically smallest order.
    """
    names = set(block.node_names)
    indeg = {n: 0 for n in names}
    adj: dict[str, list[str]] = {n: [] for n in names}
    for a, b in block.edges:
        if a not in names or b not in names:
            raise ValueError(f"edge ({a}, {b}) names an unknown node")
        adj[a].append(b)
        indeg[b] += 1

    def key(n: str) -> tuple[int, str]:
        return (0 if n == block.entry_node else 1, n)

    heap = [key(n) for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        _, n = heapq.heappop(heap)
        order.append(n)
        for b in adj[n]:
            indeg[b] -= 1
            if indeg[b] == 0:
                heapq.heappush(heap, key(b))
    if len(order) != len(names):
        raise CycleDetected(f"block {block.name} contains a cycle")
    return order


def predecessors(block: BlockVariant) -> dict[str, set[str]]:
    preds: dict[str, set[str]] = {n: set() for n in block.node_names}
    for a, b in block.edges:
        preds[b].add(a)
    return preds


def node_ancestors(block: BlockVariant) -> dict[str, set[str]]:
    """For each node, every node with a path to it."""
    return _ancestors(_adjacency(block))
