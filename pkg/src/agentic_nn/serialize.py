"""Canonical JSON form of networks and blocks.

Edges are written as two-element arrays. ``dumps(loads(dumps(x))) == dumps(x)``
for any value produced by :func:`dumps`.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .graph import (
    END_KEY,
    STATE_KEYS,
    BlockVariant,
    CrossBlockOutput,
    LayerInput,
    LayerSlot,
    Network,
    NodeOutput,
    NodeSpec,
    Source,
    StateVar,
    VariableRef,
)


def source_to_dict(src: Source) -> dict[str, Any]:
    if isinstance(src, StateVar):
        return {"kind": "state", "key": src.key}
    if isinstance(src, NodeOutput):
        return {"kind": "node_output", "node_name": src.node_name}
    if isinstance(src, CrossBlockOutput):
        return {"kind": "cross_block", "layer_index": src.layer_index, "output_key": src.output_key}
    if isinstance(src, LayerInput):
        return {"kind": "layer_input"}
    raise TypeError(f"unknown source {src!r}")


def source_from_obj(obj: Any) -> Source:
    """Accepts the canonical dict form or a string shorthand.

    Shorthands, as models tend to write them: a state key (``"task_prompt"``),
    ``"layer_input"``, ``"<node>"`` / ``"<node>_output"`` for a node in the same
    block, and ``"layer:<i>:<key>"`` for a cross-block output.
    """
    if isinstance(obj, str):
        s = obj.strip()
        if s in STATE_KEYS:
            return StateVar(s)
        if s in ("layer_input", "block_input"):
            return LayerInput()
        if s.startswith("layer:"):
            _, idx, *rest = s.split(":")
            return CrossBlockOutput(int(idx), rest[0] if rest and rest[0] else END_KEY)
        if s.endswith("_output"):
            s = s[: -len("_output")]
        return NodeOutput(s)
    if not isinstance(obj, dict):
        raise ValueError(f"cannot read variable source from {obj!r}")
    kind = obj.get("kind")
    if kind == "state":
        return StateVar(str(obj["key"]))
    if kind == "node_output":
        return NodeOutput(str(obj["node_name"]))
    if kind == "cross_block":
        return CrossBlockOutput(int(obj["layer_index"]), str(obj.get("output_key", END_KEY)))
    if kind == "layer_input":
        return LayerInput()
    raise ValueError(f"unknown source kind {kind!r}")


def node_to_dict(node: NodeSpec) -> dict[str, Any]:
    return {
        "node_name": node.node_name,
        "agent_role": node.agent_role,
        "prompt_template": node.prompt_template,
        "input_variables": [
            {"placeholder": v.placeholder, "source": source_to_dict(v.source)}
            for v in node.input_variables
        ],
        "output_format": node.output_format,
        "constraints": node.constraints,
        "temperature": node.temperature,
    }


def node_from_dict(d: dict[str, Any]) -> NodeSpec:
    variables = []
    for v in d.get("input_variables", []):
        variables.append(VariableRef(str(v["placeholder"]), source_from_obj(v["source"])))
    temp = d.get("temperature")
    return NodeSpec(
        node_name=str(d["node_name"]),
        agent_role=str(d.get("agent_role", d.get("agent", ""))),
        prompt_template=str(d["prompt_template"]),
        input_variables=tuple(variables),
        output_format=str(d.get("output_format", "")),
        constraints=str(d.get("constraints", "")),
        temperature=None if temp is None else float(temp),
    )


def block_to_dict(block: BlockVariant) -> dict[str, Any]:
    return {
        "block_id": block.block_id,
        "name": block.name,
        "nodes": [node_to_dict(n) for n in block.nodes],
        "edges": [list(e) for e in block.edges],
        "entry_node": block.entry_node,
        "end_node": block.end_node,
        "structure_description": block.structure_description,
        "structure_description_details": list(block.structure_description_details),
        "lineage": block.lineage,
    }


def block_from_dict(d: dict[str, Any]) -> BlockVariant:
    edges = []
    for e in d.get("edges", []):
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise ValueError(f"edge must be a two-element array, got {e!r}")
        edges.append((str(e[0]), str(e[1])))
    lineage = d.get("lineage")
    return BlockVariant(
        block_id=int(d["block_id"]),
        name=str(d["name"]),
        nodes=tuple(node_from_dict(n) for n in d["nodes"]),
        edges=tuple(edges),
        entry_node=str(d["entry_node"]),
        end_node=str(d["end_node"]),
        structure_description=str(d.get("structure_description", "")),
        structure_description_details=tuple(str(x) for x in d.get("structure_description_details", [])),
        lineage=None if lineage is None else int(lineage),
    )


def network_to_dict(net: Network) -> dict[str, Any]:
    return {
        "layers": [
            {
                "layer_index": layer.layer_index,
                "pool": [block_to_dict(b) for b in layer.pool],
                "active_hint": layer.active_hint,
                "pending_critique": layer.pending_critique,
            }
            for layer in net.layers
        ],
        "task_profile": net.task_profile,
        "revision": net.revision,
    }


def network_from_dict(d: dict[str, Any]) -> Network:
    layers = []
    for i, ld in enumerate(d["layers"]):
        layers.append(
            LayerSlot(
                layer_index=int(ld.get("layer_index", i)),
                pool=tuple(block_from_dict(b) for b in ld["pool"]),
                active_hint=ld.get("active_hint"),
                pending_critique=str(ld.get("pending_critique", "")),
            )
        )
    return Network(tuple(layers), task_profile=str(d.get("task_profile", "")), revision=int(d.get("revision", 0)))


def dumps(obj: Any) -> str:
    """Canonical text for a Network, BlockVariant or plain JSON value."""
    if isinstance(obj, Network):
        obj = network_to_dict(obj)
    elif isinstance(obj, BlockVariant):
        obj = block_to_dict(obj)
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def load_network(path: str | Path) -> Network:
    return network_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_network(net: Network, path: str | Path) -> None:
    Path(path).write_text(dumps(net), encoding="utf-8")
