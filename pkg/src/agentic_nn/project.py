"""On-disk project layout: scaffolding new projects and reading finished runs."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import PathExists
from .graph import BlockVariant, LayerInput, LayerSlot, Network, NodeSpec, VariableRef
from .serialize import dumps
from . import prompts
from .suites import arithmetic_network, arithmetic_tasks, arithmetic_validation_tasks

STARTER_FINAL_OUTPUT = "The answer is 42"


@dataclass(frozen=True)
class ProjectLayout:
    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    @property
    def networks(self) -> Path:
        return self.root / "networks"

    @property
    def runs(self) -> Path:
        return self.root / "runs"

    @property
    def scripts(self) -> Path:
        return self.root / "scripts"

    @property
    def data(self) -> Path:
        return self.root / "data"


def starter_network() -> Network:
    analyse = BlockVariant(
        1, "AnalysisBlock1",
        (NodeSpec("analyst", "careful analyst", "Restate the task and list what is needed to answer it.\n{task}",
                  (VariableRef("task", LayerInput()),), output_format="ANALYSIS: <notes>"),),
        (), "analyst", "analyst",
        structure_description="single analyst that restates the task",
    )
    answer = BlockVariant(
        1, "AnswerBlock1",
        (NodeSpec("writer", "answer writer", "Write the final answer using this analysis.\n{analysis}",
                  (VariableRef("analysis", LayerInput()),), output_format="The answer is <answer>"),),
        (), "writer", "writer",
        structure_description="single writer that states the final answer",
    )
    return Network((LayerSlot(0, (analyse,)), LayerSlot(1, (answer,))), task_profile="starter question answering")


def starter_rules() -> list[dict[str, str]]:
    rewrite = {
        "critique": "the writer should double-check its answer",
        "nodes": [
            {"node_name": "writer", "agent_role": "answer writer",
             "prompt_template": "Write the final answer using this analysis.\n{analysis}",
             "input_variables": [{"placeholder": "analysis", "source": "layer_input"}],
             "output_format": "The answer is <answer>"},
            {"node_name": "checker", "agent_role": "answer checker",
             "prompt_template": "Check this answer and restate it.\n{draft}",
             "input_variables": [{"placeholder": "draft", "source": "writer"}],
             "output_format": "The answer is <answer>"},
        ],
        "edges": [["writer", "checker"]],
        "entry_node": "writer",
        "end_node": "checker",
        "block_structure_description": "writer followed by a checker",
        "block_structure_description_details": ["writer -> checker"],
    }
    report = {
        "global_analysis": "the final answer was not checked",
        "blocks": [{"layer_index": 1, "block_name": "AnswerBlock1",
                    "structure_suggestion": "add a checker", "prompt_suggestions": []}],
    }
    return [
        {"match": prompts.MARKER_SELECT, "reply": "<selected_agg_func> 1 </selected_agg_func>"},
        {"match": prompts.MARKER_VERIFY + "\n", "reply": "The answer is correct."},
        {"match": prompts.MARKER_RUBRIC, "reply": "Coherence: 8\nEngagement: 8\nAdherence: 8\nCreativity: 8\n"
                                                  "Suggestions for Improvement: none\nOverall Score: 8"},
        {"match": prompts.MARKER_GLOBAL, "reply": "<output_format>" + json.dumps(report) + "</output_format>"},
        {"match": prompts.MARKER_LOCAL, "reply": json.dumps({"critique": "add a checking step"})},
        {"match": prompts.MARKER_MOMENTUM, "reply": "<adjusted feedback>add a checking step</adjusted feedback>"},
        {"match": prompts.MARKER_UPDATE, "reply": json.dumps(rewrite)},
        {"match": "Restate the task", "reply": "ANALYSIS: the question asks for one number."},
        {"match": "Check this answer", "reply": STARTER_FINAL_OUTPUT},
        {"match": "Write the final answer", "reply": STARTER_FINAL_OUTPUT},
    ]


def _starter_tasks(prefix: str, n: int) -> list[dict[str, Any]]:
    return [
        {"task_id": f"{prefix}-{i}", "task_prompt": f"What is six times seven? (variant {i})", "ground_truth": "42"}
        for i in range(n)
    ]


_SCAFFOLD_README = """# {name}

Scaffolded agentic network project.

    config.json                  run configuration (backend, datasets, optimizer, toggles)
    networks/{network_file}      initial network
    scripts/starter.rules.json   scripted-oracle rules (array of {{match, reply}})
    data/train.jsonl             training tasks
    data/validation.jsonl        validation tasks
    runs/                        run output

Try it without any API key:

    ann run --config config.json --task "What is six times seven?"
    ann train --config config.json
    ann inspect runs/<run>

{extra}
To use a real endpoint set `backend.kind` to `live` and export the key in the
variable named by `backend.api_key_env` (default `ANN_API_KEY`).
"""


def init_project(path: str | Path, template: str = "starter") -> ProjectLayout:
    """Create a project skeleton. Refuses to touch a non-empty directory."""
    root = Path(path)
    if root.exists() and (not root.is_dir() or any(root.iterdir())):
        raise PathExists(f"{root} already exists and is not empty")
    layout = ProjectLayout(root)
    for d in (layout.networks, layout.runs, layout.scripts, layout.data):
        d.mkdir(parents=True, exist_ok=True)

    if template == "starter":
        network = starter_network()
        train = _starter_tasks("train", 4)
        validation = _starter_tasks("val", 2)
        script = "scripts/starter.rules.json"
        extra = (
            "With the bundled rules, `ann run` on any task ends with the final output\n"
            f"`{STARTER_FINAL_OUTPUT}`.\n"
        )
    elif template == "arithmetic":
        network = arithmetic_network()
        to_row = lambda t: {"task_id": t.task_id, "task_prompt": t.task_prompt, "ground_truth": t.ground_truth}  # noqa: E731
        train = [to_row(t) for t in arithmetic_tasks()]
        validation = [to_row(t) for t in arithmetic_validation_tasks()]
        script = "builtin:arithmetic"
        extra = "This project uses the bundled scripted arithmetic suite (`builtin:arithmetic`).\n"
    else:
        raise ValueError(f"unknown template {template!r}")

    (layout.scripts / "starter.rules.json").write_text(json.dumps(starter_rules(), indent=2) + "\n")
    network_file = f"{template}.network.json"
    (layout.networks / network_file).write_text(dumps(network))
    for name, rows in (("train", train), ("validation", validation)):
        (layout.data / f"{name}.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    config = {
        "network": f"networks/{network_file}",
        "train": "data/train.jsonl",
        "validation": "data/validation.jsonl",
        "runs_dir": "runs",
        "epochs": 3,
        "seed": 0,
        "optimizer": {"beta": 0.5, "alpha": 0.5, "eta": 1.0, "max_update_attempts": 3,
                      "max_node_additions": 3, "perf_validation_sample": 4},
        "toggles": {"momentum": True, "performance_validation": True, "backward": True},
        "backend": {"kind": "scripted", "script": script, "api_key_env": "ANN_API_KEY"},
    }
    layout.config.write_text(json.dumps(config, indent=2) + "\n")
    (root / "README.md").write_text(
        _SCAFFOLD_README.format(name=root.name or "project", network_file=network_file, extra=extra)
    )
    return layout


def _step_no(path: Path) -> int:
    m = re.match(r"step-(\d+)\.", path.name)
    return int(m.group(1)) if m else -1


def inspect_run(run_dir: str | Path) -> dict[str, Any]:
    """Pool growth per epoch and the lineage of every accepted block."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"{run_dir} is not a run directory")
    history = []
    hist_file = run_dir / "history.jsonl"
    if hist_file.exists():
        history = [json.loads(line) for line in hist_file.read_text().splitlines() if line.strip()]
    lineage = []
    for path in sorted(run_dir.glob("step-*.block.json"), key=_step_no):
        doc = json.loads(path.read_text())
        for item in doc["accepted"]:
            b = item["block"]
            lineage.append(
                {
                    "step": doc["step"],
                    "epoch": doc.get("epoch"),
                    "layer_index": item["layer_index"],
                    "block_id": b["block_id"],
                    "name": b["name"],
                    "parent": b.get("lineage"),
                    "nodes": [n["node_name"] for n in b["nodes"]],
                    "edges": b["edges"],
                }
            )
    steps = len(list(run_dir.glob("step-*.global.json")))
    return {"history": history, "lineage": lineage, "backward_steps": steps}
