"""Bundled scripted suites for desk-scale runs.

The arithmetic suite asks for sums of two integers. Its scripted oracle plays
every role:

* the initial solver adds column by column but drops carries;
* the selector sends tasks with a two-digit operand to the newest solver
  variant and everything else to block 1;
* the critic always blames layers 0 and 1;
* the optimizer answers the parse layer with a broken structure (a node with no
  outgoing edge) and the solve layer with a carry-aware team. Once it is told
  its proposal duplicated an existing variant it proposes a larger team with a
  verifier. With ``regressing=True`` it proposes a solver that is off by one.
"""

from __future__ import annotations

import json
import random
import re

from .forward import TaskInstance
from .graph import BlockVariant, LayerInput, LayerSlot, Network, NodeSpec, VariableRef
from .llm import ChatRequest, Rule, ScriptedOracle
from .parsing import VERDICT_CORRECT, VERDICT_NO_ANSWER, extract_tagged, incorrect_verdict_text
from . import prompts

PARSE_PROMPT = "Extract the two addends from this problem.\n{problem}"
ADD_PROMPT = "Add the addends column by column.\n{operands}"
CARRY_PROMPT = "Recompute the sum with carries.\nAddends: {operands}\nDraft: {draft}"
VERIFY_PROMPT = "Confirm the final sum.\n{checked}"
OFF_BY_ONE_PROMPT = "Add the addends, then add one for safety.\n{operands}"


def _ints(text: str) -> list[int]:
    return [int(x) for x in re.findall(r"-?\d+", text)]


def add_without_carry(a: int, b: int) -> int:
    out, place = 0, 1
    while a or b:
        out += ((a % 10 + b % 10) % 10) * place
        a, b, place = a // 10, b // 10, place * 10
    return out


def has_carry(a: int, b: int) -> bool:
    return add_without_carry(a, b) != a + b


def arithmetic_tasks(n: int = 40, seed: int = 2024, prefix: str = "add") -> list[TaskInstance]:
    rng = random.Random(seed)
    tasks = []
    for i in range(n):
        width_a = rng.choice((1, 2))
        width_b = rng.choice((1, 2))
        a = rng.randint(1, 10**width_a - 1)
        b = rng.randint(1, 10**width_b - 1)
        tasks.append(TaskInstance(f"{prefix}-{i:02d}", f"What is {a} + {b}?", ground_truth=str(a + b)))
    return tasks


def arithmetic_validation_tasks() -> list[TaskInstance]:
    return arithmetic_tasks(12, seed=7, prefix="val")


def _node(name, role, template, variables, fmt="The answer is <n>") -> NodeSpec:
    return NodeSpec(name, role, template, tuple(variables), output_format=fmt)


def arithmetic_network() -> Network:
    parse = BlockVariant(
        block_id=1,
        name="ParseBlock1",
        nodes=(
            _node("parser", "problem reader", PARSE_PROMPT, [VariableRef("problem", LayerInput())],
                  fmt="<operands>A B</operands>"),
        ),
        edges=(),
        entry_node="parser",
        end_node="parser",
        structure_description="single agent that pulls the two addends out of the problem",
    )
    solve = BlockVariant(
        block_id=1,
        name="SolveBlock1",
        nodes=(_node("adder", "calculator", ADD_PROMPT, [VariableRef("operands", LayerInput())]),),
        edges=(),
        entry_node="adder",
        end_node="adder",
        structure_description="single adder, fast, fine for small numbers",
    )
    return Network(
        (LayerSlot(0, (parse,)), LayerSlot(1, (solve,))),
        task_profile="integer addition word problems",
    )


def _structure(nodes, edges, entry, end, description) -> dict:
    return {
        "critique": "carries are dropped between columns",
        "nodes": nodes,
        "edges": edges,
        "entry_node": entry,
        "end_node": end,
        "block_structure_description": description,
        "block_structure_description_details": [f"{a} -> {b}" for a, b in edges],
    }


_ADDER = {
    "node_name": "adder",
    "agent_role": "calculator",
    "prompt_template": ADD_PROMPT,
    "input_variables": [{"placeholder": "operands", "source": "layer_input"}],
    "output_format": "The answer is <n>",
}
_CHECKER = {
    "node_name": "carry_checker",
    "agent_role": "carry checker",
    "prompt_template": CARRY_PROMPT,
    "input_variables": [
        {"placeholder": "operands", "source": "layer_input"},
        {"placeholder": "draft", "source": "adder"},
    ],
    "output_format": "The answer is <n>",
}
_VERIFIER = {
    "node_name": "verifier",
    "agent_role": "verifier",
    "prompt_template": VERIFY_PROMPT,
    "input_variables": [{"placeholder": "checked", "source": "carry_checker"}],
    "output_format": "The answer is <n>",
}

CARRY_TEAM = _structure(
    [_ADDER, _CHECKER], [["adder", "carry_checker"]], "adder", "carry_checker",
    "adder followed by a carry checker, for multi-digit sums",
)
VERIFIED_TEAM = _structure(
    [_ADDER, _CHECKER, _VERIFIER],
    [["adder", "carry_checker"], ["carry_checker", "verifier"]],
    "adder", "verifier",
    "adder, carry checker and verifier, for multi-digit sums",
)
OFF_BY_ONE_TEAM = _structure(
    [{
        "node_name": "adder",
        "agent_role": "calculator",
        "prompt_template": OFF_BY_ONE_PROMPT,
        "input_variables": [{"placeholder": "operands", "source": "layer_input"}],
        "output_format": "The answer is <n>",
    }],
    [], "adder", "adder", "cautious adder",
)
BROKEN_PARSE = _structure(
    [
        {"node_name": "reader", "agent_role": "problem reader", "prompt_template": PARSE_PROMPT,
         "input_variables": [{"placeholder": "problem", "source": "layer_input"}], "output_format": "<operands>A B</operands>"},
        {"node_name": "doublecheck", "agent_role": "problem reader", "prompt_template": "Check the addends.\n{problem}",
         "input_variables": [{"placeholder": "problem", "source": "layer_input"}], "output_format": "<operands>A B</operands>"},
    ],
    [], "reader", "doublecheck", "reader with a second opinion",
)

GLOBAL_REPORT = {
    "global_analysis": "The final sum is wrong: a carry between columns was lost.",
    "blocks": [
        {
            "layer_index": 1,
            "block_name": "SolveBlock",
            "structure_suggestion": "add an agent that re-checks carries",
            "prompt_suggestions": [{"node_name": "adder", "suggestion": "propagate carries"}],
        },
        {
            "layer_index": 0,
            "block_name": "ParseBlock",
            "structure_suggestion": None,
            "prompt_suggestions": [{"node_name": "parser", "suggestion": "state the addends explicitly"}],
        },
    ],
}


def _select(req: ChatRequest) -> str:
    task = extract_tagged(req.user_text, "task description")
    ids = [int(x) for x in re.findall(r"^- block_id (\d+)", req.user_text, flags=re.M)]
    big = any(n >= 10 for n in _ints(task))
    chosen = max(ids) if big else 1
    return f"<selected_agg_func> {chosen} </selected_agg_func>"


def _judge(req: ChatRequest) -> str:
    reply = extract_tagged(req.user_text, "reply")
    truth = extract_tagged(req.user_text, "ground_truth")
    found = _ints(reply)
    if not found:
        return VERDICT_NO_ANSWER
    if str(found[-1]) == truth:
        return VERDICT_CORRECT
    return incorrect_verdict_text(truth, str(found[-1]))


def _local(req: ChatRequest) -> str:
    if "SolveBlock" in req.user_text:
        return json.dumps({"critique": "the adder drops carries; add a checker"})
    return json.dumps({"critique": "the parser output is fine but could be more explicit"})


def _update(regressing: bool):
    def reply(req: ChatRequest) -> str:
        if "ParseBlock" in req.user_text:
            return json.dumps(BROKEN_PARSE)
        if regressing:
            return json.dumps(OFF_BY_ONE_TEAM)
        failures = extract_tagged(req.user_text, "previous attempt failures")
        if "failed Uniqueness" in failures:
            return json.dumps(VERIFIED_TEAM)
        return json.dumps(CARRY_TEAM)

    return reply


def _parse_agent(req: ChatRequest) -> str:
    a, b = _ints(req.user_text)[:2]
    return f"<operands>{a} {b}</operands>"


def _operands(text: str) -> tuple[int, int]:
    a, b = _ints(extract_tagged(text, "operands"))[:2]
    return a, b


def arithmetic_oracle(regressing: bool = False) -> ScriptedOracle:
    return ScriptedOracle(
        [
            Rule(prompts.MARKER_SELECT, _select),
            Rule(prompts.MARKER_VERIFY, _judge),
            Rule(prompts.MARKER_GLOBAL, "<output_format>" + json.dumps(GLOBAL_REPORT) + "</output_format>"),
            Rule(prompts.MARKER_LOCAL, _local),
            Rule(prompts.MARKER_MOMENTUM, lambda r: "<adjusted feedback>"
                 + extract_tagged(r.user_text, "current feedback") + " (still failing; be stricter)</adjusted feedback>"),
            Rule(prompts.MARKER_UPDATE, _update(regressing)),
            Rule("Extract the two addends", _parse_agent),
            Rule("Check the addends", _parse_agent),
            Rule("Recompute the sum with carries", lambda r: f"The answer is {sum(_operands(r.user_text))}"),
            Rule("Confirm the final sum", lambda r: f"The answer is {_ints(r.user_text)[-1]}"),
            Rule("then add one for safety", lambda r: f"The answer is {sum(_operands(r.user_text)) + 1}"),
            Rule("Add the addends column by column", lambda r: f"The answer is {add_without_carry(*_operands(r.user_text))}"),
        ]
    )


BUILTIN_SCRIPTS = {
    "arithmetic": lambda: arithmetic_oracle(False),
    "arithmetic-regressing": lambda: arithmetic_oracle(True),
}
