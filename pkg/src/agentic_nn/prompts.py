"""Prompt templates for every model call the engine makes.

Each template opens with a fixed heading (the ``MARKER_*`` constants) so that
scripted oracles can route requests by substring. Slots use ``{name}`` and are
filled with :func:`agentic_nn.graph.render_prompt`.
"""

from __future__ import annotations

from dataclasses import dataclass

MARKER_VERIFY = "## Answer verification"
MARKER_RUBRIC = "## Creative writing evaluation"
MARKER_GLOBAL = "## Workflow failure analysis"
MARKER_LOCAL = "## Block optimization"
MARKER_UPDATE = "## Block rewrite"
MARKER_MOMENTUM = "## Feedback consolidation"
MARKER_SELECT = "## Block selection"

VERIFY = MARKER_VERIFY + """
You check a model's reply against a reference answer using careful math.

<problem>
{problem}
</problem>
<reply>
{final_answer}
</reply>
<ground_truth>
{solution}
</ground_truth>

1. Find the answer the reply commits to and write it as "The answer is <answer extracted>".
2. Compare that answer with the ground truth.
3. End with exactly one of the following lines and nothing after it:
The answer is correct.
The answer is approximated but should be correct.
The answer is incorrect. Correct Answer: <ground truth answer>...</ground truth answer> | Answer extracted: <answer extracted>...</answer extracted>.
The reply doesn't contain an answer.
"""

RUBRIC = MARKER_RUBRIC + """
Judge the piece below against the task it was written for.

<task>
{task_prompt}
</task>
<piece>
{output}
</piece>

Score each criterion from 0 to 10 and add a short reason:
- Coherence: is the text logically organised?
- Engagement: does it carry the intended emotion?
- Adherence: does it do what the task asked?
- Creativity: is it original?

Answer with exactly these six lines:
Coherence: [score] - reason
Engagement: [score] - reason
Adherence: [score] - reason
Creativity: [score] - reason
Suggestions for Improvement: [text]
Overall Score: [score]
"""

GLOBAL_LOSS_FORMAT = """{
  "global_analysis": "where the generated solution departs from the canonical one, and why",
  "blocks": [
    {
      "layer_index": 0,
      "block_name": "SomeBlock1",
      "structure_suggestion": "team or wiring change for this block, or null",
      "prompt_suggestions": [{"node_name": "node", "suggestion": "prompt edit"}]
    }
  ]
}"""

GLOBAL = MARKER_GLOBAL + """
A multi-step agent workflow failed a task. Work out which layers are responsible
and what should change, at a level that generalises beyond this one task.

<task description>
{task_prompt}
</task description>
<final result>
{final_result}
</final result>
<canonical solution>
{canonical_solution}
</canonical solution>
<generated solution>
{generated_solution}
</generated solution>
<workflow trajectory>
{trajectory}
</workflow trajectory>

1. Decide from the final result whether and how the task failed.
2. Contrast the generated and canonical solutions; put the gap in "global_analysis".
3. Walk each block's input and output (do not grade blocks against the canonical
   solution). For blocks that caused the failure, describe fixes in
   "structure_suggestion" and node prompt edits in "prompt_suggestions".
4. For problematic blocks, look at node inputs and outputs and how the team
   collaborates; add collaboration fixes to "structure_suggestion".
Leave out blocks that need no change.

Reply with JSON in this shape, wrapped in output_format tags:
<output_format>
{global_loss_format}
</output_format>
"""

LAYERWISE_LOSS_FORMAT = """{
  "block_id": 2,
  "name": "SomeBlock2",
  "critique": "what is wrong with the current block and what to change",
  "nodes": [
    {
      "node_name": "solver",
      "agent_role": "role description",
      "prompt_template": "instructions with {slot} placeholders",
      "input_variables": [{"placeholder": "slot", "source": "layer_input"}],
      "output_format": "shape of the reply",
      "constraints": "limits on the agent"
    }
  ],
  "edges": [["solver", "checker"]],
  "entry_node": "solver",
  "end_node": "checker",
  "all_nodes_now": ["solver", "checker"],
  "all_edges_now": [["solver", "checker"]],
  "block_structure_description": "one-line purpose",
  "block_structure_description_details": ["nodes and connections", "roles", "input/output flow"]
}
Variable sources: "task_prompt", "task_data", "task_id", "layer_input", the name of an
earlier node in this block, or "layer:<i>:<node or __end__>" for an earlier layer.
Edges are two-element arrays. Never write edges with arrows.
Omit "nodes" and everything after it to give a critique without a new structure."""

LOCAL = MARKER_LOCAL + """
You are reviewing one block of an agent workflow: {block_name} (layer {layer_index}).
Suggest prompt improvements and structural changes that keep the block consistent
with the rest of the workflow.

<global feedback>
{global_loss_feedback}
</global feedback>
Weighting: {emphasis}

<blocks log>
{blocks_log}
</blocks log>
<canonical solution>
{canonical_solution}
</canonical solution>
<task description>
{task_prompt}
</task description>
<available agents>
{available_agents}
</available agents>

Check every node's input variables for valid, consistent sources. Rewritten prompt
templates must list all of their input variables. Edit scope: {edit_scope}
Every node except the end node needs an outgoing edge. Give all_nodes_now and
all_edges_now. Use block_id {new_block_id} and name {base_name}{new_block_id}.
Describe the block in block_structure_description and
block_structure_description_details. The block may not be the cause of the failure;
keep suggestions general.

Reply with one JSON object in this format:
{layerwise_loss_format}
"""

UPDATE = MARKER_UPDATE + """
Produce a revised version of block {block_name} (layer {layer_index}) that acts on
the critique below.

<current block>
{current_block}
</current block>
<critique>
{critique}
</critique>
<draft>
{draft}
</draft>
<previous attempt failures>
{previous_failures}
</previous attempt failures>

Edit scope: {edit_scope}
Use block_id {new_block_id} and name {base_name}{new_block_id}. The revised block must
differ structurally from every existing variant of this layer, every node except the
end node needs an outgoing edge, and node outputs may only feed later nodes.

Reply with one JSON object in this format:
{layerwise_loss_format}
"""

MOMENTUM = MARKER_MOMENTUM + """
You advise a team (one workflow block) by merging fresh feedback with the direction
of earlier adjustments.

<team name>{block_name}</team name>
<current team>{current_block}</current team>
<final result>{current_task_results}</final result>
<current feedback>{current_gradient}</current feedback>
<previous adjustment direction>{velocity}</previous adjustment direction>
<team input>{block_input}</team input>
<team output>{block_output}</team output>
<input and output of all nodes>{nodes_info}</input and output of all nodes>

Weighting: {weighting}

1. Where the current feedback repeats the previous direction, the earlier fix did not
   work: use the team input, output and node records to find out why, and sharpen
   the feedback on those points.
2. Keep issues that only the current feedback raises, then tidy everything into one
   updated piece of feedback.
Optimise for the dataset, not this one task.

Return the feedback in the same structure as the current feedback, wrapped as
<adjusted feedback> ... </adjusted feedback>
"""

SELECT = MARKER_SELECT + """
Pick the block best suited to run layer {layer_index} of the workflow for this task.

<task description>
{task_prompt}
</task description>
<layer input>
{layer_input}
</layer input>
<list of all block's structure description>
{blocks_structure_descriptions}
</list of all block's structure description>

Weigh how hard the task is against what each block is built to do.
Answer with the chosen block id in exactly this format:
<selected_agg_func> X </selected_agg_func>
"""


def emphasis_directive(beta: float) -> str:
    """Textual stand-in for blending global and block-local gradients."""
    if beta >= 2 / 3:
        return "prioritize the global feedback"
    if beta >= 1 / 3:
        return "balance global feedback with block-local evidence"
    return "prioritize block-local evidence"


def momentum_directive(alpha: float) -> str:
    if alpha >= 2 / 3:
        return "lean on the current feedback; use the previous direction only to break ties"
    if alpha >= 1 / 3:
        return "weigh the current feedback and the previous direction equally"
    return "stay close to the previous direction; change it only where the current feedback clearly requires"


@dataclass(frozen=True)
class EditScope:
    text: str
    node_additions: int
    rewire: bool


def edit_scope(eta: float, max_node_additions: int) -> EditScope:
    """Step size as a cap on how much of a block one update may change."""
    if eta < 1 / 3:
        return EditScope("edit prompt templates only; keep nodes and edges unchanged.", 0, False)
    if eta < 2 / 3:
        return EditScope("edit prompt templates and rewire edges; do not add nodes.", 0, True)
    return EditScope(
        f"edit prompts, rewire edges, and add or remove nodes (at most {max_node_additions} additions).",
        max_node_additions,
        True,
    )
