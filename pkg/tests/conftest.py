from __future__ import annotations

import pytest

from agentic_nn.backward import BackwardEngine, OptimizerConfig
from agentic_nn.evaluation import Judge
from agentic_nn.forward import ForwardEngine, LogicalClock
from agentic_nn.graph import BlockVariant, LayerInput, NodeOutput, NodeSpec, VariableRef
from agentic_nn.llm import Gateway, ScriptedBackend, ScriptedOracle


def mk_node(name: str, template: str | None = None, sources: dict | None = None, **kw) -> NodeSpec:
    """Node whose template uses every placeholder in ``sources``.

    With no arguments the node reads the layer input as ``{x}``.
    """
    if sources is None:
        sources = {"x": LayerInput()}
    if template is None:
        template = f"{name}: " + " ".join(f"{{{p}}}" for p in sources)
    refs = tuple(VariableRef(p, s) for p, s in sources.items())
    return NodeSpec(name, kw.pop("role", "worker"), template, refs, **kw)


def mk_block(nodes, edges=(), entry=None, end=None, block_id=1, base="Block", **kw) -> BlockVariant:
    nodes = tuple(nodes)
    return BlockVariant(
        block_id=block_id,
        name=f"{base}{block_id}",
        nodes=nodes,
        edges=tuple(tuple(e) for e in edges),
        entry_node=entry or nodes[0].node_name,
        end_node=end or nodes[-1].node_name,
        **kw,
    )


def chain_block(names, block_id=1, base="Block") -> BlockVariant:
    """Linear chain; the head reads the layer input, every other node its predecessor."""
    nodes = [mk_node(names[0])]
    for prev, cur in zip(names, names[1:]):
        nodes.append(mk_node(cur, sources={"x": NodeOutput(prev)}))
    edges = list(zip(names, names[1:]))
    return mk_block(nodes, edges, block_id=block_id, base=base)


def scripted_gateway(rules, default_reply=None, **kw) -> Gateway:
    kw.setdefault("sleep", lambda s: None)
    return Gateway(ScriptedBackend(ScriptedOracle(rules, default_reply)), **kw)


class Engines:
    def __init__(self, rules, default_reply=None, *, config: OptimizerConfig | None = None, seed: int = 0):
        self.gateway = scripted_gateway(rules, default_reply)
        self.forward = ForwardEngine(self.gateway, clock=LogicalClock())
        self.judge = Judge(self.gateway, "judge-model")
        self.backward = BackwardEngine(self.gateway, self.forward, self.judge, config or OptimizerConfig(), seed=seed)


@pytest.fixture
def engines_factory():
    return Engines


# -- acceptance reporting -------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "setup" and report.skipped:
        _CRITERIA[number] = ("SKIP", title)
    elif report.when == "call":
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        _CRITERIA[number] = (status, title)
        print(f"\ncriterion {number}: {status} - {title}")
    elif report.failed:
        _CRITERIA[number] = ("FAIL", title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status} - {title}")
