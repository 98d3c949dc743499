import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentic_nn.graph import CrossBlockOutput, LayerInput, LayerSlot, Network, NodeOutput, StateVar
from agentic_nn.serialize import (
    block_from_dict,
    block_to_dict,
    dumps,
    load_network,
    network_from_dict,
    network_to_dict,
    save_network,
    source_from_obj,
    source_to_dict,
)
from agentic_nn.suites import arithmetic_network

from conftest import chain_block, mk_block, mk_node


@pytest.mark.parametrize(
    "text, expected",
    [
        ("task_prompt", StateVar("task_prompt")),
        ("layer_input", LayerInput()),
        ("block_input", LayerInput()),
        ("layer:0:__end__", CrossBlockOutput(0)),
        ("layer:2:adder", CrossBlockOutput(2, "adder")),
        ("adder_output", NodeOutput("adder")),
        ("adder", NodeOutput("adder")),
    ],
)
def test_source_shorthands(text, expected):
    assert source_from_obj(text) == expected


@pytest.mark.parametrize(
    "src", [StateVar("task_data"), NodeOutput("n"), CrossBlockOutput(1, "m"), CrossBlockOutput(0), LayerInput()]
)
def test_source_round_trip(src):
    assert source_from_obj(source_to_dict(src)) == src


def test_block_round_trip_keeps_everything():
    node = mk_node("a", sources={"p": StateVar("task_prompt"), "x": LayerInput()}, constraints="be brief",
                   temperature=0.3, output_format="JSON")
    block = mk_block([node, mk_node("b", sources={"x": NodeOutput("a")})], edges=[("a", "b")],
                     structure_description="two", structure_description_details=("a -> b",), lineage=1,
                     block_id=2)
    assert block_from_dict(block_to_dict(block)) == block


def test_arrow_edges_are_rejected():
    d = block_to_dict(chain_block(["a", "b"]))
    d["edges"] = ["a -> b"]
    with pytest.raises(ValueError):
        block_from_dict(d)


def test_network_file_round_trip(tmp_path):
    net = arithmetic_network()
    path = tmp_path / "n.json"
    save_network(net, path)
    assert load_network(path) == net
    text = path.read_text()
    assert text.endswith("\n")
    assert json.loads(text) == network_to_dict(net)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 9))
def test_network_dict_round_trip(length, pool, revision):
    blocks = tuple(chain_block([f"n{j}" for j in range(length)], block_id=i + 1) for i in range(pool))
    net = Network((LayerSlot(0, blocks, active_hint=pool),), task_profile="p", revision=revision)
    again = network_from_dict(json.loads(dumps(network_to_dict(net))))
    assert again == net
