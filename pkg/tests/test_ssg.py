import json
import time

import cbor2
import numpy as np
import pytest
from pyapputil.exceptutil import ApplicationError

from cfg import FALLBACK, BasicBlock, BlockRef, CfgNode, FunctionCfg, TerminatorKind, format_selector, get_cfg
from evm import JUMPDEST, MAX_CODE_SIZE, Bytecode, Instruction, StableCategory
from ssg import (
    DataflowAnalysis,
    EdgeRelation,
    InvalidSsg,
    SinkKind,
    SourceKind,
    SsgFormatError,
    TaintBudgetExceeded,
    backward_taint,
    build_scfg,
    construct_scfg,
    construct_ssgs,
    extract_contract,
    get_stable_stmts,
    integrate_sdfg,
    locate_sink_nodes,
    read_ssg,
    resolve_pre_stable_stmts,
    scfg_only,
    ssg_dumps,
    ssg_filename,
    ssg_from_json,
    ssg_to_dot,
    ssg_to_json,
    write_ssg,
)
import fixtures


def _ssg(fixture):
    return construct_ssgs(fixture.code)[fixture.selector]


@pytest.mark.parametrize("builder", fixtures.LABELED_FIXTURES)
def test_stable_control_flow_matches_labels(builder):
    fixture = builder()
    assert fixtures.scfg_labels(_ssg(fixture)) == fixture.scfg

@pytest.mark.parametrize("builder", fixtures.LABELED_FIXTURES)
def test_stable_data_flow_matches_labels(builder):
    fixture = builder()
    assert fixtures.sdfg_labels(_ssg(fixture)) == fixture.sdfg

@pytest.mark.parametrize("builder", fixtures.LABELED_FIXTURES)
def test_graphs_are_well_typed(builder):
    ssg = _ssg(builder())
    assert ssg.validate()
    assert not ssg.degenerate

def test_store_const_graph_layout():
    ssg = _ssg(fixtures.store_const())
    assert [node.name for node in ssg.control_nodes] == ["SSTORE", "STOP"]
    assert [node.kind for node in ssg.data_nodes] == [SinkKind.STORAGE, SinkKind.STORAGE,
                                                     SourceKind.CONSTANT, SourceKind.CONSTANT]
    assert ssg.edges == [
        (0, 1, EdgeRelation.CC),
        (0, 2, EdgeRelation.CD),
        (0, 3, EdgeRelation.CD),
        (4, 2, EdgeRelation.DD),
        (5, 3, EdgeRelation.DD),
    ]
    assert ssg.data_nodes[0].attributes == {"slot": 0, "role": "slot"}
    assert ssg.data_nodes[1].attributes == {"slot": 0, "role": "stored_value"}

def test_path_insensitive_sources_are_shared():
    fixture = fixtures.shared_constant()
    ssg = _ssg(fixture)
    zeros = [node for node in ssg.data_nodes if node.kind == SourceKind.CONSTANT and node.attributes["value"] == 0]
    assert len(zeros) == 1
    assert len([src for src, _ in ssg.edges_of(EdgeRelation.DD) if src == zeros[0].id]) == 2

def test_mapping_slot_keeps_hash_inputs():
    ssg = _ssg(fixtures.approve())
    hashes = [node for node in ssg.data_nodes if node.kind == SourceKind.DEFINITION]
    assert len(hashes) == 1
    inputs = {ssg.node(src).kind for src, dst in ssg.edges_of(EdgeRelation.DD) if dst == hashes[0].id}
    assert inputs == {SourceKind.CALLDATA, SourceKind.CONSTANT}

def test_clones_get_separate_control_nodes():
    fixture = fixtures.shared_f3()
    ssg = _ssg(fixture)
    stores = [node for node in ssg.control_nodes if node.name == "SSTORE"]
    assert len(stores) == 2
    assert {node.block.clone_path for node in stores} == {(fixture.offsets["r3a"],), (fixture.offsets["r3b"],)}
    values = set()
    for store in stores:
        sinks = [dst for src, dst in ssg.edges_of(EdgeRelation.CD) if src == store.id
                 and ssg.node(dst).attributes["role"] == "stored_value"]
        values |= {ssg.node(src).attributes["value"] for src, dst in ssg.edges_of(EdgeRelation.DD) if dst in sinks}
    assert values == {0x3333, 0x4444}

def test_empty_return_has_no_sinks():
    code = Bytecode(fixtures.shared_code().assemble(), "shared")
    ssg = construct_ssgs(code)["0x55555552"]
    assert "RETURN" in [node.name for node in ssg.control_nodes]
    assert not [node for node in ssg.data_nodes if node.kind == SinkKind.RETURN]

def test_reverting_fallback_is_degenerate():
    ssgs = construct_ssgs(fixtures.approve().code)
    assert set(ssgs) == {FALLBACK, format_selector(fixtures.APPROVE)}
    fallback = ssgs[FALLBACK]
    assert fallback.degenerate
    assert [node.name for node in fallback.control_nodes] == ["REVERT"]
    assert not fallback.data_nodes

def test_unresolved_jump_is_reported():
    fixture = fixtures.unresolved_jump()
    ssg = construct_ssgs(fixture.code)[fixture.selector]
    assert "1 unresolved jumps" in ssg.warnings

def test_construct_scfg_has_no_data_nodes():
    fixture = fixtures.diamond()
    scfgs = construct_scfg(fixture.code)
    assert not scfgs[fixture.selector].data_nodes
    assert fixtures.scfg_labels(scfgs[fixture.selector]) == fixture.scfg

def test_scfg_only_drops_data():
    ssg = _ssg(fixtures.approve())
    control = scfg_only(ssg)
    assert control.control_nodes == ssg.control_nodes
    assert not control.data_nodes
    assert all(rel == EdgeRelation.CC for _, _, rel in control.edges)

def test_get_stable_stmts():
    block = BasicBlock(0, (Instruction(0, 0x60, b"\x01"), Instruction(2, 0x54), Instruction(3, 0x33), Instruction(4, 0x55),
                           Instruction(5, 0x00)), TerminatorKind.TERMINAL)
    stmts = get_stable_stmts(block)
    assert [(stmt.offset, stmt.name) for stmt in stmts] == [(2, "SLOAD"), (4, "SSTORE"), (5, "STOP")]
    assert stmts[0].category == StableCategory.STORAGE

def test_pre_stable_search_terminates_on_empty_cycle():
    cfg = FunctionCfg("0x00000001")
    refs = [BlockRef("0x00000001", offset, ()) for offset in (0, 1, 2)]
    for ref in refs:
        block = BasicBlock(ref.start_offset, (Instruction(ref.start_offset, JUMPDEST),), TerminatorKind.FALL_THROUGH)
        cfg.graph.add_node(ref, node=CfgNode(ref, block))
    cfg.graph.add_edges_from([(refs[0], refs[1]), (refs[1], refs[0]), (refs[1], refs[2])])
    assert resolve_pre_stable_stmts(refs[2], cfg, set()) == set()

def test_pre_stable_search_skips_empty_blocks():
    fixture = fixtures.swapped_blocks()
    cfg = get_cfg(fixture.code, fixture.selector)
    done = BlockRef(fixture.selector, fixture.offsets["done"], ())
    found = resolve_pre_stable_stmts(done, cfg, set())
    assert [stmt.offset for stmt in found] == [fixture.offsets["s2"]]

def test_scfg_edges_follow_cfg_paths():
    # An edge s -> t exists when t is the first stable instruction on some CFG path after s
    fixture = fixtures.diamond()
    cfg = get_cfg(fixture.code, fixture.selector)
    scfg = build_scfg(cfg)
    expected = set()
    for node in cfg.blocks():
        stmts = get_stable_stmts(node)
        for prev, stmt in zip(stmts, stmts[1:]):
            expected.add((prev.offset, stmt.offset))
        if not stmts:
            continue
        frontier = list(cfg.successors(node.ref))
        seen = set()
        while frontier:
            ref = frontier.pop()
            if ref in seen:
                continue
            seen.add(ref)
            following = get_stable_stmts(cfg.node(ref))
            if following:
                expected.add((stmts[-1].offset, following[0].offset))
            else:
                frontier.extend(cfg.successors(ref))
    assert fixtures.scfg_labels(scfg) == expected

def test_locate_sink_nodes_without_record():
    ssg = _ssg(fixtures.store_const())
    assert locate_sink_nodes(ssg.control_nodes[0], None) == []

def test_taint_budget():
    fixture = fixtures.approve()
    cfg = get_cfg(fixture.code, fixture.selector)
    scfg = build_scfg(cfg)
    dataflow = DataflowAnalysis(cfg).run()
    store = next(node for node in scfg.control_nodes if node.name == "SSTORE")
    slot = locate_sink_nodes(store, dataflow.site_records[store.site])[0]
    assert not backward_taint(slot).truncated
    assert backward_taint(slot, budget=1).truncated
    with pytest.raises(TaintBudgetExceeded):
        backward_taint(slot, budget=1, strict=True)
    ssg = construct_ssgs(fixture.code, taint_budget=1)[fixture.selector]
    assert any("taint budget" in warning for warning in ssg.warnings)
    assert ssg.validate()

def test_extraction_is_deterministic():
    code = fixtures.approve().code
    first = {sel: ssg_dumps(ssg) for sel, ssg in construct_ssgs(code).items()}
    second = {sel: ssg_dumps(ssg) for sel, ssg in construct_ssgs(Bytecode(bytes(code.code), code.origin_id)).items()}
    assert first == second

def test_extract_contract_ignores_metadata_trailer():
    code = fixtures.approve().code
    trailer = cbor2.dumps({"solc": bytes([0, 8, 24])})
    with_trailer = Bytecode(code.code + trailer + len(trailer).to_bytes(2, "big"), code.origin_id)
    plain = {sel: ssg_dumps(ssg) for sel, ssg in extract_contract(code).items()}
    stripped = {sel: ssg_dumps(ssg) for sel, ssg in extract_contract(with_trailer).items()}
    assert plain == stripped

def test_json_round_trip(tmp_path):
    ssg = _ssg(fixtures.approve())
    path = tmp_path / ssg_filename("approve", ssg.function_selector)
    write_ssg(path, ssg)
    assert path.name == "approve_0x095ea7b3.ssg.json"
    loaded = read_ssg(path)
    assert ssg_dumps(loaded) == ssg_dumps(ssg)
    assert loaded.validate()
    doc = json.loads(path.read_text())
    assert doc["selector"] == "0x095ea7b3"
    assert doc["degenerate"] is False
    constant = next(node for node in doc["nodes"] if node.get("data_kind") == "Constant")
    assert constant["attrs"]["value"].startswith("0x")

@pytest.mark.parametrize("content", ["not json", json.dumps({"nodes": [{"id": 0}]}), json.dumps({"selector": "0x1"})])
def test_read_malformed_ssg(tmp_path, content):
    path = tmp_path / "bad.ssg.json"
    path.write_text(content)
    with pytest.raises(SsgFormatError):
        read_ssg(path)

def test_validate_rejects_bad_edges():
    ssg = _ssg(fixtures.store_const())
    ssg.edges.append((0, 4, EdgeRelation.DD))
    with pytest.raises(InvalidSsg):
        ssg.validate()
    ssg = _ssg(fixtures.store_const())
    ssg.edges.append((1, 2, EdgeRelation.CD))
    with pytest.raises(InvalidSsg, match="control edges"):
        ssg.validate()
    ssg = ssg_from_json(json.loads(ssg_dumps(_ssg(fixtures.store_const()))))
    ssg.edges = [edge for edge in ssg.edges if edge[2] != EdgeRelation.DD]
    with pytest.raises(InvalidSsg, match="no data flow edge"):
        ssg.validate()

def test_ssg_to_dot():
    dot = ssg_to_dot(_ssg(fixtures.store_const()))
    assert dot.startswith("digraph")
    assert "SSTORE" in dot
    assert "Constant(value=0x5)" in dot
    assert dot.count("->") == 5

def test_integrate_sdfg_extends_the_scfg():
    fixture = fixtures.approve()
    cfg = get_cfg(fixture.code, fixture.selector)
    scfg = build_scfg(cfg, fixture.code.origin_id)
    ssg = integrate_sdfg(scfg, fixture.code, cfg)
    assert ssg is not scfg and not scfg.data_nodes
    assert len(ssg.control_nodes) == len(scfg.control_nodes)
    assert ssg_dumps(ssg) == ssg_dumps(construct_ssgs(fixture.code)[fixture.selector])

def test_ssg_json_document():
    fixture = fixtures.store_const()
    doc = ssg_to_json(construct_ssgs(fixture.code)[fixture.selector])
    assert doc["origin"] == "store_const" and doc["selector"] == fixture.selector
    assert doc["degenerate"] is False
    kinds = [node["kind"] for node in doc["nodes"]]
    assert kinds == sorted(kinds)
    assert {edge["rel"] for edge in doc["edges"]} <= {"cc", "cd", "dd"}
    assert json.loads(json.dumps(doc)) == doc

def test_long_run_of_empty_blocks():
    # 3000 JUMPDEST blocks fall through to SSTORE(0, 1); STOP
    code = Bytecode(bytes([JUMPDEST]) * 3000 + bytes.fromhex("600160005500"), "chain")
    ssg = construct_ssgs(code)[FALLBACK]
    assert [node.name for node in ssg.control_nodes] == ["SSTORE", "STOP"]
    assert ssg.edges_of(EdgeRelation.CC) == [(0, 1)]
    assert fixtures.sdfg_labels(ssg) == {(("Constant", 0), (3004, "slot")), (("Constant", 1), (3004, "stored_value"))}

def test_pre_stable_stmts_of_a_join():
    cfg = get_cfg(fixtures.diamond().code, fixtures.diamond().selector)
    join = next(block for block in cfg.blocks() if block.start_offset == fixtures.diamond().offsets["join"])
    expected = resolve_pre_stable_stmts(join, cfg, set())
    assert {node.offset for node in expected} == {fixtures.diamond().offsets["sl"], fixtures.diamond().offsets["sr"]}

def test_deep_value_chain_is_cut():
    # CALLER, then 600 x (CALLER ADD), stored to slot 0
    body = bytes.fromhex("33") + bytes.fromhex("3301") * 600 + bytes.fromhex("60005500")
    ssg = construct_ssgs(Bytecode(body, "deep"), taint_budget=100000)[FALLBACK]
    assert [node.name for node in ssg.control_nodes] == ["SSTORE", "STOP"]
    assert any("taint budget" in warning for warning in ssg.warnings)
    assert ssg.validate()

def _random_code(seed):
    rng = np.random.default_rng(seed)
    size = int(rng.integers(1, 4096))
    return rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()

def _branch_chain(count, rng):
    # JUMPDEST PUSH1 1 PUSH2 target JUMPI, every target the start of some link
    link = 7
    return b"".join(bytes([JUMPDEST, 0x60, 0x01, 0x61]) + (int(rng.integers(0, count)) * link).to_bytes(2, "big") + bytes([0x57])
                    for _ in range(count))

def _check_total(data, origin):
    start = time.perf_counter()
    try:
        ssgs = construct_ssgs(Bytecode(data, origin))
    except ApplicationError:
        ssgs = {}
    assert time.perf_counter() - start < 120
    for ssg in ssgs.values():
        assert ssg.validate()
        assert ssg_from_json(json.loads(ssg_dumps(ssg))).validate()

@pytest.mark.parametrize("seed", range(25))
def test_random_bytecode_is_handled(seed):
    _check_total(_random_code(seed), f"random{seed}")

@pytest.mark.parametrize("name", ["random", "jumpdests", "branches"])
def test_largest_bytecode_is_handled(name):
    rng = np.random.default_rng(7)
    if name == "random":
        data = rng.integers(0, 256, size=MAX_CODE_SIZE, dtype=np.uint8).tobytes()
    elif name == "jumpdests":
        data = bytes([JUMPDEST]) * MAX_CODE_SIZE
    else:
        data = _branch_chain(MAX_CODE_SIZE // 7, rng)
    assert len(data) <= MAX_CODE_SIZE
    _check_total(data, name)

def test_short_call_data_keeps_selector_sink():
    fixture = fixtures.short_call()
    ssg = construct_ssgs(fixture.code)[fixture.selector]
    assert fixtures.sdfg_labels(ssg) == fixture.sdfg
    assert fixtures.scfg_labels(ssg) == fixture.scfg
