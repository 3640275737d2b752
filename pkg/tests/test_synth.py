import numpy as np
import pytest
from pyapputil.exceptutil import InvalidArgumentError

from cfg import FALLBACK, get_functions
from evm import Bytecode
from ssg import construct_ssgs
from synth import (
    SourceFunction,
    Statement,
    VariantOptions,
    compile_function,
    generate_corpus,
    random_function,
)


def test_corpus_shape_and_names():
    contracts = generate_corpus(3, 4, seed=0)
    assert len(contracts) == 12
    assert [c.origin_id for c in contracts[:4]] == ["f0000-v0", "f0000-v1", "f0000-v2", "f0000-v3"]
    assert contracts[0].options == VariantOptions()
    for class_id in ("f0000", "f0001", "f0002"):
        codes = [c.code.code for c in contracts if c.class_id == class_id]
        assert len(set(codes)) == len(codes)

def test_corpus_is_seeded():
    first = [c.code.code for c in generate_corpus(2, 3, seed=4)]
    assert first == [c.code.code for c in generate_corpus(2, 3, seed=4)]
    assert first != [c.code.code for c in generate_corpus(2, 3, seed=5)]

def test_variants_have_one_function_and_a_fallback():
    for contract in generate_corpus(4, 3, seed=1):
        functions = get_functions(contract.code)
        assert len(functions) == 2 and FALLBACK in functions
        ssgs = construct_ssgs(contract.code)
        selector = next(sel for sel in functions if sel != FALLBACK)
        assert not ssgs[selector].degenerate
        assert ssgs[selector].validate()

def test_random_function_bounds():
    rng = np.random.default_rng(0)
    for _ in range(20):
        func = random_function(rng, "f", 2, 3)
        assert 2 <= len(func.statements) <= 3
        assert all(stmt.arg < func.arg_count for stmt in func.statements)

def test_layout_options_change_bytes_not_stores():
    func = SourceFunction("f", 0x12345678, (Statement("store_const", slot=1, value=7),
                                            Statement("store_caller", slot=2)), 1, False)
    plain = compile_function(func, VariantOptions(), np.random.default_rng(0))
    shuffled = compile_function(func, VariantOptions(reorder_blocks=True, wide_constants=True), np.random.default_rng(0))
    assert plain != shuffled
    selector = "0x12345678"
    for code in (plain, shuffled):
        ssg = construct_ssgs(Bytecode(code))[selector]
        assert [node.name for node in ssg.control_nodes].count("SSTORE") == 2
        slots = sorted(node.attributes["slot"] for node in ssg.data_nodes
                       if node.is_sink and node.attributes.get("role") == "slot")
        assert slots == [1, 2]

def test_unknown_statement():
    func = SourceFunction("f", 1, (Statement("teleport"),), 1, False)
    with pytest.raises(InvalidArgumentError):
        compile_function(func, VariantOptions(), np.random.default_rng(0))

def test_corpus_needs_classes():
    with pytest.raises(InvalidArgumentError):
        generate_corpus(0, 2, seed=0)
