import pytest
from pyapputil.exceptutil import InvalidArgumentError

from asm import Assembler


def test_labels_resolve_to_jumpdests():
    asm = Assembler()
    asm.push_label("body").op("JUMP")
    asm.label("body").push(5).push(0).op("SSTORE").op("STOP")
    code = asm.assemble()
    assert code == bytes.fromhex("610004565b6005600055" + "00")
    assert asm.offset_of("body") == 4

def test_marks_name_the_next_instruction():
    asm = Assembler()
    asm.push(1).push(0x1234).mark("store").op("SSTORE")
    assert asm.offset_of("store") == 5
    assert asm.assemble()[5] == 0x55

def test_push_widths():
    asm = Assembler()
    asm.push(0).push(0x100).push(1, 32)
    code = asm.assemble()
    assert code[:2] == bytes([0x60, 0x00])
    assert code[2:5] == bytes([0x61, 0x01, 0x00])
    assert code[5] == 0x7f
    assert int.from_bytes(code[6:], "big") == 1

def test_ops_accepts_push_text():
    asm = Assembler()
    asm.ops("PUSH2 0x0102", "DUP1", "ADD")
    assert asm.assemble() == bytes([0x61, 0x01, 0x02, 0x80, 0x01])

@pytest.mark.parametrize("build", [
    lambda asm: asm.op("NOPE"),
    lambda asm: asm.op("PUSH1"),
    lambda asm: asm.push(0x100, 1),
    lambda asm: asm.push(-1),
    lambda asm: asm.label("a").label("a").assemble(),
    lambda asm: asm.push_label("missing").assemble(),
    lambda asm: asm.offset_of("missing"),
])
def test_assembler_errors(build):
    with pytest.raises(InvalidArgumentError):
        build(Assembler())
