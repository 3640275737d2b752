"""Hand-assembled contracts with hand-labeled stable control flow and data flow edges"""
from dataclasses import dataclass, field

from asm import Assembler
from cfg import FALLBACK, format_selector
from evm import Bytecode, opcode_info
from ssg import EdgeRelation, SinkKind, SourceKind

APPROVE = 0x095ea7b3
APPROVAL_TOPIC = 0x8c5be1e5ebec7d5bd14f71427e1e84f3dd0314c0f7b2291e5b200ac8c7c3b925
TRANSFER_TOPIC = 0xddf252ad1be2c89b69c2b068fc378daa952ba7f163c4a11628f55a4df523b3ef
TARGET = 0x5aAeb6053F3E94C9b9A09f33669435E7Ef1BeAed


@dataclass
class Fixture:
    """One function of a hand-assembled contract and its labeled edges"""
    name: str
    code: Bytecode
    selector: str
    offsets: dict
    scfg: set = field(default_factory=set)
    sdfg: set = field(default_factory=set)


def dispatch(asm, functions):
    """Emit a solc-style dispatcher jumping to one label per selector"""
    asm.push(0).op("CALLDATALOAD").push(0xe0).op("SHR")
    for selector, label in functions:
        asm.op("DUP1").push(selector, 4).op("EQ").push_label(label).op("JUMPI")
    asm.push(0).ops("DUP1", "REVERT")
    return asm

def _offsets(asm, names):
    return {name: asm.offset_of(name) for name in names}


#
# Labels
#

def source_label(node):
    attrs = node.attributes
    if node.kind == SourceKind.CONSTANT:
        return ("Constant", attrs["value"])
    if node.kind in (SourceKind.INFORMATION, SourceKind.DEFINITION):
        return (node.kind.value, opcode_info(attrs["opcode"]).name)
    return (node.kind.value, attrs["offset"])

def sink_label(ssg, node):
    owner = next(ssg.node(src) for src, dst in ssg.edges_of(EdgeRelation.CD) if dst == node.id)
    attrs = node.attributes
    if node.kind == SinkKind.STORAGE:
        role = attrs["role"]
    elif node.kind == SinkKind.LOG:
        role = f"topic{attrs['topic_index']}" if attrs["topic_index"] is not None else f"data{attrs['arg_index']}"
    elif node.kind == SinkKind.CALL:
        role = f"arg{attrs['arg_index']}" if attrs["role"] == "arg" else attrs["role"]
    else:
        role = f"ret{attrs['arg_index']}"
    return (owner.offset, role)

def scfg_labels(ssg):
    """CC edges as (offset, offset) pairs"""
    return {(ssg.node(src).offset, ssg.node(dst).offset) for src, dst in ssg.edges_of(EdgeRelation.CC)}

def sdfg_labels(ssg):
    """DD edges as (source label, sink or source label) pairs"""
    labels = set()
    for src, dst in ssg.edges_of(EdgeRelation.DD):
        target = ssg.node(dst)
        labels.add((source_label(ssg.node(src)),
                    sink_label(ssg, target) if target.is_sink else source_label(target)))
    return labels


#
# Contracts
#

def store_const():
    asm = Assembler()
    dispatch(asm, [(0x11111111, "f")])
    asm.label("f").push(5).push(0).mark("sstore").op("SSTORE").mark("stop").op("STOP")
    off = _offsets(asm, ("f", "sstore", "stop"))
    return Fixture("store_const", Bytecode(asm.assemble(), "store_const"), "0x11111111", off,
                   scfg={(off["sstore"], off["stop"])},
                   sdfg={(("Constant", 0), (off["sstore"], "slot")),
                         (("Constant", 5), (off["sstore"], "stored_value"))})

def approve_code():
    """approve(address,uint256): write the allowance mapping, emit Approval, return true"""
    asm = Assembler()
    dispatch(asm, [(APPROVE, "approve")])
    asm.label("approve")
    asm.push(0x24).op("CALLDATALOAD").push(4).op("CALLDATALOAD")
    asm.push(0).op("MSTORE").push(1).push(0x20).op("MSTORE")
    asm.push(0x40).push(0).op("KECCAK256").mark("sstore").op("SSTORE")
    asm.push(0x24).op("CALLDATALOAD").push(0).op("MSTORE")
    asm.push(4).op("CALLDATALOAD").op("CALLER").push(APPROVAL_TOPIC, 32)
    asm.push(0x20).push(0).mark("log").op("LOG3")
    asm.push(1).push(0).op("MSTORE").push(0x20).push(0).mark("return").op("RETURN")
    return asm

def approve():
    asm = approve_code()
    off = _offsets(asm, ("approve", "sstore", "log", "return"))
    keccak = ("Definition", "KECCAK256")
    return Fixture("approve", Bytecode(asm.assemble(), "approve"), format_selector(APPROVE), off,
                   scfg={(off["sstore"], off["log"]), (off["log"], off["return"])},
                   sdfg={(("Calldata", 4), keccak),
                         (("Constant", 1), keccak),
                         (keccak, (off["sstore"], "slot")),
                         (("Calldata", 0x24), (off["sstore"], "stored_value")),
                         (("Constant", APPROVAL_TOPIC), (off["log"], "topic0")),
                         (("Information", "CALLER"), (off["log"], "topic1")),
                         (("Calldata", 4), (off["log"], "topic2")),
                         (("Calldata", 0x24), (off["log"], "data0")),
                         (("Constant", 1), (off["return"], "ret0"))})

def swapped_blocks():
    """Blocks laid out in the opposite order from the order they run in"""
    asm = Assembler()
    dispatch(asm, [(0x22222222, "f")])
    asm.label("f").push_label("first").op("JUMP")
    asm.label("second").op("CALLER").push(1).mark("s2").op("SSTORE").push_label("done").op("JUMP")
    asm.label("first").push(7).push(0).mark("s1").op("SSTORE").push_label("second").op("JUMP")
    asm.label("done").mark("stop").op("STOP")
    off = _offsets(asm, ("f", "first", "second", "done", "s1", "s2", "stop"))
    return Fixture("swapped_blocks", Bytecode(asm.assemble(), "swapped_blocks"), "0x22222222", off,
                   scfg={(off["s1"], off["s2"]), (off["s2"], off["stop"])},
                   sdfg={(("Constant", 0), (off["s1"], "slot")),
                         (("Constant", 7), (off["s1"], "stored_value")),
                         (("Constant", 1), (off["s2"], "slot")),
                         (("Information", "CALLER"), (off["s2"], "stored_value"))})

def diamond():
    """An if/else whose branches join, with a stable instruction in every block"""
    asm = Assembler()
    dispatch(asm, [(0x33333333, "f")])
    asm.label("f").push(3).mark("sload").op("SLOAD").op("POP")
    asm.push(4).op("CALLDATALOAD").push_label("right").op("JUMPI")
    asm.mark("left").push(1).push(0).mark("sl").op("SSTORE").push_label("join").op("JUMP")
    asm.label("right").push(2).push(0).mark("sr").op("SSTORE").push_label("join").op("JUMP")
    asm.label("join").op("CALLER").push(1).mark("sj").op("SSTORE").mark("stop").op("STOP")
    off = _offsets(asm, ("f", "left", "right", "join", "sload", "sl", "sr", "sj", "stop"))
    return Fixture("diamond", Bytecode(asm.assemble(), "diamond"), "0x33333333", off,
                   scfg={(off["sload"], off["sl"]), (off["sload"], off["sr"]),
                         (off["sl"], off["sj"]), (off["sr"], off["sj"]), (off["sj"], off["stop"])},
                   sdfg={(("Constant", 3), (off["sload"], "slot")),
                         (("Constant", 0), (off["sl"], "slot")),
                         (("Constant", 1), (off["sl"], "stored_value")),
                         (("Constant", 0), (off["sr"], "slot")),
                         (("Constant", 2), (off["sr"], "stored_value")),
                         (("Constant", 1), (off["sj"], "slot")),
                         (("Information", "CALLER"), (off["sj"], "stored_value"))})

def loop():
    """for (i = 0; i < 10; i++) store[2] = i"""
    asm = Assembler()
    dispatch(asm, [(0x44444444, "f")])
    asm.label("f").push(0)
    asm.label("loop").push(0x0a).ops("DUP2", "LT", "ISZERO").push_label("exit").op("JUMPI")
    asm.mark("body").op("DUP1").push(2).mark("sstore").op("SSTORE").push(1).op("ADD").push_label("loop").op("JUMP")
    asm.label("exit").op("POP").mark("stop").op("STOP")
    off = _offsets(asm, ("f", "loop", "body", "exit", "sstore", "stop"))
    return Fixture("loop", Bytecode(asm.assemble(), "loop"), "0x44444444", off,
                   scfg={(off["sstore"], off["sstore"]), (off["sstore"], off["stop"])},
                   sdfg={(("Constant", 2), (off["sstore"], "slot")),
                         (("Constant", 0), (off["sstore"], "stored_value")),
                         (("Constant", 1), (off["sstore"], "stored_value"))})

SHARED_SELECTORS = (0x55555551, 0x55555552, 0x55555553)

def shared_code():
    """Three functions calling one internal subroutine, the third one twice"""
    asm = Assembler()
    dispatch(asm, [(SHARED_SELECTORS[0], "f1"), (SHARED_SELECTORS[1], "f2"), (SHARED_SELECTORS[2], "f3")])
    asm.label("f1").push_label("ret1").push(0x1111).push_label("sub").op("JUMP")
    asm.label("ret1").mark("f1_stop").op("STOP")
    asm.label("f2").push_label("ret2").push(0x2222).push_label("sub").op("JUMP")
    asm.label("ret2").push(0).push(0).mark("f2_return").op("RETURN")
    asm.label("f3").push_label("r3a").push(0x3333).push_label("sub").op("JUMP")
    asm.label("r3a").push_label("r3b").push(0x4444).push_label("sub").op("JUMP")
    asm.label("r3b").mark("f3_stop").op("STOP")
    asm.label("sub").push(0).mark("sub_sstore").op("SSTORE").op("JUMP")
    return asm

SHARED_NAMES = ("f1", "f2", "f3", "ret1", "ret2", "r3a", "r3b", "sub", "sub_sstore", "f1_stop", "f2_return", "f3_stop")

def shared_f1():
    asm = shared_code()
    off = _offsets(asm, SHARED_NAMES)
    return Fixture("shared_f1", Bytecode(asm.assemble(), "shared"), format_selector(SHARED_SELECTORS[0]), off,
                   scfg={(off["sub_sstore"], off["f1_stop"])},
                   sdfg={(("Constant", 0), (off["sub_sstore"], "slot")),
                         (("Constant", 0x1111), (off["sub_sstore"], "stored_value"))})

def shared_f3():
    asm = shared_code()
    off = _offsets(asm, SHARED_NAMES)
    # Both calls store from the same offset, so the two clones share labels
    return Fixture("shared_f3", Bytecode(asm.assemble(), "shared"), format_selector(SHARED_SELECTORS[2]), off,
                   scfg={(off["sub_sstore"], off["sub_sstore"]), (off["sub_sstore"], off["f3_stop"])},
                   sdfg={(("Constant", 0), (off["sub_sstore"], "slot")),
                         (("Constant", 0x3333), (off["sub_sstore"], "stored_value")),
                         (("Constant", 0x4444), (off["sub_sstore"], "stored_value"))})

def external_call():
    """Forward a selector and one argument from calldata to a fixed contract"""
    asm = Assembler()
    dispatch(asm, [(0x66666666, "f")])
    asm.label("f").push(4).op("CALLDATALOAD").push(0).op("MSTORE")
    asm.push(0x24).op("CALLDATALOAD").push(4).op("MSTORE")
    asm.push(0).push(0).push(0x24).push(0).push(0).push(TARGET, 20).op("GAS")
    asm.mark("call").op("CALL").op("POP").mark("stop").op("STOP")
    off = _offsets(asm, ("f", "call", "stop"))
    return Fixture("external_call", Bytecode(asm.assemble(), "external_call"), "0x66666666", off,
                   scfg={(off["call"], off["stop"])},
                   sdfg={(("Constant", TARGET), (off["call"], "address")),
                         (("Constant", 0), (off["call"], "value")),
                         (("Calldata", 4), (off["call"], "selector")),
                         (("Calldata", 0x24), (off["call"], "arg0"))})

def short_call():
    """Forward two bytes of calldata to a fixed contract, too short for a whole selector"""
    asm = Assembler()
    dispatch(asm, [(0x68686868, "f")])
    asm.label("f").push(4).op("CALLDATALOAD").push(0).op("MSTORE")
    asm.push(0).push(0).push(2).push(0).push(0).push(TARGET, 20).op("GAS")
    asm.mark("call").op("CALL").op("POP").mark("stop").op("STOP")
    off = _offsets(asm, ("f", "call", "stop"))
    return Fixture("short_call", Bytecode(asm.assemble(), "short_call"), "0x68686868", off,
                   scfg={(off["call"], off["stop"])},
                   sdfg={(("Constant", TARGET), (off["call"], "address")),
                         (("Constant", 0), (off["call"], "value")),
                         (("Calldata", 4), (off["call"], "selector"))})

def return_data():
    """Store the first word returned by a call to the caller"""
    asm = Assembler()
    dispatch(asm, [(0x77777777, "f")])
    asm.label("f").push(0x20).push(0x80).push(0).push(0).push(0).ops("CALLER", "GAS")
    asm.mark("call").op("CALL").op("POP")
    asm.push(0x80).op("MLOAD").push(5).mark("sstore").op("SSTORE").mark("stop").op("STOP")
    off = _offsets(asm, ("f", "call", "sstore", "stop"))
    return Fixture("return_data", Bytecode(asm.assemble(), "return_data"), "0x77777777", off,
                   scfg={(off["call"], off["sstore"]), (off["sstore"], off["stop"])},
                   sdfg={(("Information", "CALLER"), (off["call"], "address")),
                         (("Constant", 0), (off["call"], "value")),
                         (("Constant", 5), (off["sstore"], "slot")),
                         (("ReturnData", 0), (off["sstore"], "stored_value"))})

def log_unknown_memory():
    """LOG1 of a memory region whose offset comes from calldata"""
    asm = Assembler()
    dispatch(asm, [(0x88888888, "f")])
    asm.label("f").push(TRANSFER_TOPIC, 32).push(0x20).push(4).op("CALLDATALOAD")
    asm.mark("log").op("LOG1").mark("stop").op("STOP")
    off = _offsets(asm, ("f", "log", "stop"))
    return Fixture("log_unknown_memory", Bytecode(asm.assemble(), "log_unknown_memory"), "0x88888888", off,
                   scfg={(off["log"], off["stop"])},
                   sdfg={(("Constant", TRANSFER_TOPIC), (off["log"], "topic0")),
                         (("Definition", "MLOAD"), (off["log"], "data0"))})

def shared_constant():
    """Two stores to slot 0"""
    asm = Assembler()
    dispatch(asm, [(0x99999999, "f")])
    asm.label("f").push(5).push(0).mark("s1").op("SSTORE")
    asm.op("CALLER").push(0).mark("s2").op("SSTORE").mark("stop").op("STOP")
    off = _offsets(asm, ("f", "s1", "s2", "stop"))
    return Fixture("shared_constant", Bytecode(asm.assemble(), "shared_constant"), "0x99999999", off,
                   scfg={(off["s1"], off["s2"]), (off["s2"], off["stop"])},
                   sdfg={(("Constant", 0), (off["s1"], "slot")),
                         (("Constant", 5), (off["s1"], "stored_value")),
                         (("Constant", 0), (off["s2"], "slot")),
                         (("Information", "CALLER"), (off["s2"], "stored_value"))})

def revert_guard():
    """A non-payable check in front of the body"""
    asm = Assembler()
    dispatch(asm, [(0xaaaaaaaa, "f")])
    asm.label("f").ops("CALLVALUE", "ISZERO").push_label("ok").op("JUMPI")
    asm.push(0).op("DUP1").mark("revert").op("REVERT")
    asm.label("ok").push(9).push(1).mark("sstore").op("SSTORE").mark("stop").op("STOP")
    off = _offsets(asm, ("f", "ok", "revert", "sstore", "stop"))
    return Fixture("revert_guard", Bytecode(asm.assemble(), "revert_guard"), "0xaaaaaaaa", off,
                   scfg={(off["sstore"], off["stop"])},
                   sdfg={(("Constant", 1), (off["sstore"], "slot")),
                         (("Constant", 9), (off["sstore"], "stored_value"))})

def no_dispatcher():
    asm = Assembler()
    asm.push(1).push(0).mark("sstore").op("SSTORE").mark("stop").op("STOP")
    off = _offsets(asm, ("sstore", "stop"))
    return Fixture("no_dispatcher", Bytecode(asm.assemble(), "no_dispatcher"), FALLBACK, off,
                   scfg={(off["sstore"], off["stop"])},
                   sdfg={(("Constant", 0), (off["sstore"], "slot")),
                         (("Constant", 1), (off["sstore"], "stored_value"))})

def unresolved_jump():
    """A jump to a target read from calldata"""
    asm = Assembler()
    dispatch(asm, [(0xbbbbbbbb, "f")])
    asm.label("f").push(4).op("CALLDATALOAD").op("JUMP")
    asm.label("dead").op("STOP")
    off = _offsets(asm, ("f", "dead"))
    return Fixture("unresolved_jump", Bytecode(asm.assemble(), "unresolved_jump"), "0xbbbbbbbb", off)


LABELED_FIXTURES = (
    store_const,
    approve,
    swapped_blocks,
    diamond,
    loop,
    shared_f1,
    shared_f3,
    external_call,
    return_data,
    log_unknown_memory,
    shared_constant,
    revert_guard,
    no_dispatcher,
)

def labeled_fixtures():
    """Build every fixture that has labeled edges"""
    return [builder() for builder in LABELED_FIXTURES]
