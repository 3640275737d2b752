"""Build Stable-Semantic Graphs: stable control flow plus the data flow into stable instructions"""
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
import json
from typing import NamedTuple

import networkx as nx
from pyapputil.logutil import GetLogger
from pyapputil.exceptutil import ApplicationError

from cfg import FALLBACK, VISIT_BUDGET, CfgNode, get_cfg, get_predecessors, list_functions
from evm import (
    OPCODES_BY_NAME,
    StableCategory,
    classify_stable,
    is_dup,
    is_log,
    is_push,
    is_swap,
    opcode_info,
    strip_metadata,
)
from util import atomic_write_text

# Value definitions visited per sink
TAINT_BUDGET = 512
# Nested value definitions followed from one sink before the trace is cut
TRACE_NESTING_LIMIT = 200
# Memory regions larger than this are treated as unknown
MEMORY_REGION_LIMIT = 4096
# Most argument words turned into individual sinks
MAX_ARG_SINKS = 8
WORD_MASK = (1 << 256) - 1
SCHEMA_VERSION = 1

class TaintBudgetExceeded(ApplicationError):
    """Raised in strict mode when backward taint runs out of budget"""

class SsgFormatError(ApplicationError):
    """Raised when an SSG JSON document is malformed"""

class InvalidSsg(ApplicationError):
    """Raised when an SSG breaks one of the graph typing rules"""


class EdgeRelation(Enum):
    """The three SSG edge relations"""
    CC = "cc"
    DD = "dd"
    CD = "cd"

class SourceKind(Enum):
    """Where a value traced backwards from a sink comes from"""
    CONSTANT = "Constant"
    INFORMATION = "Information"
    CALLDATA = "Calldata"
    RETURN_DATA = "ReturnData"
    DEFINITION = "Definition"

class SinkKind(Enum):
    """Operands consumed by stable instructions"""
    LOG = "Log"
    STORAGE = "Storage"
    CALL = "Call"
    RETURN = "Return"

DATA_KINDS = list(SourceKind) + list(SinkKind)
_DATA_KIND_BY_NAME = {kind.value: kind for kind in DATA_KINDS}
# Global within a transaction, independent of the execution path
PATH_INSENSITIVE = frozenset((SourceKind.CONSTANT, SourceKind.INFORMATION, SourceKind.CALLDATA))

_ATTRIBUTE_KEYS = {
    SourceKind.CONSTANT: ("value",),
    SourceKind.INFORMATION: ("opcode",),
    SourceKind.CALLDATA: ("offset",),
    SourceKind.RETURN_DATA: ("offset",),
    SourceKind.DEFINITION: ("opcode",),
    SinkKind.LOG: ("topic_index", "arg_index"),
    SinkKind.STORAGE: ("slot", "role"),
    SinkKind.CALL: ("role", "arg_index"),
    SinkKind.RETURN: ("arg_index",),
}
# Attributes holding names rather than numbers
_TEXT_ATTRIBUTES = frozenset(("role",))


@dataclass(frozen=True)
class ControlNode:
    """A stable instruction at one site of a function CFG"""
    category: StableCategory
    opcode: int
    block: object
    offset: int
    id: int = field(default=-1, compare=False)

    @property
    def site(self):
        return (self.block, self.offset)

    @property
    def name(self):
        return opcode_info(self.opcode).name


@dataclass(eq=False)
class DataNode:
    """A sink operand of a stable instruction, or a source traced from one"""
    id: int
    kind: object
    attributes: dict
    site: object = None
    owner: int = None
    roots: tuple = ()

    @property
    def is_sink(self):
        return isinstance(self.kind, SinkKind)

    @property
    def is_source(self):
        return isinstance(self.kind, SourceKind)

    def attribute_key(self):
        return tuple((key, self.attributes.get(key)) for key in _ATTRIBUTE_KEYS[self.kind])


class Ssg:
    """Stable-Semantic Graph of one function"""

    def __init__(self, function_selector, origin_id="", control_nodes=None, data_nodes=None, edges=None, warnings=None):
        self.function_selector = function_selector
        self.origin_id = origin_id
        self.control_nodes = control_nodes or []
        self.data_nodes = data_nodes or []
        self.edges = edges or []
        self.warnings = warnings or []

    @property
    def nodes(self):
        return self.control_nodes + self.data_nodes

    @property
    def node_count(self):
        return len(self.control_nodes) + len(self.data_nodes)

    @property
    def degenerate(self):
        """Graphs this small carry almost no information for embedding"""
        return self.node_count < 2

    def edges_of(self, relation):
        return [(src, dst) for src, dst, rel in self.edges if rel == relation]

    def node(self, node_id):
        if node_id < len(self.control_nodes):
            return self.control_nodes[node_id]
        return self.data_nodes[node_id - len(self.control_nodes)]

    def validate(self):
        """Check the node and edge typing rules, raising InvalidSsg on violation"""
        count = self.node_count
        for idx, node in enumerate(self.nodes):
            if node.id != idx:
                raise InvalidSsg(f"Node ids are not dense: position {idx} has id {node.id}")
        for node in self.control_nodes:
            if classify_stable(node.opcode) != node.category:
                raise InvalidSsg(f"Control node {node.id} opcode {node.opcode:#x} is not in category {node.category.value}")
        cd_count = {}
        dd_sources = set()
        for src, dst, rel in self.edges:
            if not (0 <= src < count and 0 <= dst < count):
                raise InvalidSsg(f"Edge ({src}, {dst}) references a missing node")
            src_node, dst_node = self.node(src), self.node(dst)
            if rel == EdgeRelation.CC:
                ok = isinstance(src_node, ControlNode) and isinstance(dst_node, ControlNode)
            elif rel == EdgeRelation.CD:
                ok = isinstance(src_node, ControlNode) and isinstance(dst_node, DataNode) and dst_node.is_sink
                cd_count[dst] = cd_count.get(dst, 0) + 1
            else:
                ok = isinstance(src_node, DataNode) and src_node.is_source and isinstance(dst_node, DataNode)
                dd_sources.add(src)
            if not ok:
                raise InvalidSsg(f"Edge ({src}, {dst}) does not fit relation {rel.value}")
        for node in self.data_nodes:
            if node.is_sink and cd_count.get(node.id, 0) != 1:
                raise InvalidSsg(f"Sink node {node.id} has {cd_count.get(node.id, 0)} control edges")
            if node.is_source and node.id not in dd_sources:
                raise InvalidSsg(f"Source node {node.id} has no data flow edge")
        return True


#
# Stable control flow
#

def get_stable_stmts(block):
    """
    Get the stable instructions of a block in offset order

    Args:
        block:  (CfgNode or BasicBlock) The block

    Returns:
        A list of ControlNode
    """
    ref = block.ref if isinstance(block, CfgNode) else None
    stmts = []
    for inst in block.instructions:
        category = classify_stable(inst.opcode)
        if category is not None:
            stmts.append(ControlNode(category, inst.opcode, ref, inst.offset))
    return stmts

def resolve_pre_stable_stmts(block, cfg, visited):
    """
    Find the stable instructions that can execute last before a block: the
    final stable instruction of each predecessor, searching further back
    through predecessors that have none.

    Args:
        block:      (BlockRef or CfgNode) The block
        cfg:        (FunctionCfg) The function CFG
        visited:    (set) Blocks already searched, updated in place

    Returns:
        A set of ControlNode
    """
    pred_stmts = set()
    pending = [block]
    while pending:
        current = pending.pop()
        for pred in sorted(get_predecessors(current, cfg), key=lambda r: (r.start_offset, r.clone_path)):
            stmts = get_stable_stmts(cfg.node(pred))
            if stmts:
                pred_stmts.add(stmts[-1])
            elif pred not in visited:
                visited.add(pred)
                pending.append(pred)
    return pred_stmts

def _pre_stable_stmts(block, cfg, closures):
    """
    resolve_pre_stable_stmts with the search behind each empty predecessor
    cached in closures, so a shared run of empty blocks is walked once
    """
    pred_stmts = set()
    for pred in get_predecessors(block, cfg):
        stmts = get_stable_stmts(cfg.node(pred))
        if stmts:
            pred_stmts.add(stmts[-1])
            continue
        if pred not in closures:
            closures[pred] = resolve_pre_stable_stmts(pred, cfg, set())
        pred_stmts |= closures[pred]
    return pred_stmts

def _control_sort_key(node):
    return (node.offset, node.block.clone_path if node.block is not None else ())

def build_scfg(cfg, origin_id=""):
    """
    Build the stable control flow part of the SSG of one function

    Args:
        cfg:        (FunctionCfg) The function CFG
        origin_id:  (str) Name of the contract

    Returns:
        An Ssg with only control nodes and CC edges
    """
    nodes = set()
    edges = set()
    closures = {}
    for block in cfg.blocks():
        stmts = get_stable_stmts(block)
        if not stmts:
            continue
        prev_stmts = _pre_stable_stmts(block, cfg, closures)
        for stmt in stmts:
            nodes.add(stmt)
            edges |= {(prev, stmt) for prev in prev_stmts}
            prev_stmts = {stmt}

    ordered = sorted(nodes, key=_control_sort_key)
    ids = {node: idx for idx, node in enumerate(ordered)}
    control_nodes = [replace(node, id=ids[node]) for node in ordered]
    cc_edges = sorted((ids[src], ids[dst], EdgeRelation.CC) for src, dst in edges)
    ssg = Ssg(cfg.selector, origin_id, control_nodes, [], cc_edges)
    if cfg.budget_exceeded:
        ssg.warnings.append("cfg visit budget exhausted")
    if cfg.unresolved_jumps:
        ssg.warnings.append(f"{cfg.unresolved_jumps} unresolved jumps")
    return ssg

def construct_scfg(code, visit_budget=VISIT_BUDGET):
    """
    Build the stable control flow graph of every function of a contract

    Args:
        code:           (Bytecode) Runtime bytecode
        visit_budget:   (int) CFG simulation budget per function

    Returns:
        A dict of selector to Ssg (control part only)
    """
    log = GetLogger()
    functions = list_functions(code)
    scfgs = {}
    for selector in functions:
        try:
            cfg = get_cfg(code, selector, functions, visit_budget)
        except ApplicationError as ex:
            log.warning(f"Skipping function {selector} of {code.origin_id}: {ex}")
            continue
        scfgs[selector] = build_scfg(cfg, code.origin_id)
    return scfgs


#
# Value and memory model for data flow
#

PHI = -1

class Value:
    """
    A stack value defined at one instruction site. PHI values merge the values
    reaching a block along different edges; values with opcode None come from
    outside the function.
    """
    __slots__ = ("opcode", "site", "args", "const", "reads", "owner")

    def __init__(self, opcode, site=None, args=(), const=None, reads=None, owner=None):
        self.opcode = opcode
        self.site = site
        self.args = args
        self.const = const
        self.reads = reads
        self.owner = owner

    def __repr__(self):
        name = "PHI" if self.opcode == PHI else ("ENTRY" if self.opcode is None else opcode_info(self.opcode).name)
        const = f"={self.const:#x}" if self.const is not None else ""
        return f"Value({name}{const})"


class MemoryWrite(NamedTuple):
    """One write into memory: a stored value, or a copy from calldata, return data or code"""
    kind: str
    value: object
    src_offset: object
    dest: int
    site: object

class MemoryPiece(NamedTuple):
    """A run of bytes read from one write; delta is the offset of the run inside the write"""
    write: MemoryWrite
    delta: int


class MemoryModel:
    """Byte map of memory for writes at constant offsets"""

    def __init__(self, cells=None):
        self.cells = cells if cells is not None else {}

    def copy(self):
        return MemoryModel(dict(self.cells))

    def store(self, offset, size, write):
        """Record a write, or forget everything when the region is not constant"""
        if offset is None or size is None or size > MEMORY_REGION_LIMIT:
            self.cells.clear()
            return
        for idx in range(size):
            self.cells[offset + idx] = (write, idx)

    def read(self, offset, size):
        """
        Read a region

        Returns:
            A list of MemoryPiece, or None when the region is not constant
        """
        if offset is None or size is None or size > MEMORY_REGION_LIMIT:
            return None
        pieces = []
        last = None
        for addr in range(offset, offset + size):
            cell = self.cells.get(addr)
            if cell is None:
                last = None
                continue
            write, idx = cell
            if last is not None and last[0] is write and last[1] + 1 == idx:
                last = (write, idx)
                continue
            pieces.append(MemoryPiece(write, idx))
            last = (write, idx)
        return pieces

    def intersect(self, other):
        """Keep only cells both models agree on; returns True if anything was dropped"""
        dropped = [addr for addr, cell in self.cells.items()
                   if addr not in other.cells or other.cells[addr][0] is not cell[0] or other.cells[addr][1] != cell[1]]
        for addr in dropped:
            del self.cells[addr]
        return bool(dropped)


def _signed(value):
    return value - (1 << 256) if value >> 255 else value

_FOLD = {
    0x01: lambda a, b: (a + b) & WORD_MASK,
    0x02: lambda a, b: (a * b) & WORD_MASK,
    0x03: lambda a, b: (a - b) & WORD_MASK,
    0x04: lambda a, b: a // b if b else 0,
    0x06: lambda a, b: a % b if b else 0,
    0x0a: lambda a, b: pow(a, b, 1 << 256),
    0x10: lambda a, b: int(a < b),
    0x11: lambda a, b: int(a > b),
    0x12: lambda a, b: int(_signed(a) < _signed(b)),
    0x13: lambda a, b: int(_signed(a) > _signed(b)),
    0x14: lambda a, b: int(a == b),
    0x15: lambda a: int(a == 0),
    0x16: lambda a, b: a & b,
    0x17: lambda a, b: a | b,
    0x18: lambda a, b: a ^ b,
    0x19: lambda a: a ^ WORD_MASK,
    0x1a: lambda a, b: (b >> (8 * (31 - a))) & 0xff if a < 32 else 0,
    0x1b: lambda a, b: (b << a) & WORD_MASK if a < 256 else 0,
    0x1c: lambda a, b: b >> a if a < 256 else 0,
}

_op = OPCODES_BY_NAME
_MLOAD, _MSTORE, _MSTORE8 = _op["MLOAD"], _op["MSTORE"], _op["MSTORE8"]
_KECCAK = _op["KECCAK256"]
_CALLDATALOAD = _op["CALLDATALOAD"]
_COPIES = {
    _op["CALLDATACOPY"]: "calldata",
    _op["RETURNDATACOPY"]: "returndata",
    _op["CODECOPY"]: "code",
}
_EXTCODECOPY = _op["EXTCODECOPY"]
_MCOPY = _op["MCOPY"]
_CALL, _CALLCODE, _DELEGATECALL, _STATICCALL = _op["CALL"], _op["CALLCODE"], _op["DELEGATECALL"], _op["STATICCALL"]
_CALLS = frozenset((_CALL, _CALLCODE, _DELEGATECALL, _STATICCALL))
_CALLS_WITH_VALUE = frozenset((_CALL, _CALLCODE))


@dataclass
class SiteRecord:
    """Operands of a stable instruction, top of stack first, and the memory it reads"""
    operands: tuple
    memory: MemoryModel


class DataflowAnalysis:
    """
    Forward propagation of Values and memory over a FunctionCfg. Every stable
    instruction site gets a SiteRecord that sink location and backward taint
    start from.
    """

    def __init__(self, cfg, budget=None):
        self.cfg = cfg
        self.budget = budget if budget is not None else max(VISIT_BUDGET, 20 * len(cfg.graph))
        self.site_records = {}
        self.entry_stacks = {}
        self.entry_memory = {}
        self.budget_exceeded = False

    def run(self):
        cfg = self.cfg
        if cfg.entry is None:
            return self
        entry_stack = []
        if cfg.selector != FALLBACK or cfg.node(cfg.entry).start_offset != 0:
            # The dispatcher leaves the selector, calldata word 0, on the stack
            entry_stack = [Value(_CALLDATALOAD, None, (Value(_op["PUSH1"], None, const=0),))]
        self.entry_stacks[cfg.entry] = entry_stack
        self.entry_memory[cfg.entry] = MemoryModel()
        queue = deque([cfg.entry])
        queued = {cfg.entry}
        steps = 0
        while queue:
            ref = queue.popleft()
            queued.discard(ref)
            steps += 1
            if steps > self.budget:
                self.budget_exceeded = True
                GetLogger().warning(f"Function {cfg.selector}: data flow budget exhausted")
                break
            stack, memory = self._execute(ref)
            for succ in cfg.successors(ref):
                if self._merge(succ, stack, memory) and succ not in queued:
                    queue.append(succ)
                    queued.add(succ)
        return self

    def _merge(self, ref, stack, memory):
        """Merge an incoming state into a block entry, returning True if the entry changed"""
        if ref not in self.entry_stacks:
            self.entry_stacks[ref] = list(stack)
            self.entry_memory[ref] = memory.copy()
            return True
        current = self.entry_stacks[ref]
        changed = False
        if len(current) != len(stack):
            height = min(len(current), len(stack))
            current = current[len(current) - height:]
            stack = stack[len(stack) - height:]
            self.entry_stacks[ref] = current
            changed = True
        for idx, (mine, theirs) in enumerate(zip(current, stack)):
            if mine is theirs:
                continue
            if mine.opcode == PHI and mine.owner == ref:
                if not any(arg is theirs for arg in mine.args):
                    mine.args.append(theirs)
                continue
            current[idx] = Value(PHI, (ref, None), [mine, theirs], owner=ref)
            changed = True
        if self.entry_memory[ref].intersect(memory):
            changed = True
        return changed

    def _execute(self, ref):
        node = self.cfg.node(ref)
        stack = list(self.entry_stacks[ref])
        memory = self.entry_memory[ref].copy()

        def pop():
            return stack.pop() if stack else Value(None)

        for inst in node.instructions:
            opcode = inst.opcode
            site = (ref, inst.offset)
            if is_push(opcode) or opcode == 0x5f:
                stack.append(Value(opcode, site, const=inst.push_value))
                continue
            if is_dup(opcode):
                depth = opcode - 0x7f
                stack.append(stack[-depth] if len(stack) >= depth else Value(None))
                continue
            if is_swap(opcode):
                depth = opcode - 0x8f
                while len(stack) < depth + 1:
                    stack.insert(0, Value(None))
                stack[-1], stack[-1 - depth] = stack[-1 - depth], stack[-1]
                continue

            info = opcode_info(opcode)
            args = tuple(pop() for _ in range(info.pops))
            if classify_stable(opcode) is not None:
                self.site_records[site] = SiteRecord(args, memory.copy())

            if opcode in (_MSTORE, _MSTORE8):
                size = 32 if opcode == _MSTORE else 1
                memory.store(args[0].const, size, MemoryWrite("value", args[1], None, args[0].const, site))
            elif opcode in _COPIES:
                memory.store(args[0].const, args[2].const, MemoryWrite(_COPIES[opcode], None, args[1].const, args[0].const, site))
            elif opcode == _EXTCODECOPY:
                memory.store(args[1].const, args[3].const, MemoryWrite("code", None, args[2].const, args[1].const, site))
            elif opcode == _MCOPY:
                self._mcopy(memory, args, site)
            elif opcode in _CALLS:
                out_offset, out_size = args[-2].const, args[-1].const
                if out_size != 0:
                    memory.store(out_offset, out_size, MemoryWrite("returndata", None, 0, out_offset, site))

            if info.pushes:
                stack.append(self._define(opcode, site, args, memory))
        return stack, memory

    @staticmethod
    def _mcopy(memory, args, site):
        dest, src, size = args[0].const, args[1].const, args[2].const
        pieces = memory.read(src, size)
        if pieces is None or dest is None:
            memory.store(None, None, None)
            return
        snapshot = [memory.cells.get(src + idx) for idx in range(size)]
        for idx, cell in enumerate(snapshot):
            if cell is None:
                memory.cells.pop(dest + idx, None)
            else:
                memory.cells[dest + idx] = cell
        GetLogger().debug2(f"MCOPY at {site[1]:#x} copied {size} bytes")

    @staticmethod
    def _define(opcode, site, args, memory):
        if opcode == _MLOAD:
            reads = memory.read(args[0].const, 32)
            const = None
            if reads and len(reads) == 1 and reads[0].delta == 0:
                write = reads[0].write
                if write.kind == "value" and write.dest == args[0].const and write.value.const is not None \
                   and memory.cells.get(args[0].const + 31, (None, -1))[1] == 31:
                    const = write.value.const
            return Value(opcode, site, args, const=const, reads=reads)
        if opcode == _KECCAK:
            return Value(opcode, site, args, reads=memory.read(args[0].const, args[1].const))
        const = None
        fold = _FOLD.get(opcode)
        if fold is not None and all(arg.const is not None for arg in args):
            const = fold(*(arg.const for arg in args))
        return Value(opcode, site, args, const=const)


#
# Sinks and backward taint
#

def _const(value):
    return value.const if value is not None else None

def _region_words(offset, size, limit=MAX_ARG_SINKS):
    """Split a constant memory region into 32-byte words"""
    count = min((size + 31) // 32, limit)
    return [(offset + 32 * idx, min(32, size - 32 * idx)) for idx in range(count)]

def _memory_root(record, offset, size):
    """A sink root for a memory region: the pieces read, or None when unknown"""
    pieces = record.memory.read(offset, size)
    return ("memory", tuple(pieces) if pieces is not None else None)

def locate_sink_nodes(node, stack_model):
    """
    Create the sink data nodes for the operands of a stable instruction

    Args:
        node:           (ControlNode) The stable instruction
        stack_model:    (SiteRecord) Operands and memory at the instruction

    Returns:
        A list of DataNode (sinks), ids unassigned
    """
    if stack_model is None:
        return []
    ops = stack_model.operands
    opcode = node.opcode
    sinks = []

    def add(kind, attributes, *roots):
        sinks.append(DataNode(-1, kind, attributes, node.site, node.id, tuple(roots)))

    if node.name == "SSTORE":
        add(SinkKind.STORAGE, {"slot": _const(ops[0]), "role": "slot"}, ("value", ops[0]))
        add(SinkKind.STORAGE, {"slot": _const(ops[0]), "role": "stored_value"}, ("value", ops[1]))
    elif node.name == "SLOAD":
        add(SinkKind.STORAGE, {"slot": _const(ops[0]), "role": "slot"}, ("value", ops[0]))
    elif is_log(opcode):
        offset, size = _const(ops[0]), _const(ops[1])
        for idx, topic in enumerate(ops[2:]):
            add(SinkKind.LOG, {"topic_index": idx, "arg_index": None}, ("value", topic))
        if size != 0:
            add(SinkKind.LOG, {"topic_index": None, "arg_index": 0}, _memory_root(stack_model, offset, size))
    elif opcode in _CALLS:
        add(SinkKind.CALL, {"role": "address", "arg_index": 0}, ("value", ops[1]))
        rest = ops[2:]
        if opcode in _CALLS_WITH_VALUE:
            add(SinkKind.CALL, {"role": "value", "arg_index": 0}, ("value", rest[0]))
            rest = rest[1:]
        in_offset, in_size = _const(rest[0]), _const(rest[1])
        if in_offset is None or in_size is None:
            add(SinkKind.CALL, {"role": "arg", "arg_index": 0}, ("memory", None))
        elif in_size > 0:
            # Calldata shorter than a selector still feeds the selector sink
            add(SinkKind.CALL, {"role": "selector", "arg_index": 0}, _memory_root(stack_model, in_offset, min(in_size, 4)))
            for idx, (word, width) in enumerate(_region_words(in_offset + 4, max(in_size - 4, 0))):
                add(SinkKind.CALL, {"role": "arg", "arg_index": idx}, _memory_root(stack_model, word, width))
    elif node.name == "BALANCE":
        add(SinkKind.CALL, {"role": "address", "arg_index": 0}, ("value", ops[0]))
    elif node.name in ("RETURN", "REVERT"):
        offset, size = _const(ops[0]), _const(ops[1])
        if offset is None or size is None:
            add(SinkKind.RETURN, {"arg_index": 0}, ("memory", None))
        else:
            for idx, (word, width) in enumerate(_region_words(offset, size)):
                add(SinkKind.RETURN, {"arg_index": idx}, _memory_root(stack_model, word, width))
    elif node.name == "SELFDESTRUCT":
        add(SinkKind.RETURN, {"arg_index": 0}, ("value", ops[0]))
    return sinks


_INFORMATION_OPCODES = frozenset(_op[name] for name in (
    "ADDRESS", "ORIGIN", "CALLER", "CALLVALUE", "CALLDATASIZE", "CODESIZE", "GASPRICE", "COINBASE",
    "TIMESTAMP", "NUMBER", "PREVRANDAO", "GASLIMIT", "CHAINID", "SELFBALANCE", "BASEFEE",
    "BLOBBASEFEE", "GAS", "MSIZE", "PC"))
# Pure computations that pass their inputs' provenance through
_PROPAGATING_OPCODES = frozenset(list(range(0x01, 0x0c)) + list(range(0x10, 0x1e)))
_RETURNDATASIZE = _op["RETURNDATASIZE"]
SINK = "sink"


class SourceKey(NamedTuple):
    """Deduplication key of a source node"""
    kind: SourceKind
    attributes: tuple
    site: object


@dataclass
class TaintResult:
    """Sources found for one sink and the data flow edges between them"""
    sources: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    truncated: bool = False


class _Tracer:
    def __init__(self, budget):
        self.budget = budget
        self.visited = set()
        self.count = 0
        self.result = TaintResult()
        self._seen_sources = set()
        self._seen_edges = set()
        self.nesting = 0

    def emit(self, kind, attributes, site, target):
        key = SourceKey(kind, tuple(sorted(attributes.items())), None if kind in PATH_INSENSITIVE else site)
        if key not in self._seen_sources:
            self._seen_sources.add(key)
            self.result.sources.append(key)
        if (key, target) not in self._seen_edges:
            self._seen_edges.add((key, target))
            self.result.edges.append((key, target))
        return key

    def spend(self, token):
        if token in self.visited:
            return False
        if self.count >= self.budget:
            self.result.truncated = True
            return False
        self.visited.add(token)
        self.count += 1
        return True

    def trace_root(self, root, target):
        kind, item = root
        if kind == "value":
            self.trace_value(item, target, 0)
        elif item is None:
            self.emit(SourceKind.DEFINITION, {"opcode": _MLOAD}, None, target)
        else:
            for piece in item:
                self.trace_piece(piece, target, 0)

    def trace_value(self, value, target, depth):
        """Returns True if any source was emitted for the value"""
        if self.nesting >= TRACE_NESTING_LIMIT:
            self.result.truncated = True
            return False
        self.nesting += 1
        try:
            return self._trace_value(value, target, depth)
        finally:
            self.nesting -= 1

    def _trace_value(self, value, target, depth):
        if not self.spend((id(value), target)):
            return False
        opcode = value.opcode
        if opcode is None:
            return False
        if opcode == PHI:
            found = False
            for arg in list(value.args):
                found = self.trace_value(arg, target, depth) or found
            return found
        if is_push(opcode) or opcode == 0x5f:
            self.emit(SourceKind.CONSTANT, {"value": value.const}, value.site, target)
            return True
        if opcode in _INFORMATION_OPCODES:
            self.emit(SourceKind.INFORMATION, {"opcode": opcode}, value.site, target)
            return True
        if opcode == _CALLDATALOAD:
            self.emit(SourceKind.CALLDATA, {"offset": value.args[0].const}, value.site, target)
            return True
        if opcode in _CALLS or opcode == _RETURNDATASIZE:
            self.emit(SourceKind.RETURN_DATA, {"offset": None}, value.site, target)
            return True
        if opcode == _MLOAD:
            if not value.reads:
                self.emit(SourceKind.DEFINITION, {"opcode": opcode}, value.site, target)
                return True
            for piece in value.reads:
                self.trace_piece(piece, target, depth)
            return True
        if opcode == _KECCAK:
            key = self.emit(SourceKind.DEFINITION, {"opcode": opcode}, value.site, target)
            # Hash inputs are traced one level so mapping slots keep their keys
            if depth == 0 and value.reads:
                for piece in value.reads:
                    self.trace_piece(piece, key, depth + 1)
            return True
        if opcode in _PROPAGATING_OPCODES:
            found = False
            for arg in value.args:
                found = self.trace_value(arg, target, depth) or found
            if not found:
                self.emit(SourceKind.DEFINITION, {"opcode": opcode}, value.site, target)
            return True
        self.emit(SourceKind.DEFINITION, {"opcode": opcode}, value.site, target)
        return True

    def trace_piece(self, piece, target, depth):
        write = piece.write
        if write.kind == "value":
            self.trace_value(write.value, target, depth)
        elif write.kind in ("calldata", "returndata"):
            offset = write.src_offset + piece.delta if write.src_offset is not None else None
            kind = SourceKind.CALLDATA if write.kind == "calldata" else SourceKind.RETURN_DATA
            self.emit(kind, {"offset": offset}, write.site, target)
        else:
            self.emit(SourceKind.DEFINITION, {"opcode": _op["CODECOPY"]}, write.site, target)

def backward_taint(sink, budget=TAINT_BUDGET, strict=False):
    """
    Trace the operand of a sink backwards through the stack and memory to the
    sources it is derived from.

    Args:
        sink:   (DataNode) A sink from locate_sink_nodes
        budget: (int) Max value definitions visited
        strict: (bool) Raise TaintBudgetExceeded instead of returning a
                       partial result

    Returns:
        A TaintResult. Edge targets are SINK or the SourceKey of the hash a
        source feeds.
    """
    tracer = _Tracer(budget)
    for root in sink.roots:
        tracer.trace_root(root, SINK)
    if tracer.result.truncated and strict:
        raise TaintBudgetExceeded(f"Taint budget of {budget} exhausted for sink {sink.kind.value}")
    return tracer.result


#
# Integration
#

def _sortable(value):
    if value is None:
        return (0, 0, "")
    if isinstance(value, str):
        return (1, 0, value)
    return (2, value, "")

def _site_sort_key(site):
    if site is None:
        return (-1, ())
    block, offset = site
    return (offset, block.clone_path if block is not None else ())

def integrate_sdfg(scfg, code, cfg, taint_budget=TAINT_BUDGET, dataflow=None):
    """
    Attach sink and source data nodes to a stable control flow graph

    Args:
        scfg:           (Ssg) Output of build_scfg for the function
        code:           (Bytecode) The contract bytecode
        cfg:            (FunctionCfg) The function CFG
        taint_budget:   (int) Taint budget per sink
        dataflow:       (DataflowAnalysis) Precomputed analysis, run if not given

    Returns:
        A new Ssg with data nodes and CD/DD edges
    """
    log = GetLogger()
    if dataflow is None:
        dataflow = DataflowAnalysis(cfg).run()
    warnings = list(scfg.warnings)
    if dataflow.budget_exceeded:
        warnings.append("data flow budget exhausted")

    sinks = []
    sources = {}
    dd_edges = set()
    truncated = 0
    for control in scfg.control_nodes:
        record = dataflow.site_records.get(control.site)
        for sink in locate_sink_nodes(control, record):
            sinks.append(sink)
            taint = backward_taint(sink, taint_budget)
            truncated += int(taint.truncated)
            for key in taint.sources:
                if key not in sources:
                    sources[key] = DataNode(-1, key.kind, dict(key.attributes), key.site)
            for key, target in taint.edges:
                dd_edges.add((key, sink if target == SINK else target))
    if truncated:
        log.warning(f"Function {scfg.function_selector} of {code.origin_id}: taint budget exhausted for {truncated} sinks")
        warnings.append(f"taint budget exhausted for {truncated} sinks")

    next_id = len(scfg.control_nodes)
    for sink in sinks:
        sink.id = next_id
        next_id += 1
    ordered_sources = sorted(sources.items(), key=lambda item: (
        DATA_KINDS.index(item[0].kind),
        tuple((k, _sortable(v)) for k, v in item[0].attributes),
        _site_sort_key(item[0].site)))
    for _, node in ordered_sources:
        node.id = next_id
        next_id += 1

    edges = list(scfg.edges)
    edges += [(sink.owner, sink.id, EdgeRelation.CD) for sink in sinks]
    for key, target in dd_edges:
        target_id = target.id if isinstance(target, DataNode) else sources[target].id
        edges.append((sources[key].id, target_id, EdgeRelation.DD))
    edges.sort(key=lambda e: (e[0], e[1], e[2].value))

    ssg = Ssg(scfg.function_selector, scfg.origin_id, list(scfg.control_nodes),
              sinks + [node for _, node in ordered_sources], edges, warnings)
    if ssg.degenerate:
        ssg.warnings.append("degenerate")
    return ssg

def construct_ssgs(code, visit_budget=VISIT_BUDGET, taint_budget=TAINT_BUDGET):
    """
    Build the SSG of every function of a contract

    Args:
        code:           (Bytecode) Runtime bytecode, metadata already stripped
        visit_budget:   (int) CFG simulation budget per function
        taint_budget:   (int) Taint budget per sink

    Returns:
        A dict of selector to Ssg
    """
    log = GetLogger()
    functions = list_functions(code)
    ssgs = {}
    for selector in functions:
        try:
            cfg = get_cfg(code, selector, functions, visit_budget)
            scfg = build_scfg(cfg, code.origin_id)
            ssgs[selector] = integrate_sdfg(scfg, code, cfg, taint_budget)
        except ApplicationError as ex:
            log.warning(f"Skipping function {selector} of {code.origin_id}: {ex}")
            continue
        if ssgs[selector].degenerate:
            log.debug(f"Function {selector} of {code.origin_id} has a degenerate SSG")
    return ssgs

def scfg_only(ssg):
    """The control flow component of an SSG: control nodes and CC edges"""
    return Ssg(ssg.function_selector, ssg.origin_id, list(ssg.control_nodes), [],
               [edge for edge in ssg.edges if edge[2] == EdgeRelation.CC], list(ssg.warnings))


#
# Serialization
#

def _attr_to_json(key, value):
    if value is None or key in _TEXT_ATTRIBUTES:
        return value
    return hex(value)

def _attr_from_json(key, value):
    if value is None or key in _TEXT_ATTRIBUTES:
        return value
    return int(value, 16)

def ssg_to_json(ssg):
    """
    Convert an SSG to its canonical JSON document

    Returns:
        A dict
    """
    nodes = []
    for node in ssg.control_nodes:
        nodes.append({"id": node.id, "kind": "control", "category": node.category.value, "opcode": node.opcode})
    for node in ssg.data_nodes:
        nodes.append({
            "id": node.id,
            "kind": "data",
            "category": "sink" if node.is_sink else "source",
            "data_kind": node.kind.value,
            "attrs": {key: _attr_to_json(key, value) for key, value in node.attributes.items()},
        })
    return {
        "version": SCHEMA_VERSION,
        "origin": ssg.origin_id,
        "selector": ssg.function_selector,
        "degenerate": ssg.degenerate,
        "warnings": list(ssg.warnings),
        "nodes": nodes,
        "edges": [{"from": src, "to": dst, "rel": rel.value} for src, dst, rel in ssg.edges],
    }

def ssg_from_json(doc):
    """
    Rebuild an SSG from its JSON document. Sites and taint roots are not
    serialized, so the result is only good for embedding and export.
    """
    try:
        control_nodes = []
        data_nodes = []
        categories = {category.value: category for category in StableCategory}
        for item in doc["nodes"]:
            if item["kind"] == "control":
                control_nodes.append(ControlNode(categories[item["category"]], int(item["opcode"]), None, -1, id=int(item["id"])))
            else:
                kind = _DATA_KIND_BY_NAME[item["data_kind"]]
                attrs = {key: _attr_from_json(key, value) for key, value in item["attrs"].items()}
                data_nodes.append(DataNode(int(item["id"]), kind, attrs))
        edges = [(int(e["from"]), int(e["to"]), EdgeRelation(e["rel"])) for e in doc["edges"]]
        return Ssg(doc["selector"], doc.get("origin", ""), control_nodes, data_nodes, edges, list(doc.get("warnings", [])))
    except (KeyError, ValueError, TypeError) as ex:
        raise SsgFormatError(f"Malformed SSG document: {ex}") from ex

def ssg_dumps(ssg):
    """Canonical serialized form of an SSG"""
    return json.dumps(ssg_to_json(ssg), sort_keys=True, separators=(",", ":")) + "\n"

def write_ssg(path, ssg):
    """Write an SSG file atomically"""
    atomic_write_text(path, ssg_dumps(ssg))

def read_ssg(path):
    """Load an SSG file"""
    try:
        with open(path, "r", encoding="utf-8") as infile:
            return ssg_from_json(json.load(infile))
    except (OSError, json.JSONDecodeError) as ex:
        raise SsgFormatError(f"Could not read SSG {path}: {ex}") from ex

def _data_label(node):
    attrs = ",".join(f"{key}={_attr_to_json(key, value)}" for key, value in node.attributes.items())
    return f'"{node.kind.value}({attrs})"'

def ssg_to_dot(ssg):
    """
    Render an SSG in graphviz DOT format: control nodes as boxes, data nodes as
    ellipses, relations as edge labels.
    """
    graph = nx.MultiDiGraph(name=f"ssg_{ssg.function_selector}")
    for node in ssg.control_nodes:
        graph.add_node(f"n{node.id}", label=f'"{node.id}: {node.name}"', shape="box")
    for node in ssg.data_nodes:
        graph.add_node(f"n{node.id}", label=_data_label(node), shape="ellipse")
    for src, dst, rel in ssg.edges:
        graph.add_edge(f"n{src}", f"n{dst}", label=rel.value)
    return nx.nx_pydot.to_pydot(graph).to_string()


def ssg_filename(origin_id, selector):
    """Canonical file name of the SSG of one function"""
    return f"{origin_id}_{selector}.ssg.json"

def extract_contract(code, visit_budget=VISIT_BUDGET, taint_budget=TAINT_BUDGET):
    """
    Strip the metadata trailer from runtime bytecode and build the SSG of every
    function

    Args:
        code:           (Bytecode) Runtime bytecode as read from a file
        visit_budget:   (int) CFG simulation budget per function
        taint_budget:   (int) Taint budget per sink

    Returns:
        A dict of selector to Ssg
    """
    return construct_ssgs(strip_metadata(code), visit_budget, taint_budget)
