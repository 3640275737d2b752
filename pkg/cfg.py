"""Locate external functions and build per-function control flow graphs"""
from collections import deque
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import NamedTuple

import networkx as nx
from pyapputil.logutil import GetLogger
from pyapputil.exceptutil import ApplicationError, InvalidArgumentError

from evm import (
    HALTING,
    JUMP,
    JUMPDEST,
    JUMPI,
    TERMINATORS,
    disassemble,
    is_dup,
    is_push,
    is_swap,
    opcode_info,
)

FALLBACK = "fallback"
# (block, stack state) pairs explored per function
VISIT_BUDGET = 10000
# Stack slots that distinguish two simulation states
STACK_STATE_DEPTH = 16
# Return addresses that distinguish two clones of a block
CLONE_DEPTH = 8
MAX_STACK = 1024

# Abstract stack values are ints for exact constants and UNKNOWN otherwise
UNKNOWN = None

_AND = 0x16
_EQ = 0x14
_SHR = 0x1c
_DIV = 0x04
_CALLDATALOAD = 0x35
_PUSH4 = 0x63

class NoDispatcher(ApplicationError):
    """Raised when no selector dispatcher is found. The contract can still be
    analyzed as a single fallback function, see the functions attribute."""
    def __init__(self, message):
        super().__init__(message)
        self.functions = {FALLBACK: 0}

class SimulationBudgetExceeded(ApplicationError):
    """Raised in strict mode when CFG construction runs out of budget. The
    partial CFG is attached."""
    def __init__(self, message, cfg=None):
        super().__init__(message)
        self.cfg = cfg

class BlockNotInCfg(InvalidArgumentError):
    """Raised when a block is looked up in a CFG that does not contain it"""


class TerminatorKind(Enum):
    """How control leaves a basic block"""
    JUMP = "Jump"
    JUMPI = "JumpI"
    FALL_THROUGH = "FallThrough"
    TERMINAL = "Terminal"


@dataclass(frozen=True)
class BasicBlock:
    """A maximal straight-line run of instructions"""
    start_offset: int
    instructions: tuple
    terminator_kind: TerminatorKind

    @property
    def end_offset(self):
        """Offset just past the last instruction"""
        return self.instructions[-1].next_offset

    @property
    def last(self):
        return self.instructions[-1]


class BlockRef(NamedTuple):
    """Identity of one function-local clone of a block"""
    selector: str
    start_offset: int
    clone_path: tuple


class CfgNode:
    """A function-local copy of a basic block"""

    def __init__(self, ref, block):
        self.ref = ref
        self.start_offset = block.start_offset
        self.instructions = list(block.instructions)
        self.terminator_kind = block.terminator_kind
        self.unresolved = False

    @property
    def clone_path(self):
        return self.ref.clone_path

    def __repr__(self):
        return f"CfgNode({self.ref.selector}, {self.start_offset:#x}, {self.clone_path})"


class FunctionCfg:
    """Control flow graph of one external function"""

    def __init__(self, selector):
        self.selector = selector
        self.entry = None
        self.graph = nx.DiGraph()
        self.unresolved_jumps = 0
        self.budget_exceeded = False
        self.visited_states = 0

    @property
    def nodes(self):
        return list(self.graph.nodes)

    @property
    def edges(self):
        return set(self.graph.edges)

    def node(self, ref):
        """Get the CfgNode for a BlockRef"""
        if ref not in self.graph:
            raise BlockNotInCfg(f"{ref} is not in the CFG of {self.selector}")
        return self.graph.nodes[ref]["node"]

    def blocks(self):
        """All CfgNodes in offset order, clones of one block ordered by clone path"""
        return [self.graph.nodes[ref]["node"] for ref in sorted(self.graph.nodes, key=lambda r: (r.start_offset, r.clone_path))]

    def successors(self, ref):
        return list(self.graph.successors(ref))

    def _add_node(self, ref, block):
        if ref not in self.graph:
            self.graph.add_node(ref, node=CfgNode(ref, block))
        return self.graph.nodes[ref]["node"]

    def __contains__(self, ref):
        return ref in self.graph


class ContractProgram:
    """Decoded form of one contract shared by the analyses of its functions"""

    def __init__(self, code):
        self.code = code
        self.instructions = disassemble(code)
        self.blocks = {block.start_offset: block for block in find_basic_blocks(self.instructions)}
        self.jumpdests = frozenset(offset for offset, block in self.blocks.items()
                                   if block.instructions[0].opcode == JUMPDEST)

@lru_cache(maxsize=32)
def load_program(code):
    """Decode a contract once for all of its functions"""
    return ContractProgram(code)


def _terminator_kind(instruction):
    if instruction.opcode == JUMP:
        return TerminatorKind.JUMP
    if instruction.opcode == JUMPI:
        return TerminatorKind.JUMPI
    if instruction.opcode in HALTING:
        return TerminatorKind.TERMINAL
    return TerminatorKind.FALL_THROUGH

def find_basic_blocks(instructions):
    """
    Split an instruction list into basic blocks. Leaders are offset 0, every
    JUMPDEST, and every instruction after a terminator.

    Args:
        instructions:   (list of Instruction) Output of disassemble

    Returns:
        A list of BasicBlock in offset order
    """
    blocks = []
    current = []
    for inst in instructions:
        if current and inst.opcode == JUMPDEST:
            blocks.append(BasicBlock(current[0].offset, tuple(current), _terminator_kind(current[-1])))
            current = []
        current.append(inst)
        if inst.opcode in TERMINATORS:
            blocks.append(BasicBlock(current[0].offset, tuple(current), _terminator_kind(inst)))
            current = []
    if current:
        blocks.append(BasicBlock(current[0].offset, tuple(current), _terminator_kind(current[-1])))
    return blocks


def format_selector(selector):
    """Normalize a selector to "0x" + 8 hex digits, or "fallback" """
    if isinstance(selector, str):
        if selector == FALLBACK:
            return FALLBACK
        try:
            selector = int(selector, 16)
        except ValueError as ex:
            raise InvalidArgumentError(f"Invalid selector {selector}") from ex
    if not 0 <= selector <= 0xffffffff:
        raise InvalidArgumentError(f"Invalid selector {selector}")
    return f"0x{selector:08x}"

def _has_selector_extraction(instructions, before_index):
    """Check for CALLDATALOAD followed by the SHR/DIV/AND that isolates the selector"""
    for idx in range(before_index):
        if instructions[idx].opcode != _CALLDATALOAD:
            continue
        for follower in instructions[idx + 1:min(idx + 6, before_index)]:
            if follower.opcode in (_SHR, _DIV):
                return True
            if follower.opcode == _AND and any(
                    inst.push_value == 0xffffffff for inst in instructions[max(0, idx - 3):idx + 6] if is_push(inst.opcode)):
                return True
    return False

def _match_selector_compare(instructions, idx, jumpdests):
    """Match PUSH4 s; [DUPn|SWAPn]; EQ; PUSHn t; JUMPI at idx"""
    if instructions[idx].opcode != _PUSH4:
        return None
    pos = idx + 1
    if pos < len(instructions) and (is_dup(instructions[pos].opcode) or is_swap(instructions[pos].opcode)):
        pos += 1
    if pos + 2 >= len(instructions):
        return None
    eq_inst, target_inst, jumpi_inst = instructions[pos:pos + 3]
    if eq_inst.opcode != _EQ or not is_push(target_inst.opcode) or jumpi_inst.opcode != JUMPI:
        return None
    if target_inst.push_value not in jumpdests:
        return None
    return instructions[idx].push_value, target_inst.push_value, pos + 2

def get_functions(code):
    """
    Find the external functions of a contract from its selector dispatcher

    Args:
        code:   (Bytecode) Runtime bytecode

    Returns:
        A dict of selector ("0x" + 8 hex digits, or "fallback") to entry offset
    """
    log = GetLogger()
    program = load_program(code)
    instructions = program.instructions
    functions = {}
    first_index = None
    last_jumpi_index = None
    for idx in range(len(instructions)):
        match = _match_selector_compare(instructions, idx, program.jumpdests)
        if not match:
            continue
        selector, target, jumpi_index = match
        if first_index is None:
            first_index = idx
        functions.setdefault(format_selector(selector), target)
        last_jumpi_index = jumpi_index

    if not functions or not _has_selector_extraction(instructions, first_index):
        raise NoDispatcher(f"No selector dispatcher found in {code.origin_id or 'bytecode'}")

    if last_jumpi_index + 1 < len(instructions):
        functions[FALLBACK] = instructions[last_jumpi_index + 1].offset
    log.debug(f"Found {len(functions)} functions in {code.origin_id}")
    return functions

def list_functions(code):
    """get_functions, treating a contract without a dispatcher as a single fallback function"""
    try:
        return get_functions(code)
    except NoDispatcher as ex:
        GetLogger().debug(str(ex))
        return dict(ex.functions)


def _clone_path(stack, jumpdests):
    """The return addresses on the stack, nearest the top last"""
    return tuple(value for value in stack if value is not UNKNOWN and value in jumpdests)[-CLONE_DEPTH:]

def _pop(stack):
    return stack.pop() if stack else UNKNOWN

def _execute_block(block, stack):
    """
    Run one block on an abstract stack

    Returns:
        (stack, jump target or None, jump condition or None)
    """
    stack = list(stack)
    for inst in block.instructions:
        opcode = inst.opcode
        if is_push(opcode) or opcode == 0x5f:
            stack.append(inst.push_value)
        elif is_dup(opcode):
            depth = opcode - 0x7f
            stack.append(stack[-depth] if len(stack) >= depth else UNKNOWN)
        elif is_swap(opcode):
            depth = opcode - 0x8f
            while len(stack) < depth + 1:
                stack.insert(0, UNKNOWN)
            stack[-1], stack[-1 - depth] = stack[-1 - depth], stack[-1]
        elif opcode == _AND:
            left, right = _pop(stack), _pop(stack)
            stack.append(left & right if left is not UNKNOWN and right is not UNKNOWN else UNKNOWN)
        elif opcode == JUMP:
            return stack, _pop(stack), None
        elif opcode == JUMPI:
            target = _pop(stack)
            return stack, target, _pop(stack)
        else:
            info = opcode_info(opcode)
            for _ in range(info.pops):
                _pop(stack)
            stack.extend([UNKNOWN] * info.pushes)
        if len(stack) > MAX_STACK:
            del stack[:len(stack) - MAX_STACK]
    return stack, None, None

def _successors(block, stack, program):
    """
    Get the successor (offset, stack) pairs of a block, and whether a jump
    could not be resolved
    """
    out_stack, target, condition = _execute_block(block, stack)
    out_stack = tuple(out_stack)
    kind = block.terminator_kind
    if kind == TerminatorKind.TERMINAL:
        return [], False
    if kind == TerminatorKind.FALL_THROUGH:
        return [(block.end_offset, out_stack)], False

    resolved = target is not UNKNOWN and target in program.jumpdests
    if kind == TerminatorKind.JUMP:
        return ([(target, out_stack)] if resolved else []), not resolved

    successors = []
    if resolved and condition != 0:
        successors.append((target, out_stack))
    if condition is UNKNOWN or condition == 0 or not resolved:
        successors.append((block.end_offset, out_stack))
    return successors, not resolved

def build_function_cfg(program, selector, entry_offset, visit_budget=VISIT_BUDGET):
    """
    Build the CFG of one function by abstract stack simulation from its entry.
    Blocks reached with different return addresses on the stack become
    separate clones.

    Args:
        program:        (ContractProgram) The decoded contract
        selector:       (str) Function selector or "fallback"
        entry_offset:   (int) Offset of the function entry
        visit_budget:   (int) Max (block, stack state) pairs to explore

    Returns:
        A FunctionCfg
    """
    log = GetLogger()
    cfg = FunctionCfg(selector)
    # The dispatcher leaves the selector on the stack
    entry_stack = (UNKNOWN,) if selector != FALLBACK or entry_offset != 0 else ()
    queue = deque([(entry_offset, entry_stack, None)])
    seen = set()
    while queue:
        offset, stack, pred = queue.popleft()
        block = program.blocks.get(offset)
        if block is None:
            continue
        ref = BlockRef(selector, offset, _clone_path(stack, program.jumpdests))
        node = cfg._add_node(ref, block) #pylint: disable=protected-access
        if cfg.entry is None:
            cfg.entry = ref
        if pred is not None:
            cfg.graph.add_edge(pred, ref)

        state = (offset, stack[-STACK_STATE_DEPTH:])
        if state in seen:
            continue
        if len(seen) >= visit_budget:
            cfg.budget_exceeded = True
            log.warning(f"Function {selector} of {program.code.origin_id}: CFG visit budget of {visit_budget} exhausted, CFG is partial")
            break
        seen.add(state)

        successors, unresolved = _successors(block, stack, program)
        if unresolved and not node.unresolved:
            node.unresolved = True
            cfg.unresolved_jumps += 1
        for succ_offset, succ_stack in successors:
            queue.append((succ_offset, succ_stack, ref))

    cfg.visited_states = len(seen)
    if cfg.unresolved_jumps:
        log.debug(f"Function {selector} of {program.code.origin_id}: {cfg.unresolved_jumps} unresolved jumps")
    return cfg

def get_cfg(code, selector, functions=None, visit_budget=VISIT_BUDGET, strict=False):
    """
    Build the CFG of one external function

    Args:
        code:           (Bytecode) Runtime bytecode
        selector:       (str or int) The function selector, or "fallback"
        functions:      (dict) Output of list_functions, computed if not given
        visit_budget:   (int) Max (block, stack state) pairs to explore
        strict:         (bool) Raise SimulationBudgetExceeded instead of
                               returning a partial CFG

    Returns:
        A FunctionCfg
    """
    selector = format_selector(selector)
    if functions is None:
        functions = list_functions(code)
    if selector not in functions:
        raise InvalidArgumentError(f"{selector} is not a function of {code.origin_id or 'this contract'}")
    cfg = build_function_cfg(load_program(code), selector, functions[selector], visit_budget)
    if strict and cfg.budget_exceeded:
        raise SimulationBudgetExceeded(f"CFG visit budget exhausted for {selector}", cfg)
    return cfg

def get_predecessors(block, cfg):
    """
    Get the predecessor blocks of a block

    Args:
        block:  (BlockRef or CfgNode) The block
        cfg:    (FunctionCfg) The CFG containing it

    Returns:
        A set of BlockRef
    """
    ref = block.ref if isinstance(block, CfgNode) else block
    if ref not in cfg.graph:
        raise BlockNotInCfg(f"{ref} is not in the CFG of {cfg.selector}")
    return set(cfg.graph.predecessors(ref))

def cfg_to_dot(cfg):
    """
    Render a FunctionCfg in graphviz DOT format

    Returns:
        The DOT source as a str
    """
    names = {ref: f"b{idx}" for idx, ref in enumerate(sorted(cfg.graph.nodes, key=lambda r: (r.start_offset, r.clone_path)))}
    graph = nx.DiGraph(name=f"cfg_{cfg.selector}")
    for ref, name in names.items():
        node = cfg.node(ref)
        graph.add_node(name, label=f'"{ref.start_offset:#06x}"', shape="box",
                       color="red" if node.unresolved else "black")
    for src, dst in sorted(cfg.graph.edges, key=lambda e: (names[e[0]], names[e[1]])):
        graph.add_edge(names[src], names[dst], style="solid")
    return nx.nx_pydot.to_pydot(graph).to_string()
