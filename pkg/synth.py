"""Generate families of contracts that compile one function in different ways"""
from dataclasses import dataclass, replace

from pyapputil.logutil import GetLogger
from pyapputil.exceptutil import InvalidArgumentError

from asm import Assembler
from evm import Bytecode
from util import named_rng

STATEMENT_KINDS = (
    "store_const",
    "store_arg",
    "store_caller",
    "store_mapping",
    "accumulate",
    "emit_log",
    "external_call",
    "check_owner",
    "check_balance",
)
# Statements that only write one storage slot and read nothing else that can change
_REORDERABLE = frozenset(("store_const", "store_arg", "store_caller"))
MEMORY_BASES = (0x80, 0xa0, 0xc0, 0x100)
FREE_POINTER_SLOT = 0x40


@dataclass(frozen=True)
class Statement:
    """One step of a source function. slot is the storage slot it touches."""
    kind: str
    slot: int = 0
    value: int = 0
    arg: int = 0


@dataclass(frozen=True)
class SourceFunction:
    """A random function body shared by every variant of one class"""
    name: str
    selector: int
    statements: tuple
    arg_count: int
    returns_value: bool


@dataclass(frozen=True)
class VariantOptions:
    """How one variant lays out and decorates the shared function"""
    reorder_blocks: bool = False
    wide_constants: bool = False
    stack_noise: bool = False
    guards: bool = False
    reorder_statements: bool = False
    free_pointer: bool = False
    memory_base: int = 0x80

    def tag(self):
        flags = [name for name in ("reorder_blocks", "wide_constants", "stack_noise", "guards",
                                   "reorder_statements", "free_pointer") if getattr(self, name)]
        return "+".join(flags + [f"mem{self.memory_base:x}"])


def random_function(rng, name, min_statements=2, max_statements=6):
    """
    Draw a random source function

    Args:
        rng:            (numpy Generator) Random source
        name:           (str) Class name for the function
        min_statements: (int) Fewest statements
        max_statements: (int) Most statements
    """
    count = int(rng.integers(min_statements, max_statements + 1))
    arg_count = int(rng.integers(1, 4))
    statements = []
    for _ in range(count):
        kind = STATEMENT_KINDS[int(rng.integers(0, len(STATEMENT_KINDS)))]
        statements.append(Statement(kind,
                                    slot=int(rng.integers(0, 8)),
                                    value=int(rng.integers(1, 1 << 32)),
                                    arg=int(rng.integers(0, arg_count))))
    return SourceFunction(name, int(rng.integers(1, 1 << 32)), tuple(statements), arg_count, bool(rng.integers(0, 2)))

def random_variant_options(rng):
    """Draw the options for a non-baseline variant"""
    flags = rng.integers(0, 2, size=6).astype(bool)
    return VariantOptions(*(bool(flag) for flag in flags),
                          memory_base=MEMORY_BASES[int(rng.integers(0, len(MEMORY_BASES)))])


class _Emitter:
    """Assembler front end applying the constant width and stack noise options"""

    def __init__(self, options, rng):
        self.asm = Assembler()
        self.options = options
        self.rng = rng
        self.labels = 0

    def new_label(self, prefix):
        self.labels += 1
        return f"{prefix}{self.labels}"

    def push(self, value):
        width = max(1, (value.bit_length() + 7) // 8)
        if self.options.wide_constants and self.rng.random() < 0.5:
            width = int(self.rng.integers(width, 33))
        self.asm.push(value, width)
        if self.options.stack_noise and self.rng.random() < 0.2:
            self.asm.ops(*(("SWAP1", "SWAP1") if self.rng.random() < 0.5 else ("DUP1", "POP")))

    def ops(self, *names):
        self.asm.ops(*names)

    def memory_base(self):
        """Push the start of scratch memory"""
        if self.options.free_pointer:
            self.push(FREE_POINTER_SLOT)
            self.ops("MLOAD")
        else:
            self.push(self.options.memory_base)

    def memory_at(self, delta):
        self.memory_base()
        if delta:
            self.push(delta)
            self.ops("ADD")

    def revert_unless_jump(self):
        """Emit the JUMPI to a fresh label and a revert on fall through, then the label"""
        label = self.new_label("ok")
        self.asm.push_label(label)
        self.ops("JUMPI")
        self.push(0)
        self.ops("DUP1", "REVERT")
        self.asm.label(label)


def _arg_offset(index):
    return 4 + 32 * index

def _emit_statement(emit, stmt):
    if stmt.kind == "store_const":
        emit.push(stmt.value)
        emit.push(stmt.slot)
        emit.ops("SSTORE")
    elif stmt.kind == "store_arg":
        emit.push(_arg_offset(stmt.arg))
        emit.ops("CALLDATALOAD")
        emit.push(stmt.slot)
        emit.ops("SSTORE")
    elif stmt.kind == "store_caller":
        emit.ops("CALLER")
        emit.push(stmt.slot)
        emit.ops("SSTORE")
    elif stmt.kind == "store_mapping":
        emit.push(_arg_offset(stmt.arg))
        emit.ops("CALLDATALOAD", "CALLER")
        emit.memory_at(0)
        emit.ops("MSTORE")
        emit.push(stmt.slot)
        emit.memory_at(32)
        emit.ops("MSTORE")
        emit.push(64)
        emit.memory_at(0)
        emit.ops("KECCAK256", "SSTORE")
    elif stmt.kind == "accumulate":
        emit.push(_arg_offset(stmt.arg))
        emit.ops("CALLDATALOAD")
        emit.push(stmt.slot)
        emit.ops("SLOAD", "ADD")
        emit.push(stmt.slot)
        emit.ops("SSTORE")
    elif stmt.kind == "emit_log":
        emit.push(_arg_offset(stmt.arg))
        emit.ops("CALLDATALOAD")
        emit.memory_at(0)
        emit.ops("MSTORE", "CALLER")
        emit.push(stmt.value)
        emit.push(32)
        emit.memory_at(0)
        emit.ops("LOG2")
    elif stmt.kind == "external_call":
        emit.push(stmt.value << 224)
        emit.memory_at(0)
        emit.ops("MSTORE")
        emit.push(_arg_offset(stmt.arg))
        emit.ops("CALLDATALOAD")
        emit.memory_at(4)
        emit.ops("MSTORE")
        emit.push(0)
        emit.push(0)
        emit.push(36)
        emit.memory_at(0)
        emit.push(0)
        emit.push(stmt.slot)
        emit.ops("SLOAD", "GAS", "CALL", "POP")
    elif stmt.kind == "check_owner":
        emit.push(stmt.slot)
        emit.ops("SLOAD", "CALLER", "EQ")
        emit.revert_unless_jump()
    elif stmt.kind == "check_balance":
        emit.push(_arg_offset(stmt.arg))
        emit.ops("CALLDATALOAD", "ADDRESS", "BALANCE", "LT", "ISZERO")
        emit.revert_unless_jump()
    else:
        raise InvalidArgumentError(f"Unknown statement kind {stmt.kind}")

def _emit_return(emit, func):
    if not func.returns_value:
        emit.ops("STOP")
        return
    emit.push(func.statements[0].slot)
    emit.ops("SLOAD")
    emit.memory_at(0)
    emit.ops("MSTORE")
    emit.push(32)
    emit.memory_at(0)
    emit.ops("RETURN")

def _reorder_statements(statements, rng):
    """Swap adjacent statements that write different slots and have no other effects"""
    statements = list(statements)
    for idx in range(len(statements) - 1):
        first, second = statements[idx], statements[idx + 1]
        if first.kind in _REORDERABLE and second.kind in _REORDERABLE and first.slot != second.slot \
           and rng.random() < 0.5:
            statements[idx], statements[idx + 1] = second, first
    return tuple(statements)

def compile_function(func, options, rng):
    """
    Assemble a single-function contract: a selector dispatcher, then the
    function body laid out according to the variant options

    Args:
        func:       (SourceFunction) The function
        options:    (VariantOptions) Layout and decoration choices
        rng:        (numpy Generator) Random source for the choices that vary
                    within a variant

    Returns:
        bytes
    """
    emit = _Emitter(options, rng)
    asm = emit.asm
    # The dispatcher stack is too shallow for noise, so it bypasses the emitter
    asm.push(0).op("CALLDATALOAD").push(0xe0).ops("SHR", "DUP1")
    asm.push(func.selector, 4).op("EQ")
    asm.push_label("function").op("JUMPI")
    asm.push(0).ops("DUP1", "REVERT")

    asm.label("function")
    if options.free_pointer:
        emit.push(options.memory_base)
        emit.push(FREE_POINTER_SLOT)
        emit.ops("MSTORE")
    if options.guards:
        emit.ops("CALLVALUE", "ISZERO")
        emit.revert_unless_jump()
        emit.push(_arg_offset(func.arg_count))
        emit.ops("CALLDATASIZE", "LT", "ISZERO")
        emit.revert_unless_jump()

    statements = _reorder_statements(func.statements, rng) if options.reorder_statements else func.statements
    if not options.reorder_blocks:
        for stmt in statements:
            _emit_statement(emit, stmt)
        _emit_return(emit, func)
        return asm.assemble()

    # One block per statement, laid out in shuffled order and chained with jumps
    count = len(statements)
    asm.push_label("s0")
    asm.op("JUMP")
    for idx in rng.permutation(count + 1):
        idx = int(idx)
        asm.label(f"s{idx}")
        if idx == count:
            _emit_return(emit, func)
            continue
        _emit_statement(emit, statements[idx])
        asm.push_label(f"s{idx + 1}")
        asm.op("JUMP")
    return asm.assemble()


@dataclass(frozen=True)
class SyntheticContract:
    """One compiled variant"""
    class_id: str
    variant_id: str
    options: VariantOptions
    code: Bytecode

    @property
    def origin_id(self):
        return self.code.origin_id

def generate_corpus(n_classes, n_variants, seed, min_statements=2, max_statements=6):
    """
    Generate n_classes random functions and compile each n_variants ways.
    Variant v0 of every class uses the plain layout.

    Args:
        n_classes:      (int) Number of source functions
        n_variants:     (int) Variants per function
        seed:           (int) Seed for the "synth" random stream
        min_statements: (int) Fewest statements per function
        max_statements: (int) Most statements per function

    Returns:
        A list of SyntheticContract
    """
    if n_classes < 1 or n_variants < 1:
        raise InvalidArgumentError("Need at least one class and one variant")
    log = GetLogger()
    rng = named_rng(seed, "synth")
    contracts = []
    for class_idx in range(n_classes):
        class_id = f"f{class_idx:04d}"
        func = random_function(rng, class_id, min_statements, max_statements)
        seen = set()
        for variant_idx in range(n_variants):
            options = VariantOptions() if variant_idx == 0 else random_variant_options(rng)
            code = compile_function(func, options, rng)
            # Draw again if the variant is byte-identical to an earlier one
            retries = 0
            while code in seen and retries < 8:
                options = replace(random_variant_options(rng), stack_noise=True)
                code = compile_function(func, options, rng)
                retries += 1
            seen.add(code)
            variant_id = f"v{variant_idx}"
            contracts.append(SyntheticContract(class_id, variant_id, options,
                                               Bytecode(code, f"{class_id}-{variant_id}")))
            log.debug2(f"{class_id}/{variant_id}: {len(code)} bytes, {options.tag()}")
    return contracts
