"""Decode EVM runtime bytecode and classify stable instructions"""
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
import re

from pyapputil.logutil import GetLogger
from pyapputil.exceptutil import ApplicationError, InvalidArgumentError

# Largest runtime code the EVM will deploy
MAX_CODE_SIZE = 24576

class InputTooLarge(ApplicationError):
    """Raised when bytecode exceeds the deployable code size"""

class HexParseError(InvalidArgumentError):
    """Raised when a hex file cannot be decoded"""

class UnreadableInput(InvalidArgumentError):
    """Raised when an input file cannot be read"""


class OpcodeInfo:
    """Static description of one opcode"""
    __slots__ = ("opcode", "name", "immediate_size", "pops", "pushes")

    def __init__(self, opcode, name, immediate_size, pops, pushes):
        self.opcode = opcode
        self.name = name
        self.immediate_size = immediate_size
        self.pops = pops
        self.pushes = pushes

    def __repr__(self):
        return f"OpcodeInfo(0x{self.opcode:02x}, {self.name}, pops={self.pops}, pushes={self.pushes})"

# opcode: (name, pops, pushes)
_BASE_OPCODES = {
    0x00: ("STOP", 0, 0),
    0x01: ("ADD", 2, 1),
    0x02: ("MUL", 2, 1),
    0x03: ("SUB", 2, 1),
    0x04: ("DIV", 2, 1),
    0x05: ("SDIV", 2, 1),
    0x06: ("MOD", 2, 1),
    0x07: ("SMOD", 2, 1),
    0x08: ("ADDMOD", 3, 1),
    0x09: ("MULMOD", 3, 1),
    0x0a: ("EXP", 2, 1),
    0x0b: ("SIGNEXTEND", 2, 1),
    0x10: ("LT", 2, 1),
    0x11: ("GT", 2, 1),
    0x12: ("SLT", 2, 1),
    0x13: ("SGT", 2, 1),
    0x14: ("EQ", 2, 1),
    0x15: ("ISZERO", 1, 1),
    0x16: ("AND", 2, 1),
    0x17: ("OR", 2, 1),
    0x18: ("XOR", 2, 1),
    0x19: ("NOT", 1, 1),
    0x1a: ("BYTE", 2, 1),
    0x1b: ("SHL", 2, 1),
    0x1c: ("SHR", 2, 1),
    0x1d: ("SAR", 2, 1),
    0x20: ("KECCAK256", 2, 1),
    0x30: ("ADDRESS", 0, 1),
    0x31: ("BALANCE", 1, 1),
    0x32: ("ORIGIN", 0, 1),
    0x33: ("CALLER", 0, 1),
    0x34: ("CALLVALUE", 0, 1),
    0x35: ("CALLDATALOAD", 1, 1),
    0x36: ("CALLDATASIZE", 0, 1),
    0x37: ("CALLDATACOPY", 3, 0),
    0x38: ("CODESIZE", 0, 1),
    0x39: ("CODECOPY", 3, 0),
    0x3a: ("GASPRICE", 0, 1),
    0x3b: ("EXTCODESIZE", 1, 1),
    0x3c: ("EXTCODECOPY", 4, 0),
    0x3d: ("RETURNDATASIZE", 0, 1),
    0x3e: ("RETURNDATACOPY", 3, 0),
    0x3f: ("EXTCODEHASH", 1, 1),
    0x40: ("BLOCKHASH", 1, 1),
    0x41: ("COINBASE", 0, 1),
    0x42: ("TIMESTAMP", 0, 1),
    0x43: ("NUMBER", 0, 1),
    0x44: ("PREVRANDAO", 0, 1),
    0x45: ("GASLIMIT", 0, 1),
    0x46: ("CHAINID", 0, 1),
    0x47: ("SELFBALANCE", 0, 1),
    0x48: ("BASEFEE", 0, 1),
    0x49: ("BLOBHASH", 1, 1),
    0x4a: ("BLOBBASEFEE", 0, 1),
    0x50: ("POP", 1, 0),
    0x51: ("MLOAD", 1, 1),
    0x52: ("MSTORE", 2, 0),
    0x53: ("MSTORE8", 2, 0),
    0x54: ("SLOAD", 1, 1),
    0x55: ("SSTORE", 2, 0),
    0x56: ("JUMP", 1, 0),
    0x57: ("JUMPI", 2, 0),
    0x58: ("PC", 0, 1),
    0x59: ("MSIZE", 0, 1),
    0x5a: ("GAS", 0, 1),
    0x5b: ("JUMPDEST", 0, 0),
    0x5c: ("TLOAD", 1, 1),
    0x5d: ("TSTORE", 2, 0),
    0x5e: ("MCOPY", 3, 0),
    0x5f: ("PUSH0", 0, 1),
    0xa0: ("LOG0", 2, 0),
    0xa1: ("LOG1", 3, 0),
    0xa2: ("LOG2", 4, 0),
    0xa3: ("LOG3", 5, 0),
    0xa4: ("LOG4", 6, 0),
    0xf0: ("CREATE", 3, 1),
    0xf1: ("CALL", 7, 1),
    0xf2: ("CALLCODE", 7, 1),
    0xf3: ("RETURN", 2, 0),
    0xf4: ("DELEGATECALL", 6, 1),
    0xf5: ("CREATE2", 4, 1),
    0xfa: ("STATICCALL", 6, 1),
    0xfd: ("REVERT", 2, 0),
    0xfe: ("INVALID", 0, 0),
    0xff: ("SELFDESTRUCT", 1, 0),
}

def _build_opcode_table():
    table = {}
    for opcode, (name, pops, pushes) in _BASE_OPCODES.items():
        table[opcode] = OpcodeInfo(opcode, name, 0, pops, pushes)
    for width in range(1, 33):
        table[0x5f + width] = OpcodeInfo(0x5f + width, f"PUSH{width}", width, 0, 1)
    for depth in range(1, 17):
        table[0x7f + depth] = OpcodeInfo(0x7f + depth, f"DUP{depth}", 0, depth, depth + 1)
        table[0x8f + depth] = OpcodeInfo(0x8f + depth, f"SWAP{depth}", 0, depth + 1, depth + 1)
    for opcode in range(256):
        if opcode not in table:
            table[opcode] = OpcodeInfo(opcode, f"UNKNOWN_0x{opcode:02x}", 0, 0, 0)
    return table

OPCODES = _build_opcode_table()
OPCODES_BY_NAME = {info.name: info.opcode for info in OPCODES.values()}
# Older spellings
OPCODES_BY_NAME["SHA3"] = 0x20
OPCODES_BY_NAME["THROW"] = 0xfe
OPCODES_BY_NAME["DIFFICULTY"] = 0x44

# Instructions that end a basic block
TERMINATORS = frozenset(OPCODES_BY_NAME[name] for name in ("JUMP", "JUMPI", "RETURN", "REVERT", "STOP", "SELFDESTRUCT", "INVALID"))
HALTING = TERMINATORS - {OPCODES_BY_NAME["JUMP"], OPCODES_BY_NAME["JUMPI"]}
JUMP = 0x56
JUMPI = 0x57
JUMPDEST = 0x5b

def opcode_info(opcode):
    """Get the OpcodeInfo for an opcode value"""
    return OPCODES[opcode & 0xff]

def is_push(opcode):
    """Check if an opcode is PUSH1..PUSH32"""
    return 0x60 <= opcode <= 0x7f

def is_dup(opcode):
    return 0x80 <= opcode <= 0x8f

def is_swap(opcode):
    return 0x90 <= opcode <= 0x9f

def is_log(opcode):
    return 0xa0 <= opcode <= 0xa4

def is_defined(opcode):
    """Check if an opcode is assigned in the EVM instruction set"""
    return not OPCODES[opcode].name.startswith("UNKNOWN")


class StableCategory(Enum):
    """Families of stable instructions"""
    STORAGE = "Storage"
    LOG = "Log"
    CALL = "Call"
    RETURN = "Return"

STABLE_OPCODES = {
    StableCategory.STORAGE: ("SSTORE", "SLOAD"),
    StableCategory.LOG: ("LOG0", "LOG1", "LOG2", "LOG3", "LOG4"),
    StableCategory.CALL: ("CALL", "STATICCALL", "BALANCE", "DELEGATECALL"),
    # THROW is the historical name of the INVALID opcode
    StableCategory.RETURN: ("RETURN", "SELFDESTRUCT", "REVERT", "THROW", "STOP"),
}
_STABLE_BY_OPCODE = {OPCODES_BY_NAME[name]: category
                     for category, names in STABLE_OPCODES.items()
                     for name in names}

def classify_stable(opcode):
    """
    Get the stable category of an opcode

    Args:
        opcode:     (int) The opcode value

    Returns:
        The StableCategory, or None if the opcode is not a stable instruction
    """
    return _STABLE_BY_OPCODE.get(opcode)


@dataclass(frozen=True)
class Bytecode:
    """Runtime bytecode of one contract"""
    code: bytes
    origin_id: str = ""

    def __len__(self):
        return len(self.code)

    def hex(self):
        return "0x" + self.code.hex()


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction"""
    offset: int
    opcode: int
    push_data: bytes = None

    @property
    def info(self):
        return OPCODES[self.opcode]

    @property
    def name(self):
        return OPCODES[self.opcode].name

    @property
    def size(self):
        return 1 + (len(self.push_data) if self.push_data is not None else 0)

    @property
    def next_offset(self):
        return self.offset + self.size

    @property
    def push_value(self):
        """The pushed constant, or None for non-PUSH instructions"""
        if self.push_data is None:
            return 0 if self.opcode == 0x5f else None
        return int.from_bytes(self.push_data, "big")

    def to_bytes(self):
        return bytes([self.opcode]) + (self.push_data or b"")

    def __str__(self):
        if self.push_data is not None:
            return f"{self.offset:#06x} {self.name} 0x{self.push_data.hex()}"
        return f"{self.offset:#06x} {self.name}"


def parse_hex(text):
    """
    Decode hex text into bytes. Accepts an optional 0x prefix, either case, and
    ignores whitespace.

    Args:
        text:   (str) The hex text

    Returns:
        bytes
    """
    cleaned = re.sub(r"\s+", "", text)
    if cleaned[:2] in ("0x", "0X"):
        cleaned = cleaned[2:]
    if len(cleaned) % 2 != 0:
        raise HexParseError("Hex input has an odd number of digits")
    if not re.fullmatch(r"[0-9a-fA-F]*", cleaned):
        raise HexParseError("Hex input contains non-hex characters")
    return bytes.fromhex(cleaned)

def load_bytecode(path, origin_id=None):
    """
    Read a hex file of runtime bytecode

    Args:
        path:       (str or Path) The file to read
        origin_id:  (str) Name for the contract, defaults to the file stem

    Returns:
        A Bytecode
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as ex:
        raise UnreadableInput(f"Could not read {path}: {ex}") from ex
    try:
        code = parse_hex(text)
    except HexParseError as ex:
        raise HexParseError(f"{path}: {ex}") from ex
    return Bytecode(code, origin_id or path.name.split(".")[0])

def strip_metadata(code):
    """
    Remove a trailing Solidity CBOR metadata section. The last two bytes of the
    code hold the big-endian length of the CBOR map that precedes them.

    Args:
        code:   (Bytecode) The runtime bytecode

    Returns:
        A Bytecode without the trailer, or the input unchanged if no trailer is
        recognized
    """
    data = code.code
    if len(data) < 2:
        return code
    length = int.from_bytes(data[-2:], "big")
    if length == 0 or length + 2 > len(data):
        return code
    cbor = data[-2 - length:-2]
    # CBOR map header (major type 5)
    if cbor[0] & 0xe0 != 0xa0:
        return code
    GetLogger().debug2(f"Stripped {length + 2} bytes of metadata from {code.origin_id}")
    return Bytecode(data[:-2 - length], code.origin_id)

def check_size(code):
    """Raise InputTooLarge if the code exceeds the size limit once metadata is stripped"""
    stripped = strip_metadata(code)
    if len(stripped.code) > MAX_CODE_SIZE:
        raise InputTooLarge(f"{code.origin_id or 'bytecode'} is {len(stripped.code)} bytes, more than the {MAX_CODE_SIZE} byte limit")

def disassemble(code):
    """
    Decode bytecode into a list of instructions. Every byte belongs to exactly
    one instruction, undefined opcodes decode as 1-byte instructions, and a
    PUSH cut short by the end of the code is zero-padded.

    Args:
        code:   (Bytecode) The runtime bytecode

    Returns:
        A list of Instruction
    """
    check_size(code)
    data = code.code
    instructions = []
    pc = 0
    while pc < len(data):
        opcode = data[pc]
        width = OPCODES[opcode].immediate_size
        if width:
            push_data = data[pc + 1:pc + 1 + width]
            if len(push_data) < width:
                push_data = push_data + bytes(width - len(push_data))
            instructions.append(Instruction(pc, opcode, push_data))
        else:
            instructions.append(Instruction(pc, opcode))
        pc += 1 + width
    return instructions

def assemble(instructions):
    """Serialize a list of instructions back to bytes"""
    return b"".join(inst.to_bytes() for inst in instructions)
