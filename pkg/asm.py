"""A small label-resolving EVM assembler"""
from pyapputil.exceptutil import InvalidArgumentError

from evm import OPCODES_BY_NAME, opcode_info

class Assembler:
    """
    Build bytecode one instruction at a time. Jump targets are referenced by
    label and resolved when the code is assembled.

    Example:
        asm = Assembler()
        asm.push_label("body").op("JUMP")
        asm.label("body").push(5).push(0).op("SSTORE").op("STOP")
        code = asm.assemble()
    """

    def __init__(self, label_width=2):
        self.label_width = label_width
        self._items = []
        self._marks = {}

    def op(self, name):
        """Append an instruction with no immediate data"""
        opcode = OPCODES_BY_NAME.get(name.upper())
        if opcode is None:
            raise InvalidArgumentError(f"Unknown instruction {name}")
        if opcode_info(opcode).immediate_size:
            raise InvalidArgumentError(f"{name} needs immediate data, use push()")
        self._items.append(("op", opcode))
        return self

    def ops(self, *names):
        """Append several instructions"""
        for name in names:
            if name.upper().startswith("PUSH") and " " in name:
                _, value = name.split()
                self.push(int(value, 0), width=int(name.split()[0][4:]))
            else:
                self.op(name)
        return self

    def push(self, value, width=None):
        """
        Append a PUSH of a constant

        Args:
            value:  (int) The value to push
            width:  (int) The PUSH width in bytes, defaults to the smallest that fits
        """
        if value < 0 or value >= 1 << 256:
            raise InvalidArgumentError(f"Cannot push {value}")
        needed = max(1, (value.bit_length() + 7) // 8)
        width = width or needed
        if width < needed or width > 32:
            raise InvalidArgumentError(f"Cannot push {value:#x} with PUSH{width}")
        self._items.append(("push", width, value))
        return self

    def push_label(self, name):
        """Append a PUSH of the offset of a label"""
        self._items.append(("label_ref", self.label_width, name))
        return self

    def label(self, name):
        """Define a label here and emit its JUMPDEST"""
        self._items.append(("label", name))
        self._items.append(("op", OPCODES_BY_NAME["JUMPDEST"]))
        return self

    def mark(self, name):
        """Name the offset of the next instruction"""
        self._marks[name] = len(self._items)
        return self

    def raw(self, data):
        """Append raw bytes"""
        self._items.append(("raw", bytes(data)))
        return self

    def _layout(self):
        offsets = []
        labels = {}
        pc = 0
        for item in self._items:
            offsets.append(pc)
            kind = item[0]
            if kind == "label":
                if item[1] in labels:
                    raise InvalidArgumentError(f"Label {item[1]} defined twice")
                labels[item[1]] = pc
            elif kind == "op":
                pc += 1
            elif kind in ("push", "label_ref"):
                pc += 1 + item[1]
            elif kind == "raw":
                pc += len(item[1])
        offsets.append(pc)
        return offsets, labels

    def assemble(self):
        """
        Resolve labels and produce the bytecode

        Returns:
            bytes
        """
        _, labels = self._layout()
        out = bytearray()
        for item in self._items:
            kind = item[0]
            if kind == "op":
                out.append(item[1])
            elif kind == "push":
                out.append(0x5f + item[1])
                out += item[2].to_bytes(item[1], "big")
            elif kind == "label_ref":
                if item[2] not in labels:
                    raise InvalidArgumentError(f"Undefined label {item[2]}")
                out.append(0x5f + item[1])
                out += labels[item[2]].to_bytes(item[1], "big")
            elif kind == "raw":
                out += item[1]
        return bytes(out)

    def offset_of(self, name):
        """Get the offset of a label or mark"""
        offsets, labels = self._layout()
        if name in labels:
            return labels[name]
        if name in self._marks:
            return offsets[self._marks[name]]
        raise InvalidArgumentError(f"Unknown label or mark {name}")
