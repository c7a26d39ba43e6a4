"""Two-level ISA: 128-bit task instructions and 32-bit micro-ops.

Task instructions orchestrate multi-cycle DMA and compute tasks and carry
four dependency-token flags. Micro-ops give per-step tile indices; the
compute core walks them inside a two-level loop whose per-level address
strides live in the GEMM/ALU instruction.

Bit layout (little-endian within each 64-bit word, fields LSB-first):

  word 0, all variants: [2:0] opcode, [3] pop_prev, [4] pop_next,
                        [5] push_prev, [6] push_next
  LOAD/STORE   word 0:  [9:7] mem_scope, [25:10] sram_base, [57:26] dram_base
               word 1:  [15:0] y_size, [31:16] x_size, [47:32] x_stride,
                        [51:48] y_pad_top, [55:52] y_pad_bottom,
                        [59:56] x_pad_left, [63:60] x_pad_right
  GEMM         word 0:  [7] reset, [20:8] uop_bgn, [34:21] uop_end,
                        [48:35] iter_out, [62:49] iter_in
               word 1:  4 x 11-bit dst/src factors, 2 x 10-bit wgt factors
  ALU          word 0:  as GEMM
               word 1:  4 x 11-bit dst/src factors, [46:44] alu_opcode,
                        [47] use_imm, [63:48] imm (two's complement)
  FINISH:               header only
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from typing import BinaryIO, Iterable, Sequence, Union

INSTR_BYTES = 16
UOP_BYTES = 4
PROGRAM_MAGIC = b"VTAP"
PROGRAM_VERSION = 1


class IsaError(ValueError):
    pass


class EncodeError(IsaError):
    pass


class DecodeError(IsaError):
    pass


class ValidationError(IsaError):
    pass


class ParseError(IsaError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class ContainerError(IsaError):
    pass


class Opcode(IntEnum):
    LOAD = 0
    STORE = 1
    GEMM = 2
    FINISH = 3
    ALU = 4


class MemScope(IntEnum):
    UOP = 0
    WGT = 1
    INP = 2
    ACC = 3
    OUT = 4


class AluOpcode(IntEnum):
    MIN = 0
    MAX = 1
    ADD = 2
    SHR = 3


@dataclass(frozen=True)
class DepFlags:
    pop_prev: bool = False
    pop_next: bool = False
    push_prev: bool = False
    push_next: bool = False

    def any(self) -> bool:
        return self.pop_prev or self.pop_next or self.push_prev or self.push_next


NO_FLAGS = DepFlags()


@dataclass(frozen=True)
class MemInstr:
    """LOAD/STORE: 2D strided DMA between DRAM and an on-chip scope.

    dram_base counts tile-rows of the destination scope; x_stride is the
    DRAM-side row stride in tiles. The SRAM side is dense; LOAD zero-fills
    the four pad regions around the y_size x x_size data block. Zero-extent
    transfers (y_size or x_size == 0) are legal no-ops.
    """

    opcode: Opcode
    scope: MemScope
    sram_base: int = 0
    dram_base: int = 0
    y_size: int = 1
    x_size: int = 1
    x_stride: int = 1
    y_pad_top: int = 0
    y_pad_bottom: int = 0
    x_pad_left: int = 0
    x_pad_right: int = 0
    flags: DepFlags = NO_FLAGS

    def validate(self) -> None:
        if self.opcode == Opcode.LOAD and self.scope == MemScope.OUT:
            raise ValidationError("LOAD from scope OUT is invalid")
        if self.opcode == Opcode.STORE and self.scope != MemScope.OUT:
            raise ValidationError("STORE must target scope OUT")
        if self.opcode == Opcode.STORE and (
            self.y_pad_top or self.y_pad_bottom or self.x_pad_left or self.x_pad_right
        ):
            raise ValidationError("STORE takes no padding")


@dataclass(frozen=True)
class GemmInstr:
    """Run micro-ops [uop_bgn, uop_end) under a two-level loop.

    Tile addresses are affine: e.g. the accumulator tile for loop indices
    (i0, i1) and micro-op u is u.acc_idx + i0*dst_factor_out + i1*dst_factor_in.
    reset=1 zeroes the addressed accumulator tiles instead of multiplying.
    """

    reset: bool = False
    uop_bgn: int = 0
    uop_end: int = 1
    iter_out: int = 1
    iter_in: int = 1
    dst_factor_out: int = 0
    dst_factor_in: int = 0
    src_factor_out: int = 0
    src_factor_in: int = 0
    wgt_factor_out: int = 0
    wgt_factor_in: int = 0
    flags: DepFlags = NO_FLAGS
    opcode: Opcode = field(default=Opcode.GEMM, init=False)

    def validate(self) -> None:
        if not (0 <= self.uop_bgn < self.uop_end):
            raise ValidationError(f"need uop_bgn < uop_end, got [{self.uop_bgn}, {self.uop_end})")
        if self.iter_out < 1 or self.iter_in < 1:
            raise ValidationError("iter_out and iter_in must be >= 1")


@dataclass(frozen=True)
class AluInstr:
    """Element-wise MIN/MAX/ADD/SHR over accumulator tiles.

    SHR is an arithmetic shift (rounds toward -inf); a negative immediate
    shifts left. The source is an accumulator tile (via inp_idx and the
    src factors) or the immediate when use_imm is set.
    """

    alu_opcode: AluOpcode = AluOpcode.ADD
    reset: bool = False
    uop_bgn: int = 0
    uop_end: int = 1
    iter_out: int = 1
    iter_in: int = 1
    dst_factor_out: int = 0
    dst_factor_in: int = 0
    src_factor_out: int = 0
    src_factor_in: int = 0
    use_imm: bool = False
    imm: int = 0
    flags: DepFlags = NO_FLAGS
    opcode: Opcode = field(default=Opcode.ALU, init=False)

    def validate(self) -> None:
        if not (0 <= self.uop_bgn < self.uop_end):
            raise ValidationError(f"need uop_bgn < uop_end, got [{self.uop_bgn}, {self.uop_end})")
        if self.iter_out < 1 or self.iter_in < 1:
            raise ValidationError("iter_out and iter_in must be >= 1")
        if not (-(1 << 15) <= self.imm < (1 << 15)):
            raise ValidationError(f"imm={self.imm} outside 16-bit two's complement")


@dataclass(frozen=True)
class FinishInstr:
    flags: DepFlags = NO_FLAGS
    opcode: Opcode = field(default=Opcode.FINISH, init=False)

    def validate(self) -> None:
        pass


Instruction = Union[MemInstr, GemmInstr, AluInstr, FinishInstr]


@dataclass(frozen=True)
class MicroOp:
    """One micro-op: accumulator/input/weight tile indices (dst/src for ALU)."""

    acc_idx: int = 0
    inp_idx: int = 0
    wgt_idx: int = 0


# --- field layout tables ---------------------------------------------------
# (name, width, signed). A None entry marks the jump to bit 64 (word 1).

_MEM_LAYOUT = [
    ("scope", 3, False),
    ("sram_base", 16, False),
    ("dram_base", 32, False),
    None,
    ("y_size", 16, False),
    ("x_size", 16, False),
    ("x_stride", 16, False),
    ("y_pad_top", 4, False),
    ("y_pad_bottom", 4, False),
    ("x_pad_left", 4, False),
    ("x_pad_right", 4, False),
]

_GEMM_LAYOUT = [
    ("reset", 1, False),
    ("uop_bgn", 13, False),
    ("uop_end", 14, False),
    ("iter_out", 14, False),
    ("iter_in", 14, False),
    None,
    ("dst_factor_out", 11, False),
    ("dst_factor_in", 11, False),
    ("src_factor_out", 11, False),
    ("src_factor_in", 11, False),
    ("wgt_factor_out", 10, False),
    ("wgt_factor_in", 10, False),
]

_ALU_LAYOUT = [
    ("reset", 1, False),
    ("uop_bgn", 13, False),
    ("uop_end", 14, False),
    ("iter_out", 14, False),
    ("iter_in", 14, False),
    None,
    ("dst_factor_out", 11, False),
    ("dst_factor_in", 11, False),
    ("src_factor_out", 11, False),
    ("src_factor_in", 11, False),
    ("alu_opcode", 3, False),
    ("use_imm", 1, False),
    ("imm", 16, True),
]

_LAYOUTS = {
    Opcode.LOAD: _MEM_LAYOUT,
    Opcode.STORE: _MEM_LAYOUT,
    Opcode.GEMM: _GEMM_LAYOUT,
    Opcode.ALU: _ALU_LAYOUT,
    Opcode.FINISH: [],
}

FIELD_LIMITS = {
    Opcode.LOAD: {name: (w, s) for name, w, s in (e for e in _MEM_LAYOUT if e)},
    Opcode.STORE: {name: (w, s) for name, w, s in (e for e in _MEM_LAYOUT if e)},
    Opcode.GEMM: {name: (w, s) for name, w, s in (e for e in _GEMM_LAYOUT if e)},
    Opcode.ALU: {name: (w, s) for name, w, s in (e for e in _ALU_LAYOUT if e)},
    Opcode.FINISH: {},
}


def _check_width(name: str, value: int, width: int, signed: bool) -> int:
    if signed:
        lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
    else:
        lo, hi = 0, (1 << width) - 1
    if not (lo <= value <= hi):
        raise EncodeError(f"field {name}={value} does not fit {width} bits")
    return value & ((1 << width) - 1)


def encode_instruction(i: Instruction) -> bytes:
    i.validate()
    word = int(i.opcode)
    word |= (int(i.flags.pop_prev) << 3) | (int(i.flags.pop_next) << 4)
    word |= (int(i.flags.push_prev) << 5) | (int(i.flags.push_next) << 6)
    pos = 7
    for entry in _LAYOUTS[i.opcode]:
        if entry is None:
            pos = 64
            continue
        name, width, signed = entry
        word |= _check_width(name, int(getattr(i, name)), width, signed) << pos
        pos += width
    return word.to_bytes(INSTR_BYTES, "little")


def decode_instruction(b: bytes) -> Instruction:
    if len(b) != INSTR_BYTES:
        raise DecodeError(f"instruction must be {INSTR_BYTES} bytes, got {len(b)}")
    word = int.from_bytes(b, "little")
    op_raw = word & 0x7
    try:
        opcode = Opcode(op_raw)
    except ValueError:
        raise DecodeError(f"opcode {op_raw} is not defined") from None
    flags = DepFlags(
        pop_prev=bool(word >> 3 & 1),
        pop_next=bool(word >> 4 & 1),
        push_prev=bool(word >> 5 & 1),
        push_next=bool(word >> 6 & 1),
    )
    vals = {}
    pos = 7
    for entry in _LAYOUTS[opcode]:
        if entry is None:
            pos = 64
            continue
        name, width, signed = entry
        raw = (word >> pos) & ((1 << width) - 1)
        if signed and raw >= (1 << (width - 1)):
            raw -= 1 << width
        vals[name] = raw
        pos += width
    if opcode in (Opcode.LOAD, Opcode.STORE):
        try:
            scope = MemScope(vals.pop("scope"))
        except ValueError:
            raise DecodeError(f"mem_scope {vals['scope']} is not defined") from None
        instr: Instruction = MemInstr(opcode=opcode, scope=scope, flags=flags, **vals)
    elif opcode == Opcode.GEMM:
        vals["reset"] = bool(vals["reset"])
        instr = GemmInstr(flags=flags, **vals)
    elif opcode == Opcode.ALU:
        vals["reset"] = bool(vals["reset"])
        vals["use_imm"] = bool(vals["use_imm"])
        vals["alu_opcode"] = AluOpcode(vals["alu_opcode"] & 0x3)
        instr = AluInstr(flags=flags, **vals)
    else:
        instr = FinishInstr(flags=flags)
    instr.validate()
    return instr


def encode_uop(u: MicroOp) -> bytes:
    if not (0 <= u.acc_idx < (1 << 11)):
        raise EncodeError(f"field acc_idx={u.acc_idx} does not fit 11 bits")
    if not (0 <= u.inp_idx < (1 << 11)):
        raise EncodeError(f"field inp_idx={u.inp_idx} does not fit 11 bits")
    if not (0 <= u.wgt_idx < (1 << 10)):
        raise EncodeError(f"field wgt_idx={u.wgt_idx} does not fit 10 bits")
    word = u.acc_idx | (u.inp_idx << 11) | (u.wgt_idx << 22)
    return word.to_bytes(UOP_BYTES, "little")


def decode_uop(b: bytes) -> MicroOp:
    if len(b) != UOP_BYTES:
        raise DecodeError(f"micro-op must be {UOP_BYTES} bytes, got {len(b)}")
    word = int.from_bytes(b, "little")
    return MicroOp(
        acc_idx=word & 0x7FF,
        inp_idx=(word >> 11) & 0x7FF,
        wgt_idx=(word >> 22) & 0x3FF,
    )


# --- program container ------------------------------------------------------

@dataclass(frozen=True)
class Program:
    instrs: tuple
    uops: tuple

    def __iter__(self):
        # allows `instrs, uops = assemble(text)` style unpacking
        return iter((self.instrs, self.uops))


def write_program(f: BinaryIO, program: Program) -> None:
    f.write(PROGRAM_MAGIC)
    f.write(struct.pack("<III", PROGRAM_VERSION, len(program.instrs), len(program.uops)))
    for i in program.instrs:
        f.write(encode_instruction(i))
    for u in program.uops:
        f.write(encode_uop(u))


def read_program(f: BinaryIO) -> Program:
    magic = f.read(4)
    if magic != PROGRAM_MAGIC:
        raise ContainerError(f"bad magic {magic!r}, expected {PROGRAM_MAGIC!r}")
    header = f.read(12)
    if len(header) != 12:
        raise ContainerError("truncated program header")
    version, n_instr, n_uop = struct.unpack("<III", header)
    if version != PROGRAM_VERSION:
        raise ContainerError(f"unsupported program version {version}")
    instrs = []
    for k in range(n_instr):
        raw = f.read(INSTR_BYTES)
        if len(raw) != INSTR_BYTES:
            raise ContainerError(f"truncated instruction {k}")
        instrs.append(decode_instruction(raw))
    uops = []
    for k in range(n_uop):
        raw = f.read(UOP_BYTES)
        if len(raw) != UOP_BYTES:
            raise ContainerError(f"truncated micro-op {k}")
        uops.append(decode_uop(raw))
    return Program(tuple(instrs), tuple(uops))


# --- text assembly -----------------------------------------------------------

_FLAG_NAMES = ("pop_prev", "pop_next", "push_prev", "push_next")


def _format_value(name: str, value) -> str:
    if name == "scope":
        return MemScope(value).name
    if name == "alu_opcode":
        return AluOpcode(value).name
    if isinstance(value, bool):
        return str(int(value))
    return str(value)


def disassemble(program: Program) -> str:
    """Canonical text form: every variant field explicit, flags only when set."""
    lines = []
    for i in program.instrs:
        parts = [i.opcode.name]
        for entry in _LAYOUTS[i.opcode]:
            if entry is None:
                continue
            name, _, _ = entry
            parts.append(f"{name}={_format_value(name, getattr(i, name))}")
        for fname in _FLAG_NAMES:
            if getattr(i.flags, fname):
                parts.append(f"{fname}=1")
        lines.append(" ".join(parts))
    if program.uops:
        lines.append("@uops")
        for u in program.uops:
            lines.append(f"UOP acc_idx={u.acc_idx} inp_idx={u.inp_idx} wgt_idx={u.wgt_idx}")
    return "\n".join(lines) + "\n"


_UOP_FIELDS = ("acc_idx", "inp_idx", "wgt_idx")


def _parse_value(name: str, text: str, line_no: int) -> int:
    if name == "scope":
        if text.upper() in MemScope.__members__:
            return int(MemScope[text.upper()])
    if name == "alu_opcode":
        if text.upper() in AluOpcode.__members__:
            return int(AluOpcode[text.upper()])
    try:
        return int(text, 0)
    except ValueError:
        raise ParseError(line_no, f"bad value {text!r} for {name}") from None


def assemble(text: str) -> Program:
    instrs: list[Instruction] = []
    uops: list[MicroOp] = []
    in_uops = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "@uops":
            in_uops = True
            continue
        tokens = line.split()
        mnemonic = tokens[0].upper()
        kv = {}
        for tok in tokens[1:]:
            if "=" not in tok:
                raise ParseError(line_no, f"expected key=value, got {tok!r}")
            key, val = tok.split("=", 1)
            kv[key] = _parse_value(key, val, line_no)

        if in_uops:
            if mnemonic != "UOP":
                raise ParseError(line_no, f"expected UOP in @uops section, got {mnemonic}")
            extra = set(kv) - set(_UOP_FIELDS)
            if extra:
                raise ParseError(line_no, f"unknown micro-op fields: {sorted(extra)}")
            u = MicroOp(**{k: kv.get(k, 0) for k in _UOP_FIELDS})
            try:
                encode_uop(u)
            except EncodeError as e:
                raise ParseError(line_no, str(e)) from None
            uops.append(u)
            continue

        if mnemonic not in Opcode.__members__:
            raise ParseError(line_no, f"unknown opcode {mnemonic}")
        opcode = Opcode[mnemonic]
        flag_kwargs = {}
        for fname in _FLAG_NAMES:
            if fname in kv:
                flag_kwargs[fname] = bool(kv.pop(fname))
        layout_fields = {name for name, _, _ in (e for e in _LAYOUTS[opcode] if e)}
        extra = set(kv) - layout_fields
        if extra:
            raise ParseError(line_no, f"unknown fields for {mnemonic}: {sorted(extra)}")
        flags = DepFlags(**flag_kwargs)
        try:
            if opcode in (Opcode.LOAD, Opcode.STORE):
                if "scope" not in kv:
                    raise ParseError(line_no, f"{mnemonic} needs scope=")
                instr: Instruction = MemInstr(
                    opcode=opcode, scope=MemScope(kv.pop("scope")), flags=flags, **kv
                )
            elif opcode == Opcode.GEMM:
                if "reset" in kv:
                    kv["reset"] = bool(kv["reset"])
                instr = GemmInstr(flags=flags, **kv)
            elif opcode == Opcode.ALU:
                for b in ("reset", "use_imm"):
                    if b in kv:
                        kv[b] = bool(kv[b])
                if "alu_opcode" in kv:
                    kv["alu_opcode"] = AluOpcode(kv["alu_opcode"])
                instr = AluInstr(flags=flags, **kv)
            else:
                instr = FinishInstr(flags=flags)
            instr.validate()
            encode_instruction(instr)  # surface width overflows with a line number
        except (ValidationError, EncodeError, ValueError) as e:
            raise ParseError(line_no, str(e)) from None
        instrs.append(instr)
    return Program(tuple(instrs), tuple(uops))


# --- whole-program validation -------------------------------------------------

@dataclass(frozen=True)
class Violation:
    index: int  # instruction index, -1 for program-level findings
    message: str

    def __str__(self) -> str:
        where = f"instr {self.index}" if self.index >= 0 else "program"
        return f"{where}: {self.message}"


def dispatch_module(instr: Instruction) -> str:
    """Which pipeline module executes this instruction."""
    if isinstance(instr, MemInstr):
        if instr.opcode == Opcode.STORE:
            return "store"
        return "compute" if instr.scope == MemScope.UOP else "load"
    return "compute"


_ALLOWED_FLAGS = {
    "load": ("pop_next", "push_next"),
    "store": ("pop_prev", "push_prev"),
    "compute": _FLAG_NAMES,
}


def validate_program(
    instrs: Sequence[Instruction],
    uops: Sequence[MicroOp],
    p,
) -> list[Violation]:
    """Static checks of a program against a hardware parameterization.

    Verifies SRAM footprints, that every GEMM/ALU micro-op slot was loaded
    first, that the affine address walks stay inside the buffers, and that
    the program terminates with FINISH. Returns all findings, never raises.
    """
    out: list[Violation] = []
    if not instrs:
        return [Violation(-1, "missing FINISH (empty program)")]
    if not isinstance(instrs[-1], FinishInstr):
        out.append(Violation(-1, "missing FINISH as final instruction"))

    tiles = {
        MemScope.UOP: p.uop_tiles,
        MemScope.INP: p.inp_tiles,
        MemScope.WGT: p.wgt_tiles,
        MemScope.ACC: p.acc_tiles,
        MemScope.OUT: p.out_tiles,
    }
    # uop SRAM slot -> index into the program's micro-op table, or None
    loaded: list = [None] * p.uop_tiles

    for idx, i in enumerate(instrs):
        if isinstance(i, FinishInstr) and idx != len(instrs) - 1:
            out.append(Violation(idx, "FINISH before end of program"))
            continue
        try:
            i.validate()
        except ValidationError as e:
            out.append(Violation(idx, str(e)))
            continue
        module = dispatch_module(i)
        for fname in _FLAG_NAMES:
            if getattr(i.flags, fname) and fname not in _ALLOWED_FLAGS[module]:
                out.append(Violation(idx, f"{fname} has no queue on {module} module"))

        if isinstance(i, MemInstr):
            rows = i.y_pad_top + i.y_size + i.y_pad_bottom
            cols = i.x_pad_left + i.x_size + i.x_pad_right
            footprint = rows * cols
            if footprint and i.sram_base + footprint > tiles[i.scope]:
                out.append(
                    Violation(
                        idx,
                        f"sram range [{i.sram_base}, {i.sram_base + footprint}) exceeds "
                        f"{i.scope.name} capacity {tiles[i.scope]} tiles",
                    )
                )
                continue
            if i.scope == MemScope.UOP and i.opcode == Opcode.LOAD:
                count = i.y_size * i.x_size
                if i.dram_base + count > len(uops):
                    out.append(
                        Violation(idx, f"uop load [{i.dram_base}, {i.dram_base + count}) exceeds table of {len(uops)}")
                    )
                    continue
                for k in range(count):
                    loaded[i.sram_base + k] = i.dram_base + k

        elif isinstance(i, (GemmInstr, AluInstr)):
            if i.uop_end > p.uop_tiles:
                out.append(Violation(idx, f"uop_end {i.uop_end} exceeds uop buffer of {p.uop_tiles} entries"))
                continue
            refs = []
            missing = False
            for slot in range(i.uop_bgn, i.uop_end):
                if loaded[slot] is None:
                    out.append(Violation(idx, f"uop slot {slot} used before being loaded"))
                    missing = True
                    break
                refs.append(uops[loaded[slot]])
            if missing:
                continue
            span_out, span_in = i.iter_out - 1, i.iter_in - 1
            dst_reach = span_out * i.dst_factor_out + span_in * i.dst_factor_in
            src_reach = span_out * i.src_factor_out + span_in * i.src_factor_in
            max_dst = max(u.acc_idx for u in refs) + dst_reach
            if max_dst >= p.acc_tiles:
                out.append(Violation(idx, f"acc index reaches {max_dst}, capacity {p.acc_tiles} tiles"))
            if isinstance(i, GemmInstr):
                if not i.reset:
                    wgt_reach = span_out * i.wgt_factor_out + span_in * i.wgt_factor_in
                    max_src = max(u.inp_idx for u in refs) + src_reach
                    max_wgt = max(u.wgt_idx for u in refs) + wgt_reach
                    if max_src >= p.inp_tiles:
                        out.append(Violation(idx, f"inp index reaches {max_src}, capacity {p.inp_tiles} tiles"))
                    if max_wgt >= p.wgt_tiles:
                        out.append(Violation(idx, f"wgt index reaches {max_wgt}, capacity {p.wgt_tiles} tiles"))
            else:
                if not i.use_imm and not i.reset:
                    max_src = max(u.inp_idx for u in refs) + src_reach
                    if max_src >= p.acc_tiles:
                        out.append(Violation(idx, f"alu src index reaches {max_src}, capacity {p.acc_tiles} tiles"))
    return out
