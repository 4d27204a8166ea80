"""Cycle-stepped toy 16-bit MCU.

Every instruction is a 4-byte cell::

    byte 0   opcode
    byte 1   ra | rb << 4      (register operands, each < 8)
    byte 2-3 imm16, little endian

One call to :func:`step` retires one instruction (or performs one interrupt
entry) and returns the observable :class:`SignalSnapshot` for that cycle.
Memory writes are not committed by ``step``; they come back as a
:class:`PendingWrite` that the composer commits or squashes.

``r7`` is the stack pointer. ``CALL`` pre-decrements it by 2 and stores the
return address at the new top; ``RET`` pops it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

from .layout import MemoryLayout

SP = 7
NUM_REGS = 8
CELL = 4
MASK16 = 0xFFFF


class Opcode(enum.IntEnum):
    NOP = 0x00
    HALT = 0x01
    MOVI = 0x02
    MOV = 0x03
    LD = 0x04
    ST = 0x05
    ADD = 0x06
    SUB = 0x07
    CMP = 0x08
    BEQ = 0x09
    BNE = 0x0A
    JMP = 0x0B
    JMPI = 0x0C
    CALL = 0x0D
    CALLI = 0x0E
    RET = 0x0F
    YIELD = 0x10


class Form(enum.Enum):
    NONE = ""
    RD_IMM = "rd, imm"
    RD_RS = "rd, rs"
    RD_MEM = "rd, [rs]"
    MEM_RS = "[rd], rs"
    IMM = "imm"
    RS = "rs"


FORMS: dict[Opcode, Form] = {
    Opcode.NOP: Form.NONE,
    Opcode.HALT: Form.NONE,
    Opcode.MOVI: Form.RD_IMM,
    Opcode.MOV: Form.RD_RS,
    Opcode.LD: Form.RD_MEM,
    Opcode.ST: Form.MEM_RS,
    Opcode.ADD: Form.RD_RS,
    Opcode.SUB: Form.RD_RS,
    Opcode.CMP: Form.RD_RS,
    Opcode.BEQ: Form.IMM,
    Opcode.BNE: Form.IMM,
    Opcode.JMP: Form.IMM,
    Opcode.JMPI: Form.RS,
    Opcode.CALL: Form.IMM,
    Opcode.CALLI: Form.RS,
    Opcode.RET: Form.NONE,
    Opcode.YIELD: Form.IMM,
}

_USES_RA = {Form.RD_IMM, Form.RD_RS, Form.RD_MEM, Form.MEM_RS, Form.RS}
_USES_RB = {Form.RD_RS, Form.RD_MEM, Form.MEM_RS}
_USES_IMM = {Form.RD_IMM, Form.IMM}


class InstrClass(enum.Enum):
    PLAIN = "Plain"
    CALL = "Call"
    CALL_INDIRECT = "CallIndirect"
    RETURN = "Return"
    JUMP_INDIRECT = "JumpIndirect"
    STORE = "Store"
    LOAD = "Load"
    INTERRUPT_ENTRY = "InterruptEntry"
    HALTED = "Halted"


class DecodeError(Exception):
    def __init__(self, pc: int, reason: str):
        self.pc = pc
        self.reason = reason
        super().__init__(f"decode error at 0x{pc:04X}: {reason}")


class SectionOverflow(ValueError):
    pass


class MisalignedEntry(ValueError):
    pass


@dataclass(frozen=True)
class Instruction:
    opcode: Opcode
    ra: int = 0
    rb: int = 0
    imm: int = 0

    def encode(self) -> bytes:
        form = FORMS[self.opcode]
        ra = self.ra if form in _USES_RA else 0
        rb = self.rb if form in _USES_RB else 0
        imm = self.imm if form in _USES_IMM else 0
        if not (0 <= ra < NUM_REGS and 0 <= rb < NUM_REGS):
            raise ValueError(f"register index out of range in {self}")
        if not 0 <= imm <= MASK16:
            raise ValueError(f"immediate out of range in {self}")
        return bytes([self.opcode, ra | (rb << 4), imm & 0xFF, imm >> 8])

    def __str__(self) -> str:
        op = self.opcode.name
        form = FORMS[self.opcode]
        if form is Form.NONE:
            return op
        if form is Form.RD_IMM:
            return f"{op} r{self.ra}, 0x{self.imm:04X}"
        if form is Form.RD_RS:
            return f"{op} r{self.ra}, r{self.rb}"
        if form is Form.RD_MEM:
            return f"{op} r{self.ra}, [r{self.rb}]"
        if form is Form.MEM_RS:
            return f"{op} [r{self.ra}], r{self.rb}"
        if form is Form.IMM:
            return f"{op} 0x{self.imm:04X}"
        return f"{op} r{self.ra}"


def decode(cell: bytes | bytearray, pc: int = 0) -> Instruction:
    if len(cell) != CELL:
        raise DecodeError(pc, "short cell")
    try:
        opcode = Opcode(cell[0])
    except ValueError:
        raise DecodeError(pc, f"invalid opcode 0x{cell[0]:02X}") from None
    form = FORMS[opcode]
    ra, rb = cell[1] & 0x0F, cell[1] >> 4
    imm = cell[2] | (cell[3] << 8)
    if ra >= NUM_REGS or rb >= NUM_REGS:
        raise DecodeError(pc, "register index out of range")
    if (form not in _USES_RA and ra) or (form not in _USES_RB and rb) or (
        form not in _USES_IMM and imm
    ):
        raise DecodeError(pc, "non-zero unused operand field")
    return Instruction(opcode, ra, rb, imm)


class SignalSnapshot(NamedTuple):
    """Observable MCU signals for one cycle.

    ``next_pc`` and ``service`` are not part of the monitored signal set; the
    integrity monitor uses ``next_pc`` as the branch/return target and the
    RTOS model reads ``service`` (the YIELD immediate).
    """

    cycle: int
    pc: int
    w_en: bool
    r_en: bool
    d_addr: int
    irq: bool
    instr_class: InstrClass
    next_pc: int
    service: int | None = None


class PendingWrite(NamedTuple):
    addr: int
    value: int


@dataclass
class MachineState:
    """Architectural state. The step functions update it in place."""

    pc: int
    regs: list[int]
    zero_flag: bool
    mem: bytearray
    pmem_range: tuple[int, int]
    dmem_range: tuple[int, int]
    trampoline_entry: int
    status_pc_addr: int
    halted: bool = False
    nmi_pending: bool = False
    cycle: int = 0
    reset_pc: int = 0
    last_status_write: int | None = field(default=None, repr=False)

    def read16(self, addr: int) -> int:
        mem = self.mem
        return mem[addr & MASK16] | (mem[(addr + 1) & MASK16] << 8)

    def write16(self, addr: int, value: int) -> None:
        self.mem[addr & MASK16] = value & 0xFF
        self.mem[(addr + 1) & MASK16] = (value >> 8) & 0xFF

    def copy(self) -> MachineState:
        return MachineState(
            pc=self.pc,
            regs=list(self.regs),
            zero_flag=self.zero_flag,
            mem=bytearray(self.mem),
            pmem_range=self.pmem_range,
            dmem_range=self.dmem_range,
            trampoline_entry=self.trampoline_entry,
            status_pc_addr=self.status_pc_addr,
            halted=self.halted,
            nmi_pending=self.nmi_pending,
            cycle=self.cycle,
            reset_pc=self.reset_pc,
        )

    def fetch(self, pc: int) -> Instruction:
        lo, hi = self.pmem_range
        if pc % CELL or not (lo <= pc and pc + CELL - 1 <= hi):
            raise DecodeError(pc, "fetch outside PMEM or misaligned")
        return decode(self.mem[pc : pc + CELL], pc)


def load_image(program, layout: MemoryLayout) -> MachineState:
    """Build the reset state for ``program`` (an assembled ProgramImage)."""
    from .layout import dpair_image

    mem = bytearray(0x10000)
    p = layout.pmem_range
    mem[p.start : p.end + 1] = b"\xff" * len(p)

    for section in program.sections:
        region = section.region(layout)
        lo, hi = section.extent()
        if lo is None:
            continue
        if lo < region.start or hi > region.end:
            raise SectionOverflow(
                f"section {section.name} spans 0x{lo:04X}..0x{hi:04X},"
                f" outside {region}"
            )
        for addr, data in section.chunks():
            mem[addr : addr + len(data)] = data

    entry = program.rtos_entry if program.rtos_entry is not None else layout.rtos.start
    if entry % CELL:
        raise MisalignedEntry(f"RTOS entry 0x{entry:04X} is not 4-byte aligned")
    for i, e in program.task_entries.items():
        if e % CELL:
            raise MisalignedEntry(f"task {i} entry 0x{e:04X} is not 4-byte aligned")

    img = dpair_image(layout)
    mem[layout.d_pair.start : layout.d_pair.start + len(img)] = img
    if layout.mailbox is not None:
        mem[layout.mailbox : layout.mailbox + 2] = b"\xff\xff"  # empty

    return MachineState(
        pc=entry,
        regs=[0] * NUM_REGS,
        zero_flag=False,
        mem=mem,
        pmem_range=(p.start, p.end),
        dmem_range=(layout.dmem_range.start, layout.dmem_range.end),
        trampoline_entry=layout.trampoline_entry,
        status_pc_addr=layout.status_pc_addr,
        reset_pc=entry,
    )


def assert_nmi(state: MachineState) -> MachineState:
    state.nmi_pending = True
    return state


def commit_write(state: MachineState, pw: PendingWrite | None, allowed: bool) -> MachineState:
    if pw is not None and allowed:
        state.write16(pw.addr, pw.value)
    return state


_CLASS_FOR = {
    Opcode.LD: InstrClass.LOAD,
    Opcode.ST: InstrClass.STORE,
    Opcode.CALL: InstrClass.CALL,
    Opcode.CALLI: InstrClass.CALL_INDIRECT,
    Opcode.RET: InstrClass.RETURN,
    Opcode.JMPI: InstrClass.JUMP_INDIRECT,
}


def step(state: MachineState) -> tuple[MachineState, SignalSnapshot, PendingWrite | None]:
    """Retire one instruction or take the pending NMI.

    Raises DecodeError without changing any state when the cell at ``pc``
    does not decode.
    """
    cycle = state.cycle
    pc = state.pc

    if state.nmi_pending:
        # hardware-internal save; exempt from access checks, not a W_en cycle
        state.write16(state.status_pc_addr, pc)
        state.last_status_write = state.status_pc_addr
        state.pc = state.trampoline_entry
        state.nmi_pending = False
        state.halted = False
        state.cycle = cycle + 1
        snap = SignalSnapshot(cycle, state.trampoline_entry, False, False, 0, True,
                              InstrClass.INTERRUPT_ENTRY, state.pc)
        return state, snap, None

    if state.halted:
        state.cycle = cycle + 1
        return state, SignalSnapshot(cycle, pc, False, False, 0, False,
                                     InstrClass.HALTED, pc), None

    ins = state.fetch(pc)
    op = ins.opcode
    regs = state.regs
    next_pc = (pc + CELL) & MASK16
    w_en = r_en = False
    d_addr = 0
    pw = None
    service = None

    if op is Opcode.NOP:
        pass
    elif op is Opcode.MOVI:
        regs[ins.ra] = ins.imm
    elif op is Opcode.MOV:
        regs[ins.ra] = regs[ins.rb]
    elif op is Opcode.LD:
        d_addr = regs[ins.rb]
        r_en = True
        regs[ins.ra] = state.read16(d_addr)
    elif op is Opcode.ST:
        d_addr = regs[ins.ra]
        w_en = True
        pw = PendingWrite(d_addr, regs[ins.rb])
    elif op is Opcode.ADD:
        regs[ins.ra] = (regs[ins.ra] + regs[ins.rb]) & MASK16
        state.zero_flag = regs[ins.ra] == 0
    elif op is Opcode.SUB:
        regs[ins.ra] = (regs[ins.ra] - regs[ins.rb]) & MASK16
        state.zero_flag = regs[ins.ra] == 0
    elif op is Opcode.CMP:
        state.zero_flag = regs[ins.ra] == regs[ins.rb]
    elif op is Opcode.BEQ:
        if state.zero_flag:
            next_pc = ins.imm
    elif op is Opcode.BNE:
        if not state.zero_flag:
            next_pc = ins.imm
    elif op is Opcode.JMP:
        next_pc = ins.imm
    elif op is Opcode.JMPI:
        next_pc = regs[ins.ra]
    elif op is Opcode.CALL or op is Opcode.CALLI:
        sp = (regs[SP] - 2) & MASK16
        regs[SP] = sp
        w_en = True
        d_addr = sp
        pw = PendingWrite(sp, (pc + CELL) & MASK16)
        next_pc = ins.imm if op is Opcode.CALL else regs[ins.ra]
    elif op is Opcode.RET:
        sp = regs[SP]
        r_en = True
        d_addr = sp
        next_pc = state.read16(sp)
        regs[SP] = (sp + 2) & MASK16
    elif op is Opcode.YIELD:
        service = ins.imm
    elif op is Opcode.HALT:
        state.halted = True

    state.pc = next_pc
    state.cycle = cycle + 1
    snap = SignalSnapshot(cycle, pc, w_en, r_en, d_addr, False,
                          _CLASS_FOR.get(op, InstrClass.PLAIN), next_pc, service)
    return state, snap, pw


def fault_snapshot(state: MachineState) -> SignalSnapshot:
    """Snapshot for a cycle lost to a decode fault; consumes the cycle."""
    cycle = state.cycle
    state.cycle = cycle + 1
    return SignalSnapshot(cycle, state.pc, False, False, 0, False,
                          InstrClass.PLAIN, state.pc)
