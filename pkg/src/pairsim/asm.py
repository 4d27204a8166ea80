"""Two-pass assembler for the program image text format.

Directives::

    .rtos | .sw | .task <i>        start a section at its region base
    .entry <label>                 RTOS reset entry, or the current task's entry
    .ibt <site> <target>+          allowed targets of an indirect branch site
    .stack <base> <limit>          current task's descending stack, [limit, base)
    .org <expr>                    move the location counter inside the section
    .equ <name> <expr>             constant
    .include "<file>"              textual include, relative to the including file

Layout constants (``DPAIR_N``, ``STATUS_LATCHED``, ``MAILBOX``, ...) are
predefined; see :meth:`MemoryLayout.symbols`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .isa import CELL, FORMS, Form, Instruction, Opcode, SP
from .layout import Interval, MemoryLayout


class AsmError(ValueError):
    def __init__(self, message: str, source: str = "<text>", line: int = 0):
        self.source = source
        self.line = line
        super().__init__(f"{source}:{line}: {message}")


@dataclass
class Section:
    name: str
    kind: str  # "rtos" | "sw" | "task"
    task: int | None
    base: int
    cells: dict[int, bytes] = field(default_factory=dict)

    def region(self, layout: MemoryLayout) -> Interval:
        if self.kind == "rtos":
            return layout.rtos
        if self.kind == "sw":
            return layout.sw
        return layout.task_bounds[self.task].interval

    def extent(self) -> tuple[int | None, int | None]:
        if not self.cells:
            return None, None
        return min(self.cells), max(self.cells) + CELL - 1

    def chunks(self):
        for addr in sorted(self.cells):
            yield addr, self.cells[addr]

    def contiguous_bytes(self, fill: int = 0xFF) -> bytes:
        lo, hi = self.extent()
        if lo is None:
            return b""
        out = bytearray([fill]) * (hi - lo + 1)
        for addr, data in self.cells.items():
            out[addr - lo : addr - lo + CELL] = data
        return bytes(out)


@dataclass
class ProgramImage:
    sections: list[Section]
    symbols: dict[str, int]
    rtos_entry: int | None
    task_entries: dict[int, int]
    stacks: dict[int, tuple[int, int]]
    ibt: dict[int, dict[int, frozenset[int]]]
    listing: list[tuple[int, Instruction]]

    def section_for_task(self, task: int) -> Section:
        for s in self.sections:
            if s.kind == "task" and s.task == task:
                return s
        raise KeyError(f"no section for task {task}")

    def label(self, name: str) -> int:
        return self.symbols[name]


_REG_RE = re.compile(r"^(?:r([0-7])|sp)$", re.IGNORECASE)
_MEM_RE = re.compile(r"^\[\s*([^\]]+?)\s*\]$")
_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*):")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_TERM_RE = re.compile(r"\s*([+-]?)\s*([A-Za-z_][A-Za-z0-9_]*|0x[0-9A-Fa-f]+|0b[01]+|\d+)\s*")


@dataclass
class _Line:
    source: str
    lineno: int
    label: str | None
    mnemonic: str | None
    args: list[str]


def _split_args(text: str) -> list[str]:
    return [a.strip() for a in text.split(",")] if text.strip() else []


def _read_lines(text: str, source: str, base_dir: Path | None, depth: int = 0) -> list[_Line]:
    if depth > 8:
        raise AsmError("include nesting too deep", source)
    out: list[_Line] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        label = None
        if m := _LABEL_RE.match(line):
            label = m.group(1)
            line = line[m.end() :].strip()
        if not line:
            out.append(_Line(source, lineno, label, None, []))
            continue
        parts = line.split(None, 1)
        head, rest = parts[0], parts[1] if len(parts) > 1 else ""
        if head.lower() == ".include":
            if label:
                out.append(_Line(source, lineno, label, None, []))
            name = rest.strip().strip('"')
            if base_dir is None:
                raise AsmError(".include needs a base directory", source, lineno)
            path = base_dir / name
            if not path.exists():
                raise AsmError(f"include not found: {name}", source, lineno)
            out.extend(_read_lines(path.read_text(), str(path), path.parent, depth + 1))
            continue
        if head.startswith("."):
            args = rest.split()
        else:
            args = _split_args(rest)
        out.append(_Line(source, lineno, label, head.lower(), args))
    return out


def _eval(expr: str, symbols: dict[str, int], where: _Line) -> int:
    expr = expr.strip()
    pos = 0
    total = 0
    first = True
    while pos < len(expr):
        m = _TERM_RE.match(expr, pos)
        if not m or (not first and not m.group(1)):
            raise AsmError(f"bad expression {expr!r}", where.source, where.lineno)
        sign, term = m.group(1), m.group(2)
        if _NAME_RE.match(term):
            if term not in symbols:
                raise AsmError(f"undefined symbol {term!r}", where.source, where.lineno)
            val = symbols[term]
        else:
            val = int(term, 0)
        total += -val if sign == "-" else val
        pos = m.end()
        first = False
    if first:
        raise AsmError("empty expression", where.source, where.lineno)
    return total


def _reg(text: str, where: _Line) -> int:
    m = _REG_RE.match(text.strip())
    if not m:
        raise AsmError(f"expected register, got {text!r}", where.source, where.lineno)
    return SP if m.group(1) is None else int(m.group(1))


def _mem(text: str, where: _Line) -> int:
    m = _MEM_RE.match(text.strip())
    if not m:
        raise AsmError(f"expected [rN], got {text!r}", where.source, where.lineno)
    return _reg(m.group(1), where)


def _encode(line: _Line, symbols: dict[str, int]) -> Instruction:
    try:
        op = Opcode[line.mnemonic.upper()]
    except KeyError:
        raise AsmError(f"unknown mnemonic {line.mnemonic!r}", line.source, line.lineno) from None
    form = FORMS[op]
    a = line.args
    want = {Form.NONE: 0, Form.IMM: 1, Form.RS: 1}.get(form, 2)
    if len(a) != want:
        raise AsmError(f"{op.name} takes {want} operand(s)", line.source, line.lineno)

    def imm(text: str) -> int:
        v = _eval(text, symbols, line)
        if not -0x8000 <= v <= 0xFFFF:
            raise AsmError(f"immediate out of range: {v}", line.source, line.lineno)
        return v & 0xFFFF

    if form is Form.NONE:
        return Instruction(op)
    if form is Form.IMM:
        return Instruction(op, imm=imm(a[0]))
    if form is Form.RS:
        return Instruction(op, ra=_reg(a[0], line))
    if form is Form.RD_IMM:
        return Instruction(op, ra=_reg(a[0], line), imm=imm(a[1]))
    if form is Form.RD_RS:
        return Instruction(op, ra=_reg(a[0], line), rb=_reg(a[1], line))
    if form is Form.RD_MEM:
        return Instruction(op, ra=_reg(a[0], line), rb=_mem(a[1], line))
    return Instruction(op, ra=_mem(a[0], line), rb=_reg(a[1], line))


def assemble(text: str, layout: MemoryLayout, *, source: str = "<text>",
             base_dir: str | Path | None = None) -> ProgramImage:
    lines = _read_lines(text, source, Path(base_dir) if base_dir else None)
    symbols: dict[str, int] = dict(layout.symbols())
    predefined = set(symbols)

    def define(name: str, value: int, where: _Line) -> None:
        if name in symbols and name not in predefined:
            raise AsmError(f"duplicate symbol {name!r}", where.source, where.lineno)
        symbols[name] = value

    # pass 1: addresses
    placed: list[tuple[_Line, Section | None, int]] = []
    sections: list[Section] = []
    current: Section | None = None
    loc = 0
    for ln in lines:
        if ln.label:
            if current is None:
                raise AsmError("label outside a section", ln.source, ln.lineno)
            define(ln.label, loc, ln)
        m = ln.mnemonic
        if m is None:
            continue
        if m in (".rtos", ".sw", ".task"):
            if m == ".task":
                if len(ln.args) != 1:
                    raise AsmError(".task needs an index", ln.source, ln.lineno)
                idx = _eval(ln.args[0], symbols, ln)
                if not 0 <= idx < layout.n_tasks:
                    raise AsmError(f"task index {idx} not in layout", ln.source, ln.lineno)
                base = layout.task_bounds[idx].t_min
                current = Section(f"task{idx}", "task", idx, base)
            else:
                kind = m[1:]
                base = layout.rtos.start if kind == "rtos" else layout.sw.start
                current = Section(kind, kind, None, base)
            if any(s.name == current.name for s in sections):
                raise AsmError(f"section {current.name} declared twice", ln.source, ln.lineno)
            sections.append(current)
            loc = current.base
        elif m == ".equ":
            if len(ln.args) != 2:
                raise AsmError(".equ needs name and value", ln.source, ln.lineno)
            define(ln.args[0], _eval(ln.args[1], symbols, ln), ln)
        elif m == ".org":
            if current is None:
                raise AsmError(".org outside a section", ln.source, ln.lineno)
            loc = _eval(" ".join(ln.args), symbols, ln)
            if loc % CELL:
                raise AsmError(f".org 0x{loc:04X} is not 4-byte aligned", ln.source, ln.lineno)
        elif m.startswith("."):
            if m not in (".entry", ".ibt", ".stack"):
                raise AsmError(f"unknown directive {m}", ln.source, ln.lineno)
            if current is None:
                raise AsmError(f"{m} outside a section", ln.source, ln.lineno)
            placed.append((ln, current, loc))
        else:
            if current is None:
                raise AsmError("instruction outside a section", ln.source, ln.lineno)
            placed.append((ln, current, loc))
            loc += CELL

    # pass 2: encode and resolve directives
    rtos_entry = None
    task_entries: dict[int, int] = {}
    stacks: dict[int, tuple[int, int]] = {}
    ibt: dict[int, dict[int, frozenset[int]]] = {}
    listing: list[tuple[int, Instruction]] = []
    for ln, sec, addr in placed:
        m = ln.mnemonic
        if m == ".entry":
            target = _eval(" ".join(ln.args), symbols, ln)
            if sec.kind == "rtos":
                rtos_entry = target
            elif sec.kind == "task":
                task_entries[sec.task] = target
            else:
                raise AsmError(".entry not allowed in .sw", ln.source, ln.lineno)
        elif m == ".stack":
            if sec.kind != "task" or len(ln.args) != 2:
                raise AsmError(".stack <base> <limit> inside a task", ln.source, ln.lineno)
            base = _eval(ln.args[0], symbols, ln)
            limit = _eval(ln.args[1], symbols, ln)
            if base < limit:
                raise AsmError("stack base must be >= limit", ln.source, ln.lineno)
            stacks[sec.task] = (base, limit)
        elif m == ".ibt":
            if sec.kind != "task" or len(ln.args) < 2:
                raise AsmError(".ibt <site> <target>+ inside a task", ln.source, ln.lineno)
            site = _eval(ln.args[0], symbols, ln)
            targets = frozenset(_eval(t, symbols, ln) for t in ln.args[1:])
            table = ibt.setdefault(sec.task, {})
            table[site] = table.get(site, frozenset()) | targets
        else:
            if addr in sec.cells:
                raise AsmError(f"overlapping code at 0x{addr:04X}", ln.source, ln.lineno)
            ins = _encode(ln, symbols)
            sec.cells[addr] = ins.encode()
            listing.append((addr, ins))

    for s in sections:
        if s.kind == "task" and s.task not in task_entries:
            task_entries[s.task] = s.base
    return ProgramImage(sections, symbols, rtos_entry, task_entries, stacks, ibt, listing)


def assemble_file(path: str | Path, layout: MemoryLayout) -> ProgramImage:
    path = Path(path)
    return assemble(path.read_text(), layout, source=str(path), base_dir=path.parent)
