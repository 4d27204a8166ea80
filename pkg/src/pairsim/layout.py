"""Memory map: regions, task bounds, the task-tracking axiom and D_PAIR layout.

Addresses live in a single 16-bit space. PMEM holds the task region (TR),
the RTOS and the trusted software (SW); DMEM holds general data (D) and the
protected PAIR data block (D_PAIR).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

ADDRESS_SPACE = 0x10000
MAX_TASKS = 16
KEY_BYTES = 16
NO_TASK = 0xFFFF  # encoding of "no task" in the status block


class Region(enum.Enum):
    TR = "TR"
    RTOS_REGION = "RTOS"
    SW_REGION = "SW"
    D_REGION = "D"
    D_PAIR_REGION = "D_PAIR"
    UNMAPPED = "UNMAPPED"


_REGION_CODES = list(Region)


@dataclass(frozen=True)
class Interval:
    """Inclusive address interval ``[start, end]``."""

    start: int
    end: int

    def __contains__(self, addr: int) -> bool:
        return self.start <= addr <= self.end

    def __len__(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: Interval) -> bool:
        return self.start <= other.end and other.start <= self.end

    def within(self, other: Interval) -> bool:
        return other.start <= self.start and self.end <= other.end

    def __str__(self) -> str:
        return f"0x{self.start:04X}..0x{self.end:04X}"


@dataclass(frozen=True)
class TaskBounds:
    t_min: int
    t_max: int

    @property
    def interval(self) -> Interval:
        return Interval(self.t_min, self.t_max)

    def __contains__(self, pc: int) -> bool:
        return self.t_min <= pc <= self.t_max

    @property
    def size(self) -> int:
        return self.t_max - self.t_min + 1


class IssueKind(enum.Enum):
    OVERLAPPING_REGIONS = "OverlappingRegions"
    BOUNDS_OUTSIDE_TR = "BoundsOutsideTR"
    EXIT_OUTSIDE_SW = "ExitOutsideSW"
    TOO_MANY_TASKS = "TooManyTasks"
    TOO_FEW_TASKS = "TooFewTasks"
    REGION_OUTSIDE_MEMORY = "RegionOutsideMemory"
    MALFORMED_INTERVAL = "MalformedInterval"
    DPAIR_TOO_SMALL = "DPairTooSmall"
    MAILBOX_OUTSIDE_D = "MailboxOutsideD"
    BAD_KEY = "BadKey"


@dataclass(frozen=True)
class LayoutIssue:
    kind: IssueKind
    message: str

    def __str__(self) -> str:
        return f"{self.kind.value}: {self.message}"


class LayoutError(ValueError):
    def __init__(self, issues: list[LayoutIssue]):
        self.issues = issues
        super().__init__("; ".join(str(i) for i in issues))


@dataclass(frozen=True)
class MemoryLayout:
    pmem_range: Interval
    dmem_range: Interval
    tr: Interval
    rtos: Interval
    sw: Interval
    d: Interval
    d_pair: Interval
    sw_exit: int
    trampoline_entry: int
    updater_entry: int
    task_bounds: tuple[TaskBounds, ...]
    key: bytes
    mailbox: int | None = None
    _tables: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @property
    def n_tasks(self) -> int:
        return len(self.task_bounds)

    @property
    def all_set(self) -> int:
        return (1 << self.n_tasks) - 1

    # D_PAIR offsets; see d_pair_accounting for the byte breakdown.
    @property
    def dpair_n_addr(self) -> int:
        return self.d_pair.start

    def bounds_addr(self, task: int) -> int:
        return self.d_pair.start + 2 + 4 * task

    @property
    def key_addr(self) -> int:
        return self.d_pair.start + 2 + 4 * self.n_tasks

    @property
    def status_latched_addr(self) -> int:
        return self.key_addr + KEY_BYTES

    @property
    def status_pc_addr(self) -> int:
        return self.status_latched_addr + 2

    @property
    def status_block(self) -> Interval:
        return Interval(self.status_latched_addr, self.status_pc_addr + 1)

    @property
    def dpair_used(self) -> Interval:
        return Interval(self.d_pair.start, self.status_pc_addr + 1)

    def region_table(self) -> bytes:
        table = self._tables.get("region")
        if table is None:
            buf = bytearray([_REGION_CODES.index(Region.UNMAPPED)]) * ADDRESS_SPACE
            for interval, region in self._named_regions():
                code = _REGION_CODES.index(region)
                lo, hi = max(interval.start, 0), min(interval.end, ADDRESS_SPACE - 1)
                buf[lo : hi + 1] = bytes([code]) * (hi - lo + 1)
            table = bytes(buf)
            self._tables["region"] = table
        return table

    def task_table(self) -> bytes:
        table = self._tables.get("task")
        if table is None:
            buf = bytearray([0xFF]) * ADDRESS_SPACE
            for i, b in enumerate(self.task_bounds):
                buf[b.t_min : b.t_max + 1] = bytes([i]) * b.size
            table = bytes(buf)
            self._tables["task"] = table
        return table

    def _named_regions(self) -> list[tuple[Interval, Region]]:
        return [
            (self.tr, Region.TR),
            (self.rtos, Region.RTOS_REGION),
            (self.sw, Region.SW_REGION),
            (self.d, Region.D_REGION),
            (self.d_pair, Region.D_PAIR_REGION),
        ]

    def symbols(self) -> dict[str, int]:
        """Layout constants exported to the assembler."""
        syms = {
            "DPAIR_BASE": self.d_pair.start,
            "DPAIR_N": self.dpair_n_addr,
            "BOUNDS_ADDR": self.bounds_addr(0),
            "KEY_ADDR": self.key_addr,
            "STATUS_LATCHED": self.status_latched_addr,
            "STATUS_PC": self.status_pc_addr,
            "SW_EXIT": self.sw_exit,
            "TRAMPOLINE_ENTRY": self.trampoline_entry,
            "UPDATER_ENTRY": self.updater_entry,
            "N_TASKS": self.n_tasks,
            "NO_TASK": NO_TASK,
        }
        if self.mailbox is not None:
            syms["MAILBOX"] = self.mailbox
            syms["MAILBOX_LEN"] = self.mailbox + 2
            syms["MAILBOX_TOKEN"] = self.mailbox + 4
            syms["MAILBOX_IMAGE"] = self.mailbox + 4 + KEY_BYTES
        for i, b in enumerate(self.task_bounds):
            syms[f"T{i}_MIN"] = b.t_min
            syms[f"T{i}_MAX"] = b.t_max
        return syms


def classify(layout: MemoryLayout, addr: int) -> Region:
    return _REGION_CODES[layout.region_table()[addr & 0xFFFF]]


def task_of(layout: MemoryLayout, pc: int) -> int | None:
    """Index of the task whose inclusive bounds contain ``pc``, else None."""
    t = layout.task_table()[pc & 0xFFFF]
    return None if t == 0xFF else t


def validate(layout: MemoryLayout) -> list[LayoutIssue]:
    """Every violated layout invariant; an empty list means the layout is valid."""
    issues: list[LayoutIssue] = []

    def add(kind: IssueKind, msg: str) -> None:
        issues.append(LayoutIssue(kind, msg))

    named = {"tr": layout.tr, "rtos": layout.rtos, "sw": layout.sw,
             "d": layout.d, "d_pair": layout.d_pair}
    for name, iv in named.items():
        if iv.start > iv.end or iv.start < 0 or iv.end >= ADDRESS_SPACE:
            add(IssueKind.MALFORMED_INTERVAL, f"{name} = {iv}")
    for name in ("pmem_range", "dmem_range"):
        iv = getattr(layout, name)
        if iv.start > iv.end or iv.start < 0 or iv.end >= ADDRESS_SPACE:
            add(IssueKind.MALFORMED_INTERVAL, f"{name} = {iv}")

    items = list(named.items())
    for i, (na, a) in enumerate(items):
        for nb, b in items[i + 1 :]:
            if a.overlaps(b):
                add(IssueKind.OVERLAPPING_REGIONS, f"{na} {a} overlaps {nb} {b}")
    if layout.pmem_range.overlaps(layout.dmem_range):
        add(IssueKind.OVERLAPPING_REGIONS, "pmem_range overlaps dmem_range")
    for name in ("tr", "rtos", "sw"):
        if not named[name].within(layout.pmem_range):
            add(IssueKind.REGION_OUTSIDE_MEMORY, f"{name} not inside PMEM")
    for name in ("d", "d_pair"):
        if not named[name].within(layout.dmem_range):
            add(IssueKind.REGION_OUTSIDE_MEMORY, f"{name} not inside DMEM")

    n = layout.n_tasks
    if n > MAX_TASKS:
        add(IssueKind.TOO_MANY_TASKS, f"N={n} exceeds {MAX_TASKS}")
    if n < 1:
        add(IssueKind.TOO_FEW_TASKS, "N must be at least 1")
    for i, b in enumerate(layout.task_bounds):
        if b.t_min > b.t_max:
            add(IssueKind.MALFORMED_INTERVAL, f"task{i} t_min > t_max")
        elif not b.interval.within(layout.tr):
            add(IssueKind.BOUNDS_OUTSIDE_TR, f"task{i} {b.interval} not inside TR {layout.tr}")
    for i, a in enumerate(layout.task_bounds):
        for j in range(i + 1, n):
            if a.interval.overlaps(layout.task_bounds[j].interval):
                add(IssueKind.OVERLAPPING_REGIONS, f"task{i} overlaps task{j}")

    for name in ("sw_exit", "trampoline_entry", "updater_entry"):
        if getattr(layout, name) not in layout.sw:
            add(IssueKind.EXIT_OUTSIDE_SW, f"{name}=0x{getattr(layout, name):04X} not in SW")

    if len(layout.key) != KEY_BYTES:
        add(IssueKind.BAD_KEY, f"key must be {KEY_BYTES} bytes")
    if n <= MAX_TASKS and 22 + 4 * n > len(layout.d_pair):
        add(IssueKind.DPAIR_TOO_SMALL, f"D_PAIR needs {22 + 4 * n} bytes")
    if layout.mailbox is not None:
        hdr = Interval(layout.mailbox, layout.mailbox + 4 + KEY_BYTES - 1)
        if not hdr.within(layout.d):
            add(IssueKind.MAILBOX_OUTSIDE_D, f"mailbox 0x{layout.mailbox:04X} not inside D")
    return issues


def check(layout: MemoryLayout) -> MemoryLayout:
    issues = validate(layout)
    if issues:
        raise LayoutError(issues)
    return layout


# --- D_PAIR accounting -------------------------------------------------------


@dataclass(frozen=True)
class AccountingEntry:
    name: str
    offset: int
    size: int


@dataclass(frozen=True)
class DPairAccounting:
    n_tasks: int
    base: int
    entries: tuple[AccountingEntry, ...]
    nominal_bytes: int

    @property
    def total(self) -> int:
        return sum(e.size for e in self.entries)

    def render(self) -> str:
        lines = [f"D_PAIR accounting (N={self.n_tasks}, base=0x{self.base:04X})"]
        for e in self.entries:
            lines.append(f"  +{e.offset:3d}  {e.size:3d} B  {e.name}")
        lines.append(f"  total: {self.total} bytes")
        lines.append(
            f"  nominal size (2 + 2*N bytes): {self.nominal_bytes} bytes;"
            " it allows one word per task, which cannot hold both T_min and T_max,"
            " so the breakdown above is what this layout stores"
        )
        return "\n".join(lines)


def d_pair_accounting(layout: MemoryLayout) -> DPairAccounting:
    n = layout.n_tasks
    entries = [AccountingEntry("N (task count)", 0, 2)]
    for i in range(n):
        entries.append(AccountingEntry(f"T{i}_min", 2 + 4 * i, 2))
        entries.append(AccountingEntry(f"T{i}_max", 4 + 4 * i, 2))
    key_off = 2 + 4 * n
    entries.append(AccountingEntry("key", key_off, KEY_BYTES))
    entries.append(AccountingEntry("status: latched task id", key_off + KEY_BYTES, 2))
    entries.append(AccountingEntry("status: saved interrupted PC", key_off + KEY_BYTES + 2, 2))
    return DPairAccounting(n, layout.d_pair.start, tuple(entries), 2 + 2 * n)


def dpair_image(layout: MemoryLayout) -> bytes:
    """Initial D_PAIR bytes as installed at load time."""
    out = bytearray()
    out += layout.n_tasks.to_bytes(2, "little")
    for b in layout.task_bounds:
        out += b.t_min.to_bytes(2, "little") + b.t_max.to_bytes(2, "little")
    out += layout.key
    out += NO_TASK.to_bytes(2, "little") + (0).to_bytes(2, "little")
    return bytes(out)


# --- config file -------------------------------------------------------------

_INTERVAL_RE = re.compile(r"^(0x[0-9a-fA-F]+|\d+)\s*\.\.\s*(0x[0-9a-fA-F]+|\d+)$")
_TASK_RE = re.compile(r"^task(\d+)$")


def _int(text: str) -> int:
    return int(text, 0)


def _interval(text: str) -> Interval:
    m = _INTERVAL_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad interval {text!r}")
    return Interval(_int(m.group(1)), _int(m.group(2)))


def parse_layout(text: str) -> MemoryLayout:
    """Parse ``key = value`` layout text. Does not validate."""
    values: dict[str, str] = {}
    tasks: dict[int, TaskBounds] = {}
    n_declared = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if m := _TASK_RE.match(key):
            iv = _interval(value)
            tasks[int(m.group(1))] = TaskBounds(iv.start, iv.end)
        elif key == "n":
            n_declared = _int(value)
        else:
            values[key] = value
    if sorted(tasks) != list(range(len(tasks))):
        raise ValueError("task indices must be contiguous from 0")
    if n_declared is not None and n_declared != len(tasks):
        raise ValueError(f"n = {n_declared} but {len(tasks)} tasks declared")
    required = ["pmem", "dmem", "tr", "rtos", "sw", "d", "d_pair",
                "sw_exit", "trampoline_entry", "updater_entry", "key"]
    missing = [k for k in required if k not in values]
    if missing:
        raise ValueError(f"missing layout keys: {', '.join(missing)}")
    key = bytes.fromhex(values["key"])
    return MemoryLayout(
        pmem_range=_interval(values["pmem"]),
        dmem_range=_interval(values["dmem"]),
        tr=_interval(values["tr"]),
        rtos=_interval(values["rtos"]),
        sw=_interval(values["sw"]),
        d=_interval(values["d"]),
        d_pair=_interval(values["d_pair"]),
        sw_exit=_int(values["sw_exit"]),
        trampoline_entry=_int(values["trampoline_entry"]),
        updater_entry=_int(values["updater_entry"]),
        task_bounds=tuple(tasks[i] for i in range(len(tasks))),
        key=key,
        mailbox=_int(values["mailbox"]) if "mailbox" in values else None,
    )


def load_layout(path: str | Path) -> MemoryLayout:
    return check(parse_layout(Path(path).read_text()))
