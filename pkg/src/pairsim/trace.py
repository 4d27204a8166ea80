"""Per-cycle trace records and the trace CSV format."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, NamedTuple

from .isa import InstrClass
from .layout import Region
from .monitor import ArState, TriggerState

COLUMNS = (
    "cycle", "pc", "region", "task_id", "latched_task", "instr_class", "w_en",
    "r_en", "d_addr", "irq", "violation_im", "violation_pair", "trigger",
    "ar_en_hex", "trigger_state", "ar_state",
)
NONE_FIELD = "-"


class TraceRecord(NamedTuple):
    """Signals of one cycle plus the monitor registers during that cycle."""

    cycle: int
    pc: int
    region: Region
    task_id: int | None
    latched_task: int | None
    instr_class: InstrClass
    w_en: bool
    r_en: bool
    d_addr: int
    irq: bool
    violation_im: bool
    violation_pair: bool
    trigger: bool
    ar_en: int
    trigger_state: TriggerState
    ar_state: ArState


def _opt(v: int | None) -> str:
    return NONE_FIELD if v is None else str(v)


def format_record(r: TraceRecord) -> str:
    return ",".join((
        str(r.cycle), f"{r.pc:04x}", r.region.value, _opt(r.task_id),
        _opt(r.latched_task), r.instr_class.value, "1" if r.w_en else "0",
        "1" if r.r_en else "0", f"{r.d_addr:04x}", "1" if r.irq else "0",
        "1" if r.violation_im else "0", "1" if r.violation_pair else "0",
        "1" if r.trigger else "0", f"{r.ar_en:04x}", r.trigger_state.value,
        r.ar_state.value,
    ))


def to_csv(records: Iterable[TraceRecord]) -> str:
    lines = [",".join(COLUMNS)]
    lines.extend(format_record(r) for r in records)
    return "\n".join(lines) + "\n"


def write_trace(path: str | Path, records: Iterable[TraceRecord]) -> None:
    Path(path).write_bytes(to_csv(records).encode("ascii"))


_REGIONS = {r.value: r for r in Region}
_CLASSES = {c.value: c for c in InstrClass}
_TSTATES = {s.value: s for s in TriggerState}
_ASTATES = {s.value: s for s in ArState}


def _parse_opt(text: str) -> int | None:
    return None if text == NONE_FIELD else int(text)


def parse_record(line: str) -> TraceRecord:
    f = line.strip().split(",")
    if len(f) != len(COLUMNS):
        raise ValueError(f"expected {len(COLUMNS)} fields, got {len(f)}")
    return TraceRecord(
        cycle=int(f[0]), pc=int(f[1], 16), region=_REGIONS[f[2]],
        task_id=_parse_opt(f[3]), latched_task=_parse_opt(f[4]),
        instr_class=_CLASSES[f[5]], w_en=f[6] == "1", r_en=f[7] == "1",
        d_addr=int(f[8], 16), irq=f[9] == "1", violation_im=f[10] == "1",
        violation_pair=f[11] == "1", trigger=f[12] == "1", ar_en=int(f[13], 16),
        trigger_state=_TSTATES[f[14]], ar_state=_ASTATES[f[15]],
    )


def read_trace(path: str | Path) -> list[TraceRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != COLUMNS:
        raise ValueError(f"{path}: missing or unexpected header")
    return [parse_record(line) for line in lines[1:] if line.strip()]
