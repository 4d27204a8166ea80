"""Simulation composer: machine, integrity monitor, PAIR monitor and RTOS model.

One call to :meth:`Simulation.step` advances the system by one cycle:

1. scenario events due at this boundary are applied, then the kernel's
   time-slice check runs
2. the machine retires one instruction (a decode fault becomes an IM
   violation for that cycle)
3. the integrity monitor evaluates the snapshot for ``task_of(pc)``
4. the PAIR monitor steps
5. the cycle's write is committed or squashed
6. a rising trigger raises the NMI and writes the latched task id into the
   status block
7. the trace record is emitted
8. the kernel handles any service request; a fallback reset reinitialises
   every component
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import integrity
from .asm import ProgramImage, assemble_file
from .isa import (
    DecodeError, InstrClass, MachineState, assert_nmi, commit_write, fault_snapshot,
    load_image, step,
)
from .layout import (
    NO_TASK, DPairAccounting, MemoryLayout, Region, d_pair_accounting,
)
from .ltl import CheckReport, check_all
from .monitor import ArState, MonitorFault, reset_state, step_monitor
from .rtos import (
    Kernel, KernelLog, Policy, SchedulerConfig, Tcb, UpdateRequest,
)
from .trace import TraceRecord, to_csv


# --- scenario events ---------------------------------------------------------


@dataclass(frozen=True)
class Corrupt:
    """Attacker-controlled write of ``words`` into D at ``addr``.

    Models the memory-safety bug an attacker exploits. Applied once, at the
    first cycle boundary at or after ``cycle`` where the PC equals the
    ``when_pc`` label (any PC if unset). Addresses and words may be program
    labels.
    """

    cycle: int
    addr: int | str
    words: tuple[int | str, ...]
    when_pc: str | None = None


@dataclass(frozen=True)
class Update:
    """Update request placed in the mailbox at ``cycle``.

    The new image is task ``task``'s section of the program file ``image``.
    ``token`` is ``"key"`` for the device key or a 32-digit hex string.
    """

    cycle: int
    task: int
    image: str
    token: str = "key"


Event = Corrupt | Update


@dataclass(frozen=True)
class WriteLogEntry:
    cycle: int
    pc: int
    addr: int
    value: int
    committed: bool
    origin: str  # "TR", "RTOS", "SW", ... or "hw" for the monitor's own writes


def _resolve(value: int | str, symbols: dict[str, int]) -> int:
    if isinstance(value, int):
        return value
    try:
        return int(value, 0)
    except ValueError:
        return symbols[value]


def update_request(ev: Update, layout: MemoryLayout, base_dir: Path) -> UpdateRequest:
    program = assemble_file(base_dir / ev.image, layout)
    section = program.section_for_task(ev.task)
    lo, _ = section.extent()
    if lo != layout.task_bounds[ev.task].t_min:
        raise ValueError(f"{ev.image}: task {ev.task} image must start at its T_min")
    token = layout.key if ev.token == "key" else bytes.fromhex(ev.token)
    return UpdateRequest(ev.task, section.contiguous_bytes(), token)


# --- simulation --------------------------------------------------------------


class Simulation:
    def __init__(self, program: ProgramImage, layout: MemoryLayout,
                 config: SchedulerConfig = SchedulerConfig(), *,
                 events: Sequence[Event] = (), fault: MonitorFault | None = None,
                 priorities: dict[int, int] | None = None,
                 base_dir: str | Path | None = None):
        self.program = program
        self.layout = layout
        self.config = config
        self.fault = fault
        self.base_dir = Path(base_dir) if base_dir else None
        n = layout.n_tasks
        missing = [i for i in range(n) if i not in program.stacks]
        if missing:
            raise ValueError(f"no .stack declared for task(s) {missing}")
        self.m: MachineState = load_image(program, layout)
        self.initial_mem = bytes(self.m.mem)
        priorities = priorities or {}
        tcbs = [Tcb(i, priorities.get(i, 1), program.task_entries[i], program.stacks[i])
                for i in range(n)]
        self.kernel = Kernel(layout, tcbs, config, program.label("rtos_sched"))
        self.mon = reset_state(n)
        self.im = self._fresh_im()
        self.trace: list[TraceRecord] = []
        self.write_log: list[WriteLogEntry] = []
        self._events = list(events)
        for ev in self._events:
            if isinstance(ev, Corrupt):
                for k in range(len(ev.words)):
                    addr = _resolve(ev.addr, program.symbols) + 2 * k
                    if addr not in layout.d or addr + 1 not in layout.d:
                        raise ValueError(f"corruption at 0x{addr:04X} is outside D")
        self._region = layout.region_table()
        self._tasks = layout.task_table()
        self._regions = list(Region)

    def _fresh_im(self) -> integrity.ImState:
        return integrity.new_im(self.layout.n_tasks, self.program.ibt, self.program.stacks)

    def _apply_events(self) -> None:
        m = self.m
        remaining = []
        for ev in self._events:
            if m.cycle < ev.cycle:
                remaining.append(ev)
                continue
            if isinstance(ev, Corrupt):
                if ev.when_pc is not None and m.pc != self.program.label(ev.when_pc):
                    remaining.append(ev)
                    continue
                base = _resolve(ev.addr, self.program.symbols)
                for k, w in enumerate(ev.words):
                    m.write16(base + 2 * k, _resolve(w, self.program.symbols))
            else:
                if self.layout.mailbox is None:
                    raise ValueError("layout has no mailbox for update requests")
                if self.base_dir is None:
                    raise ValueError("update events need the program directory")
                data = update_request(ev, self.layout, self.base_dir).encode()
                mb = self.layout.mailbox
                m.mem[mb : mb + len(data)] = data
        self._events = remaining

    def _log_write(self, cycle: int, pc: int, addr: int, value: int, committed: bool,
                   origin: str) -> None:
        code = self._region[addr]
        if self._regions[code] is Region.D_PAIR_REGION or addr in self.layout.pmem_range:
            self.write_log.append(WriteLogEntry(cycle, pc, addr, value, committed, origin))

    def step(self) -> TraceRecord:
        m, layout = self.m, self.layout
        if self._events:
            self._apply_events()
        self.kernel.tick(m)
        pre = self.mon
        cycle = m.cycle
        try:
            _, snap, pw = step(m)
            decode_fault = False
        except DecodeError:
            snap, pw, decode_fault = fault_snapshot(m), None, True

        t = self._tasks[snap.pc]
        task = None if t == 0xFF else t
        self.im, vim = integrity.evaluate(self.im, snap, task)
        vim = vim or decode_fault
        new, out = step_monitor(pre, snap, vim, layout, fault=self.fault)

        if snap.instr_class is InstrClass.INTERRUPT_ENTRY:
            addr = layout.status_pc_addr
            self._log_write(cycle, snap.pc, addr, m.read16(addr), True, "hw")
        if pw is not None:
            # the write of a cycle that raises the NMI never lands
            allowed = not (out.block_write or out.assert_nmi)
            origin = self._regions[self._region[snap.pc]].value
            self._log_write(cycle, snap.pc, pw.addr, pw.value, allowed, origin)
            commit_write(m, pw, allowed)
        if out.assert_nmi:
            assert_nmi(m)
            latched = NO_TASK if new.latched_task is None else new.latched_task
            m.write16(layout.status_latched_addr, latched)
            self._log_write(cycle, snap.pc, layout.status_latched_addr, latched, True, "hw")

        rec = TraceRecord(
            cycle, snap.pc, self._regions[self._region[snap.pc]], task, pre.latched_task,
            snap.instr_class, snap.w_en, snap.r_en, snap.d_addr, snap.irq, vim,
            new.violation_pair, pre.trigger, pre.ar_en, pre.trigger_state, pre.ar_state,
        )
        self.trace.append(rec)
        self.mon = new

        action = self.kernel.after_step(m, snap)
        if action.reset:
            self.mon = reset_state(layout.n_tasks)
            self.im = self._fresh_im()
            self.kernel.reset(m)
        else:
            for i in action.restarted:
                self.im = integrity.reset_task(self.im, i)
            reinstated = self.mon.ar_en & ~pre.ar_en
            i = 0
            while reinstated:
                if reinstated & 1:
                    self.im = integrity.reset_task(self.im, i)
                reinstated >>= 1
                i += 1
        return rec

    def run(self, cycles: int) -> list[TraceRecord]:
        if cycles < 1:
            raise ValueError("run length must be >= 1")
        for _ in range(cycles):
            self.step()
        return self.trace


# --- results -----------------------------------------------------------------


@dataclass
class RunReport:
    scenario: str
    cycles: int
    n_tasks: int
    time_slice: int
    first_trigger: int | None
    jobs_before: list[int]
    jobs_after: list[int]
    revocations: list[tuple[int, int | None]]
    reinstates: list[int]
    resets: list[int]
    kills: list[tuple[int, int]]
    reentry_attempts: int
    updates: list[tuple[int, int, str]]
    verdicts: list[CheckReport]
    accounting: DPairAccounting
    final_ar_en: int

    @property
    def revoked_tasks(self) -> set[int]:
        return {t for _, t in self.revocations if t is not None}

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.verdicts)

    def render(self) -> str:
        lines = [f"scenario {self.scenario}: {self.cycles} cycles, N={self.n_tasks},"
                 f" T_slice={self.time_slice}"]
        ft = "none" if self.first_trigger is None else str(self.first_trigger)
        lines.append(f"  first trigger: {ft}")
        for i in range(self.n_tasks):
            lines.append(f"  task {i}: jobs before trigger {self.jobs_before[i]},"
                         f" after {self.jobs_after[i]}")
        lines.append("  revocations: " + (", ".join(f"T{t}@{c}" for c, t in self.revocations)
                                          or "none"))
        lines.append("  reinstates: " + (", ".join(map(str, self.reinstates)) or "none"))
        lines.append("  resets: " + (", ".join(map(str, self.resets)) or "none"))
        lines.append(f"  re-entry attempts: {self.reentry_attempts}")
        for c, t, res in self.updates:
            lines.append(f"  update task {t} at {c}: {res}")
        lines.append(f"  final ar_en: {self.final_ar_en:04x}")
        lines.append("  properties:")
        from .ltl import render_reports
        lines.extend("    " + ln for ln in render_reports(self.verdicts).splitlines())
        lines.append(self.accounting.render())
        return "\n".join(lines)


@dataclass
class RunResult:
    trace: list[TraceRecord]
    report: RunReport
    write_log: list[WriteLogEntry]
    machine: MachineState
    initial_mem: bytes
    kernel_log: KernelLog
    layout: MemoryLayout
    program: ProgramImage

    def csv(self) -> str:
        return to_csv(self.trace)


def build_report(name: str, sim: Simulation, props: Sequence[str] | None = None) -> RunReport:
    trace = sim.trace
    layout = sim.layout
    n = layout.n_tasks
    first = next((r.cycle for r in trace if r.trigger), None)
    log = sim.kernel.log
    before = [0] * n
    after = [0] * n
    for c, t in log.jobs:
        if first is None or c < first:
            before[t] += 1
        else:
            after[t] += 1
    revocations = [(r.cycle, r.latched_task) for r in trace if r.ar_state is ArState.REVOKE]
    reinstates = [r.cycle for r in trace if r.ar_state is ArState.REINSTATE]
    return RunReport(
        scenario=name,
        cycles=len(trace),
        n_tasks=n,
        time_slice=sim.config.time_slice,
        first_trigger=first,
        jobs_before=before,
        jobs_after=after,
        revocations=revocations,
        reinstates=reinstates,
        resets=list(log.resets),
        kills=list(log.kills),
        reentry_attempts=sim.kernel.reentry_attempts,
        updates=[(c, t, res.value) for c, t, res in log.updates],
        verdicts=check_all(trace, layout, props),
        accounting=d_pair_accounting(layout),
        final_ar_en=sim.mon.ar_en,
    )


def simulate(program: ProgramImage, layout: MemoryLayout, cycles: int, *,
             name: str = "custom", config: SchedulerConfig = SchedulerConfig(),
             events: Sequence[Event] = (), fault: MonitorFault | None = None,
             priorities: dict[int, int] | None = None, base_dir: str | Path | None = None,
             props: Sequence[str] | None = None) -> RunResult:
    sim = Simulation(program, layout, config, events=events, fault=fault,
                     priorities=priorities, base_dir=base_dir)
    sim.run(cycles)
    report = build_report(name, sim, props)
    return RunResult(sim.trace, report, sim.write_log, sim.m, sim.initial_mem,
                     sim.kernel.log, layout, program)


# --- post-run analyses -------------------------------------------------------


def unexplained_changes(result: RunResult) -> list[int]:
    """PMEM and D_PAIR byte addresses whose final value no SW or hardware write explains.

    Replays only the committed writes from SW code and from the monitor onto
    the initial image and compares with the final image.
    """
    layout = result.layout
    expected = bytearray(result.initial_mem)
    for w in result.write_log:
        if w.committed and w.origin in ("SW", "hw"):
            expected[w.addr] = w.value & 0xFF
            expected[(w.addr + 1) & 0xFFFF] = (w.value >> 8) & 0xFF
    final = result.machine.mem
    spans = [(layout.pmem_range.start, layout.pmem_range.end),
             (layout.d_pair.start, layout.d_pair.end)]
    return [a for lo, hi in spans for a in range(lo, hi + 1) if final[a] != expected[a]]


@dataclass(frozen=True)
class AvailabilityCheck:
    trigger_cycle: int
    violator: int
    task: int
    deadline: int
    completed_at: int | None

    @property
    def ok(self) -> bool:
        return self.completed_at is not None and self.completed_at <= self.deadline


def post_violation_availability(result: RunResult) -> list[AvailabilityCheck]:
    """For every kill, when each surviving task next finishes a job started after it.

    A job starts at the task's first dispatch after its previous job ended.
    The deadline is 2 x T_slice x (tasks still runnable after the kill).
    """
    log = result.kernel_log
    n = result.layout.n_tasks
    t_slice = result.report.time_slice
    starts: dict[int, list[int]] = {i: [0] for i in range(n)}
    ends: dict[int, list[int]] = {i: [] for i in range(n)}
    events = sorted([(c, 0, t) for c, t in log.jobs]
                    + [(c, 1, t) for c, t, _ in log.dispatches])
    open_job = {i: True for i in range(n)}
    for c, kind, t in events:
        if kind == 0:
            ends[t].append(c)
            open_job[t] = False
        elif not open_job[t]:
            starts[t].append(c)
            open_job[t] = True

    killed_at: dict[int, int] = {}
    for c, t in log.kills:
        killed_at.setdefault(t, c)

    trig_cycles = [r.cycle for r in result.trace if r.trigger and r.latched_task is not None]
    checks = []
    for c, victim in log.kills:
        tc = max((x for x in trig_cycles if x <= c), default=c)
        revoked = {t for t, k in killed_at.items() if k <= c}
        survivors = [i for i in range(n) if i not in revoked]
        deadline = tc + 2 * t_slice * max(len(survivors), 1)
        for s in survivors:
            done = None
            for k, e in enumerate(ends[s]):
                if e >= tc and k < len(starts[s]) and starts[s][k] >= tc:
                    done = e
                    break
            checks.append(AvailabilityCheck(tc, victim, s, deadline, done))
    return checks


def revoked_executions(result: RunResult) -> list[TraceRecord]:
    """Retired instructions of tasks whose AR bit was clear at the time."""
    return [r for r in result.trace
            if r.task_id is not None and r.instr_class is not InstrClass.INTERRUPT_ENTRY
            and not (r.ar_en >> r.task_id) & 1]


def coverage(reports: Sequence[CheckReport]) -> dict[str, int]:
    return {r.formula_id: r.activations for r in reports}
