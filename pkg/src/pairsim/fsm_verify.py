"""Exhaustive verification of the monitor FSMs.

Four tables, all driven through :func:`monitor.step_monitor` with synthesized
snapshots and compared against requirements written out independently:

``access``   violation_pair over every (r_en, w_en, address class, pc class)
``trigger``  2 states x 32 combinations of (violation_im, violation_pair,
             irq, reset, revoked_reentry)
``ar``       3 states x 8 combinations of (trigger, pc = SW_exit,
             latched id valid), each checked over every ar_en value and
             every latched id
``product``  breadth-first search of the composed monitor's reachable
             states under the MCU's interface assumptions, checking the
             availability and integrity definitions on every transition

Some input combinations make two requirements contradict each other (for
example a new violation on the very cycle the NMI is accepted). Those
edges are listed as conflicts, together with the rule that settles them.
They are not counted as mismatches.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

from .isa import InstrClass, SignalSnapshot
from .layout import Interval, MemoryLayout, TaskBounds
from .monitor import (
    ArState, MonitorFault, MonitorState, TriggerState, all_set, check_access,
    reset_state, step_monitor,
)


@dataclass(frozen=True)
class Mismatch:
    table: str
    state: str
    inputs: dict
    expected: str
    actual: str
    requirement: str

    def __str__(self) -> str:
        ins = ", ".join(f"{k}={int(v) if isinstance(v, bool) else v}"
                        for k, v in self.inputs.items())
        return (f"[{self.table}] {self.state} --({ins})--> expected {self.expected},"
                f" got {self.actual}  ({self.requirement})")


@dataclass(frozen=True)
class Conflict:
    table: str
    state: str
    inputs: dict
    requirements: tuple[str, ...]
    resolution: str


@dataclass
class FsmReport:
    n_tasks: int
    fault: MonitorFault | None
    edges: dict[str, int] = field(default_factory=dict)
    checks: dict[str, int] = field(default_factory=dict)
    mismatches: list[Mismatch] = field(default_factory=list)
    conflicts: list[Conflict] = field(default_factory=list)
    reachable_states: int = 0
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def count(self, table: str) -> int:
        return sum(1 for m in self.mismatches if m.table == table)

    def render(self, limit: int = 20) -> str:
        lines = [f"fsm-verify (N={self.n_tasks}"
                 + (f", fault={self.fault.name}" if self.fault else "") + ")"]
        for table in ("access", "trigger", "ar", "product"):
            lines.append(f"  {table:8s} edges={self.edges.get(table, 0):5d}"
                         f" checks={self.checks.get(table, 0):6d}"
                         f" mismatches={self.count(table)}")
        if "product" in self.edges:
            lines.append(f"  product reachable states: {self.reachable_states}")
        else:
            lines.append(f"  product check skipped (N > {PRODUCT_MAX_TASKS})")
        lines.append(f"  conflicting-requirement edges resolved by rule: {len(self.conflicts)}")
        for m in self.mismatches[:limit]:
            lines.append("  MISMATCH " + str(m))
        if len(self.mismatches) > limit:
            lines.append(f"  ... {len(self.mismatches) - limit} more")
        lines.append(f"  result: {'PASS' if self.ok else 'FAIL'}  ({self.elapsed * 1000:.1f} ms)")
        return "\n".join(lines)


def reference_layout(n_tasks: int = 3) -> MemoryLayout:
    """Small layout used when no layout is supplied."""
    size = 0x100
    tasks = tuple(TaskBounds(0x8100 + i * size, 0x8100 + (i + 1) * size - 1)
                  for i in range(n_tasks))
    return MemoryLayout(
        pmem_range=Interval(0x8000, 0xFFFF), dmem_range=Interval(0x0200, 0x1FFF),
        tr=Interval(0x8100, 0x8100 + 16 * size - 1), rtos=Interval(0x8000, 0x80FF),
        sw=Interval(0x9100, 0x92FF), d=Interval(0x0200, 0x1EFF),
        d_pair=Interval(0x1F00, 0x1FFF), sw_exit=0x92FC, trampoline_entry=0x9100,
        updater_entry=0x9200, task_bounds=tasks, key=bytes(16),
    )


def _snap(pc: int, *, w_en=False, r_en=False, d_addr=0, irq=False) -> SignalSnapshot:
    cls = (InstrClass.INTERRUPT_ENTRY if irq else InstrClass.STORE if w_en
           else InstrClass.LOAD if r_en else InstrClass.PLAIN)
    return SignalSnapshot(0, pc, w_en, r_en, d_addr, irq, cls, pc)


def _bits(inputs: dict) -> dict:
    return {k: bool(v) for k, v in inputs.items()}


# --- access predicate --------------------------------------------------------


def _verify_access(rep: FsmReport, layout: MemoryLayout) -> None:
    addr_classes = {
        "D": layout.d.start,
        "D_PAIR": layout.d_pair.start,
        "D_PAIR_end": layout.d_pair.end,
        "TR": layout.tr.start,
        "RTOS": layout.rtos.start,
        "SW": layout.sw.start,
    }
    spare = [a for a in (layout.pmem_range.end, layout.pmem_range.start)
             if all(a not in iv for iv in (layout.tr, layout.rtos, layout.sw))]
    if spare:
        addr_classes["PMEM_unmapped"] = spare[0]
    pc_classes = {
        "TR": layout.task_bounds[0].t_min,
        "RTOS": layout.rtos.start,
        "SW": layout.sw.start,
        "SW_exit": layout.sw_exit,
    }
    edges = 0
    for (rw, (aname, addr), (pname, pc)) in itertools.product(
            ((False, False), (True, False), (False, True)),
            addr_classes.items(), pc_classes.items()):
        r_en, w_en = rw
        edges += 1
        in_sw = layout.sw.start <= pc <= layout.sw.end
        in_dpair = layout.d_pair.start <= addr <= layout.d_pair.end
        in_pmem = layout.pmem_range.start <= addr <= layout.pmem_range.end
        eq2 = (r_en or w_en) and in_dpair and not in_sw
        eq3 = w_en and in_pmem and not in_sw
        expected = eq2 or eq3
        actual = check_access(_snap(pc, w_en=w_en, r_en=r_en, d_addr=addr), layout)
        if actual != expected:
            rep.mismatches.append(Mismatch(
                "access", f"pc in {pname}",
                {"r_en": r_en, "w_en": w_en, "d_addr": aname},
                str(expected), str(actual), "eq3" if eq3 != eq2 and not eq2 else "eq2"))
    rep.edges["access"] = edges
    rep.checks["access"] = edges


# --- trigger FSM -------------------------------------------------------------


def _expected_trigger(trig: bool, vim, vpair, irq, reset, reentry):
    """(next trigger, requirement, conflicting requirements)."""
    fire = [eq for eq, on in (("eq4", vpair), ("eq5", vim), ("eq8", reentry)) if on]
    if reset:
        return False, "reset", tuple(fire)
    if trig and irq:
        return False, "eq6", tuple(fire)
    if trig:
        return True, "eq6 (held until irq)", ()
    if fire:
        return True, fire[0], ()
    return False, "else (no spurious trigger)", ()


def _verify_trigger(rep: FsmReport, layout: MemoryLayout, fault) -> None:
    n = layout.n_tasks
    task_pc = layout.task_bounds[0].t_min
    edges = checks = 0
    for state in TriggerState:
        for vim, vpair, irq, reset, reentry in itertools.product((False, True), repeat=5):
            edges += 1
            trig = state is TriggerState.TRIGGER
            ar_en = all_set(n) & ~1 if reentry else all_set(n)
            ms = MonitorState(state, ArState.EXEC, ar_en, None)
            snap = _snap(task_pc, w_en=vpair, d_addr=layout.d_pair.start if vpair else 0,
                         irq=irq)
            new, out = step_monitor(ms, snap, vim, layout, reset=reset, fault=fault)
            exp_next, req, conflict = _expected_trigger(trig, vim, vpair, irq, reset, reentry)
            inputs = _bits({"violation_im": vim, "violation_pair": vpair, "irq": irq,
                            "reset": reset, "revoked_reentry": reentry})
            if conflict:
                rep.conflicts.append(Conflict("trigger", state.value, inputs,
                                              (req,) + conflict, f"{req} takes priority"))
            checks += 3
            if new.trigger != exp_next:
                rep.mismatches.append(Mismatch(
                    "trigger", state.value, inputs,
                    "Trigger" if exp_next else "Exec", new.trigger_state.value, req))
            if out.trigger != new.trigger:
                rep.mismatches.append(Mismatch(
                    "trigger", state.value, inputs, f"trigger output={new.trigger}",
                    f"trigger output={out.trigger}", "trigger mirrors state"))
            exp_nmi = (not trig) and exp_next
            if out.assert_nmi != exp_nmi:
                rep.mismatches.append(Mismatch(
                    "trigger", state.value, inputs, f"assert_nmi={exp_nmi}",
                    f"assert_nmi={out.assert_nmi}", "NMI pulses on Exec->Trigger"))
    rep.edges["trigger"] = edges
    rep.checks["trigger"] = checks


# --- AR FSM ------------------------------------------------------------------

EXHAUSTIVE_AR_TASKS = 8
PRODUCT_MAX_TASKS = 6


def _ar_values(n: int):
    """Every ar_en value up to EXHAUSTIVE_AR_TASKS tasks, else a covering subset.

    The subset holds all-ones, zero, every one-hot and one-cold vector and the
    two alternating patterns, which is enough for the AR FSM's bitwise
    per-task update to be exercised on every bit in both polarities.
    """
    full = all_set(n)
    if n <= EXHAUSTIVE_AR_TASKS:
        return range(full + 1)
    vals = {0, full, 0x5555 & full, 0xAAAA & full}
    for i in range(n):
        vals.add(1 << i)
        vals.add(full & ~(1 << i))
    return sorted(vals)



def _verify_ar(rep: FsmReport, layout: MemoryLayout, fault) -> None:
    n = layout.n_tasks
    full = all_set(n)
    neutral_pc = layout.rtos.start
    edges = checks = 0
    for state in ArState:
        for trig, at_exit, latched_valid in itertools.product((False, True), repeat=3):
            edges += 1
            inputs = _bits({"trigger": trig, "pc_eq_sw_exit": at_exit,
                            "latched_valid": latched_valid})
            latched_choices = range(n) if latched_valid else [None]
            if state is ArState.EXEC and at_exit and trig and latched_valid:
                rep.conflicts.append(Conflict("ar", state.value, inputs, ("eq9", "eq7"),
                                              "eq9 takes priority"))
            reported = False
            for ar_en in _ar_values(n):
                for latched in latched_choices:
                    checks += 1
                    ts = TriggerState.TRIGGER if trig else TriggerState.EXEC
                    ms = MonitorState(ts, state, ar_en, latched)
                    pc = layout.sw_exit if at_exit else neutral_pc
                    # irq accompanies trigger so the trigger FSM is quiescent
                    new, _ = step_monitor(ms, _snap(pc, irq=trig), False, layout, fault=fault)
                    if state is not ArState.EXEC:
                        exp = (ArState.EXEC, ar_en, "one-cycle state")
                    elif at_exit:
                        exp = (ArState.REINSTATE, full, "eq9")
                    elif trig and latched is not None:
                        exp = (ArState.REVOKE, ar_en & ~(1 << latched), "eq7")
                    else:
                        exp = (ArState.EXEC, ar_en, "else (hold)")
                    if (new.ar_state, new.ar_en) != exp[:2] and not reported:
                        reported = True
                        rep.mismatches.append(Mismatch(
                            "ar", state.value, dict(inputs, ar_en=f"{ar_en:#x}", latched=latched),
                            f"{exp[0].value}/ar_en={exp[1]:#x}",
                            f"{new.ar_state.value}/ar_en={new.ar_en:#x}", exp[2]))
    rep.edges["ar"] = edges
    rep.checks["ar"] = checks


# --- composed monitor --------------------------------------------------------


def _product_inputs(layout: MemoryLayout):
    """Environment moves when trigger is low.

    Assumptions, all guaranteed by the simulated MCU: an asserted trigger is
    accepted on the next cycle (irq is high exactly when trigger is), the
    interrupt-entry cycle performs no access, and trusted SW raises no IM
    violation.
    """
    pcs = [("T%d" % i, b.t_min) for i, b in enumerate(layout.task_bounds)]
    pcs += [("RTOS", layout.rtos.start), ("SW", layout.sw.start), ("SW_exit", layout.sw_exit)]
    accesses = [
        ("none", {}),
        ("rd D_PAIR", {"r_en": True, "d_addr": layout.d_pair.start}),
        ("wr D_PAIR", {"w_en": True, "d_addr": layout.d_pair.start}),
        ("wr PMEM", {"w_en": True, "d_addr": layout.tr.start}),
        ("wr D", {"w_en": True, "d_addr": layout.d.start}),
    ]
    for (pname, pc), (aname, acc), vim in itertools.product(pcs, accesses, (False, True)):
        if pname.startswith("SW") and vim:
            continue
        yield f"pc={pname}, {aname}, vim={int(vim)}", pc, _snap(pc, **acc), vim


def _verify_product(rep: FsmReport, layout: MemoryLayout, fault) -> None:
    n = layout.n_tasks
    irq_snap = _snap(layout.trampoline_entry, irq=True)
    env = list(_product_inputs(layout))
    # Revoke is always the cycle after interrupt entry, i.e. the trampoline's
    # first instruction; Reinstate always follows the updater's exit, whose
    # yield hands the CPU to the RTOS. Neither can see pc = SW_exit.
    first_trampoline = [("trampoline", layout.trampoline_entry,
                         _snap(layout.trampoline_entry), False)]
    after_exit = [mv for mv in env if mv[1] != layout.sw_exit]
    start = reset_state(n)
    seen = {start}
    frontier = [start]
    edges = checks = 0

    def fail(state, label, prop, detail):
        rep.mismatches.append(Mismatch(
            "product", f"{state.trigger_state.value}/{state.ar_state.value}/"
            f"ar_en={state.ar_en:#x}/latched={state.latched_task}",
            {"input": label}, prop, detail, prop))

    while frontier:
        s = frontier.pop()
        if s.trigger:
            moves = [("irq", irq_snap.pc, irq_snap, False)]
        elif s.ar_state is ArState.REVOKE:
            moves = first_trampoline
        elif s.ar_state is ArState.REINSTATE:
            moves = after_exit
        else:
            moves = env
        for label, pc, snap, vim in moves:
            edges += 1
            t, _ = step_monitor(s, snap, vim, layout, fault=fault)
            vpair = check_access(snap, layout)
            checks += 4
            if (vpair or vim) and not t.trigger:
                fail(s, label, "def1a", "violation without trigger next")
            if s.trigger and s.latched_task is not None and (t.ar_en >> s.latched_task) & 1:
                fail(s, label, "def1b", f"task {s.latched_task} still in AR after trigger")
            for i, b in enumerate(layout.task_bounds):
                if b.t_min <= pc <= b.t_max and not (s.ar_en >> i) & 1 and not t.trigger:
                    fail(s, label, "def2", f"revoked task {i} ran without trigger next")
            if pc == layout.sw_exit and not snap.irq and t.ar_en != all_set(n):
                fail(s, label, "eq9", "AR not reset after SW exit")
            if t not in seen:
                seen.add(t)
                frontier.append(t)
    rep.edges["product"] = edges
    rep.checks["product"] = checks
    rep.reachable_states = len(seen)


def fsm_verify(n_tasks: int | None = None, layout: MemoryLayout | None = None,
               fault: MonitorFault | None = None) -> FsmReport:
    """Check every reachable edge of the monitor FSMs for ``n_tasks`` tasks.

    Without a layout a small reference layout is built (N defaults to 3);
    with one, ``n_tasks`` must agree with it.
    """
    if layout is None:
        layout = reference_layout(3 if n_tasks is None else n_tasks)
    elif n_tasks is not None and n_tasks != layout.n_tasks:
        raise ValueError(f"layout has {layout.n_tasks} tasks, not {n_tasks}")
    rep = FsmReport(layout.n_tasks, fault)
    t0 = time.perf_counter()
    _verify_access(rep, layout)
    _verify_trigger(rep, layout, fault)
    _verify_ar(rep, layout, fault)
    if layout.n_tasks <= PRODUCT_MAX_TASKS:
        _verify_product(rep, layout, fault)
    rep.elapsed = time.perf_counter() - t0
    return rep
