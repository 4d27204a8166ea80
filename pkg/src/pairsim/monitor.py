"""PAIR hardware model.

Two FSMs share one clock:

* the trigger FSM (Exec/Trigger) drives the kill-and-yield NMI line;
* the AR FSM (Exec/Revoke/Reinstate) maintains the ``ar_en`` bitvector.

All functions here are pure. ``MonitorState`` is the register contents
during a cycle; :func:`step_monitor` maps it plus that cycle's signals to the
registers for the next cycle.

The ``fault`` parameters exist for mutation testing only: each
:class:`MonitorFault` disables one required behaviour.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .isa import SignalSnapshot
from .layout import MemoryLayout, Region


class OutOfRangeId(ValueError):
    pass


class TriggerState(enum.Enum):
    EXEC = "Exec"
    TRIGGER = "Trigger"


class ArState(enum.Enum):
    EXEC = "Exec"
    REVOKE = "Revoke"
    REINSTATE = "Reinstate"


class MonitorFault(enum.Enum):
    """Seeded faults, one per availability/trigger requirement."""

    IGNORE_PAIR_VIOLATION = "eq4"  # violation_pair no longer raises trigger
    IGNORE_IM_VIOLATION = "eq5"  # violation_IM no longer raises trigger
    CLEAR_WITHOUT_IRQ = "eq6"  # Trigger->Exec no longer waits for irq
    SKIP_REVOKE = "eq7"  # Revoke leaves ar_en untouched
    IGNORE_REENTRY = "eq8"  # revoked task re-entry no longer raises trigger
    SKIP_REINSTATE = "eq9"  # Reinstate leaves ar_en untouched


@dataclass(frozen=True)
class MonitorState:
    trigger_state: TriggerState
    ar_state: ArState
    ar_en: int
    latched_task: int | None
    violation_pair: bool = False

    @property
    def trigger(self) -> bool:
        return self.trigger_state is TriggerState.TRIGGER


@dataclass(frozen=True)
class MonitorOutput:
    trigger: bool
    assert_nmi: bool
    block_write: bool


def all_set(n: int) -> int:
    return (1 << n) - 1


def reset_state(n: int) -> MonitorState:
    return MonitorState(TriggerState.EXEC, ArState.EXEC, all_set(n), None)


def mask(task: int, n: int) -> int:
    if task is None or not 0 <= task < n:
        raise OutOfRangeId(f"task id {task!r} outside [0, {n})")
    return 1 << task


def is_available(mstate: MonitorState, task: int, n: int) -> bool:
    return bool(mstate.ar_en & mask(task, n))


def check_access(snapshot: SignalSnapshot, layout: MemoryLayout) -> bool:
    """violation_pair for one cycle (D_PAIR access or PMEM write outside SW)."""
    if not (snapshot.w_en or snapshot.r_en):
        return False
    table = layout.region_table()
    if table[snapshot.pc] == _SW_CODE:
        return False
    addr = snapshot.d_addr
    if table[addr] == _DPAIR_CODE:
        return True
    return snapshot.w_en and addr in layout.pmem_range


def blocks_write(snapshot: SignalSnapshot, layout: MemoryLayout) -> bool:
    if not snapshot.w_en:
        return False
    table = layout.region_table()
    if table[snapshot.pc] == _SW_CODE:
        return False
    return table[snapshot.d_addr] == _DPAIR_CODE or snapshot.d_addr in layout.pmem_range


_CODES = list(Region)
_SW_CODE = _CODES.index(Region.SW_REGION)
_DPAIR_CODE = _CODES.index(Region.D_PAIR_REGION)


def trigger_next(state: TriggerState, *, violation_im: bool, violation_pair: bool,
                 irq: bool, reset: bool, revoked_reentry: bool,
                 fault: MonitorFault | None = None) -> TriggerState:
    """Trigger FSM transition (Exec/Trigger)."""
    if state is TriggerState.EXEC:
        fire = (
            (violation_pair and fault is not MonitorFault.IGNORE_PAIR_VIOLATION)
            or (violation_im and not reset and fault is not MonitorFault.IGNORE_IM_VIOLATION)
            or (revoked_reentry and fault is not MonitorFault.IGNORE_REENTRY)
        )
        if reset:
            return TriggerState.EXEC
        return TriggerState.TRIGGER if fire else TriggerState.EXEC
    clear = irq or fault is MonitorFault.CLEAR_WITHOUT_IRQ
    if clear or reset:
        return TriggerState.EXEC
    return TriggerState.TRIGGER


def ar_next(state: ArState, ar_en: int, *, trigger: bool, pc_eq_sw_exit: bool,
            latched_task: int | None, n: int, reset: bool = False,
            fault: MonitorFault | None = None) -> tuple[ArState, int]:
    """AR FSM transition. The bitvector is updated on the edge into Revoke/Reinstate."""
    if reset:
        return ArState.EXEC, all_set(n)
    if state is not ArState.EXEC:
        return ArState.EXEC, ar_en
    if pc_eq_sw_exit:
        if fault is MonitorFault.SKIP_REINSTATE:
            return ArState.REINSTATE, ar_en
        return ArState.REINSTATE, all_set(n)
    if trigger and latched_task is not None:
        if fault is MonitorFault.SKIP_REVOKE:
            return ArState.REVOKE, ar_en
        return ArState.REVOKE, ar_en & ~mask(latched_task, n) & all_set(n)
    return ArState.EXEC, ar_en


def step_monitor(mstate: MonitorState, snapshot: SignalSnapshot, violation_im: bool,
                 layout: MemoryLayout, *, reset: bool = False,
                 fault: MonitorFault | None = None) -> tuple[MonitorState, MonitorOutput]:
    n = layout.n_tasks
    violation_pair = check_access(snapshot, layout)
    t = layout.task_table()[snapshot.pc]
    task = None if t == 0xFF else t
    revoked_reentry = task is not None and not (mstate.ar_en >> task) & 1

    trig = trigger_next(
        mstate.trigger_state,
        violation_im=violation_im,
        violation_pair=violation_pair,
        irq=snapshot.irq,
        reset=reset,
        revoked_reentry=revoked_reentry,
        fault=fault,
    )
    ar_state, ar_en = ar_next(
        mstate.ar_state,
        mstate.ar_en,
        trigger=mstate.trigger,
        pc_eq_sw_exit=snapshot.pc == layout.sw_exit,
        latched_task=mstate.latched_task,
        n=n,
        reset=reset,
        fault=fault,
    )
    rising = mstate.trigger_state is TriggerState.EXEC and trig is TriggerState.TRIGGER
    latched = task if rising else mstate.latched_task
    if reset:
        latched = None
    new = MonitorState(trig, ar_state, ar_en, latched, violation_pair)
    out = MonitorOutput(
        trigger=trig is TriggerState.TRIGGER,
        assert_nmi=rising,
        block_write=blocks_write(snapshot, layout),
    )
    return new, out
