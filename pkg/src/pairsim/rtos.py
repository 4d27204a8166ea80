"""Minimal RTOS model.

Task and SW code run on the simulated MCU; the kernel's bookkeeping
(context save/restore, scheduling decisions) is modelled here and entered
through ``YIELD <service>``:

====  ==================  =========================================
code  caller              effect
====  ==================  =========================================
0     task                job finished, give up the CPU
1     RTOS                dispatch: pick and resume the next task
2     SW trampoline       kill task ``r1`` (or reset if NO_TASK)
3     SW updater exit     task ``r1`` was patched; restart it
4     SW updater reject   request refused, reason in ``r1``
====  ==================  =========================================

Services requested from the wrong region are ignored.
"""

from __future__ import annotations

import enum
import hmac
from dataclasses import dataclass, field

from .isa import NUM_REGS, SP, InstrClass, MachineState, SignalSnapshot
from .layout import KEY_BYTES, NO_TASK, MemoryLayout, Region, classify, task_of

SVC_JOB_DONE = 0
SVC_DISPATCH = 1
SVC_KILL = 2
SVC_UPDATE_DONE = 3
SVC_UPDATE_REJECTED = 4

EMPTY_MAILBOX = 0xFFFF


class RunState(enum.Enum):
    READY = "Ready"
    RUNNING = "Running"
    KILLED = "Killed"
    DONE = "Done"


class Policy(enum.Enum):
    COMPLIANT = "Compliant"
    MALICIOUS_REENTER = "MaliciousReenter"


@dataclass(frozen=True)
class SchedulerConfig:
    time_slice: int = 200
    policy: Policy = Policy.COMPLIANT
    reentry_budget: int | None = None  # MaliciousReenter attempts; None = unbounded

    def __post_init__(self):
        if self.time_slice < 1:
            raise ValueError("time_slice must be >= 1")


@dataclass(frozen=True)
class Context:
    pc: int
    regs: tuple[int, ...]
    zero_flag: bool = False


@dataclass
class Tcb:
    id: int
    priority: int
    entry: int
    stack: tuple[int, int]  # (base, limit)
    run_state: RunState = RunState.READY
    saved_context: Context | None = None
    jobs_completed: int = 0
    period: int | None = None

    def initial_context(self) -> Context:
        regs = [0] * NUM_REGS
        regs[SP] = self.stack[0]
        return Context(self.entry, tuple(regs))

    @property
    def runnable(self) -> bool:
        return self.run_state in (RunState.READY, RunState.RUNNING)


def schedule(tcbs: list[Tcb], config: SchedulerConfig, last: int | None = None,
             allow_reentry: bool = True) -> int | None:
    """Next task to run, or None for idle.

    Compliant: highest priority runnable task, round-robin after ``last`` among
    equals. MaliciousReenter: a killed task whenever one exists and
    ``allow_reentry`` holds.
    """
    if config.policy is Policy.MALICIOUS_REENTER and allow_reentry:
        killed = [t.id for t in tcbs if t.run_state is RunState.KILLED]
        if killed:
            return killed[0]
    ready = [t for t in tcbs if t.runnable]
    if not ready:
        return None
    top = max(t.priority for t in ready)
    ids = sorted(t.id for t in ready if t.priority == top)
    if last is not None:
        for i in ids:
            if i > last:
                return i
    return ids[0]


@dataclass(frozen=True)
class TrampolineResult:
    killed: int | None
    reset: bool


def trampoline(latched_task: int | None, tcbs: list[Tcb]) -> TrampolineResult:
    """Kill the latched task (idempotent); ``None`` requests a full reset."""
    if latched_task is None or not 0 <= latched_task < len(tcbs):
        return TrampolineResult(None, True)
    tcbs[latched_task].run_state = RunState.KILLED
    return TrampolineResult(latched_task, False)


# --- trusted update ----------------------------------------------------------


class UpdateResult(enum.Enum):
    OK = "ok"
    AUTH_FAILURE = "AuthFailure"
    IMAGE_TOO_LARGE = "ImageTooLarge"
    BAD_TASK = "BadTask"


# reason codes the SW updater leaves in r1 when it rejects a request
REJECT_REASONS = {1: UpdateResult.AUTH_FAILURE, 2: UpdateResult.IMAGE_TOO_LARGE,
                  3: UpdateResult.BAD_TASK}


@dataclass(frozen=True)
class UpdateRequest:
    task: int
    image: bytes
    token: bytes

    def encode(self) -> bytes:
        """Mailbox bytes: task id, length, 16-byte token, image (padded to even)."""
        if len(self.token) != KEY_BYTES:
            raise ValueError("token must be 16 bytes")
        image = self.image + (b"\xff" if len(self.image) % 2 else b"")
        return (self.task.to_bytes(2, "little") + len(image).to_bytes(2, "little")
                + self.token + image)

    @classmethod
    def read(cls, mem: bytes | bytearray, mailbox: int) -> UpdateRequest | None:
        task = mem[mailbox] | mem[mailbox + 1] << 8
        if task == EMPTY_MAILBOX:
            return None
        length = mem[mailbox + 2] | mem[mailbox + 3] << 8
        token = bytes(mem[mailbox + 4 : mailbox + 4 + KEY_BYTES])
        start = mailbox + 4 + KEY_BYTES
        return cls(task, bytes(mem[start : start + length]), token)


def trusted_update(req: UpdateRequest, layout: MemoryLayout, mem: bytearray,
                   tcbs: list[Tcb] | None = None) -> UpdateResult:
    """Reference model of the SW updater, applied directly to ``mem``.

    The machine-executed updater in SW must produce the same memory image;
    the tests hold the two against each other.
    """
    if not hmac.compare_digest(req.token, layout.key):
        return UpdateResult.AUTH_FAILURE
    if not 0 <= req.task < layout.n_tasks:
        return UpdateResult.BAD_TASK
    bounds = layout.task_bounds[req.task]
    image = req.image + (b"\xff" if len(req.image) % 2 else b"")
    if len(image) > bounds.size:
        return UpdateResult.IMAGE_TOO_LARGE
    mem[bounds.t_min : bounds.t_min + len(image)] = image
    if tcbs is not None:
        tcb = tcbs[req.task]
        tcb.run_state = RunState.READY
        tcb.saved_context = tcb.initial_context()
    return UpdateResult.OK


# --- kernel ------------------------------------------------------------------


@dataclass
class KernelAction:
    reset: bool = False
    restarted: list[int] = field(default_factory=list)


@dataclass
class KernelLog:
    jobs: list[tuple[int, int]] = field(default_factory=list)  # (cycle, task)
    kills: list[tuple[int, int]] = field(default_factory=list)
    dispatches: list[tuple[int, int, bool]] = field(default_factory=list)  # (cycle, task, reentry)
    preemptions: list[tuple[int, int]] = field(default_factory=list)
    updates: list[tuple[int, int, UpdateResult]] = field(default_factory=list)
    resets: list[int] = field(default_factory=list)


class Kernel:
    """Scheduler bookkeeping wrapped around the machine.

    ``boundary`` runs before each machine step, ``after_step`` after the
    cycle's write commit and NMI latch.
    """

    def __init__(self, layout: MemoryLayout, tcbs: list[Tcb], config: SchedulerConfig,
                 rtos_sched: int):
        self.layout = layout
        self.tcbs = tcbs
        self.config = config
        self.rtos_sched = rtos_sched
        self.current: int | None = None
        self.last: int | None = None
        self.slice_used = 0
        self.reentry_attempts = 0
        self._last_was_reentry = False
        self.log = KernelLog()
        for t in tcbs:
            t.saved_context = t.initial_context()

    # context switching

    def _save(self, m: MachineState, pc: int) -> None:
        tcb = self.tcbs[self.current]
        tcb.saved_context = Context(pc, tuple(m.regs), m.zero_flag)
        if tcb.run_state is RunState.RUNNING:
            tcb.run_state = RunState.READY
        if tcb.run_state is not RunState.KILLED:
            # re-entries of killed tasks do not advance the round-robin cursor
            self.last = self.current
        self.current = None

    def _restore(self, m: MachineState, task: int) -> None:
        tcb = self.tcbs[task]
        ctx = tcb.saved_context or tcb.initial_context()
        m.pc = ctx.pc
        m.regs[:] = ctx.regs
        m.zero_flag = ctx.zero_flag
        if tcb.run_state is RunState.READY:
            tcb.run_state = RunState.RUNNING
        self.current = task
        self.slice_used = 0

    def _to_rtos(self, m: MachineState) -> None:
        m.pc = self.rtos_sched

    def tick(self, m: MachineState) -> None:
        """Preempt the running task once its time slice is used up."""
        if self.current is None or m.nmi_pending:
            return
        if self.slice_used >= self.config.time_slice:
            self.log.preemptions.append((m.cycle, self.current))
            self._save(m, m.pc)
            self._to_rtos(m)

    boundary = tick

    def after_step(self, m: MachineState, snap: SignalSnapshot) -> KernelAction:
        action = KernelAction()
        if snap.instr_class is InstrClass.INTERRUPT_ENTRY:
            if self.current is not None:
                self._save(m, m.read16(self.layout.status_pc_addr))
            return action
        if self.current is not None:
            self.slice_used += 1
        svc = snap.service
        if svc is None or m.nmi_pending:
            return action

        region = classify(self.layout, snap.pc)
        if svc == SVC_JOB_DONE and self.current is not None \
                and task_of(self.layout, snap.pc) == self.current:
            tcb = self.tcbs[self.current]
            if tcb.run_state is not RunState.KILLED:
                tcb.jobs_completed += 1
                self.log.jobs.append((snap.cycle, self.current))
            self._save(m, m.pc)
            self._to_rtos(m)
        elif svc == SVC_DISPATCH and region is Region.RTOS_REGION:
            self._dispatch(m, snap.cycle)
        elif svc == SVC_KILL and region is Region.SW_REGION:
            latched = m.regs[1]
            res = trampoline(None if latched == NO_TASK else latched, self.tcbs)
            if res.reset:
                action.reset = True
            else:
                self.log.kills.append((snap.cycle, res.killed))
                self._to_rtos(m)
        elif svc == SVC_UPDATE_DONE and region is Region.SW_REGION:
            task = m.regs[1]
            if 0 <= task < len(self.tcbs):
                tcb = self.tcbs[task]
                tcb.run_state = RunState.READY
                tcb.saved_context = tcb.initial_context()
                action.restarted.append(task)
                self.log.updates.append((snap.cycle, task, UpdateResult.OK))
            self._to_rtos(m)
        elif svc == SVC_UPDATE_REJECTED and region is Region.SW_REGION:
            reason = REJECT_REASONS.get(m.regs[1], UpdateResult.BAD_TASK)
            self.log.updates.append((snap.cycle, m.regs[2], reason))
            self._to_rtos(m)
        return action

    def _dispatch(self, m: MachineState, cycle: int) -> None:
        mb = self.layout.mailbox
        if mb is not None and m.read16(mb) != EMPTY_MAILBOX:
            m.pc = self.layout.updater_entry
            return
        budget = self.config.reentry_budget
        allow = (not self._last_was_reentry
                 and (budget is None or self.reentry_attempts < budget))
        task = schedule(self.tcbs, self.config, self.last, allow_reentry=allow)
        if task is None:
            self._last_was_reentry = False
            self._to_rtos(m)
            return
        reentry = self.tcbs[task].run_state is RunState.KILLED
        if reentry:
            self.reentry_attempts += 1
        self._last_was_reentry = reentry
        self.log.dispatches.append((cycle, task, reentry))
        self._restore(m, task)

    def reset(self, m: MachineState) -> None:
        """Full system reset: every task restarts from its entry."""
        self.log.resets.append(m.cycle)
        for t in self.tcbs:
            t.run_state = RunState.READY
            t.saved_context = t.initial_context()
        self.current = None
        self.last = None
        self.slice_used = 0
        self._last_was_reentry = False
        m.regs[:] = [0] * NUM_REGS
        m.zero_flag = False
        m.nmi_pending = False
        m.halted = False
        m.pc = m.reset_pc

    def ready_count(self) -> int:
        return sum(1 for t in self.tcbs if t.runnable)
