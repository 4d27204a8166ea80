"""Shipped scenario catalog.

Every scenario runs the three-task demo system (``programs/system.s``) on the
default layout. Attacks are data corruptions of D at fixed points; the
program code that then misbehaves is the program's own.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .asm import assemble_file
from .harness import Corrupt, Event, RunResult, Update, simulate
from .layout import MemoryLayout, load_layout
from .monitor import MonitorFault
from .rtos import Policy, SchedulerConfig

PACKAGE_ROOT = Path(str(resources.files("pairsim")))
PROGRAM_DIR = PACKAGE_ROOT / "programs"
LAYOUT_DIR = PACKAGE_ROOT / "layouts"
DEFAULT_PROGRAM = PROGRAM_DIR / "system.s"
DEFAULT_LAYOUT = LAYOUT_DIR / "default.layout"

WRONG_TOKEN = "ffeeddccbbaa99887766554433221100"


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    cycles: int
    events: tuple[Event, ...] = ()
    policy: Policy = Policy.COMPLIANT
    reentry_budget: int | None = None
    time_slice: int = 200
    program: Path = DEFAULT_PROGRAM
    layout: Path = DEFAULT_LAYOUT
    expected_revoked: frozenset[int] = frozenset()
    expected_resets: int = 0
    exercises: tuple[str, ...] = ()  # equations the scenario is meant to drive
    attack: bool = True

    @property
    def config(self) -> SchedulerConfig:
        return SchedulerConfig(self.time_slice, self.policy, self.reentry_budget)

    def load(self, program: str | Path | None = None,
             layout: str | Path | None = None) -> tuple[MemoryLayout, object]:
        lay = load_layout(layout or self.layout)
        return lay, assemble_file(program or self.program, lay)

    def run(self, *, cycles: int | None = None, fault: MonitorFault | None = None,
            program: str | Path | None = None, layout: str | Path | None = None,
            props=None) -> RunResult:
        lay, prog = self.load(program, layout)
        base_dir = Path(program).parent if program else Path(self.program).parent
        return simulate(prog, lay, cycles or self.cycles, name=self.name,
                        config=self.config, events=self.events, fault=fault,
                        base_dir=base_dir, props=props)


def _rop(cycle: int) -> Corrupt:
    # five-word message: the fifth word lands on t1_parse's return address
    return Corrupt(cycle, "T1_LEN", (5,), when_pc="t1_parse")


def _rop_payload() -> Corrupt:
    return Corrupt(0, "T1_INPUT", (0x11, 0x22, 0x33, 0x44, "t1_gadget"))


def _catalog() -> list[Scenario]:
    rop = (_rop_payload(), _rop(3000))
    return [
        Scenario(
            "benign_multitask",
            "Three tasks, no attack: no violation, no trigger, AR stays full.",
            100_000, attack=False),
        Scenario(
            "rop_return_corruption",
            "Oversized message overruns task 1's stack buffer and redirects its return.",
            20_000, rop, expected_revoked=frozenset({1}),
            exercises=("eq5", "eq6", "eq7")),
        Scenario(
            "jop_indirect",
            "Corrupted state pointer sends task 2's indirect jump outside its table.",
            20_000, (Corrupt(4000, "T2_JPTR", ("t2_gadget",), when_pc="t2_dispatch"),),
            expected_revoked=frozenset({2}), exercises=("eq5", "eq6", "eq7")),
        Scenario(
            "dpair_write",
            "Task 0 is steered into overwriting a task bound in D_PAIR.",
            20_000, (Corrupt(3000, "T0_CMD", (1,)),),
            expected_revoked=frozenset({0}), exercises=("eq2", "eq4", "eq6", "eq7")),
        Scenario(
            "dpair_read",
            "Task 0 is steered into reading the PAIR key.",
            20_000, (Corrupt(3000, "T0_CMD", (3,)),),
            expected_revoked=frozenset({0}), exercises=("eq2", "eq4", "eq7")),
        Scenario(
            "pmem_write",
            "Task 2 is steered into rewriting its own code (code injection).",
            20_000, (Corrupt(3000, "T2_CMD", (2,)),),
            expected_revoked=frozenset({2}), exercises=("eq3", "eq4", "eq6", "eq7")),
        Scenario(
            "cross_stack_write",
            "Task 0 is steered into writing task 1's stack.",
            20_000, (Corrupt(3000, "T0_CMD", (4,)),),
            expected_revoked=frozenset({0}), exercises=("eq5", "eq7")),
        Scenario(
            "reentry_malicious_scheduler",
            "After task 0 is killed the scheduler keeps re-dispatching it (100 attempts).",
            60_000, (Corrupt(3000, "T0_CMD", (1,)),),
            policy=Policy.MALICIOUS_REENTER, reentry_budget=100,
            expected_revoked=frozenset({0}), exercises=("eq4", "eq7", "eq8")),
        Scenario(
            "update_and_reinstate",
            "Task 1 is killed by the ROP attack, patched through the updater, reinstated,"
            " then survives the same attack.",
            20_000,
            rop + (Update(6000, 1, "task1_patched.s"), _rop(12_000)),
            expected_revoked=frozenset({1}), exercises=("eq5", "eq7", "eq9")),
        Scenario(
            "update_wrong_token",
            "Same as update_and_reinstate but the request carries a wrong token.",
            20_000, rop + (Update(6000, 1, "task1_patched.s", WRONG_TOKEN),),
            expected_revoked=frozenset({1}), exercises=("eq5", "eq7")),
        Scenario(
            "violation_in_rtos",
            "The scheduler's hook path writes D_PAIR; no task to blame, so the system resets.",
            20_000, (Corrupt(3000, "RTOS_HOOK", (0xBEEF,)),),
            expected_resets=1, exercises=("eq2", "eq4", "eq6")),
        Scenario(
            "multi_violation",
            "Task 0 and then task 2 are attacked; task 1 keeps running.",
            20_000,
            (Corrupt(3000, "T0_CMD", (1,)),
             Corrupt(7000, "T2_JPTR", ("t2_gadget",), when_pc="t2_dispatch")),
            expected_revoked=frozenset({0, 2}), exercises=("eq4", "eq5", "eq7")),
    ]


CATALOG: dict[str, Scenario] = {s.name: s for s in _catalog()}


def catalog() -> list[Scenario]:
    return list(CATALOG.values())


def get(name: str) -> Scenario:
    try:
        return CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; see list-scenarios") from None
