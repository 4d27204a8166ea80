import pytest

from pairsim import scenarios
from pairsim.asm import assemble_file
from pairsim.layout import Interval, MemoryLayout, TaskBounds, load_layout

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def make_layout(n_tasks=3, task_size=0x100, mailbox=None) -> MemoryLayout:
    tasks = tuple(TaskBounds(0x8100 + i * task_size, 0x8100 + (i + 1) * task_size - 1)
                  for i in range(n_tasks))
    return MemoryLayout(
        pmem_range=Interval(0x8000, 0xFFFF),
        dmem_range=Interval(0x0200, 0x1FFF),
        tr=Interval(0x8100, 0x9FFF),
        rtos=Interval(0x8000, 0x80FF),
        sw=Interval(0xA000, 0xA3FF),
        d=Interval(0x0200, 0x1EFF),
        d_pair=Interval(0x1F00, 0x1FFF),
        sw_exit=0xA3FC,
        trampoline_entry=0xA000,
        updater_entry=0xA100,
        task_bounds=tasks,
        key=bytes(range(16)),
        mailbox=mailbox,
    )


@pytest.fixture
def small_layout():
    return make_layout()


@pytest.fixture(scope="session")
def default_layout():
    return load_layout(scenarios.DEFAULT_LAYOUT)


@pytest.fixture(scope="session")
def system_program(default_layout):
    return assemble_file(scenarios.DEFAULT_PROGRAM, default_layout)


class ScenarioCache:
    """Runs each catalog scenario once per session."""

    def __init__(self):
        self._runs = {}

    def __call__(self, name):
        if name not in self._runs:
            self._runs[name] = scenarios.get(name).run()
        return self._runs[name]


@pytest.fixture(scope="session")
def scenario_run():
    return ScenarioCache()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[2:])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")
