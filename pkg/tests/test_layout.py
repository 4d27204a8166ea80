from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from conftest import make_layout
from pairsim.layout import (
    NO_TASK, Interval, IssueKind, LayoutError, Region, TaskBounds, check, classify,
    d_pair_accounting, dpair_image, parse_layout, task_of, validate,
)


def brute_classify(layout, addr):
    hits = [tag for iv, tag in ((layout.tr, Region.TR), (layout.rtos, Region.RTOS_REGION),
                                (layout.sw, Region.SW_REGION), (layout.d, Region.D_REGION),
                                (layout.d_pair, Region.D_PAIR_REGION))
            if iv.start <= addr <= iv.end]
    assert len(hits) <= 1
    return hits[0] if hits else Region.UNMAPPED


def brute_task(layout, pc):
    for i, b in enumerate(layout.task_bounds):
        if b.t_min <= pc <= b.t_max:
            return i
    return None


class TestClassify:
    def test_region_starts(self, small_layout):
        assert classify(small_layout, small_layout.tr.start) is Region.TR
        assert classify(small_layout, small_layout.d_pair.start) is Region.D_PAIR_REGION
        assert classify(small_layout, small_layout.sw.end) is Region.SW_REGION
        assert classify(small_layout, 0x0000) is Region.UNMAPPED

    def test_full_sweep_matches_intervals(self, small_layout):
        for addr in range(0x10000):
            assert classify(small_layout, addr) is brute_classify(small_layout, addr)

    def test_default_layout_sweep(self, default_layout):
        counts = {}
        for addr in range(0x10000):
            tag = classify(default_layout, addr)
            assert tag is brute_classify(default_layout, addr)
            counts[tag] = counts.get(tag, 0) + 1
        assert sum(counts.values()) == 0x10000


class TestTaskOf:
    def test_inclusive_bounds(self, small_layout):
        b0 = small_layout.task_bounds[0]
        assert task_of(small_layout, b0.t_min) == 0
        assert task_of(small_layout, b0.t_max) == 0
        assert task_of(small_layout, b0.t_max + 1) == 1

    def test_rtos_is_none(self, small_layout):
        assert task_of(small_layout, small_layout.rtos.start) is None

    def test_pmem_sweep(self, default_layout):
        for pc in range(default_layout.pmem_range.start, default_layout.pmem_range.end + 1):
            t = task_of(default_layout, pc)
            assert t == brute_task(default_layout, pc)
            if t is not None:
                assert classify(default_layout, pc) is Region.TR

    @given(st.integers(1, 16), st.integers(0, 0xFFFF))
    def test_any_task_count(self, n, pc):
        layout = make_layout(n, task_size=0x1E0 // 0x10 * 0x10)
        assert task_of(layout, pc) == brute_task(layout, pc)


class TestValidate:
    def test_valid(self, small_layout, default_layout):
        assert validate(small_layout) == []
        assert validate(default_layout) == []

    def test_overlapping_tasks(self, small_layout):
        b = small_layout.task_bounds
        bad = replace(small_layout, task_bounds=(b[0], TaskBounds(b[0].t_max, b[1].t_max), b[2]))
        assert IssueKind.OVERLAPPING_REGIONS in {i.kind for i in validate(bad)}

    def test_exit_outside_sw(self, small_layout):
        bad = replace(small_layout, sw_exit=small_layout.rtos.start)
        assert [i.kind for i in validate(bad)] == [IssueKind.EXIT_OUTSIDE_SW]

    def test_too_many_tasks(self):
        bad = make_layout(17, task_size=0x100)
        kinds = {i.kind for i in validate(bad)}
        assert IssueKind.TOO_MANY_TASKS in kinds

    def test_bounds_outside_tr(self, small_layout):
        b = small_layout.task_bounds
        bad = replace(small_layout, task_bounds=b[:2] + (TaskBounds(0xA000, 0xA0FF),))
        assert IssueKind.BOUNDS_OUTSIDE_TR in {i.kind for i in validate(bad)}

    def test_reports_every_issue(self, small_layout):
        bad = replace(small_layout, sw_exit=0, updater_entry=0, key=b"short")
        kinds = [i.kind for i in validate(bad)]
        assert kinds.count(IssueKind.EXIT_OUTSIDE_SW) == 2
        assert IssueKind.BAD_KEY in kinds

    def test_check_raises(self, small_layout):
        with pytest.raises(LayoutError):
            check(replace(small_layout, sw_exit=0))


class TestAccounting:
    @pytest.mark.parametrize("n, total, formula", [(1, 26, 4), (2, 30, 6), (3, 34, 8), (16, 86, 34)])
    def test_totals(self, n, total, formula):
        acc = d_pair_accounting(make_layout(n, task_size=0x100))
        assert acc.total == total == 2 + 4 * n + 16 + 4
        assert acc.nominal_bytes == formula

    def test_entries_are_contiguous(self, small_layout):
        acc = d_pair_accounting(small_layout)
        off = 0
        for e in acc.entries:
            assert e.offset == off
            off += e.size

    def test_image_matches_accounting(self, small_layout):
        img = dpair_image(small_layout)
        acc = d_pair_accounting(small_layout)
        assert len(img) == acc.total
        word = lambda off: int.from_bytes(img[off:off + 2], "little")
        by_name = {e.name: e for e in acc.entries}
        assert word(by_name["N (task count)"].offset) == 3
        assert word(by_name["T2_max"].offset) == small_layout.task_bounds[2].t_max
        key = by_name["key"]
        assert img[key.offset:key.offset + 16] == small_layout.key
        assert word(by_name["status: latched task id"].offset) == NO_TASK

    def test_addresses_agree(self, small_layout):
        base = small_layout.d_pair.start
        assert small_layout.key_addr == base + 14
        assert small_layout.status_latched_addr == base + 30
        assert small_layout.status_pc_addr == base + 32


class TestParse:
    TEXT = """
    # comment
    pmem = 0x8000..0xFFFF
    dmem = 0x0200..0x1FFF
    rtos = 0x8000..0x80FF ; trailing
    tr = 0x8100..0x9FFF
    sw = 0xA000..0xA3FF
    d = 0x0200..0x1EFF
    d_pair = 0x1F00..0x1FFF
    sw_exit = 0xA3FC
    trampoline_entry = 0xA000
    updater_entry = 0xA100
    n = 2
    task0 = 0x8100..0x81FF
    task1 = 0x8200..0x82FF
    key = 000102030405060708090a0b0c0d0e0f
    """

    def test_roundtrip(self):
        layout = parse_layout(self.TEXT)
        assert layout.n_tasks == 2
        assert layout.task_bounds[1] == TaskBounds(0x8200, 0x82FF)
        assert layout.key == bytes(range(16))
        assert layout.mailbox is None
        assert validate(layout) == []

    def test_count_mismatch(self):
        with pytest.raises(ValueError, match="n = 2"):
            parse_layout(self.TEXT.replace("task1 = 0x8200..0x82FF", ""))

    def test_missing_key(self):
        with pytest.raises(ValueError, match="sw_exit"):
            parse_layout(self.TEXT.replace("sw_exit = 0xA3FC", ""))

    def test_interval_helpers(self):
        iv = Interval(0x10, 0x1F)
        assert 0x10 in iv and 0x1F in iv and 0x20 not in iv
        assert len(iv) == 16
        assert iv.overlaps(Interval(0x1F, 0x30)) and not iv.overlaps(Interval(0x20, 0x30))
