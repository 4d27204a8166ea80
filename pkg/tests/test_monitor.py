import itertools

import pytest
from hypothesis import given, strategies as st

from pairsim.isa import InstrClass, SignalSnapshot
from pairsim.monitor import (
    ArState, MonitorState, OutOfRangeId, TriggerState, all_set, blocks_write, check_access,
    is_available, mask, reset_state, step_monitor,
)


def snap(pc, w_en=False, r_en=False, d_addr=0, irq=False):
    cls = InstrClass.INTERRUPT_ENTRY if irq else InstrClass.PLAIN
    return SignalSnapshot(0, pc, w_en, r_en, d_addr, irq, cls, pc)


def t_pc(layout, i):
    return layout.task_bounds[i].t_min


class TestMask:
    def test_values(self):
        assert mask(0, 4) == 0b0001
        assert mask(3, 4) == 0b1000

    def test_disjoint(self):
        for i, j in itertools.permutations(range(16), 2):
            assert mask(i, 16) & mask(j, 16) == 0

    @pytest.mark.parametrize("bad", [-1, 4, None])
    def test_out_of_range(self, bad):
        with pytest.raises(OutOfRangeId):
            mask(bad, 4)


class TestCheckAccess:
    def test_dpair_write_from_task(self, small_layout):
        s = snap(t_pc(small_layout, 0), w_en=True, d_addr=small_layout.d_pair.start)
        assert check_access(s, small_layout)

    def test_dpair_write_from_sw(self, small_layout):
        s = snap(small_layout.sw.start, w_en=True, d_addr=small_layout.d_pair.start)
        assert not check_access(s, small_layout)

    def test_no_access(self, small_layout):
        assert not check_access(snap(t_pc(small_layout, 0), d_addr=small_layout.d_pair.start),
                                small_layout)

    def test_pmem_write_from_rtos(self, small_layout):
        s = snap(small_layout.rtos.start, w_en=True, d_addr=small_layout.tr.start)
        assert check_access(s, small_layout)

    def test_pmem_read_is_fine(self, small_layout):
        s = snap(small_layout.rtos.start, r_en=True, d_addr=small_layout.tr.start)
        assert not check_access(s, small_layout)

    @given(st.integers(0, 0xFFFF), st.integers(0, 0xFFFF), st.booleans(), st.booleans())
    def test_matches_predicate(self, pc, addr, w, r):
        from conftest import make_layout
        lay = make_layout()
        in_sw = lay.sw.start <= pc <= lay.sw.end
        in_dpair = lay.d_pair.start <= addr <= lay.d_pair.end
        in_pmem = lay.pmem_range.start <= addr <= lay.pmem_range.end
        expected = ((r or w) and in_dpair and not in_sw) or (w and in_pmem and not in_sw)
        s = snap(pc, w_en=w, r_en=r, d_addr=addr)
        assert check_access(s, lay) == expected
        assert blocks_write(s, lay) == (w and (in_dpair or in_pmem) and not in_sw)


class TestStepMonitor:
    def test_im_violation_raises_trigger(self, small_layout):
        new, out = step_monitor(reset_state(3), snap(t_pc(small_layout, 1)), True, small_layout)
        assert new.trigger and out.trigger and out.assert_nmi
        assert new.latched_task == 1

    def test_trigger_cleared_by_irq(self, small_layout):
        ms = MonitorState(TriggerState.TRIGGER, ArState.EXEC, 7, 1)
        new, out = step_monitor(ms, snap(small_layout.trampoline_entry, irq=True), False,
                                small_layout)
        assert not new.trigger and not out.assert_nmi

    def test_trigger_held_without_irq(self, small_layout):
        ms = MonitorState(TriggerState.TRIGGER, ArState.EXEC, 7, 1)
        new, out = step_monitor(ms, snap(small_layout.rtos.start), False, small_layout)
        assert new.trigger and not out.assert_nmi

    def test_revoke_clears_latched_bit(self, small_layout):
        ms = MonitorState(TriggerState.TRIGGER, ArState.EXEC, 7, 2)
        new, _ = step_monitor(ms, snap(small_layout.trampoline_entry, irq=True), False,
                              small_layout)
        assert new.ar_state is ArState.REVOKE
        assert new.ar_en & mask(2, 3) == 0 and new.ar_en == 0b011
        assert not is_available(new, 2, 3) and is_available(new, 0, 3)

    def test_reentry_triggers(self, small_layout):
        ms = MonitorState(TriggerState.EXEC, ArState.EXEC, 0b101, None)
        new, out = step_monitor(ms, snap(t_pc(small_layout, 1)), False, small_layout)
        assert new.trigger and out.assert_nmi and new.latched_task == 1

    def test_sw_exit_reinstates(self, small_layout):
        ms = MonitorState(TriggerState.EXEC, ArState.EXEC, 0b001, 2)
        new, _ = step_monitor(ms, snap(small_layout.sw_exit), False, small_layout)
        assert new.ar_state is ArState.REINSTATE and new.ar_en == all_set(3)
        assert all(is_available(new, i, 3) for i in range(3))

    def test_one_cycle_states(self, small_layout):
        for st_ in (ArState.REVOKE, ArState.REINSTATE):
            ms = MonitorState(TriggerState.EXEC, st_, 0b010, 0)
            new, _ = step_monitor(ms, snap(small_layout.sw_exit), False, small_layout)
            assert new.ar_state is ArState.EXEC and new.ar_en == 0b010

    def test_benign_self_loop(self, small_layout):
        ms = reset_state(3)
        new, out = step_monitor(ms, snap(t_pc(small_layout, 0), r_en=True, d_addr=0x0300),
                                False, small_layout)
        assert new == ms and not out.trigger and not out.assert_nmi and not out.block_write

    def test_rtos_violation_latches_none(self, small_layout):
        s = snap(small_layout.rtos.start, w_en=True, d_addr=small_layout.d_pair.start)
        new, out = step_monitor(reset_state(3), s, False, small_layout)
        assert new.trigger and new.latched_task is None and out.block_write
        after, _ = step_monitor(new, snap(small_layout.trampoline_entry, irq=True), False,
                                small_layout)
        assert after.ar_state is ArState.EXEC and after.ar_en == 7

    def test_reset(self, small_layout):
        ms = MonitorState(TriggerState.TRIGGER, ArState.REVOKE, 0, 1)
        new, _ = step_monitor(ms, snap(t_pc(small_layout, 0)), True, small_layout, reset=True)
        assert new == reset_state(3)

    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans(), st.booleans()), max_size=60))
    def test_bits_only_cleared_between_reinstates(self, steps):
        from conftest import make_layout
        lay = make_layout()
        pcs = [t_pc(lay, 0), t_pc(lay, 1), t_pc(lay, 2), lay.rtos.start,
               lay.trampoline_entry, lay.sw_exit]
        ms = reset_state(3)
        for k, vim, irq in steps:
            new, out = step_monitor(ms, snap(pcs[k], irq=irq), vim, lay)
            if new.ar_state is not ArState.REINSTATE:
                assert new.ar_en & ~ms.ar_en == 0
            assert out.assert_nmi == (not ms.trigger and new.trigger)
            ms = new
