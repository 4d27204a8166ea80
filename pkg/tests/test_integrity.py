import pytest
from hypothesis import given, strategies as st

from pairsim.integrity import (
    evaluate, im_branch, im_call, im_data, im_ret, new_im, reset_task,
)
from pairsim.isa import InstrClass, SignalSnapshot


def fresh(**kw):
    return new_im(2, ibts={0: {0x8200: frozenset({0x8240, 0x8280})}},
                  regions={0: (0x0600, 0x0500), 1: (0x0700, 0x0600)}, **kw)


class TestShadowStack:
    def test_push(self):
        im, v = im_call(fresh(), 0, 0x8024)
        assert not v and im.stacks[0] == (0x8024,) and im.stacks[1] == ()

    def test_overflow(self):
        im = fresh(capacity=4)
        for k in range(4):
            im, v = im_call(im, 0, 0x8000 + 4 * k)
            assert not v
        _, v = im_call(im, 0, 0x9000)
        assert v

    def test_nested_order(self):
        im = fresh()
        for a in (0x8010, 0x8020, 0x8030):
            im, _ = im_call(im, 1, a)
        assert im.stacks[1] == (0x8010, 0x8020, 0x8030)

    def test_matched_return(self):
        im, _ = im_call(fresh(), 0, 0x8024)
        im, v = im_ret(im, 0, 0x8024)
        assert not v and im.depth(0) == 0

    def test_corrupted_return(self):
        im, _ = im_call(fresh(), 0, 0x8024)
        _, v = im_ret(im, 0, 0x9000)
        assert v

    def test_underflow(self):
        _, v = im_ret(fresh(), 0, 0x8024)
        assert v

    def test_reset_task(self):
        im, _ = im_call(fresh(), 0, 0x8024)
        im, _ = im_call(im, 1, 0x8824)
        im = reset_task(im, 0)
        assert im.depth(0) == 0 and im.depth(1) == 1

    @given(st.lists(st.booleans(), max_size=80))
    def test_depth_matches_counter(self, ops):
        im = fresh(capacity=32)
        depth = 0
        for k, is_call in enumerate(ops):
            if is_call:
                im, v = im_call(im, 0, 0x8000 + 4 * depth)
                assert v == (depth >= 32)
                depth = min(depth + 1, 32) if not v else depth
            else:
                target = 0x8000 + 4 * (depth - 1) if depth else 0
                im, v = im_ret(im, 0, target)
                assert v == (depth == 0)
                depth = max(depth - 1, 0)
            assert im.depth(0) == depth


class TestBranchTable:
    def test_member(self):
        assert not im_branch(fresh(), 0, 0x8200, 0x8240)

    def test_non_member(self):
        assert im_branch(fresh(), 0, 0x8200, 0x8244)

    def test_unknown_site(self):
        assert im_branch(fresh(), 0, 0x8300, 0x8240)

    def test_other_task_table(self):
        assert im_branch(fresh(), 1, 0x8200, 0x8240)

    @given(st.integers(0, 0xFFFF))
    def test_declaring_target_flips(self, target):
        im = new_im(1, ibts={0: {0x8200: frozenset({target})}})
        assert not im_branch(im, 0, 0x8200, target)


class TestStackIsolation:
    def test_own_stack(self):
        assert not im_data(fresh(), 0, True, 0x05F0)

    def test_other_stack(self):
        assert im_data(fresh(), 0, True, 0x0680)

    def test_reads_allowed(self):
        assert not im_data(fresh(), 0, False, 0x0680)

    def test_overlapping_regions_rejected(self):
        with pytest.raises(ValueError):
            new_im(2, regions={0: (0x0600, 0x0500), 1: (0x0650, 0x05F0)})


class TestEvaluate:
    def snap(self, cls, pc, next_pc, w_en=False, d_addr=0):
        return SignalSnapshot(0, pc, w_en, False, d_addr, False, cls, next_pc)

    def test_rtos_context_bypasses(self):
        im = fresh()
        im2, v = evaluate(im, self.snap(InstrClass.RETURN, 0x8000, 0x9999), None)
        assert im2 is im and not v

    def test_call_then_bad_return(self):
        im, v = evaluate(fresh(), self.snap(InstrClass.CALL, 0x8100, 0x8140, True, 0x05FE), 0)
        assert not v and im.stacks[0] == (0x8104,)
        _, v = evaluate(im, self.snap(InstrClass.RETURN, 0x8144, 0x8108), 0)
        assert v

    def test_indirect_call_checks_table(self):
        ok = self.snap(InstrClass.CALL_INDIRECT, 0x8200, 0x8280, True, 0x05FE)
        bad = self.snap(InstrClass.CALL_INDIRECT, 0x8200, 0x8284, True, 0x05FE)
        assert not evaluate(fresh(), ok, 0)[1]
        assert evaluate(fresh(), bad, 0)[1]

    def test_cross_stack_store(self):
        assert evaluate(fresh(), self.snap(InstrClass.STORE, 0x8100, 0x8104, True, 0x0680), 0)[1]
