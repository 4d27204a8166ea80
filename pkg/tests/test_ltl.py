import pytest
from hypothesis import given, settings, strategies as st

from pairsim.isa import InstrClass
from pairsim.layout import Region
from pairsim.ltl import (
    And, Atom, Const, Globally, Iff, Implies, Next, Not, Or, UnknownAtom, builtin_suite,
    check, check_all, live_pc_variants,
)
from pairsim.monitor import ArState, TriggerState
from pairsim.trace import TraceRecord


def rec(i, **kw):
    base = dict(cycle=i, pc=0x8000, region=Region.RTOS_REGION, task_id=None, latched_task=None,
                instr_class=InstrClass.PLAIN, w_en=False, r_en=False, d_addr=0, irq=False,
                violation_im=False, violation_pair=False, trigger=False, ar_en=7,
                trigger_state=TriggerState.EXEC, ar_state=ArState.EXEC)
    base.update(kw)
    if base["trigger"]:
        base["trigger_state"] = TriggerState.TRIGGER
    return TraceRecord(**base)


def naive(f, trace, i):
    """Pointwise reference semantics."""
    n = len(trace)
    if isinstance(f, Const):
        return f.value
    if isinstance(f, Atom):
        return bool(getattr(trace[i], f.name))
    if isinstance(f, Not):
        if isinstance(f.arg, Next):
            return True if i == n - 1 else not naive(f.arg.arg, trace, i + 1)
        return not naive(f.arg, trace, i)
    if isinstance(f, And):
        return all(naive(a, trace, i) for a in f.args)
    if isinstance(f, Or):
        return any(naive(a, trace, i) for a in f.args)
    if isinstance(f, Implies):
        return (not naive(f.lhs, trace, i)) or naive(f.rhs, trace, i)
    if isinstance(f, Iff):
        return naive(f.lhs, trace, i) == naive(f.rhs, trace, i)
    if isinstance(f, Next):
        return True if i == n - 1 else naive(f.arg, trace, i + 1)
    if isinstance(f, Globally):
        return all(naive(f.arg, trace, j) for j in range(i, n))
    raise TypeError(f)


BOOLS = ("w_en", "r_en", "irq", "violation_im", "violation_pair", "trigger")


def prop_formulas():
    leaf = st.sampled_from([Atom(a) for a in BOOLS] + [Const(True), Const(False)])

    def extend(children):
        return st.one_of(
            children.map(Not),
            st.tuples(children, children).map(lambda t: And(t)),
            st.tuples(children, children).map(lambda t: Or(t)),
            st.tuples(children, children).map(lambda t: Implies(*t)),
            st.tuples(children, children).map(lambda t: Iff(*t)),
        )
    return st.recursive(leaf, extend, max_leaves=6)


def formulas():
    p = prop_formulas()
    with_next = st.one_of(p, p.map(Next), p.map(lambda f: Not(Next(f))),
                          st.tuples(p, p).map(lambda t: Implies(t[0], Next(t[1]))))
    return with_next.map(Globally)


traces = st.lists(st.fixed_dictionaries({a: st.booleans() for a in BOOLS}),
                  min_size=1, max_size=12).map(lambda rows: [rec(i, **r) for i, r in enumerate(rows)])


class TestSemantics:
    def test_true(self):
        r = check(Globally(Const(True)), [rec(0), rec(1)])
        assert r.passed and r.first_fail_index is None

    def test_eq5_counterexample(self):
        trace = [rec(0, violation_im=True), rec(1), rec(2)]
        f = Globally(Implies(Atom("violation_im"), Next(Atom("trigger"))))
        r = check(f, trace)
        assert r.verdict == "fail" and r.first_fail_index == 0

    def test_vacuous_tail(self):
        f = Globally(Implies(Atom("irq"), Next(Atom("trigger"))))
        r = check(f, [rec(0, irq=True)])
        assert r.passed and r.vacuous_tail_count == 1

    def test_negated_next_is_weak(self):
        r = check(Globally(Not(Next(Atom("trigger")))), [rec(0)])
        assert r.passed

    def test_unknown_atom(self):
        with pytest.raises(UnknownAtom):
            check(Globally(Atom("nonsense")), [rec(0)])

    def test_layout_atom_needs_layout(self):
        with pytest.raises(UnknownAtom):
            check(Globally(Atom("pc_in_T0")), [rec(0)])

    def test_deep_next_rejected(self):
        with pytest.raises(ValueError):
            check(Globally(Next(Next(Atom("irq")))), [rec(0)])

    def test_empty_trace(self):
        with pytest.raises(ValueError):
            check(Globally(Const(True)), [])

    def test_operator_sugar(self):
        a, b = Atom("irq"), Atom("trigger")
        assert (a >> b) == Implies(a, b)
        assert (~a) == Not(a)

    @settings(max_examples=300)
    @given(formulas(), traces)
    def test_matches_reference(self, f, trace):
        r = check(f, trace)
        pointwise = [naive(f.arg, trace, i) for i in range(len(trace))]
        assert r.passed == all(pointwise)
        if not r.passed:
            assert r.first_fail_index == pointwise.index(False)

    @given(formulas(), traces)
    def test_deterministic(self, f, trace):
        assert check(f, trace) == check(f, trace)


class TestSuite:
    def test_size_and_ids(self):
        ids = [i for i, _ in builtin_suite(3)]
        assert len(ids) == 12
        assert ids == ["eq1", "eq2", "eq3", "eq4", "eq5", "eq6", "eq7", "eq8", "eq9",
                       "def1a", "def1b", "def2"]

    def test_eq8_shape(self):
        f = dict(builtin_suite(2))["eq8"]
        text = str(f)
        assert "ar_en[1]" in text and "task_id=1" in text and "X" in text

    def test_def2_shape(self):
        text = str(dict(builtin_suite(2))["def2"])
        assert "pc_in_TR" in text and "ar_en[0]" in text and "X trigger" in text

    def test_live_variants(self):
        assert [i for i, _ in live_pc_variants(3)] == ["eq7_live", "def1b_live"]

    def test_eq1_catches_wrong_task_id(self, small_layout):
        pc = small_layout.task_bounds[1].t_min
        good = [rec(0, pc=pc, region=Region.TR, task_id=1)]
        bad = [rec(0, pc=pc, region=Region.TR, task_id=0)]
        f = dict(builtin_suite(3))["eq1"]
        assert check(f, good, small_layout).passed
        assert not check(f, bad, small_layout).passed

    def test_eq8_detects_reentry_without_trigger(self, small_layout):
        pc = small_layout.task_bounds[2].t_min
        trace = [rec(0, pc=pc, region=Region.TR, task_id=2, ar_en=0b011), rec(1)]
        reports = {r.formula_id: r for r in check_all(trace, small_layout)}
        assert not reports["eq8"].passed and not reports["def2"].passed

    def test_eq9_timing(self, small_layout):
        exit_pc = small_layout.sw_exit
        ok = [rec(0, pc=exit_pc, region=Region.SW_REGION, ar_en=1), rec(1, ar_en=7)]
        late = [rec(0, pc=exit_pc, region=Region.SW_REGION, ar_en=1), rec(1, ar_en=1),
                rec(2, ar_en=7)]
        f = dict(builtin_suite(3))["eq9"]
        assert check(f, ok, small_layout).passed
        assert check(f, late, small_layout).first_fail_index == 0

    def test_check_all_selection(self, small_layout):
        reports = check_all([rec(0)], small_layout, ["eq4", "def1b_live"])
        assert [r.formula_id for r in reports] == ["eq4", "def1b_live"]
        with pytest.raises(KeyError):
            check_all([rec(0)], small_layout, ["eq42"])

    def test_report_line(self):
        r = check(Globally(Const(True)), [rec(0)], formula_id="x")
        assert r.line() == "x,pass,-,0"
