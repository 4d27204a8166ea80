"""Finite-trace LTL over trace records (G/X fragment) and the builtin property suite.

Semantics on a trace of length n:

* ``G f`` holds at i iff f holds at every j >= i;
* ``X f`` at i < n-1 is f at i+1; at the final index it is vacuously true,
  and each such vacuous evaluation is counted in the report;
* ``not X f`` is read as ``X not f`` (weak next), so truncation never turns
  into a spurious failure.

Formulas are evaluated column-wise: every subformula becomes a boolean
vector over the whole trace.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .layout import MemoryLayout
from .trace import TraceRecord


class UnknownAtom(KeyError):
    pass


# --- AST ---------------------------------------------------------------------


class Formula:
    def __invert__(self):
        return Not(self)

    def __and__(self, other):
        return And((self, other))

    def __or__(self, other):
        return Or((self, other))

    def __rshift__(self, other):
        return Implies(self, other)


@dataclass(frozen=True)
class Const(Formula):
    value: bool

    def __str__(self):
        return "true" if self.value else "false"


@dataclass(frozen=True)
class Atom(Formula):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula

    def __str__(self):
        return f"!{_paren(self.arg)}"


@dataclass(frozen=True)
class And(Formula):
    args: tuple[Formula, ...]

    def __str__(self):
        return " & ".join(_paren(a) for a in self.args)


@dataclass(frozen=True)
class Or(Formula):
    args: tuple[Formula, ...]

    def __str__(self):
        return " | ".join(_paren(a) for a in self.args)


@dataclass(frozen=True)
class Implies(Formula):
    lhs: Formula
    rhs: Formula

    def __str__(self):
        return f"{_paren(self.lhs)} -> {_paren(self.rhs)}"


@dataclass(frozen=True)
class Iff(Formula):
    lhs: Formula
    rhs: Formula

    def __str__(self):
        return f"{_paren(self.lhs)} <-> {_paren(self.rhs)}"


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula

    def __str__(self):
        return f"X {_paren(self.arg)}"


@dataclass(frozen=True)
class Globally(Formula):
    arg: Formula

    def __str__(self):
        return f"G ({self.arg})"


def _paren(f: Formula) -> str:
    return str(f) if isinstance(f, (Atom, Const, Not, Next)) else f"({f})"


def all_of(fs) -> Formula:
    fs = tuple(fs)
    return fs[0] if len(fs) == 1 else And(fs)


def any_of(fs) -> Formula:
    fs = tuple(fs)
    return fs[0] if len(fs) == 1 else Or(fs)


def next_depth(f: Formula) -> int:
    if isinstance(f, Next):
        return 1 + next_depth(f.arg)
    if isinstance(f, (Not, Globally)):
        return next_depth(f.arg)
    if isinstance(f, (And, Or)):
        return max((next_depth(a) for a in f.args), default=0)
    if isinstance(f, (Implies, Iff)):
        return max(next_depth(f.lhs), next_depth(f.rhs))
    return 0


# --- atoms -------------------------------------------------------------------

_PARAM_ATOM = re.compile(r"^(task_id|latched_task)=(\d+|none)$")
_AR_BIT = re.compile(r"^ar_en\[(\d+)\]$")
_PC_IN_TASK = re.compile(r"^pc_in_T(\d+)$")
_PC_IN_REGION = re.compile(r"^pc_in_(TR|RTOS|SW|D|D_PAIR|UNMAPPED)$")
_BOOL_FIELDS = ("w_en", "r_en", "irq", "violation_im", "violation_pair", "trigger")


class _Columns:
    """Lazily extracted numpy columns of a trace."""

    def __init__(self, trace: Sequence[TraceRecord], layout: MemoryLayout | None):
        self.trace = trace
        self.layout = layout
        self.n = len(trace)
        self._cache: dict[str, np.ndarray] = {}

    def raw(self, name: str) -> np.ndarray:
        col = self._cache.get(name)
        if col is not None:
            return col
        t = self.trace
        if name in _BOOL_FIELDS:
            idx = TraceRecord._fields.index(name)
            col = np.fromiter((r[idx] for r in t), dtype=bool, count=self.n)
        elif name in ("pc", "d_addr", "ar_en"):
            idx = TraceRecord._fields.index(name)
            col = np.fromiter((r[idx] for r in t), dtype=np.int64, count=self.n)
        elif name in ("task_id", "latched_task"):
            idx = TraceRecord._fields.index(name)
            col = np.fromiter((-1 if r[idx] is None else r[idx] for r in t),
                              dtype=np.int64, count=self.n)
        elif name == "region":
            col = np.array([r.region.value for r in t], dtype=object)
        else:
            raise UnknownAtom(name)
        self._cache[name] = col
        return col

    def _need_layout(self, name: str) -> MemoryLayout:
        if self.layout is None:
            raise UnknownAtom(f"{name} (needs a layout)")
        return self.layout

    def atom(self, name: str) -> np.ndarray:
        if name in _BOOL_FIELDS:
            return self.raw(name)
        if m := _PARAM_ATOM.match(name):
            field, val = m.groups()
            return self.raw(field) == (-1 if val == "none" else int(val))
        if m := _AR_BIT.match(name):
            return ((self.raw("ar_en") >> int(m.group(1))) & 1).astype(bool)
        if m := _PC_IN_REGION.match(name):
            return self.raw("region") == m.group(1)
        if name == "latched_valid":
            return self.raw("latched_task") >= 0
        if name == "ar_all":
            lay = self._need_layout(name)
            return self.raw("ar_en") == lay.all_set
        if m := _PC_IN_TASK.match(name):
            lay = self._need_layout(name)
            i = int(m.group(1))
            if i >= lay.n_tasks:
                raise UnknownAtom(name)
            b = lay.task_bounds[i]
            pc = self.raw("pc")
            return (pc >= b.t_min) & (pc <= b.t_max)
        if name == "daddr_in_DPAIR":
            lay = self._need_layout(name)
            a = self.raw("d_addr")
            return (a >= lay.d_pair.start) & (a <= lay.d_pair.end)
        if name == "daddr_in_PMEM":
            lay = self._need_layout(name)
            a = self.raw("d_addr")
            return (a >= lay.pmem_range.start) & (a <= lay.pmem_range.end)
        if name == "pc_eq_sw_exit":
            lay = self._need_layout(name)
            return self.raw("pc") == lay.sw_exit
        raise UnknownAtom(name)


# --- evaluation --------------------------------------------------------------


@dataclass(frozen=True)
class CheckReport:
    formula_id: str
    verdict: str  # "pass" | "fail"
    first_fail_index: int | None
    vacuous_tail_count: int
    activations: int = 0
    formula: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def line(self) -> str:
        idx = "-" if self.first_fail_index is None else str(self.first_fail_index)
        return f"{self.formula_id},{self.verdict},{idx},{self.vacuous_tail_count}"


class _Evaluator:
    def __init__(self, cols: _Columns):
        self.cols = cols
        self.vacuous = 0

    def ev(self, f: Formula) -> np.ndarray:
        n = self.cols.n
        if isinstance(f, Const):
            return np.full(n, f.value, dtype=bool)
        if isinstance(f, Atom):
            return self.cols.atom(f.name)
        if isinstance(f, Not):
            if isinstance(f.arg, Next):
                return self.ev(Next(Not(f.arg.arg)))
            return ~self.ev(f.arg)
        if isinstance(f, And):
            out = np.ones(n, dtype=bool)
            for a in f.args:
                out &= self.ev(a)
            return out
        if isinstance(f, Or):
            out = np.zeros(n, dtype=bool)
            for a in f.args:
                out |= self.ev(a)
            return out
        if isinstance(f, Implies):
            return ~self.ev(f.lhs) | self.ev(f.rhs)
        if isinstance(f, Iff):
            return self.ev(f.lhs) == self.ev(f.rhs)
        if isinstance(f, Next):
            inner = self.ev(f.arg)
            out = np.empty(n, dtype=bool)
            out[:-1] = inner[1:]
            out[-1] = True
            self.vacuous += 1
            return out
        if isinstance(f, Globally):
            inner = self.ev(f.arg)
            return np.logical_and.accumulate(inner[::-1])[::-1]
        raise TypeError(f"not a formula: {f!r}")


def _premises(f: Formula) -> list[Formula]:
    if isinstance(f, Implies):
        return [f.lhs]
    if isinstance(f, And):
        return [p for a in f.args for p in _premises(a)]
    return []


def check(formula: Formula, trace: Sequence[TraceRecord], layout: MemoryLayout | None = None,
          formula_id: str = "") -> CheckReport:
    if not trace:
        raise ValueError("trace must be non-empty")
    if next_depth(formula) > 1:
        raise ValueError("X nesting deeper than 1 is not supported")
    cols = _Columns(trace, layout)
    ev = _Evaluator(cols)
    if isinstance(formula, Globally):
        body = ev.ev(formula.arg)
        ok = bool(body.all())
        first = None if ok else int(np.argmin(body))
        prem = _premises(formula.arg)
        activations = 0
        if prem:
            pe = _Evaluator(cols)
            hit = np.zeros(cols.n, dtype=bool)
            for p in prem:
                hit |= pe.ev(p)
            activations = int(hit.sum())
    else:
        ok = bool(ev.ev(formula)[0])
        first = None if ok else 0
        activations = 0
    return CheckReport(formula_id, "pass" if ok else "fail", first, ev.vacuous,
                       activations, str(formula))


# --- builtin properties ------------------------------------------------------

A = Atom
X = Next
G = Globally


def _per_task(n: int, make) -> Formula:
    return all_of(make(i) for i in range(n))


def builtin_suite(n_tasks: int) -> list[tuple[str, Formula]]:
    """The twelve builtin properties, expanded over task indices ``0..n-1``.

    The task-attribution properties (eq7, def1b) read the violating task from
    ``latched_task``: by the cycle ``trigger`` is high the PC has already
    vectored to the trampoline, so the live PC no longer names the task.
    """
    n = n_tasks
    trig = A("trigger")
    return [
        ("eq1", G(_per_task(n, lambda i: Iff(A(f"pc_in_T{i}"), A(f"task_id={i}"))))),
        ("eq2", G(((A("r_en") | A("w_en")) & A("daddr_in_DPAIR") & ~A("pc_in_SW"))
                  >> A("violation_pair"))),
        ("eq3", G((A("w_en") & A("daddr_in_PMEM") & ~A("pc_in_SW")) >> A("violation_pair"))),
        ("eq4", G(A("violation_pair") >> X(trig))),
        ("eq5", G(A("violation_im") >> X(trig))),
        ("eq6", G((trig & A("irq")) >> ~X(trig))),
        ("eq7", G(_per_task(n, lambda i: (trig & A(f"latched_task={i}"))
                            >> X(~A(f"ar_en[{i}]"))))),
        ("eq8", G(_per_task(n, lambda i: (A("pc_in_TR") & A(f"task_id={i}")
                                          & ~A(f"ar_en[{i}]")) >> X(trig)))),
        ("eq9", G(A("pc_eq_sw_exit") >> X(A("ar_all")))),
        ("def1a", G((A("violation_pair") | A("violation_im")) >> X(trig))),
        ("def1b", G(_per_task(n, lambda i: (trig & A(f"latched_task={i}"))
                              >> ~X(A(f"ar_en[{i}]"))))),
        ("def2", G(_per_task(n, lambda i: (A("pc_in_TR") & A(f"task_id={i}"))
                             >> (A(f"ar_en[{i}]") | X(trig))))),
    ]


def live_pc_variants(n_tasks: int) -> list[tuple[str, Formula]]:
    """eq7/def1b keyed on the live PC's task, as printed; see builtin_suite."""
    n = n_tasks
    trig = A("trigger")
    return [
        ("eq7_live", G(_per_task(n, lambda i: (A("pc_in_TR") & A(f"task_id={i}") & trig)
                                 >> X(~A(f"ar_en[{i}]"))))),
        ("def1b_live", G(_per_task(n, lambda i: (A("pc_in_TR") & A(f"task_id={i}") & trig)
                                   >> ~X(A(f"ar_en[{i}]"))))),
    ]


def check_all(trace: Sequence[TraceRecord], layout: MemoryLayout,
              props: Sequence[str] | None = None,
              include_live: bool = False) -> list[CheckReport]:
    suite = builtin_suite(layout.n_tasks)
    if include_live or (props and any(p.endswith("_live") for p in props)):
        suite += live_pc_variants(layout.n_tasks)
    if props:
        known = {pid for pid, _ in suite}
        unknown = [p for p in props if p not in known]
        if unknown:
            raise KeyError(f"unknown properties: {', '.join(unknown)}")
        suite = [(pid, f) for pid, f in suite if pid in props]
    return [check(f, trace, layout, pid) for pid, f in suite]


def render_reports(reports: Sequence[CheckReport]) -> str:
    lines = []
    for r in reports:
        where = "" if r.first_fail_index is None else f" at index {r.first_fail_index}"
        lines.append(f"{r.formula_id:11s} {r.verdict.upper():4s}{where}"
                     f"  (activations={r.activations}, vacuous_tail={r.vacuous_tail_count})")
    return "\n".join(lines)
