"""Task-aware integrity monitor: shadow stacks, indirect-branch tables, stack isolation.

State is immutable; every operation returns a new :class:`ImState`.
Calls and returns made outside any task (RTOS, trusted software) are not
tracked.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from types import MappingProxyType
from typing import Mapping

from .isa import InstrClass, SignalSnapshot

DEFAULT_CAPACITY = 32


@dataclass(frozen=True)
class StackRegion:
    """Descending stack occupying ``[limit, base)``."""

    base: int
    limit: int

    def __contains__(self, addr: int) -> bool:
        return self.limit <= addr < self.base


@dataclass(frozen=True)
class ImState:
    stacks: tuple[tuple[int, ...], ...]
    ibts: tuple[Mapping[int, frozenset[int]], ...]
    regions: tuple[StackRegion | None, ...]
    capacity: int = DEFAULT_CAPACITY

    @property
    def n_tasks(self) -> int:
        return len(self.stacks)

    def depth(self, task: int) -> int:
        return len(self.stacks[task])


def new_im(n_tasks: int, ibts: Mapping[int, Mapping[int, frozenset[int]]] | None = None,
           regions: Mapping[int, tuple[int, int]] | None = None,
           capacity: int = DEFAULT_CAPACITY) -> ImState:
    ibts = ibts or {}
    regions = regions or {}
    for a in regions:
        for b in regions:
            if a < b:
                ra, rb = StackRegion(*regions[a]), StackRegion(*regions[b])
                if ra.limit < rb.base and rb.limit < ra.base:
                    raise ValueError(f"stack regions of tasks {a} and {b} overlap")
    return ImState(
        stacks=tuple(() for _ in range(n_tasks)),
        ibts=tuple(MappingProxyType(dict(ibts.get(i, {}))) for i in range(n_tasks)),
        regions=tuple(StackRegion(*regions[i]) if i in regions else None
                      for i in range(n_tasks)),
        capacity=capacity,
    )


def _with_stack(im: ImState, task: int, stack: tuple[int, ...]) -> ImState:
    stacks = list(im.stacks)
    stacks[task] = stack
    return replace(im, stacks=tuple(stacks))


def im_call(im: ImState, task: int, ret_addr: int) -> tuple[ImState, bool]:
    stack = im.stacks[task]
    if len(stack) >= im.capacity:
        return im, True
    return _with_stack(im, task, stack + (ret_addr,)), False


def im_ret(im: ImState, task: int, actual_target: int) -> tuple[ImState, bool]:
    stack = im.stacks[task]
    if not stack:
        return im, True
    return _with_stack(im, task, stack[:-1]), stack[-1] != actual_target


def im_branch(im: ImState, task: int, site: int, target: int) -> bool:
    targets = im.ibts[task].get(site)
    return targets is None or target not in targets


def im_data(im: ImState, task: int, w_en: bool, d_addr: int) -> bool:
    if not w_en:
        return False
    return any(r is not None and d_addr in r
               for j, r in enumerate(im.regions) if j != task)


def reset_task(im: ImState, task: int) -> ImState:
    return _with_stack(im, task, ())


def evaluate(im: ImState, snapshot: SignalSnapshot, task: int | None) -> tuple[ImState, bool]:
    """violation_IM for one retired instruction of ``task``."""
    if task is None:
        return im, False
    cls = snapshot.instr_class
    violation = False
    if cls is InstrClass.CALL or cls is InstrClass.CALL_INDIRECT:
        if cls is InstrClass.CALL_INDIRECT:
            violation = im_branch(im, task, snapshot.pc, snapshot.next_pc)
        im, overflow = im_call(im, task, (snapshot.pc + 4) & 0xFFFF)
        violation = violation or overflow
    elif cls is InstrClass.RETURN:
        im, violation = im_ret(im, task, snapshot.next_pc)
    elif cls is InstrClass.JUMP_INDIRECT:
        violation = im_branch(im, task, snapshot.pc, snapshot.next_pc)
    if snapshot.w_en and im_data(im, task, True, snapshot.d_addr):
        violation = True
    return im, violation
