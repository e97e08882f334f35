"""Deliberately broken projections used to show the checks have teeth."""

from dataclasses import replace

from adaptchor.model import (
    BranchRecv, IfLocal, LocalPar, LocalSeq, LoopRecv, ScopeCoord, ScopeWait, WhileLocal,
)
from adaptchor.projector import RoleCodeMap


def _drop(a, done):
    if done[0]:
        return a
    if isinstance(a, (IfLocal, WhileLocal)) and a.notify:
        done[0] = True
        return replace(a, notify=a.notify[1:])
    if isinstance(a, (IfLocal, BranchRecv)):
        return replace(a, then=_drop(a.then, done), else_=_drop(a.else_, done))
    if isinstance(a, (WhileLocal, LoopRecv)):
        return replace(a, body=_drop(a.body, done))
    if isinstance(a, (ScopeCoord, ScopeWait)):
        return replace(a, original=_drop(a.original, done))
    if isinstance(a, (LocalSeq, LocalPar)):
        return type(a)(tuple(_drop(x, done) for x in a.items))
    return a


def drop_choice_notification(code: RoleCodeMap) -> RoleCodeMap:
    """Remove the first notified role of the first choice or loop found."""
    done = [False]
    programs = {r: _drop(p, done) for r, p in sorted(code.programs.items())}
    if not done[0]:
        raise ValueError("projection has no choice to mutate")
    return RoleCodeMap(programs, code.scopes)
