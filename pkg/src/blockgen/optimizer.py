"""Post-trace cleanup of straight-line pseudo-code.

Three passes run by default: literal folding, inlining of single-use scalar
definitions into their (sole) use site, and dead-code elimination. The
inlining pass is what collapses the def-per-operation trace into the compact
expressions of the generated listings; definitions pinned by a dtype
conversion, referenced from name slots (copies, calls, if conditions) or
used more than once always survive. Copy propagation of name-to-name
definitions exists but is off by default: the C compiler does that anyway.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import matval as mv
from .trace import (
    Bin, Call, CallFn, Cast, Cond, CopyMat, Def, ElemRef, IfExpr, Lit, Ref,
    SetElem, Store, Un, expr_refs,
)


class MalformedIR(Exception):
    pass


@dataclass
class OptOptions:
    dce: bool = True
    fold: bool = True
    inline: bool = True
    copy_propagation: bool = False


# ---------------------------------------------------------------------------
# expression rewriting


def _subst(e, name, replacement):
    if isinstance(e, Ref) and e.name == name:
        return replacement
    if isinstance(e, Bin):
        return Bin(e.op, _subst(e.a, name, replacement), _subst(e.b, name, replacement), e.overflow)
    if isinstance(e, Un):
        return Un(e.op, _subst(e.a, name, replacement))
    if isinstance(e, Cast):
        return Cast(e.dtype, _subst(e.a, name, replacement))
    if isinstance(e, CallFn):
        return CallFn(e.fn, tuple(_subst(a, name, replacement) for a in e.args))
    if isinstance(e, Cond):
        return Cond(_subst(e.cond, name, replacement),
                    _subst(e.a, name, replacement), _subst(e.b, name, replacement))
    return e


def _count_ref(e, name) -> int:
    if isinstance(e, Ref):
        return 1 if e.name == name else 0
    if isinstance(e, ElemRef):
        return 1 if e.name == name else 0
    if isinstance(e, Bin):
        return _count_ref(e.a, name) + _count_ref(e.b, name)
    if isinstance(e, Un):
        return _count_ref(e.a, name)
    if isinstance(e, Cast):
        return _count_ref(e.a, name)
    if isinstance(e, CallFn):
        return sum(_count_ref(a, name) for a in e.args)
    if isinstance(e, Cond):
        return _count_ref(e.cond, name) + _count_ref(e.a, name) + _count_ref(e.b, name)
    return 0


def fold_expr(e):
    if isinstance(e, Bin):
        a, b = fold_expr(e.a), fold_expr(e.b)
        if isinstance(a, Lit) and isinstance(b, Lit):
            try:
                if e.op in ("==", "!=", "<", "<=", ">", ">="):
                    opname = {"==": "eq", "!=": "ne", "<": "lt",
                              "<=": "le", ">": "gt", ">=": "ge"}[e.op]
                    return Lit(mv.compare(opname, a.value, b.value))
                opname = {"+": "add", "-": "sub", "*": "mul_elem", "/": "div_elem"}[e.op]
                return Lit(mv.elem_binop(opname, a.value, b.value))
            except mv.MatError:
                pass
        return Bin(e.op, a, b, e.overflow)
    if isinstance(e, Un):
        a = fold_expr(e.a)
        if isinstance(a, Lit):
            try:
                return Lit(mv.neg(a.value))
            except mv.MatError:
                pass
        return Un(e.op, a)
    if isinstance(e, Cast):
        a = fold_expr(e.a)
        if isinstance(a, Lit):
            return Lit(mv.convert(a.value, e.dtype))
        return Cast(e.dtype, a)
    if isinstance(e, CallFn):
        args = tuple(fold_expr(a) for a in e.args)
        if all(isinstance(a, Lit) for a in args):
            try:
                return Lit(mv.elem_math(e.fn, *[a.value for a in args]))
            except (mv.MatError, ValueError, OverflowError):
                pass
        return CallFn(e.fn, args)
    if isinstance(e, Cond):
        c = fold_expr(e.cond)
        a, b = fold_expr(e.a), fold_expr(e.b)
        if isinstance(c, Lit):
            return a if c.value.data[0] else b
        return Cond(c, a, b)
    return e


# ---------------------------------------------------------------------------
# instruction helpers


def _instr_exprs(i):
    if isinstance(i, (Def, Store)):
        return [i.expr]
    if isinstance(i, SetElem):
        return [i.expr]
    return []


def _instr_reads(i) -> set:
    out = set()
    for e in _instr_exprs(i):
        out |= expr_refs(e)
    if isinstance(i, CopyMat):
        out.add(i.src)
    if isinstance(i, Call):
        out.update(i.args)
    if isinstance(i, IfExpr):
        out.add(i.cond)
        out.update(i.then_call.args)
        out.update(i.else_call.args)
    return out


def _instr_writes(i) -> set:
    if isinstance(i, (Def, Store)):
        return {i.name}
    if isinstance(i, SetElem):
        return {i.name}
    if isinstance(i, CopyMat):
        return {i.dst}
    if isinstance(i, Call):
        return set(i.args)  # helper results / branch-visible buffers
    if isinstance(i, IfExpr):
        return set(i.then_call.args) | set(i.else_call.args)
    return set()


def _is_barrier(i) -> bool:
    return isinstance(i, (Call, IfExpr))


# ---------------------------------------------------------------------------
# passes


def _pass_fold(body):
    out = []
    for i in body:
        if isinstance(i, Def):
            out.append(Def(i.name, fold_expr(i.expr)))
        elif isinstance(i, Store):
            out.append(Store(i.name, fold_expr(i.expr)))
        elif isinstance(i, SetElem):
            out.append(SetElem(i.name, i.index, fold_expr(i.expr)))
        else:
            out.append(i)
    return out


def _pass_inline(body, locals_, nonlocals, pinned):
    """Fold each single-use scalar def into its use site, when safe."""
    changed = True
    while changed:
        changed = False
        for idx, instr in enumerate(body):
            if not isinstance(instr, Def) or instr.name in pinned:
                continue
            name = instr.name
            uses = []          # (position, slot-kind)
            blocked = False
            for pos in range(idx + 1, len(body)):
                later = body[pos]
                for e in _instr_exprs(later):
                    n = _count_ref(e, name)
                    if n:
                        uses.extend([(pos, "expr")] * n)
                if isinstance(later, CopyMat) and later.src == name:
                    uses.append((pos, "name"))
                if isinstance(later, Call) and name in later.args:
                    uses.append((pos, "name"))
                if isinstance(later, IfExpr) and (
                        later.cond == name
                        or name in later.then_call.args
                        or name in later.else_call.args):
                    uses.append((pos, "name"))
            if len(uses) != 1 or uses[0][1] != "expr":
                continue
            use_pos = uses[0][0]
            refs = expr_refs(instr.expr)
            for mid in range(idx + 1, use_pos):
                between = body[mid]
                if _is_barrier(between) and (
                        refs & nonlocals or refs & _instr_writes(between)):
                    blocked = True
                    break
                if refs & _instr_writes(between):
                    blocked = True
                    break
            if blocked:
                continue
            target = body[use_pos]
            if isinstance(target, Def):
                body[use_pos] = Def(target.name, _subst(target.expr, name, instr.expr))
            elif isinstance(target, Store):
                body[use_pos] = Store(target.name, _subst(target.expr, name, instr.expr))
            elif isinstance(target, SetElem):
                body[use_pos] = SetElem(target.name, target.index,
                                        _subst(target.expr, name, instr.expr))
            else:
                continue
            del body[idx]
            changed = True
            break
    return body


def _pass_dce(body, locals_):
    """Drop definitions whose names are never read afterwards, transitively.

    Only defs are removable: element stores and copies keep their targets
    alive even when nothing reads them (generated listings retain, e.g., the
    element stores of an otherwise-unused result array)."""
    live = set()
    out = []
    for instr in reversed(body):
        keep = True
        if isinstance(instr, Def):
            keep = instr.name in live or instr.name not in locals_
            if keep:
                live.discard(instr.name)
        if keep:
            live |= _instr_reads(instr)
            out.append(instr)
    out.reverse()
    return out


def _pass_copyprop(body, nonlocals, pinned):
    """Propagate names through pure name-copy defs (off by default)."""
    changed = True
    while changed:
        changed = False
        for idx, instr in enumerate(body):
            if not isinstance(instr, Def) or instr.name in pinned:
                continue
            if not isinstance(instr.expr, Ref):
                continue
            name, src = instr.name, instr.expr.name
            # region within which src provably still holds the copied value
            stop = len(body)
            for pos in range(idx + 1, len(body)):
                later = body[pos]
                if (src in _instr_writes(later) or name in _instr_writes(later)
                        or (_is_barrier(later) and src in nonlocals)):
                    stop = pos
                    break
            uses_outside = 0
            name_slot = False
            for pos in range(idx + 1, len(body)):
                later = body[pos]
                n = sum(_count_ref(e, name) for e in _instr_exprs(later))
                if n and pos >= stop:
                    uses_outside += n
                if isinstance(later, (CopyMat, Call, IfExpr)) and name in _instr_reads(later):
                    name_slot = True
            if uses_outside or name_slot:
                continue
            for pos in range(idx + 1, stop):
                later = body[pos]
                if isinstance(later, Def):
                    body[pos] = Def(later.name, _subst(later.expr, name, Ref(src)))
                elif isinstance(later, Store):
                    body[pos] = Store(later.name, _subst(later.expr, name, Ref(src)))
                elif isinstance(later, SetElem):
                    body[pos] = SetElem(later.name, later.index,
                                        _subst(later.expr, name, Ref(src)))
            del body[idx]
            changed = True
            break
    return body


def _validate(body, known):
    for instr in body:
        for name in _instr_reads(instr) | _instr_writes(instr):
            if name not in known:
                raise MalformedIR("dangling reference to {!r}".format(name))


def optimize_body(body, decls, params, statics, pinned, opts: OptOptions,
                  extra_names=()):
    """Optimize one straight-line instruction list; returns the new body and
    prunes unused local declarations. extra_names are free symbols accepted
    by validation only."""
    local_names = set(decls)
    nonlocals = set(params) | set(statics)
    _validate(body, local_names | nonlocals | set(extra_names))
    out = list(body)
    if opts.fold:
        out = _pass_fold(out)
    if opts.inline:
        out = _pass_inline(out, local_names, nonlocals, pinned)
    if opts.copy_propagation:
        out = _pass_copyprop(out, nonlocals, pinned)
    if opts.dce:
        out = _pass_dce(out, local_names)
    referenced = set()
    for instr in out:
        referenced |= _instr_reads(instr) | _instr_writes(instr)
    for name in list(decls):
        if name not in referenced:
            del decls[name]
    return out


def code_optimize(code, declarations, top_declarations, opts: OptOptions = None,
                  params=(), extra_names=(), pinned=()):
    """Clean one instruction sequence: fold literals, inline single-use
    definitions, remove dead code and unused declarations.

    declarations is the local pool (name -> Decl), top_declarations the
    static pool; both are pruned to what the surviving code references.
    """
    opts = opts or OptOptions()
    decls = dict(declarations)
    body = optimize_body(list(code), decls, params, top_declarations, set(pinned),
                         opts, extra_names=extra_names)
    referenced = set()
    for instr in body:
        referenced |= _instr_reads(instr) | _instr_writes(instr)
    top = {k: v for k, v in top_declarations.items() if k in referenced}
    return body, decls, top
