"""Directive-level sessions: persistent pools, function arguments,
constants, expansion, copies and the conditional forms."""

import pytest

from blockgen import matval as mv
from blockgen.matval import BOOL, F64, I32
from blockgen.cemit import code_printer_c, render_core
from blockgen.directives import (
    CallTarget, UnknownName, codegen_finalize, codegen_init, code_insert,
    constant, end_function, finalize_program, if_cos, if_exp, inouts,
    inouts_insert, persistent_create, persistent_extract, persistent_insert,
    put_annotation, select_exp, start_function,
)
from blockgen.irinterp import Machine
from blockgen import trace as tr
from blockgen.trace import (
    Annot, Call, CopyMat, IfExpr, NestedFunction, NoOpenFunction, Store,
    UnbalancedFunction, bvarcopy, bvarempty, expand, numerics, symbolics,
)

from conftest import assert_close


def r13():
    return mv.from_rows([[1, 2, 3]])


def test_codegen_init_fresh():
    ctx = codegen_init()
    assert not ctx.module.body and ctx.counter == 0
    other = codegen_init()
    ctx.getunique()
    assert other.counter == 0


def session_4_1():
    """Persistent-pool session: x1 and x2 re-inserted inside foo, x3 unused."""
    ctx = codegen_init()
    states = persistent_create(ctx)
    states = persistent_insert(states, "x1", r13())
    states = persistent_insert(states, "x2", mv.scalar(7.0))
    states = persistent_insert(states, "x3", mv.from_rows([[1, 2, 3, 4, 5, 6]]))
    io = inouts(ctx)
    start_function(ctx, "foo", io)
    code_insert(ctx, "annotation", "copy [4:6] into x1 with memcpy")
    states = persistent_insert(states, "x1", mv.from_rows([[4, 5, 6]]))
    code_insert(ctx, "annotation", "copy with assign since x2 is 1x1")
    states = persistent_insert(states, "x2", mv.scalar(8.0))
    end_function(ctx, "foo", io)
    return ctx


def test_persistent_session_text():
    text = codegen_finalize(session_4_1())
    assert "static double x1[]={ 1, 2, 3 };" in text
    assert "static double x2=7;" in text
    assert "x3" not in text  # never used, no static emitted
    assert "memcpy(x1,tmp_1,3*sizeof(double));" in text
    assert "x2=8;" in text
    assert "void foo(){" in text
    assert "void initialize(){" in text
    assert "/* copy [4:6] into x1 with memcpy*/" in text


def test_persistent_session_initialize_restores_defaults():
    program = finalize_program(session_4_1())
    machine = Machine(program)
    machine.run_function("foo", [])
    assert list(machine.statics["x1"].data) == [4.0, 5.0, 6.0]
    assert machine.statics["x2"].scalar() == 8.0
    machine.run_init()
    assert list(machine.statics["x1"].data) == [1.0, 2.0, 3.0]
    assert machine.statics["x2"].scalar() == 7.0
    machine.run_init()  # idempotent
    assert machine.statics["x2"].scalar() == 7.0


def test_empty_session_finalize():
    text = codegen_finalize(codegen_init())
    assert "initialize" in text and "static" not in text


def test_unbalanced_function_detected():
    ctx = codegen_init()
    start_function(ctx, "foo", inouts(ctx))
    with pytest.raises(UnbalancedFunction):
        codegen_finalize(ctx)


def test_nested_and_mismatched_functions():
    ctx = codegen_init()
    io = inouts(ctx)
    start_function(ctx, "foo", io)
    with pytest.raises(NestedFunction):
        start_function(ctx, "bar", io)
    with pytest.raises(NoOpenFunction):
        end_function(ctx, "bar", io)
    end_function(ctx, "foo", io)
    with pytest.raises(NoOpenFunction):
        end_function(ctx, "foo", io)


def test_persistent_reinsert_shape_checks():
    ctx = codegen_init()
    pool = persistent_create(ctx)
    pool = persistent_insert(pool, "x1", r13())
    with pytest.raises(mv.ShapeMismatch):
        persistent_insert(pool, "x1", mv.scalar(1.0))
    with pytest.raises(mv.DtypeMismatch):
        persistent_insert(pool, "x1", mv.make(I32, 1, 3, [1, 2, 3]))


def test_persistent_extract():
    ctx = codegen_init()
    pool = persistent_create(ctx)
    pool = persistent_insert(pool, "x1", r13())
    h = persistent_extract(pool, "x1")
    assert h.sym and h.name == "x1" and h.shape == (1, 3)
    with pytest.raises(UnknownName):
        persistent_extract(pool, "nope")


def test_inouts_session_copies_into_argument():
    """Argument session: x1 filled from the argument, then the argument
    overwritten with a constant."""
    ctx = codegen_init()
    states = persistent_create(ctx)
    states = persistent_insert(states, "x1", r13())
    io = inouts(ctx)
    io = inouts_insert(io, "inouts1", mv.from_rows([[4, 8, 9]]))
    start_function(ctx, "foo", io)
    states = persistent_insert(states, "x1", io.inouts1)
    io = inouts_insert(io, "inouts1", mv.from_rows([[7, 8, 9]]))
    end_function(ctx, "foo", io)
    program = finalize_program(ctx)
    text = render_core(program)
    assert "void foo(double *inouts1){" in text
    assert "memcpy(x1,inouts1,3*sizeof(double));" in text
    machine = Machine(program)
    machine.run_init()
    (arg,) = machine.run_function("foo", [mv.from_rows([[4.0, 8.0, 9.0]])])
    assert list(machine.statics["x1"].data) == [4.0, 8.0, 9.0]
    assert list(arg.data) == [7.0, 8.0, 9.0]


def test_scalar_argument_reinsert_uses_deref():
    ctx = codegen_init()
    io = inouts(ctx)
    io = inouts_insert(io, "inouts1", mv.scalar(0.0))
    start_function(ctx, "foo", io)
    inouts_insert(io, "inouts1", mv.scalar(7.0))
    end_function(ctx, "foo", io)
    text = render_core(finalize_program(ctx))
    assert "*inouts1=7;" in text


def test_argument_mismatch_errors():
    ctx = codegen_init()
    io = inouts(ctx)
    io = inouts_insert(io, "inouts1", mv.scalar(0.0))
    with pytest.raises(mv.ShapeMismatch):
        inouts_insert(io, "inouts1", r13())


def test_constant_prints_column_major():
    ctx = codegen_init()
    constant(ctx, mv.from_rows([[5, 0], [7, 8]]), "x1")
    lines = code_printer_c(ctx.module.body, ctx.module.decls)
    assert lines == ["double x1[]={ 5, 7, 0, 8 };"]


def test_constant_scalar_and_bool():
    ctx = codegen_init()
    constant(ctx, mv.scalar(5.0), "s")
    constant(ctx, mv.make(BOOL, 1, 2, [True, False]), "b")
    lines = code_printer_c(ctx.module.body, ctx.module.decls)
    assert "double s=5;" in lines
    assert "int b[]={ TRUE, FALSE };" in lines


def test_expand_bool_replication():
    ctx = codegen_init()
    v = expand(ctx, numerics(mv.scalar(True, BOOL)), 2, 3)
    lines = code_printer_c(ctx.module.body, ctx.module.decls)
    assert lines == ["int {}[]={{ TRUE, TRUE, TRUE, TRUE, TRUE, TRUE }};".format(v.name)]
    assert v.shape == (2, 3) and v.dtype == BOOL


def test_expand_symbolic_sets_every_element():
    ctx = codegen_init()
    x = symbolics(ctx, mv.scalar(0.0), "x")
    v = expand(ctx, x, 2, 2)
    sets = [i for i in ctx.module.body if isinstance(i, tr.SetElem)]
    assert len(sets) == 4 and all(s.name == v.name for s in sets)


def test_expand_1x1_is_plain_copy():
    ctx = codegen_init()
    v = expand(ctx, numerics(mv.scalar(3.0)), 1, 1)
    assert v.shape == (1, 1)
    assert ctx.module.decls[v.name].init.scalar() == 3.0


def test_bvarcopy_numeric_source_text():
    ctx = codegen_init()
    src = mv.from_rows([[0.25, 0.5, 0.75], [1.0, 1.25, 1.5]])
    v = bvarcopy(ctx, numerics(src))
    lines = code_printer_c(ctx.module.body, ctx.module.decls)
    assert any(line.startswith("memcpy({},".format(v.name)) for line in lines)
    assert sum("[]={" in line for line in lines) == 2  # source and copy decls


def test_put_annotation_format():
    ctx = codegen_init()
    put_annotation(ctx, "Gain block begins.")
    assert code_printer_c(ctx.module.body, {}) == ["/* Gain block begins.*/"]


# ---------------------------------------------------------------------------
# conditionals


def test_if_exp_numeric_selects():
    ctx = codegen_init()
    a, b = numerics(mv.scalar(1.0)), numerics(mv.scalar(2.0))
    assert if_exp(ctx, numerics(mv.scalar(True, BOOL)), a, b) is a
    assert if_exp(ctx, numerics(mv.scalar(False, BOOL)), a, b) is b
    assert not ctx.module.body


def test_if_exp_shape_mismatch():
    ctx = codegen_init()
    with pytest.raises(mv.ShapeMismatch):
        if_exp(ctx, numerics(mv.scalar(True, BOOL)),
               numerics(mv.zeros(F64, 2, 1)), numerics(mv.zeros(F64, 1, 2)))


def test_if_exp_symbolic_equals_numeric_select():
    # oracle: evaluating the recorded select must match picking a branch
    # numerically, for both condition values
    from conftest import run_traced, trace_op
    for cond_value in (True, False):
        program, template = trace_op(
            lambda c, x, y: if_exp(c.ctx, c, x + y, x - y),
            [mv.scalar(cond_value, BOOL), mv.scalar(5.0), mv.scalar(3.0)])
        got = run_traced(program, template,
                         [mv.scalar(cond_value, BOOL), mv.scalar(5.0), mv.scalar(3.0)])
        assert got.scalar() == (8.0 if cond_value else 2.0)


def test_if_exp_symbolic_matrix():
    from conftest import run_traced, trace_op
    a = mv.from_rows([[1.0, 2.0]])
    b = mv.from_rows([[3.0, 4.0]])
    for cond_value in (True, False):
        program, template = trace_op(
            lambda c, x, y: if_exp(c.ctx, c, x, y),
            [mv.scalar(cond_value, BOOL), a, b])
        got = run_traced(program, template, [mv.scalar(cond_value, BOOL), a, b])
        assert got == (a if cond_value else b)


def test_select_exp_numeric():
    ctx = codegen_init()
    choices = [numerics(mv.scalar(float(k))) for k in (10, 20, 30)]
    assert select_exp(ctx, numerics(mv.scalar(2.0)), *choices).value.scalar() == 20.0
    with pytest.raises(IndexError):
        select_exp(ctx, numerics(mv.scalar(4.0)), *choices)


def test_select_exp_symbolic_matches_numeric():
    from conftest import run_traced, trace_op
    choices = [11.0, 22.0, 33.0]
    for sel in (1, 2, 3):
        program, template = trace_op(
            lambda s: select_exp(s.ctx, s, *[numerics(mv.make(I32, 1, 1, [int(c)]))
                                             for c in choices]),
            [mv.make(I32, 1, 1, [sel])])
        got = run_traced(program, template, [mv.make(I32, 1, 1, [sel])])
        assert got.scalar() == int(choices[sel - 1])


def test_if_cos_symbolic_emits_guarded_calls():
    ctx = codegen_init()
    x = symbolics(ctx, mv.zeros(I32, 1, 1), "x")
    f1 = CallTarget("thenfn", ("inouts1",))
    f2 = CallTarget("elsefn", ("inouts1",))
    assert if_cos(ctx, x, f1, f2) is None
    kinds = [type(i).__name__ for i in ctx.module.body]
    assert kinds[-1] == "IfExpr"
    guard = ctx.module.body[-1]
    # the test definition (x > 0) precedes the if
    test_def = [i for i in ctx.module.body if isinstance(i, tr.Def)][-1]
    assert guard.cond == test_def.name
    assert guard.then_call.fn == "thenfn" and guard.else_call.fn == "elsefn"


def test_if_cos_numeric_partial_evaluates():
    for value, expected in ((1, "thenfn"), (0, "elsefn"), (-2, "elsefn")):
        ctx = codegen_init()
        f1, f2 = CallTarget("thenfn", ()), CallTarget("elsefn", ())
        if_cos(ctx, numerics(mv.make(I32, 1, 1, [value])), f1, f2)
        (call,) = [i for i in ctx.module.body if isinstance(i, Call)]
        assert call.fn == expected
        assert not [i for i in ctx.module.body if isinstance(i, IfExpr)]
