"""Emission conventions: declarations, literals, copies, helpers, the
dispatcher, and the scalar/array and dtype-mapping rules."""

import re

import pytest

from blockgen import matval as mv
from blockgen.matval import BOOL, DTYPES, F64, I8, I32, U16
from blockgen import cemit
from blockgen.cemit import (
    EmitConfig, SymTab, code_printer_c, decl_line, emit_helper, emit_program,
    expr_str, format_number, instr_lines,
)
from blockgen import trace as tr
from blockgen.trace import (
    Bin, CallFn, Cast, CallTarget, Cond, CopyMat, Decl, ElemRef, IfExpr, Lit,
    Param, Ref, SetElem, Store, Un,
)


def tab_with(**decls):
    t = SymTab()
    t.locals = {n: d for n, d in decls.items()}
    return t


def test_dtype_map_total():
    want = {"f64": "double", "bool": "int", "i8": "int8_t", "i16": "int16_t",
            "i32": "int32_t", "u8": "uint8_t", "u16": "uint16_t", "u32": "uint32_t"}
    for tag, d in DTYPES.items():
        assert cemit.ctype(d) == want[tag]


def test_number_formats():
    assert format_number(0.0, F64) == "0"
    assert format_number(-900.0, F64) == "-900"
    assert format_number(0.1, F64) == "0.1"
    assert format_number(2500.0, F64) == "2500"
    assert format_number(2.5e-05, F64) == "2.5e-05"
    assert format_number(True, BOOL) == "TRUE"
    assert format_number(False, BOOL) == "FALSE"
    assert format_number(-7, I32) == "-7"
    # shortest round-trip representation, up to 17 significant digits
    assert float(format_number(1 / 3, F64)) == 1 / 3


def test_decl_lines():
    assert decl_line(Decl("x", F64, 1, 1)) == "double x;"
    assert decl_line(Decl("x", F64, 1, 1, init=mv.scalar(5.0))) == "double x=5;"
    assert decl_line(Decl("v", F64, 2, 1)) == "double v[2];"
    assert decl_line(Decl("v", F64, 2, 2, init=mv.from_rows([[5, 0], [7, 8]]))) \
        == "double v[]={ 5, 7, 0, 8 };"
    assert decl_line(Decl("t", F64, 1, 1, init=mv.scalar(0.0), static=True)) \
        == "static double t=0;"
    assert decl_line(Decl("b", BOOL, 1, 2, init=mv.make(BOOL, 1, 2, [1, 0]))) \
        == "int b[]={ TRUE, FALSE };"


def test_expr_printing_conventions():
    tab = tab_with(t=Decl("t", F64, 1, 1))
    tab.args = {"inouts1": Param("inouts1", F64, 1, 1),
                "inouts2": Param("inouts2", F64, 2, 1)}
    assert expr_str(Ref("t"), tab) == "t"
    assert expr_str(Ref("inouts1"), tab) == "*inouts1"
    assert expr_str(ElemRef("z", 1), tab) == "(z[0])"
    assert expr_str(ElemRef("inouts2", 2), tab) == "(inouts2[1])"
    assert expr_str(Bin("-", Ref("t"), Ref("z")), tab) == "(t-z)"
    assert expr_str(Bin("/", ElemRef("a", 1), Ref("t")), tab) == "((a[0])/ t)"
    assert expr_str(Un("-", ElemRef("a", 3)), tab) == "(-(a[2]))"
    assert expr_str(Un("-", Ref("t")), tab) == "(-(t))"
    assert expr_str(CallFn("sqrt", (Bin("*", Ref("t"), Ref("t")),)), tab) \
        == "sqrt((t*t))"
    assert expr_str(CallFn("atan2", (ElemRef("z", 3), ElemRef("z", 1))), tab) \
        == "atan2((z[2]),(z[0]))"
    assert expr_str(Cast(I32, Ref("t")), tab) == "((int32_t)(t))"
    assert expr_str(Cond(Ref("c"), Ref("t"), Lit(mv.scalar(0.0))), tab) \
        == "(c? t : 0)"


def test_nested_binop_parenthesization():
    tab = SymTab()
    det = Bin("-", Bin("*", ElemRef("a", 1), ElemRef("a", 4)),
              Bin("*", ElemRef("a", 3), ElemRef("a", 2)))
    assert expr_str(det, tab) == "(((a[0])*(a[3]))-((a[2])*(a[1])))"


def test_store_and_setelem_lines():
    tab = tab_with(t=Decl("t", F64, 1, 1), v=Decl("v", F64, 2, 1))
    assert instr_lines(Store("t", Lit(mv.scalar(4.0))), tab) == ["t=4;"]
    assert instr_lines(SetElem("v", 2, Ref("t")), tab) == ["v[1]=t;"]
    # a 1x1 set prints as a plain assignment
    assert instr_lines(SetElem("t", 1, Lit(mv.scalar(4.0))), tab) == ["t=4;"]


def test_store_drops_matching_cast():
    tab = tab_with(t=Decl("t", I32, 1, 1), b=Decl("b", BOOL, 1, 1))
    assert instr_lines(Store("t", Cast(I32, Ref("b"))), tab) == ["t=b;"]
    assert instr_lines(Store("t", Cast(I8, Ref("b"))), tab) == ["t=((int8_t)(b));"]


def test_copy_size_rule():
    tab = tab_with(d2=Decl("d2", F64, 2, 1), s2=Decl("s2", F64, 2, 1),
                   d3=Decl("d3", F64, 3, 1), s3=Decl("s3", F64, 3, 1),
                   di=Decl("di", I32, 4, 1), si=Decl("si", I32, 4, 1))
    assert instr_lines(CopyMat("d2", "s2", 2), tab) == ["d2[0]=s2[0];", "d2[1]=s2[1];"]
    assert instr_lines(CopyMat("d3", "s3", 3), tab) == ["memcpy(d3,s3,3*sizeof(double));"]
    assert instr_lines(CopyMat("di", "si", 4), tab) == ["memcpy(di,si,4*sizeof(int32_t));"]


def test_call_argument_addressing():
    tab = tab_with(res=Decl("res", F64, 4, 1), a=Decl("a", F64, 4, 2),
                   d1=Decl("d1", F64, 1, 1), d2=Decl("d2", F64, 1, 1))
    tab.args = {"inouts1": Param("inouts1", F64, 1, 1)}
    tab.statics = {"z": tr.StaticDecl("z", F64, 8, 1, mv.zeros(F64, 8, 1))}
    (line,) = instr_lines(tr.Call("quote", ("res", "a", "d1", "d2")), tab)
    assert line == "quote(res,a,&d1,&d2);"
    (line,) = instr_lines(tr.Call("f", ("inouts1", "z")), tab)
    assert line == "f(inouts1,z);"


def test_if_expr_lines():
    tab = tab_with(c=Decl("c", BOOL, 1, 1))
    lines = instr_lines(IfExpr("c", CallTarget("f1", ("inouts1",)),
                               CallTarget("f2", ("inouts1",))), tab)
    assert lines[0] == "if (c) {"
    assert lines[1].strip() == "f1(inouts1);"
    assert "} else {" in lines
    assert lines[-1] == "}"


def test_helpers_exact_bodies():
    quote = emit_helper("quote")
    assert "res[j+(n1)*i]= a[i+(m1)*j];" in quote
    assert quote.startswith("void quote(double *res, double *a, double *dm,double *dn)")
    mult = emit_helper("mult")
    assert "res[i+m1*j]=0;" in mult  # accumulator zeroed before the k loop
    assert "res[i+(m1)*j] += a[i+(m1)*k]*b[k+(m2)*j];" in mult
    assert "matinv" in cemit.HELPER_SOURCES


def test_code_printer_with_free_names():
    lines = code_printer_c([SetElem("tmp_2", 1, ElemRef("tmp_1", 4))], {})
    assert lines == ["tmp_2[0]=(tmp_1[3]);"]


def _tiny_program(include_runtime=True, statics=True):
    from blockgen.directives import (codegen_init, finalize_program, inouts,
                                     inouts_insert, persistent_create,
                                     persistent_insert, start_function,
                                     end_function)
    ctx = codegen_init()
    pool = persistent_create(ctx)
    if statics:
        pool = persistent_insert(pool, "z_1", mv.scalar(0.0))
    io = inouts(ctx)
    io = inouts_insert(io, "inouts1", mv.scalar(0.0))
    io = inouts_insert(io, "inouts2", mv.scalar(0.0))
    start_function(ctx, "updateOutput5", io)
    if statics:
        pool = persistent_insert(pool, "z_1", io.inouts1)
    inouts_insert(io, "inouts2", mv.scalar(2.0))
    end_function(ctx, "updateOutput5", io)
    start_function(ctx, "updateState5", io)
    end_function(ctx, "updateState5", io)
    meta = {"ports": [
        {"name": "inouts1", "dtype": F64, "rows": 1, "cols": 1, "input": True},
        {"name": "inouts2", "dtype": F64, "rows": 1, "cols": 1, "input": False},
    ], "update_output": "updateOutput5", "update_state": "updateState5"}
    return finalize_program(ctx, init_name="initialize5", meta=meta)


def test_emit_program_runtime_dispatcher():
    text = emit_program(_tiny_program(), EmitConfig(block_id=5))
    assert "#include <scicos/scicos_block4.h>" in text
    assert "/* Start5*/" in text and "/* End5*/" in text
    assert "void toto5(scicos_block *block,int flag)" in text
    assert "if (flag == 1) {" in text
    assert "updateOutput5((GetRealInPortPtrs(block,1)),(GetRealOutPortPtrs(block,1)));" in text
    assert "else if (flag == 2) {" in text
    assert "else if (flag == 4) {" in text
    assert "initialize5();" in text
    assert "typedef int boolean;" in text


def test_emit_program_freestanding():
    text = emit_program(_tiny_program(), EmitConfig(block_id=5, include_runtime_header=False))
    assert "scicos" not in text
    assert "void toto5(int flag,double *inouts1,double *inouts2)" in text
    assert "updateOutput5(inouts1,inouts2);" in text


def test_emitted_scalar_array_rule():
    # every 1x1 declares as a scalar C type, everything else as an array,
    # and every parameter is a pointer
    text = emit_program(_tiny_program(), EmitConfig(block_id=5))
    for m in re.finditer(r"void (update\w+|initialize5)\(([^)]*)\)", text):
        params = m.group(2)
        if params:
            assert all("*" in p for p in params.split(","))
    assert "static double z_1=0;" in text


def test_program_without_persistents_has_empty_initialize():
    text = emit_program(_tiny_program(statics=False), EmitConfig(block_id=5))
    assert "void initialize5(){\n}" in text


def test_unknown_helper_rejected():
    with pytest.raises(KeyError):
        emit_helper("gemm")
