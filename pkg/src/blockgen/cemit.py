"""Pretty-print optimized pseudo-code as a C translation unit.

Conventions mirrored from the generated listings: 1x1 values declare as
scalar C variables, everything else as arrays; function arguments are always
pointers; 1-based trace indices shift to 0-based; element reads print
parenthesized, bare names do not; copies of one element are assignments, of
two elements a pair of assignments, of three or more a memcpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .matval import Dtype, MatValue, F64
from .trace import (
    Annot, Bin, Call, CallFn, Cast, Cond, CopyMat, Decl, Def, ElemRef, IfExpr,
    Lit, Program, Ref, SetElem, Store, Un,
)


class UnsupportedInstr(Exception):
    pass


COPY_UNROLL_LIMIT = 2  # copies of more elements than this use memcpy


@dataclass
class EmitConfig:
    block_id: int = 1000
    entry_name: str = None
    include_runtime_header: bool = True
    helper_emission: str = "on_demand"  # helpers print only when a trace used them

    def __post_init__(self):
        if self.block_id < 0:
            raise ValueError("block_id must be nonnegative")
        if self.entry_name is None:
            self.entry_name = "toto{}".format(self.block_id)


def ctype(d: Dtype) -> str:
    return d.ctype


def format_number(v, dtype: Dtype) -> str:
    if dtype.is_bool:
        return "TRUE" if v else "FALSE"
    if dtype.is_float:
        if v == int(v) and abs(v) < 1e16:
            return str(int(v))
        return repr(v)
    return str(v)


def format_init_list(value: MatValue) -> str:
    return "{ " + ", ".join(format_number(v, value.dtype) for v in value.data) + " }"


# ---------------------------------------------------------------------------
# name resolution


@dataclass
class SymTab:
    """Storage classes for every name visible inside one function."""
    args: dict = field(default_factory=dict)     # name -> Param
    locals: dict = field(default_factory=dict)   # name -> Decl
    statics: dict = field(default_factory=dict)  # name -> StaticDecl

    def is_arg(self, name):
        return name in self.args

    def is_scalar(self, name):
        for pool in (self.args, self.locals, self.statics):
            if name in pool:
                return pool[name].is_scalar
        return False  # free names keep their subscripts

    def dtype_of(self, name):
        for pool in (self.args, self.locals, self.statics):
            if name in pool:
                return pool[name].dtype
        return F64


def _ref_str(name: str, tab: SymTab) -> str:
    if tab.is_arg(name) and tab.is_scalar(name):
        return "*" + name
    return name


def _addr_str(name: str, tab: SymTab) -> str:
    """Pass-by-address form for call arguments."""
    if tab.is_arg(name):
        return name
    if tab.is_scalar(name):
        return "&" + name
    return name


# ---------------------------------------------------------------------------
# expressions


def expr_str(e, tab: SymTab) -> str:
    if isinstance(e, Lit):
        return format_number(e.value.data[0], e.value.dtype)
    if isinstance(e, Ref):
        return _ref_str(e.name, tab)
    if isinstance(e, ElemRef):
        return "({}[{}])".format(e.name, e.index - 1)
    if isinstance(e, Bin):
        sep = "/ " if e.op == "/" else e.op
        return "({}{}{})".format(expr_str(e.a, tab), sep, expr_str(e.b, tab))
    if isinstance(e, Un):
        inner = expr_str(e.a, tab)
        if not inner.startswith("("):
            inner = "(" + inner + ")"
        return "({}{})".format(e.op, inner)
    if isinstance(e, CallFn):
        return "{}({})".format(e.fn, ",".join(expr_str(a, tab) for a in e.args))
    if isinstance(e, Cast):
        return "(({})({}))".format(ctype(e.dtype), expr_str(e.a, tab))
    if isinstance(e, Cond):
        return "({}? {} : {})".format(expr_str(e.cond, tab), expr_str(e.a, tab),
                                      expr_str(e.b, tab))
    raise UnsupportedInstr("unknown expression {!r}".format(e))


def _assign_target(name: str, index, tab: SymTab) -> str:
    if index is None or tab.is_scalar(name):
        return _ref_str(name, tab)
    return "{}[{}]".format(name, index - 1)


def _store_rhs(e, dst_dtype: Dtype, tab: SymTab) -> str:
    # a top-level cast to the destination dtype is C's implicit conversion
    if isinstance(e, Cast) and e.dtype == dst_dtype:
        e = e.a
    return expr_str(e, tab)


# ---------------------------------------------------------------------------
# instructions


def instr_lines(i, tab: SymTab):
    if isinstance(i, Annot):
        return ["/* {}*/".format(i.text)]
    if isinstance(i, Def):
        return ["{}={};".format(_ref_str(i.name, tab), expr_str(i.expr, tab))]
    if isinstance(i, Store):
        rhs = _store_rhs(i.expr, tab.dtype_of(i.name), tab)
        return ["{}={};".format(_assign_target(i.name, None, tab), rhs)]
    if isinstance(i, SetElem):
        rhs = _store_rhs(i.expr, tab.dtype_of(i.name), tab)
        return ["{}={};".format(_assign_target(i.name, i.index, tab), rhs)]
    if isinstance(i, CopyMat):
        if i.n <= COPY_UNROLL_LIMIT:
            return ["{}[{}]={}[{}];".format(i.dst, k, i.src, k) for k in range(i.n)]
        return ["memcpy({},{},{}*sizeof({}));".format(i.dst, i.src, i.n,
                                                      ctype(tab.dtype_of(i.dst)))]
    if isinstance(i, Call):
        return ["{}({});".format(i.fn, ",".join(_addr_str(a, tab) for a in i.args))]
    if isinstance(i, IfExpr):
        lines = ["if ({}) {{".format(_ref_str(i.cond, tab))]
        lines.append("  {}({});".format(i.then_call.fn,
                                        ",".join(_addr_str(a, tab) for a in i.then_call.args)))
        lines.append("} else {")
        lines.append("  {}({});".format(i.else_call.fn,
                                        ",".join(_addr_str(a, tab) for a in i.else_call.args)))
        lines.append("}")
        return lines
    raise UnsupportedInstr("unknown instruction {!r}".format(i))


def decl_line(d: Decl) -> str:
    prefix = "static " if d.static else ""
    if d.is_scalar:
        if d.init is not None:
            return "{}{} {}={};".format(prefix, ctype(d.dtype), d.name,
                                        format_number(d.init.data[0], d.dtype))
        return "{}{} {};".format(prefix, ctype(d.dtype), d.name)
    if d.init is not None:
        return "{}{} {}[]={};".format(prefix, ctype(d.dtype), d.name,
                                      format_init_list(d.init))
    return "{}{} {}[{}];".format(prefix, ctype(d.dtype), d.name, d.size)


def static_line(s) -> str:
    if s.is_scalar:
        return "static {} {}={};".format(ctype(s.dtype), s.name,
                                         format_number(s.default.data[0], s.dtype))
    return "static {} {}[]={};".format(ctype(s.dtype), s.name,
                                       format_init_list(s.default))


def code_printer_c(code, declarations, statics=None, params=None):
    """One line per declaration and instruction, in order."""
    tab = SymTab()
    if isinstance(declarations, dict):
        tab.locals = dict(declarations)
    if statics:
        tab.statics = dict(statics)
    if params:
        tab.args = {p.name: p for p in params}
    lines = []
    if isinstance(declarations, dict):
        for d in declarations.values():
            lines.append(decl_line(d))
    for instr in code:
        lines.extend(instr_lines(instr, tab))
    return lines


def render_function(fn, statics, indent="  ") -> str:
    tab = SymTab(args={p.name: p for p in fn.params},
                 locals=dict(fn.decls),
                 statics=dict(statics))
    params = ",".join("{} *{}".format(ctype(p.dtype), p.name) for p in fn.params)
    out = ["void {}({}){{".format(fn.name, params)]
    for d in fn.decls.values():
        out.append(indent + decl_line(d))
    for instr in fn.body:
        for line in instr_lines(instr, tab):
            out.append(indent + line)
    out.append("}")
    return "\n".join(out)


def render_core(program: Program) -> str:
    """Statics, the initialize function and the recorded functions:
    the shape returned by the finalize directive."""
    statics = {s.name: s for s in program.statics}
    parts = []
    if program.statics:
        parts.append("\n".join(static_line(s) for s in program.statics))
    parts.append(render_function(program.init_fn, statics))
    for fn in program.functions:
        parts.append(render_function(fn, statics))
    return "\n\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# fixed runtime helpers (double-typed; dimensions passed by address)


HELPER_SOURCES = {
    "quote": """\
void quote(double *res, double *a, double *dm,double *dn)
{
 int i,j, m1=(int) (*dm), n1 = (int) (*dn) ;
 for (i = 0 ; i < (m1); i++)
   for (j = 0 ; j < (n1); j++)
     {
       res[j+(n1)*i]= a[i+(m1)*j];
     }
}""",
    "mult": """\
void mult(double *res, double *a, double *b,double *md1,double *nd1,double *md2,double *nd2)
{
 int i,j,k,m1=(int) (*md1),n1= (int) (*nd1),m2= (int) (*md2),n2=(int) (*nd2);
 for (i = 0 ; i < m1; i++)
   for (j = 0 ; j < n2; j++)
     {
       res[i+m1*j]=0;
       for (k = 0 ; k < n1; k++)
         res[i+(m1)*j] += a[i+(m1)*k]*b[k+(m2)*j];
     }
}""",
    "matinv": """\
void matinv(double *res, double *a, double *dn)
{
 int i,j,k,piv,n=(int) (*dn);
 double w[64], f, pmax, tol;
 for (j = 0 ; j < n; j++)
   for (i = 0 ; i < n; i++)
     {
       w[i+n*j]=a[i+n*j];
       res[i+n*j]= (i==j) ? 1.0 : 0.0;
     }
 tol=0.0;
 for (i = 0 ; i < n*n; i++) if (w[i]>tol || -w[i]>tol) tol = (w[i]>0) ? w[i] : -w[i];
 tol = 1e-12*tol;
 for (k = 0 ; k < n; k++)
   {
     piv=k; pmax = (w[k+n*k]>0) ? w[k+n*k] : -w[k+n*k];
     for (i = k+1 ; i < n; i++)
       {
         f = (w[i+n*k]>0) ? w[i+n*k] : -w[i+n*k];
         if (f>pmax) { pmax=f; piv=i; }
       }
     for (j = 0 ; j < n; j++)
       {
         f=w[k+n*j]; w[k+n*j]=w[piv+n*j]; w[piv+n*j]=f;
         f=res[k+n*j]; res[k+n*j]=res[piv+n*j]; res[piv+n*j]=f;
       }
     f=w[k+n*k];
     for (j = 0 ; j < n; j++) { w[k+n*j]=w[k+n*j]/f; res[k+n*j]=res[k+n*j]/f; }
     for (i = 0 ; i < n; i++)
       if (i!=k && w[i+n*k]!=0.0)
         {
           f=w[i+n*k];
           for (j = 0 ; j < n; j++)
             { w[i+n*j] -= f*w[k+n*j]; res[i+n*j] -= f*res[k+n*j]; }
         }
   }
}""",
}


def emit_helper(name: str) -> str:
    return HELPER_SOURCES[name]


_ACCESSOR = {
    "f64": "Real", "bool": "int32", "i8": "int8", "i16": "int16", "i32": "int32",
    "u8": "uint8", "u16": "uint16", "u32": "uint32",
}


def _port_accessor(dtype: Dtype, is_input: bool, index: int) -> str:
    direction = "In" if is_input else "Out"
    return "(Get{}{}PortPtrs(block,{}))".format(_ACCESSOR[dtype.tag], direction, index)


def emit_program(program: Program, cfg: EmitConfig = None) -> str:
    """The full translation unit: includes, helpers, statics, initialize,
    functions, and the flag dispatcher (1 output, 2 state, 4 initialize)."""
    cfg = cfg or EmitConfig()
    ports = program.meta.get("ports", [])
    out = []
    if cfg.include_runtime_header:
        out.append("#include <scicos/scicos_block4.h>")
    out.extend([
        "#include <string.h>",
        "#include <stdio.h>",
        "#include <stdlib.h>",
        "#include <stdint.h>",
        "#include <math.h>",
        "typedef int boolean;",
        "#ifndef TRUE",
        "#define TRUE 1",
        "#define FALSE 0",
        "#endif",
        "/* Start{}*/".format(cfg.block_id),
        "",
    ])
    for h in program.helpers:
        out.append(emit_helper(h))
        out.append("")
    statics = {s.name: s for s in program.statics}
    for s in program.statics:
        out.append(static_line(s))
    if program.statics:
        out.append("")
    out.append(render_function(program.init_fn, statics))
    out.append("")
    for fn in program.functions:
        out.append(render_function(fn, statics))
        out.append("")
    out.append("/* End{}*/".format(cfg.block_id))
    out.append("")
    out.extend(_dispatcher(program, cfg, ports))
    return "\n".join(out) + "\n"


def _dispatcher(program, cfg, ports):
    update_output = program.meta.get("update_output")
    update_state = program.meta.get("update_state")
    init_name = program.init_fn.name
    lines = []
    if cfg.include_runtime_header:
        args = []
        n_in = n_out = 0
        for p in ports:
            if p["input"]:
                n_in += 1
                args.append(_port_accessor(p["dtype"], True, n_in))
            else:
                n_out += 1
                args.append(_port_accessor(p["dtype"], False, n_out))
        call_args = ",".join(args)
        lines.append("void {}(scicos_block *block,int flag)".format(cfg.entry_name))
        lines.append("{")
        if update_output:
            lines.append("if (flag == 1) {")
            lines.append("  {}({});".format(update_output, call_args))
            lines.append("}")
        if update_state:
            lines.append("else if (flag == 2) {")
            lines.append("  {}({});".format(update_state, call_args))
            lines.append("}")
        lines.append("else if (flag == 4) {")
        lines.append("  {}();".format(init_name))
        lines.append("}")
        lines.append("}")
    else:
        sig = ["int flag"]
        names = []
        for p in ports:
            sig.append("{} *{}".format(ctype(p["dtype"]), p["name"]))
            names.append(p["name"])
        call_args = ",".join(names)
        lines.append("void {}({})".format(cfg.entry_name, ",".join(sig)))
        lines.append("{")
        if update_output:
            lines.append("if (flag == 1) {")
            lines.append("  {}({});".format(update_output, call_args))
            lines.append("}")
        if update_state:
            lines.append("else if (flag == 2) {")
            lines.append("  {}({});".format(update_state, call_args))
            lines.append("}")
        lines.append("else if (flag == 4) {")
        lines.append("  {}();".format(init_name))
        lines.append("}")
        lines.append("}")
    return lines
