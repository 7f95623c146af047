"""The bvar wrapper, the recording session and the overloaded operations.

A BVar is either numeric (its value is authoritative) or symbolic (only the
dtype and shape of its value are meaningful; the entries are a nominal value
carried along to keep shape inference honest, never consulted for folding).
Operations on all-numeric operands fold silently; anything touching a
symbolic operand appends pseudo-code instructions to the active session.

Scalar results emit one definition each; the optimizer later folds
single-use definitions into their use site, which is what produces the
compact expressions seen in generated programs. Matrix results unroll into
per-element stores, except matrix products and transposes whose result has
more than UNROLL_LIMIT elements; those call the runtime helpers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import matval as mv
from .matval import MatValue, Dtype, F64


UNROLL_LIMIT = 6


class TraceError(Exception):
    pass


class DuplicateName(TraceError):
    pass


class SymbolicConditionError(TraceError):
    """A control decision depended on a value unknown at generation time."""


class NestedFunction(TraceError):
    pass


class NoOpenFunction(TraceError):
    pass


class UnbalancedFunction(TraceError):
    pass


# ---------------------------------------------------------------------------
# expressions


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Lit(Expr):
    value: MatValue  # always 1x1


@dataclass(frozen=True)
class Ref(Expr):
    name: str


@dataclass(frozen=True)
class ElemRef(Expr):
    name: str
    index: int  # 1-based linear, column-major; the emitter shifts to 0-based


@dataclass(frozen=True)
class Bin(Expr):
    op: str  # + - * / == != < <= > >=
    a: Expr
    b: Expr
    overflow: str = "wrap"


@dataclass(frozen=True)
class Un(Expr):
    op: str  # "-"
    a: Expr


@dataclass(frozen=True)
class CallFn(Expr):
    fn: str  # sqrt sin cos atan2
    args: tuple


@dataclass(frozen=True)
class Cast(Expr):
    dtype: Dtype
    a: Expr


@dataclass(frozen=True)
class Cond(Expr):
    cond: Expr
    a: Expr
    b: Expr


def expr_refs(e: Expr) -> set:
    """All names an expression reads."""
    if isinstance(e, (Ref, ElemRef)):
        return {e.name}
    if isinstance(e, Bin):
        return expr_refs(e.a) | expr_refs(e.b)
    if isinstance(e, Un):
        return expr_refs(e.a)
    if isinstance(e, Cast):
        return expr_refs(e.a)
    if isinstance(e, CallFn):
        out = set()
        for a in e.args:
            out |= expr_refs(a)
        return out
    if isinstance(e, Cond):
        return expr_refs(e.cond) | expr_refs(e.a) | expr_refs(e.b)
    return set()


# ---------------------------------------------------------------------------
# instructions


@dataclass
class Instr:
    pass


@dataclass
class Def(Instr):
    """Bind a fresh scalar name to an expression."""
    name: str
    expr: Expr


@dataclass
class Store(Instr):
    """Assign into existing scalar storage (local, static or argument)."""
    name: str
    expr: Expr


@dataclass
class SetElem(Instr):
    name: str
    index: int  # 1-based linear
    expr: Expr


@dataclass
class CopyMat(Instr):
    """Whole-matrix copy between same-dtype storages of n >= 2 elements."""
    dst: str
    src: str
    n: int


@dataclass
class Annot(Instr):
    text: str


@dataclass
class CallTarget:
    fn: str
    args: tuple  # argument names, resolved against the enclosing io


@dataclass
class IfExpr(Instr):
    cond: str  # scalar name, tested > 0 upstream
    then_call: CallTarget
    else_call: CallTarget


@dataclass
class Call(Instr):
    """Call a recorded function or a runtime helper; args are names."""
    fn: str
    args: tuple


# ---------------------------------------------------------------------------
# declarations / functions


@dataclass
class Decl:
    name: str
    dtype: Dtype
    rows: int
    cols: int
    init: MatValue = None
    static: bool = False

    @property
    def is_scalar(self):
        return self.rows == 1 and self.cols == 1

    @property
    def size(self):
        return self.rows * self.cols


@dataclass
class Param:
    name: str
    dtype: Dtype
    rows: int
    cols: int

    @property
    def is_scalar(self):
        return self.rows == 1 and self.cols == 1


@dataclass
class FunctionDef:
    name: str
    params: list  # of Param
    decls: dict = field(default_factory=dict)  # name -> Decl, creation order
    body: list = field(default_factory=list)   # of Instr


@dataclass
class StaticDecl:
    name: str
    dtype: Dtype
    rows: int
    cols: int
    default: MatValue

    @property
    def is_scalar(self):
        return self.rows == 1 and self.cols == 1


@dataclass
class Program:
    """A finalized, optimized unit ready for printing or interpretation."""
    statics: list                 # of StaticDecl, registration order
    init_fn: FunctionDef
    functions: list               # of FunctionDef, completion order
    helpers: list                 # helper names used, stable order
    meta: dict = field(default_factory=dict)

    def function(self, name):
        if self.init_fn.name == name:
            return self.init_fn
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)


class TraceContext:
    """One recording session: code, declaration pools, unique counter."""

    def __init__(self):
        self.counter = 0
        self.module = FunctionDef("<module>", [])
        self._open = []            # stack of (FunctionDef, IoSeq)
        self.functions = []        # sealed FunctionDefs, completion order
        self.statics = {}          # name -> StaticDecl, registration order
        self.pinned = set()        # def names that must not be inlined
        self.helpers_used = []
        self._names = set()        # every name handed out or registered

    # -- naming ------------------------------------------------------------

    def getunique(self) -> str:
        self.counter += 1
        name = "tmp_{}".format(self.counter)
        self._names.add(name)
        return name

    def claim_name(self, name: str):
        if name in self._names:
            raise DuplicateName(name)
        self._names.add(name)

    # -- frames ------------------------------------------------------------

    @property
    def frame(self) -> FunctionDef:
        return self._open[-1][0] if self._open else self.module

    def emit(self, instr: Instr):
        self.frame.body.append(instr)

    def declare(self, name, dtype, rows, cols, init=None, static=False):
        self.frame.decls[name] = Decl(name, dtype, rows, cols, init, static)

    def use_helper(self, name):
        if name not in self.helpers_used:
            self.helpers_used.append(name)

    def register_static(self, name, default: MatValue):
        if name in self.statics:
            raise DuplicateName(name)
        self.claim_name(name)
        self.statics[name] = StaticDecl(name, default.dtype, default.rows, default.cols, default)

    # internal push/pop used both by the directives and the model driver;
    # the public StartFunction/EndFunction wrappers forbid nesting
    def push_function(self, name, io):
        fn = FunctionDef(name, [Param(e.name, e.value.dtype, e.value.rows, e.value.cols)
                                for e in io.entries.values()])
        self._open.append((fn, io))
        return fn

    def pop_function(self, name=None):
        if not self._open:
            raise NoOpenFunction("no function open")
        fn = self._open[-1][0]
        if name is not None and fn.name != name:
            raise NoOpenFunction("open function is {!r}, not {!r}".format(fn.name, name))
        self._open.pop()
        self.functions.append(fn)
        return fn

    @property
    def open_depth(self):
        return len(self._open)


# ---------------------------------------------------------------------------
# bvar


class BVar:
    """A matrix value tagged numeric or symbolic, with an IR name."""

    __slots__ = ("ctx", "sym", "value", "name", "storage", "view_dtype")

    def __init__(self, ctx, sym, value, name="", storage=None, view_dtype=None):
        self.ctx = ctx
        self.sym = sym
        self.value = value
        self.name = name
        self.storage = storage          # "arg" | "static" | "local" | "free" | None
        self.view_dtype = view_dtype    # dtype alias from convert(), if any

    @property
    def dtype(self):
        return self.view_dtype or self.value.dtype

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.rows

    @property
    def cols(self):
        return self.value.cols

    @property
    def size(self):
        return self.value.size

    @property
    def is_scalar(self):
        return self.value.is_scalar

    def __repr__(self):
        kind = "sym" if self.sym else "num"
        return "BVar({} {} {}x{} {!r})".format(kind, self.dtype, self.rows, self.cols, self.name)

    def __bool__(self):
        # control decisions must be partial-evaluable at generation time
        if self.sym:
            raise SymbolicConditionError(
                "conditional depends on symbolic value {!r}".format(self.name or "?"))
        return all(bool(v) for v in self.value.data)

    # matrix-language operators: * is the matrix product, / divides by
    # a scalar or right-divides by a square matrix
    def __add__(self, other):
        return bv_binop("add", self, other)

    def __radd__(self, other):
        return bv_binop("add", other, self)

    def __sub__(self, other):
        return bv_binop("sub", self, other)

    def __rsub__(self, other):
        return bv_binop("sub", other, self)

    def __mul__(self, other):
        return bv_matmul(self, other)

    def __rmul__(self, other):
        return bv_matmul(other, self)

    def __truediv__(self, other):
        return bv_div(self, other)

    def __rtruediv__(self, other):
        return bv_div(other, self)

    def __neg__(self):
        return bv_neg(self)

    def __pow__(self, n):
        return bv_pow(self, n)

    @property
    def T(self):
        return bv_transpose(self)

    def __getitem__(self, key):
        if isinstance(key, tuple):
            return bv_index_get(self, key[0], key[1])
        return bv_index_get(self, key)

    def __setitem__(self, key, rhs):
        if isinstance(key, tuple):
            bv_index_set(self, key[0], key[1], rhs=rhs)
        else:
            bv_index_set(self, key, rhs=rhs)


def numerics(v) -> BVar:
    """Wrap a concrete value as a numeric bvar."""
    return BVar(None, False, _as_matvalue(v))


def symbolics(ctx: TraceContext, v, name: str = None) -> BVar:
    """A free symbolic bvar; only dtype and shape of v are meaningful."""
    value = _as_matvalue(v)
    if name is None:
        name = ctx.getunique()
    else:
        ctx.claim_name(name)
    return BVar(ctx, True, value, name, storage="free")


def _as_matvalue(v) -> MatValue:
    if isinstance(v, MatValue):
        return v
    if isinstance(v, BVar):
        return v.value
    if isinstance(v, (bool, int, float)):
        return mv.scalar(v)
    if isinstance(v, (list, tuple)):
        return mv.from_rows([list(v)] if not isinstance(v[0], (list, tuple)) else [list(r) for r in v])
    raise TypeError("cannot interpret {!r} as a matrix value".format(v))


def _as_bvar(v, like: BVar = None) -> BVar:
    if isinstance(v, BVar):
        return v
    m = _as_matvalue(v)
    if like is not None and m.dtype != like.dtype and not m.dtype.is_bool:
        # bare python numbers adopt the dtype of the bvar they meet
        m = mv.convert(m, like.dtype)
    return BVar(None, False, m)


def _ctx_of(*bvars) -> TraceContext:
    for b in bvars:
        if b.ctx is not None:
            return b.ctx
    return None


def unwrap(b: BVar) -> MatValue:
    return b.value


# ---------------------------------------------------------------------------
# emission primitives


def _operand_expr(b: BVar) -> Expr:
    """Embed a scalar bvar as an expression operand."""
    if not b.sym:
        return Lit(b.value)
    e = Ref(b.name)
    if b.view_dtype is not None and b.view_dtype != b.value.dtype:
        e = Cast(b.view_dtype, e)
    return e


def _elem_expr(b: BVar, k: int) -> Expr:
    """Element k (0-based) of a bvar as an expression operand."""
    if not b.sym:
        return Lit(MatValue(b.value.dtype, 1, 1, (b.value.data[k],)))
    if b.is_scalar:
        return _operand_expr(b)
    e = ElemRef(b.name, k + 1)
    if b.view_dtype is not None and b.view_dtype != b.value.dtype:
        e = Cast(b.view_dtype, e)
    return e


def _def_scalar(ctx, expr: Expr, nominal: MatValue) -> BVar:
    name = ctx.getunique()
    ctx.declare(name, nominal.dtype, 1, 1)
    ctx.emit(Def(name, expr))
    return BVar(ctx, True, nominal, name, storage="local")


def _new_array(ctx, nominal: MatValue, init: MatValue = None) -> BVar:
    name = ctx.getunique()
    ctx.declare(name, nominal.dtype, nominal.rows, nominal.cols, init=init)
    return BVar(ctx, True, nominal, name, storage="local")


def _constant_decl(ctx, value: MatValue) -> BVar:
    """Declare a fresh local initialized with a concrete value."""
    return _new_array(ctx, value, init=value)


def _materialize(ctx, value: MatValue) -> BVar:
    """Declaration plus per-element literal stores, linear order.

    Used to hand concrete operands to the runtime helpers.
    """
    out = _constant_decl(ctx, value)
    if value.is_scalar:
        ctx.emit(Store(out.name, Lit(value)))
    else:
        for k in range(value.size):
            ctx.emit(SetElem(out.name, k + 1, Lit(MatValue(value.dtype, 1, 1, (value.data[k],)))))
    return out


def _force_named(ctx, b: BVar) -> BVar:
    """A named array the emitter can reference; materializes numerics."""
    if b.sym:
        return b
    return _materialize(ctx, b.value)


def _lit_is(e: Expr, v) -> bool:
    return isinstance(e, Lit) and not e.value.dtype.is_bool and e.value.data[0] == v


def _simplified_bin(op: str, ea: Expr, eb: Expr, dtype: Dtype):
    """Partial-evaluation identities applied per element.

    Returns an Expr, or None when the result is statically zero.
    """
    if isinstance(ea, Lit) and isinstance(eb, Lit):
        folded = mv.elem_binop({"+": "add", "-": "sub", "*": "mul_elem", "/": "div_elem"}[op],
                               ea.value, eb.value)
        return Lit(folded)
    if op == "+":
        if _lit_is(ea, 0):
            return eb
        if _lit_is(eb, 0):
            return ea
    elif op == "-":
        if _lit_is(eb, 0):
            return ea
        if _lit_is(ea, 0):
            return Un("-", eb)
    elif op == "*":
        if _lit_is(ea, 1):
            return eb
        if _lit_is(eb, 1):
            return ea
        if _lit_is(ea, 0) or _lit_is(eb, 0):
            return None
    return Bin(op, ea, eb)


_OPSYM = {"add": "+", "sub": "-", "mul_elem": "*", "div_elem": "/"}
_CMPSYM = {"eq": "==", "ne": "!=", "lt": "<", "le": "<=", "gt": ">", "ge": ">="}


def _soft_nominal(fn, fallback: MatValue, *args):
    """Nominal values ride along for shape honesty; value-level failures
    (division by zero, singular, domain errors) must not abort a trace."""
    try:
        return fn(*args)
    except (mv.DivisionByZero, mv.Singular, ValueError, OverflowError):
        return fallback


def _nom(b: BVar) -> MatValue:
    """Nominal value seen through any dtype-retag alias."""
    if b.view_dtype is not None and b.view_dtype != b.value.dtype:
        return mv.convert(b.value, b.view_dtype)
    return b.value


# ---------------------------------------------------------------------------
# overloaded operations


def bv_binop(op: str, a, b) -> BVar:
    a = _as_bvar(a, like=b if isinstance(b, BVar) else None)
    b = _as_bvar(b, like=a)
    if not (a.sym or b.sym):
        return BVar(None, False, mv.elem_binop(op, a.value, b.value))
    if a.dtype != b.dtype:
        raise mv.DtypeMismatch("{} vs {}".format(a.dtype, b.dtype))
    if a.dtype.is_bool:
        raise mv.DtypeMismatch("bool participates in arithmetic only after conversion")
    rows, cols = mv.broadcast_pair(a.value, b.value)
    nominal = _soft_nominal(mv.elem_binop, mv.zeros(a.dtype, rows, cols), op, _nom(a), _nom(b))
    ctx = _ctx_of(a, b)
    sym = _OPSYM[op]
    # scalar-level identities: x+0, x-0, 0-x, 1*x, 0*x on the whole value
    num, other = (a, b) if not a.sym else ((b, a) if not b.sym else (None, None))
    if num is not None and (num.is_scalar or num.shape == other.shape):
        if other.shape == nominal.shape:
            if op == "add" and all(v == 0 for v in num.value.data):
                return other
            if op == "sub" and num is b and all(v == 0 for v in num.value.data):
                return a
            if op == "sub" and num is a and all(v == 0 for v in num.value.data):
                return bv_neg(b)
            if op == "mul_elem" and num.is_scalar and num.value.data[0] == 1:
                return other
        if op == "mul_elem" and num.is_scalar and num.value.data[0] == 0:
            return BVar(None, False, nominal)
        if op == "div_elem" and num is b and num.is_scalar and num.value.data[0] == 1:
            return a
    if nominal.is_scalar:
        return _def_scalar(ctx, Bin(sym, _operand_expr(a), _operand_expr(b)), nominal)
    res = _new_array(ctx, nominal)
    rows, cols = nominal.shape
    for i in range(rows):
        for j in range(cols):
            k = i + rows * j
            ea = _elem_expr(a, 0 if a.is_scalar else k)
            eb = _elem_expr(b, 0 if b.is_scalar else k)
            e = _simplified_bin(sym, ea, eb, nominal.dtype)
            if e is None:
                e = Lit(mv.zeros(nominal.dtype, 1, 1))
            ctx.emit(SetElem(res.name, k + 1, e))
    return res


def bv_neg(a) -> BVar:
    a = _as_bvar(a)
    nominal = mv.neg(a.value)
    if not a.sym:
        return BVar(None, False, nominal)
    ctx = a.ctx
    if a.is_scalar:
        return _def_scalar(ctx, Un("-", _operand_expr(a)), nominal)
    res = _new_array(ctx, nominal)
    rows, cols = nominal.shape
    for i in range(rows):
        for j in range(cols):
            k = i + rows * j
            ctx.emit(SetElem(res.name, k + 1, Un("-", _elem_expr(a, k))))
    return res


def bv_matmul(a, b) -> BVar:
    a = _as_bvar(a, like=b if isinstance(b, BVar) else None)
    b = _as_bvar(b, like=a)
    if a.is_scalar or b.is_scalar:
        return _bv_scale(a, b)
    if not (a.sym or b.sym):
        return BVar(None, False, mv.matmul(a.value, b.value))
    nominal = mv.matmul(_nom(a), _nom(b))
    ctx = _ctx_of(a, b)
    n = nominal.size
    if n > UNROLL_LIMIT:
        return _helper_matmul(ctx, a, b, nominal)
    res = _new_array(ctx, nominal)
    rows, cols = nominal.shape
    inner = a.cols
    for i in range(rows):
        for j in range(cols):
            acc = None
            for k in range(inner):
                ea = _elem_expr(a, i + a.rows * k)
                eb = _elem_expr(b, k + b.rows * j)
                term = _simplified_bin("*", ea, eb, nominal.dtype)
                if term is None:
                    continue
                if acc is None:
                    acc = term
                else:
                    nxt = _simplified_bin("+", acc, term, nominal.dtype)
                    acc = Lit(mv.zeros(nominal.dtype, 1, 1)) if nxt is None else nxt
            if acc is None:
                acc = Lit(mv.zeros(nominal.dtype, 1, 1))
            ctx.emit(SetElem(res.name, i + rows * j + 1, acc))
    return res


def _bv_scale(a: BVar, b: BVar) -> BVar:
    """Scalar * matrix and matrix * scalar; elementwise semantics."""
    return bv_binop("mul_elem", a, b)


def _helper_matmul(ctx, a: BVar, b: BVar, nominal: MatValue) -> BVar:
    if nominal.dtype != F64:
        raise TraceError("helper-call matrix product supports f64 only")
    ctx.emit(Annot("Product of matrices resulting size {}>{}: calling external function"
                   .format(nominal.size, UNROLL_LIMIT)))
    an = _force_named(ctx, a)
    bn = _force_named(ctx, b)
    dims = [_materialize(ctx, mv.scalar(float(d)))
            for d in (a.rows, a.cols, b.rows, b.cols)]
    res = _new_array(ctx, mv.zeros(F64, nominal.rows, nominal.cols))
    ctx.use_helper("mult")
    ctx.emit(Call("mult", (res.name, an.name, bn.name) + tuple(d.name for d in dims)))
    return res


def bv_transpose(a) -> BVar:
    a = _as_bvar(a)
    nominal = mv.transpose(a.value)
    if not a.sym:
        return BVar(None, False, nominal)
    ctx = a.ctx
    if a.is_scalar:
        return a
    if nominal.size > UNROLL_LIMIT:
        if a.dtype != F64:
            raise TraceError("helper-call transpose supports f64 only")
        ctx.emit(Annot("Transpose of matrix of size {}>{}: calling external function"
                       .format(nominal.size, UNROLL_LIMIT)))
        an = _force_named(ctx, a)
        dims = [_materialize(ctx, mv.scalar(float(d))) for d in (a.rows, a.cols)]
        res = _new_array(ctx, mv.zeros(F64, nominal.rows, nominal.cols))
        ctx.use_helper("quote")
        ctx.emit(Call("quote", (res.name, an.name) + tuple(d.name for d in dims)))
        ctx.emit(Annot("End of Transpose"))
        return res
    res = _new_array(ctx, nominal)
    rows, cols = nominal.shape
    for i in range(rows):
        for j in range(cols):
            ctx.emit(SetElem(res.name, i + rows * j + 1, _elem_expr(a, j + a.rows * i)))
    return res


def bv_concat_rows(a, b) -> BVar:
    a, b = _as_bvar(a), _as_bvar(b)
    if a.size == 0:
        return b
    if b.size == 0:
        return a
    nominal = mv.concat_rows(a.value, b.value)
    if not (a.sym or b.sym):
        return BVar(None, False, nominal)
    ctx = _ctx_of(a, b)
    res = _new_array(ctx, nominal)
    k = 0
    for j in range(nominal.cols):
        for src, idx in ((a, j * a.rows), (b, j * b.rows)):
            for r in range(src.rows):
                ctx.emit(SetElem(res.name, k + 1, _elem_expr(src, idx + r)))
                k += 1
    return res


def bv_concat_cols(a, b) -> BVar:
    a, b = _as_bvar(a), _as_bvar(b)
    if a.size == 0:
        return b
    if b.size == 0:
        return a
    nominal = mv.concat_cols(a.value, b.value)
    if not (a.sym or b.sym):
        return BVar(None, False, nominal)
    ctx = _ctx_of(a, b)
    ctx.emit(Annot("Begin concatr of {} with {}".format(a.name or "unknown", b.name or "unknown")))
    res = _new_array(ctx, nominal)
    for k in range(a.size):
        ctx.emit(SetElem(res.name, k + 1, _elem_expr(a, k)))
    for k in range(b.size):
        ctx.emit(SetElem(res.name, a.size + k + 1, _elem_expr(b, k)))
    ctx.emit(Annot("end concatr of {} with {}".format(a.name or "unknown", b.name or "unknown")))
    return res


def vertcat(*parts) -> BVar:
    out = parts[0] if isinstance(parts[0], BVar) else _as_bvar(parts[0])
    for p in parts[1:]:
        out = bv_concat_rows(out, p)
    return out


def horzcat(*parts) -> BVar:
    first = parts[0]
    out = first if isinstance(first, BVar) else _as_bvar(first)
    for p in parts[1:]:
        out = bv_concat_cols(out, _as_bvar(p, like=out))
    return out


def bv_index_get(a: BVar, i, j=None) -> BVar:
    """1-based element read; linear indices are column-major."""
    if j is None:
        k = i - 1
        if not 0 <= k < a.size:
            raise mv.ShapeMismatch("index {} out of {} elements".format(i, a.size))
    else:
        if not (1 <= i <= a.rows and 1 <= j <= a.cols):
            raise mv.ShapeMismatch("index ({},{}) out of {}x{}".format(i, j, a.rows, a.cols))
        k = (i - 1) + a.rows * (j - 1)
    elem = MatValue(a.value.dtype, 1, 1, (a.value.data[k],))
    if not a.sym:
        return BVar(None, False, elem)
    return _def_scalar(a.ctx, _elem_expr(a, k), elem)


def bv_index_set(a: BVar, i, j=None, *, rhs) -> BVar:
    """1-based element write; promotes a numeric target when rhs is symbolic."""
    rhs = _as_bvar(rhs, like=a)
    if not rhs.is_scalar:
        raise mv.ShapeMismatch("element write needs a 1x1 rhs")
    if j is None:
        k = i - 1
    else:
        k = (i - 1) + a.rows * (j - 1)
    if not 0 <= k < a.size:
        raise mv.ShapeMismatch("index out of range")
    if not a.sym and not rhs.sym:
        a.value = a.value.set_linear(k, rhs.value.data[0])
        return a
    ctx = _ctx_of(a, rhs)
    if not a.sym:
        # promote: declare a fresh symbolic initialized with the current value
        name = ctx.getunique()
        ctx.declare(name, a.value.dtype, a.rows, a.cols, init=a.value)
        a.ctx, a.sym, a.name, a.storage = ctx, True, name, "local"
    if rhs.dtype != a.value.dtype:
        raise mv.DtypeMismatch("element write {} into {}".format(rhs.dtype, a.value.dtype))
    ctx.emit(SetElem(a.name, k + 1, _operand_expr(rhs)))
    a.value = a.value.set_linear(k, rhs.value.data[0])
    return a


def bv_size(a: BVar) -> MatValue:
    """Always numeric, even for symbolic operands."""
    return mv.make(F64, 1, 2, [a.rows, a.cols])


def bv_datatype(a: BVar) -> Dtype:
    return a.dtype


def bv_convert(a, dtype: Dtype) -> BVar:
    a = _as_bvar(a)
    if not a.sym:
        return BVar(None, False, mv.convert(a.value, dtype))
    if a.dtype == dtype:
        return a
    ctx = a.ctx
    if a.is_scalar:
        # the conversion itself rides on C's implicit assignment conversion;
        # pin the definition so the conversion point survives optimization
        ctx.pinned.add(a.name)
        return BVar(ctx, True, a.value, a.name, storage=a.storage, view_dtype=dtype)
    nominal = mv.convert(a.value, dtype)
    res = _new_array(ctx, nominal)
    for k in range(a.size):
        ctx.emit(SetElem(res.name, k + 1, Cast(dtype, _elem_expr(a, k))))
    return res


def bv_sum(a) -> BVar:
    a = _as_bvar(a)
    nominal = mv.sum_all(a.value)
    if not a.sym:
        return BVar(None, False, nominal)
    if a.is_scalar:
        return a
    acc = _elem_expr(a, 0)
    for k in range(1, a.size):
        acc = Bin("+", acc, _elem_expr(a, k))
    return _def_scalar(a.ctx, acc, nominal)


def bv_compare(op: str, a, b) -> BVar:
    a = _as_bvar(a, like=b if isinstance(b, BVar) else None)
    b = _as_bvar(b, like=a)
    nominal = mv.compare(op, a.value, b.value)
    if not (a.sym or b.sym):
        return BVar(None, False, nominal)
    ctx = _ctx_of(a, b)
    sym = _CMPSYM[op]
    if nominal.is_scalar:
        return _def_scalar(ctx, Bin(sym, _operand_expr(a), _operand_expr(b)), nominal)
    res = _new_array(ctx, nominal)
    rows, cols = nominal.shape
    for i in range(rows):
        for j in range(cols):
            k = i + rows * j
            ea = _elem_expr(a, 0 if a.is_scalar else k)
            eb = _elem_expr(b, 0 if b.is_scalar else k)
            ctx.emit(SetElem(res.name, k + 1, Bin(sym, ea, eb)))
    return res


def bv_elem_math(fn: str, *args) -> BVar:
    args = [_as_bvar(a) for a in args]
    if not any(a.sym for a in args):
        return BVar(None, False, mv.elem_math(fn, *[a.value for a in args]))
    if fn == "atan2" and args[0].shape != args[1].shape:
        raise mv.ShapeMismatch("atan2 args {} vs {}".format(args[0].shape, args[1].shape))
    shape = args[0].shape
    nominal = _soft_nominal(mv.elem_math, mv.zeros(F64, *shape), fn, *[_nom(a) for a in args])
    ctx = _ctx_of(*args)
    if nominal.is_scalar:
        return _def_scalar(ctx, CallFn(fn, tuple(_operand_expr(a) for a in args)), nominal)
    res = _new_array(ctx, nominal)
    for k in range(nominal.size):
        ctx.emit(SetElem(res.name, k + 1,
                         CallFn(fn, tuple(_elem_expr(a, 0 if a.is_scalar else k) for a in args))))
    return res


def sqrt(a):
    return bv_elem_math("sqrt", a)


def sin(a):
    return bv_elem_math("sin", a)


def cos(a):
    return bv_elem_math("cos", a)


def atan2(y, x):
    return bv_elem_math("atan2", y, x)


def bv_pow(a, n) -> BVar:
    a = _as_bvar(a)
    if isinstance(n, BVar):
        if n.sym:
            raise SymbolicConditionError("exponent must be numeric")
        n = n.value.scalar()
    if n != int(n) or n < 0:
        raise TraceError("only nonnegative integer powers are supported")
    n = int(n)
    if not a.is_scalar:
        raise mv.ShapeMismatch("power of a non-scalar")
    if n == 0:
        return BVar(None, False, mv.make(a.value.dtype, 1, 1, [1]))
    out = a
    for _ in range(n - 1):
        out = bv_matmul(out, a)
    return out


def bv_inv(a) -> BVar:
    a = _as_bvar(a)
    if a.rows != a.cols:
        raise mv.NonSquare("Division by non square matrix not supported.")
    nominal = mv.invert(a.value) if not a.sym else None
    if not a.sym:
        return BVar(None, False, nominal)
    ctx = a.ctx
    n = a.rows
    if n == 1:
        return bv_div(numerics(mv.scalar(1.0)), a, _scalar_path=True)
    if n == 2:
        out = bvarempty(ctx, a)
        bv_index_set(out, 1, 1, rhs=bv_index_get(a, 2, 2))
        bv_index_set(out, 2, 2, rhs=bv_index_get(a, 1, 1))
        bv_index_set(out, 1, 2, rhs=bv_neg(bv_index_get(a, 1, 2)))
        bv_index_set(out, 2, 1, rhs=bv_neg(bv_index_get(a, 2, 1)))
        det = bv_index_get(a, 1, 1) * bv_index_get(a, 2, 2) - bv_index_get(a, 1, 2) * bv_index_get(a, 2, 1)
        return bv_binop("div_elem", out, det)
    if a.dtype != F64:
        raise TraceError("helper-call inverse supports f64 only")
    if n > 8:
        raise TraceError("helper-call inverse limited to 8x8")
    ctx.emit(Annot("Inverse of matrix of size {}>2: calling external function".format(n * n)))
    an = _force_named(ctx, a)
    dim = _materialize(ctx, mv.scalar(float(n)))
    # nominal kept at zeros: the value is computed by the emitted helper
    res = _new_array(ctx, mv.zeros(F64, n, n))
    ctx.use_helper("matinv")
    ctx.emit(Call("matinv", (res.name, an.name, dim.name)))
    return res


def bv_div(a, b, _scalar_path=False) -> BVar:
    """a / b: elementwise when b is 1x1, else a * inv(b) for square b."""
    a = _as_bvar(a, like=b if isinstance(b, BVar) else None)
    b = _as_bvar(b, like=a)
    if b.is_scalar:
        return bv_binop("div_elem", a, b)
    if b.rows != b.cols:
        raise mv.NonSquare("Division by non square matrix not supported.")
    return bv_matmul(a, bv_inv(b))


def el_mul(a, b) -> BVar:
    """Elementwise product (the .* of the matrix language)."""
    return bv_binop("mul_elem", a, b)


def bvarempty(ctx: TraceContext, in_) -> BVar:
    """Fresh symbolic with in's dtype and shape; declared, never copied.

    A numeric source contributes its value as the declaration initializer.
    """
    b = _as_bvar(in_)
    init = b.value if not b.sym else None
    return _new_array(ctx, b.value, init=init)


def bvarcopy(ctx: TraceContext, in_) -> BVar:
    """Like bvarempty, plus code copying the source into the new variable."""
    b = _as_bvar(in_)
    src = b if b.sym else _constant_decl(ctx, b.value)
    init = b.value if not b.sym else None
    res = _new_array(ctx, b.value, init=init)
    if b.size == 1:
        ctx.emit(Store(res.name, Ref(src.name)))
    else:
        ctx.emit(CopyMat(res.name, src.name, b.size))
    return res


def expand(ctx: TraceContext, in_, m: int, n: int) -> BVar:
    """A fresh symbolic m x n variable filled with a 1x1 source."""
    b = _as_bvar(in_)
    if not b.is_scalar:
        raise mv.ShapeMismatch("expand needs a 1x1 source")
    replicated = MatValue(b.value.dtype, m, n, b.value.data * (m * n))
    res = _new_array(ctx, replicated, init=replicated)
    if b.sym:
        for k in range(m * n):
            ctx.emit(SetElem(res.name, k + 1, _operand_expr(b)))
    return res
