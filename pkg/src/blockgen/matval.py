"""Concrete matrix values and their numeric semantics.

Everything here is deliberately pure Python: the interpreted value of an
operation must agree bit for bit with the C code the emitter produces, so
integer arithmetic wraps two's-complement style, float->int conversion
truncates toward zero, and f64 division follows IEEE-754 (x/0 is inf).
Matrices are stored as flat column-major tuples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class MatError(Exception):
    pass


class ShapeMismatch(MatError):
    pass


class DtypeMismatch(MatError):
    pass


class NonSquare(MatError):
    pass


class Singular(MatError):
    pass


class DivisionByZero(MatError):
    pass


@dataclass(frozen=True)
class Dtype:
    tag: str

    @property
    def is_float(self):
        return self.tag == "f64"

    @property
    def is_bool(self):
        return self.tag == "bool"

    @property
    def is_int(self):
        return not (self.is_float or self.is_bool)

    @property
    def width(self):
        if self.is_float:
            return 64
        if self.is_bool:
            return 1
        return int(self.tag[1:])

    @property
    def signed(self):
        return self.tag.startswith("i")

    @property
    def ctype(self):
        if self.is_float:
            return "double"
        if self.is_bool:
            return "int"
        base = "int{}_t".format(self.tag[1:])
        return base if self.signed else "u" + base

    def __repr__(self):
        return self.tag


F64 = Dtype("f64")
BOOL = Dtype("bool")
I8 = Dtype("i8")
I16 = Dtype("i16")
I32 = Dtype("i32")
U8 = Dtype("u8")
U16 = Dtype("u16")
U32 = Dtype("u32")

DTYPES = {d.tag: d for d in (F64, BOOL, I8, I16, I32, U8, U16, U32)}


def wrap_int(v: int, dtype: Dtype) -> int:
    """Reduce v into dtype's range, two's complement."""
    mask = (1 << dtype.width) - 1
    v &= mask
    if dtype.signed and v >= 1 << (dtype.width - 1):
        v -= 1 << dtype.width
    return v


def _coerce_elem(v, dtype: Dtype):
    if dtype.is_float:
        return float(v)
    if dtype.is_bool:
        return bool(v)
    return wrap_int(int(v), dtype)


@dataclass(frozen=True)
class MatValue:
    """A rectangular matrix: dtype, shape, flat column-major data."""

    dtype: Dtype
    rows: int
    cols: int
    data: tuple

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise ShapeMismatch("negative dimension")
        if len(self.data) != self.rows * self.cols:
            raise ShapeMismatch(
                "data length {} != {}x{}".format(len(self.data), self.rows, self.cols)
            )

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def size(self):
        return self.rows * self.cols

    @property
    def is_scalar(self):
        return self.rows == 1 and self.cols == 1

    def get(self, i: int, j: int):
        """0-based element read."""
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise ShapeMismatch("index ({},{}) out of {}x{}".format(i, j, self.rows, self.cols))
        return self.data[i + self.rows * j]

    def get_linear(self, k: int):
        return self.data[k]

    def set_linear(self, k: int, v) -> "MatValue":
        if not 0 <= k < self.size:
            raise ShapeMismatch("linear index {} out of {}".format(k, self.size))
        d = list(self.data)
        d[k] = _coerce_elem(v, self.dtype)
        return MatValue(self.dtype, self.rows, self.cols, tuple(d))

    def scalar(self):
        if not self.is_scalar:
            raise ShapeMismatch("not a 1x1 value")
        return self.data[0]

    def __repr__(self):
        return "MatValue({}, {}x{}, {})".format(self.dtype, self.rows, self.cols, list(self.data))


def make(dtype: Dtype, rows: int, cols: int, data) -> MatValue:
    return MatValue(dtype, rows, cols, tuple(_coerce_elem(v, dtype) for v in data))


def scalar(v, dtype: Dtype = None) -> MatValue:
    if dtype is None:
        if isinstance(v, bool):
            dtype = BOOL
        elif isinstance(v, int):
            dtype = F64  # matrix-language default: bare numbers are doubles
        else:
            dtype = F64
    return make(dtype, 1, 1, [v])


def zeros(dtype: Dtype, rows: int, cols: int) -> MatValue:
    fill = False if dtype.is_bool else (0.0 if dtype.is_float else 0)
    return MatValue(dtype, rows, cols, (fill,) * (rows * cols))


def ones(dtype: Dtype, rows: int, cols: int) -> MatValue:
    return make(dtype, rows, cols, [1] * (rows * cols))


def eye(n: int, dtype: Dtype = F64) -> MatValue:
    data = [1 if i == j else 0 for j in range(n) for i in range(n)]
    return make(dtype, n, n, data)


def diag(values, dtype: Dtype = F64) -> MatValue:
    n = len(values)
    data = [values[i] if i == j else 0 for j in range(n) for i in range(n)]
    return make(dtype, n, n, data)


def from_rows(rows, dtype: Dtype = F64) -> MatValue:
    """Build from a row-major list of lists (the model-file convention)."""
    r = len(rows)
    c = len(rows[0]) if r else 0
    if any(len(row) != c for row in rows):
        raise ShapeMismatch("ragged rows")
    data = [rows[i][j] for j in range(c) for i in range(r)]
    return make(dtype, r, c, data)


def to_rows(a: MatValue):
    return [[a.get(i, j) for j in range(a.cols)] for i in range(a.rows)]


# ---------------------------------------------------------------------------
# scalar kernels


def _f64_div(a: float, b: float) -> float:
    if b == 0.0:
        if a == 0.0 or math.isnan(a):
            return math.nan
        neg = (math.copysign(1.0, a) < 0) != (math.copysign(1.0, b) < 0)
        return -math.inf if neg else math.inf
    return a / b


def _int_div(a: int, b: int) -> int:
    if b == 0:
        raise DivisionByZero("integer division by zero")
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def binop_elem(op: str, a, b, dtype: Dtype):
    """One element of an arithmetic op; C semantics for dtype."""
    if dtype.is_bool:
        raise DtypeMismatch("bool participates in arithmetic only after conversion")
    if dtype.is_float:
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        if op == "mul":
            return a * b
        if op == "div":
            return _f64_div(a, b)
    else:
        if op == "add":
            return wrap_int(a + b, dtype)
        if op == "sub":
            return wrap_int(a - b, dtype)
        if op == "mul":
            return wrap_int(a * b, dtype)
        if op == "div":
            return wrap_int(_int_div(a, b), dtype)
    raise MatError("unknown op " + op)


_CMP = {
    "eq": lambda a, b: a == b,
    "ne": lambda a, b: a != b,
    "lt": lambda a, b: a < b,
    "le": lambda a, b: a <= b,
    "gt": lambda a, b: a > b,
    "ge": lambda a, b: a >= b,
}


# ---------------------------------------------------------------------------
# matrix operations


def broadcast_pair(a: MatValue, b: MatValue):
    """Result shape for elementwise ops with 1x1 broadcast."""
    if a.shape == b.shape:
        return a.shape
    if a.is_scalar:
        return b.shape
    if b.is_scalar:
        return a.shape
    raise ShapeMismatch("shapes {} and {} incompatible".format(a.shape, b.shape))


def _at(m: MatValue, k: int):
    return m.data[0] if m.is_scalar else m.data[k]


def elem_binop(op: str, a: MatValue, b: MatValue) -> MatValue:
    if a.dtype != b.dtype:
        raise DtypeMismatch("{} vs {}".format(a.dtype, b.dtype))
    rows, cols = broadcast_pair(a, b)
    name = {"add": "add", "sub": "sub", "mul_elem": "mul", "div_elem": "div"}[op]
    data = [binop_elem(name, _at(a, k), _at(b, k), a.dtype) for k in range(rows * cols)]
    return MatValue(a.dtype, rows, cols, tuple(data))


def neg(a: MatValue) -> MatValue:
    if a.dtype.is_bool:
        raise DtypeMismatch("bool negation")
    if a.dtype.is_float:
        data = [-v for v in a.data]
    else:
        data = [wrap_int(-v, a.dtype) for v in a.data]
    return MatValue(a.dtype, a.rows, a.cols, tuple(data))


def matmul(a: MatValue, b: MatValue) -> MatValue:
    if a.dtype != b.dtype:
        raise DtypeMismatch("{} vs {}".format(a.dtype, b.dtype))
    if a.is_scalar or b.is_scalar:
        return elem_binop("mul_elem", a, b)
    if a.cols != b.rows:
        raise ShapeMismatch("inner dims {}x{} * {}x{}".format(a.rows, a.cols, b.rows, b.cols))
    dt = a.dtype
    if dt.is_bool:
        raise DtypeMismatch("bool matmul")
    out = []
    for j in range(b.cols):
        for i in range(a.rows):
            # accumulate in k-ascending order; the emitted helper and the
            # unrolled expression both use exactly this order
            acc = 0.0 if dt.is_float else 0
            for k in range(a.cols):
                term = binop_elem("mul", a.get(i, k), b.get(k, j), dt)
                acc = binop_elem("add", acc, term, dt)
            out.append(acc)
    return MatValue(dt, a.rows, b.cols, tuple(out))


def transpose(a: MatValue) -> MatValue:
    data = [a.get(i, j) for i in range(a.rows) for j in range(a.cols)]
    return MatValue(a.dtype, a.cols, a.rows, tuple(data))


def concat_rows(a: MatValue, b: MatValue) -> MatValue:
    """Vertical stack, a on top. Empty operands are identities."""
    if a.size == 0:
        return b
    if b.size == 0:
        return a
    if a.dtype != b.dtype:
        raise DtypeMismatch("{} vs {}".format(a.dtype, b.dtype))
    if a.cols != b.cols:
        raise ShapeMismatch("column counts {} vs {}".format(a.cols, b.cols))
    rows = a.rows + b.rows
    data = []
    for j in range(a.cols):
        data.extend(a.data[j * a.rows:(j + 1) * a.rows])
        data.extend(b.data[j * b.rows:(j + 1) * b.rows])
    return MatValue(a.dtype, rows, a.cols, tuple(data))


def concat_cols(a: MatValue, b: MatValue) -> MatValue:
    """Horizontal stack, a on the left."""
    if a.size == 0:
        return b
    if b.size == 0:
        return a
    if a.dtype != b.dtype:
        raise DtypeMismatch("{} vs {}".format(a.dtype, b.dtype))
    if a.rows != b.rows:
        raise ShapeMismatch("row counts {} vs {}".format(a.rows, b.rows))
    return MatValue(a.dtype, a.rows, a.cols + b.cols, a.data + b.data)


def convert_elem(v, src: Dtype, dst: Dtype):
    if dst.is_bool:
        return v != 0
    if src.is_bool:
        v = int(v)
    if dst.is_float:
        return float(v)
    if src.is_float:
        if math.isnan(v) or math.isinf(v):
            return 0  # C leaves this undefined; pick something deterministic
        v = math.trunc(v)
    return wrap_int(int(v), dst)


def convert(a: MatValue, dtype: Dtype) -> MatValue:
    if a.dtype == dtype:
        return a
    data = [convert_elem(v, a.dtype, dtype) for v in a.data]
    return MatValue(dtype, a.rows, a.cols, tuple(data))


def sum_all(a: MatValue) -> MatValue:
    if a.dtype.is_bool:
        raise DtypeMismatch("sum over bool")
    acc = 0.0 if a.dtype.is_float else 0
    for v in a.data:
        acc = binop_elem("add", acc, v, a.dtype)
    return MatValue(a.dtype, 1, 1, (acc,))


def compare(op: str, a: MatValue, b: MatValue) -> MatValue:
    if a.dtype != b.dtype:
        raise DtypeMismatch("{} vs {}".format(a.dtype, b.dtype))
    rows, cols = broadcast_pair(a, b)
    fn = _CMP[op]
    data = [bool(fn(_at(a, k), _at(b, k))) for k in range(rows * cols)]
    return MatValue(BOOL, rows, cols, tuple(data))


def invert(a: MatValue) -> MatValue:
    if a.rows != a.cols:
        raise NonSquare("Division by non square matrix not supported.")
    if a.dtype != F64:
        raise DtypeMismatch("inverse needs f64")
    n = a.rows
    if n == 1:
        return MatValue(F64, 1, 1, (_f64_div(1.0, a.data[0]),))
    if n == 2:
        # adjugate / determinant, same arithmetic as the traced sequence
        a11, a21, a12, a22 = a.data
        det = a11 * a22 - a12 * a21
        if abs(det) < 1e-300:
            raise Singular("2x2 determinant below tolerance")
        return MatValue(F64, 2, 2, (
            _f64_div(a22, det), _f64_div(-a21, det),
            _f64_div(-a12, det), _f64_div(a11, det),
        ))
    # Gauss-Jordan with partial pivoting on [A | I]
    aug = [[a.get(i, j) for j in range(n)] + [1.0 if i == j else 0.0 for j in range(n)]
           for i in range(n)]
    tol = 1e-12 * max(abs(v) for v in a.data)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(aug[r][col]))
        if abs(aug[piv][col]) <= tol:
            raise Singular("pivot below tolerance at column {}".format(col))
        aug[col], aug[piv] = aug[piv], aug[col]
        pval = aug[col][col]
        for j in range(2 * n):
            aug[col][j] = _f64_div(aug[col][j], pval)
        for r in range(n):
            if r != col and aug[r][col] != 0.0:
                f = aug[r][col]
                for j in range(2 * n):
                    aug[r][j] -= f * aug[col][j]
    data = [aug[i][n + j] for j in range(n) for i in range(n)]
    return MatValue(F64, n, n, tuple(data))


_MATH1 = {"sqrt": math.sqrt, "sin": math.sin, "cos": math.cos}


def elem_math(fn: str, *args: MatValue) -> MatValue:
    for m in args:
        if m.dtype != F64:
            raise DtypeMismatch("{} needs f64".format(fn))
    if fn == "atan2":
        y, x = args
        if y.shape != x.shape:
            raise ShapeMismatch("atan2 args {} vs {}".format(y.shape, x.shape))
        data = [math.atan2(yv, xv) for yv, xv in zip(y.data, x.data)]
        return MatValue(F64, y.rows, y.cols, tuple(data))
    (a,) = args
    f = _MATH1[fn]
    return MatValue(F64, a.rows, a.cols, tuple(f(v) for v in a.data))
