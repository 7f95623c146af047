"""The block library.

Each behavior is an ordinary function over a block record and a flag
(-1 init, 1 output update, 2 state update), written purely against bvar
operations, so the same code both simulates numerically and traces
symbolically. Reads and writes of the io/state lists route through the
record so that symbolic access emits pseudo-code; parameters are always
concrete values, evaluated once at generation time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import matval as mv
from .matval import F64
from .directives import put_annotation
from .trace import (
    BVar, TraceContext, _def_scalar, _operand_expr, atan2, bv_compare,
    bv_convert, bv_datatype, cos, numerics, sin, sqrt, vertcat, horzcat,
)


class BlockError(Exception):
    pass


class FlagPurityError(BlockError):
    pass


INIT, OUTPUT, STATE = -1, 1, 2


class IoList:
    """Block inputs then outputs, 1-based; index -1 is the last slot.

    Input slots may be zero-argument callables resolved on first read, so a
    block scheduled before its input link is computed (a delay) can run."""

    def __init__(self, slots, n_in):
        self.slots = list(slots)
        self.n_in = n_in
        self.written = set()

    def _index(self, k):
        if k == -1:
            return len(self.slots) - 1
        if not 1 <= k <= len(self.slots):
            raise BlockError("io index {} out of 1..{}".format(k, len(self.slots)))
        return k - 1

    def __len__(self):
        return len(self.slots)

    def __getitem__(self, k) -> BVar:
        v = self.slots[self._index(k)]
        if callable(v) and not isinstance(v, BVar):
            v = v()
            self.slots[self._index(k)] = v
        return v

    def __setitem__(self, k, v):
        i = self._index(k)
        if i < self.n_in:
            raise BlockError("write to input slot {}".format(k))
        if not isinstance(v, BVar):
            v = numerics(v)
        self.slots[i] = v
        self.written.add(i)


class StateList:
    """Block states, 1-based. Reading a symbolic scalar state emits a
    copy-definition; writes are collected for the driver to flush."""

    def __init__(self, entries, ctx: TraceContext = None):
        self.entries = list(entries)
        self.ctx = ctx
        self.written = set()

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, k) -> BVar:
        e = self.entries[k - 1]
        if e.sym and e.is_scalar and self.ctx is not None:
            return _def_scalar(self.ctx, _operand_expr(e), e.value)
        return e

    def __setitem__(self, k, v):
        if not isinstance(v, BVar):
            v = numerics(v)
        self.entries[k - 1] = v
        self.written.add(k - 1)


@dataclass
class BlockRecord:
    ctx: TraceContext
    io: IoList
    state: StateList
    params: dict = field(default_factory=dict)


BEHAVIORS = {}


def register_block(kind):
    def wrap(fn):
        BEHAVIORS[kind] = fn
        return fn
    return wrap


def behavior(kind):
    try:
        return BEHAVIORS[kind]
    except KeyError:
        raise BlockError("unknown block kind {!r}".format(kind))


# block kind -> (inputs, outputs, states); None means link-determined
ARITY = {
    "unit_delay": (1, 1, 1),
    "gain": (1, 1, 0),
    "summation": (None, 1, 0),
    "mux": (None, 1, 0),
    "relational_op": (2, 1, 0),
    "const": (0, 1, 0),
    "select": (2, 1, 0),
    "ifthenelse": (1, 0, 0),
    "sciblk": (None, None, 0),
}


@register_block("unit_delay")
def unit_delay(blk: BlockRecord, flag: int):
    if flag == OUTPUT:
        blk.io[2] = blk.state[1]
    elif flag == STATE:
        blk.state[1] = blk.io[1]
    elif flag == INIT:
        z = bv_convert(numerics(blk.params["init"]), bv_datatype(blk.io[1]))
        if z.size == 1 and blk.io[1].size > 1:
            rows, cols = blk.io[1].shape
            z = z * bv_convert(numerics(mv.ones(F64, rows, cols)), z.dtype)
        blk.state[1] = z


@register_block("gain")
def gain(blk: BlockRecord, flag: int):
    if flag == OUTPUT:
        put_annotation(blk.ctx, "Gain block begins.")
        blk.io[2] = bv_convert(numerics(blk.params["gain"]), bv_datatype(blk.io[1])) * blk.io[1]
        put_annotation(blk.ctx, "Gain block ends.")


@register_block("summation")
def summation(blk: BlockRecord, flag: int):
    if flag != OUTPUT:
        return
    nin = len(blk.io) - 1
    signs = blk.params["signs"].data
    put_annotation(blk.ctx, "Sum block begins with {} inputs.".format(nin))
    if nin == 1:
        put_annotation(blk.ctx, "Using the sum function.")
        from .trace import bv_sum
        if signs[0] == -1:
            out = -bv_sum(blk.io[1])
        elif signs[0] == 1:
            out = bv_sum(blk.io[1])
        else:
            raise BlockError("wrong sign: {}".format(signs[0]))
    else:
        if signs[0] == -1:
            out = -blk.io[1]
        elif signs[0] == 1:
            out = blk.io[1]
        else:
            raise BlockError("wrong sign: {}".format(signs[0]))
        for i in range(2, nin + 1):
            if signs[i - 1] == -1:
                out = out - blk.io[i]
            elif signs[i - 1] == 1:
                out = out + blk.io[i]
            else:
                raise BlockError("wrong sign: {}".format(signs[i - 1]))
    blk.io[-1] = out


@register_block("mux")
def mux(blk: BlockRecord, flag: int):
    if flag != OUTPUT:
        return
    nin = len(blk.io) - 1
    y = blk.io[1]
    put_annotation(blk.ctx, "MUX block begins with {} inputs.".format(nin))
    for i in range(2, nin + 1):
        y = vertcat(y, blk.io[i])
    blk.io[-1] = y
    put_annotation(blk.ctx, "MUX block ends.")


@register_block("relational_op")
def relational_op(blk: BlockRecord, flag: int):
    put_annotation(blk.ctx, "RELATIONALOP block starts")
    if flag == OUTPUT:
        out = bv_compare(blk.params["op"], blk.io[1], blk.io[2])
        blk.io[3] = bv_convert(out, bv_datatype(blk.io[3]))
    put_annotation(blk.ctx, "RELATIONALOP block ends")


@register_block("const")
def const(blk: BlockRecord, flag: int):
    if flag == OUTPUT:
        blk.io[1] = numerics(blk.params["value"])


@register_block("select")
def select(blk: BlockRecord, flag: int):
    if flag == OUTPUT:
        put_annotation(blk.ctx, "Selct block starts")
        put_annotation(blk.ctx, "Selct block ends")
        blk.io[-1] = blk.io[blk.params["active_branch"]]


@register_block("ifthenelse")
def ifthenelse(blk: BlockRecord, flag: int):
    # the structural conditional is lowered by the generation driver
    pass


@register_block("sciblk")
def sciblk(blk: BlockRecord, flag: int):
    fn = behavior(blk.params["behavior"])
    fn(blk, flag)


# ---------------------------------------------------------------------------
# user behaviors (registered through the same interface)


@register_block("ekf_range_bearing")
def ekf_range_bearing(blk: BlockRecord, flag: int):
    """Extended Kalman filter for planar object tracking.

    State [x; vx; y; vy]; measurements [range; bearing]. Inputs: the
    measurement, the delayed state estimate, the delayed covariance.
    Outputs: new state estimate, new covariance.
    """
    if flag != OUTPUT:
        return
    meas = blk.io[1]
    xhat = blk.io[2]
    P = blk.io[3]

    dt = 0.1
    Q = numerics(mv.diag([0.0, 0.1, 0.0, 0.1]))
    R = numerics(mv.diag([50.0 ** 2, 0.005 ** 2]))
    F = numerics(mv.from_rows([
        [1.0, dt, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, dt],
        [0.0, 0.0, 0.0, 1.0],
    ]))

    range_hat = sqrt(xhat[1] ** 2 + xhat[3] ** 2)
    bearing_hat = atan2(xhat[3], xhat[1])
    yhat = vertcat(range_hat, bearing_hat)
    H = vertcat(
        horzcat(cos(bearing_hat), 0.0, sin(bearing_hat), 0.0),
        horzcat(-sin(bearing_hat) / range_hat, 0.0, cos(bearing_hat) / range_hat, 0.0),
    )
    xhat = F * xhat
    P = F * P * F.T + Q
    K = (P * H.T) / (H * P * H.T + R)
    resid = meas - yhat
    xhat = xhat + K * resid
    n = K.shape[0]
    P = (numerics(mv.eye(n)) - K * H) * P

    blk.io[4] = xhat
    blk.io[5] = P
