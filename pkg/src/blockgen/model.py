"""Block-diagram models: parsing, type/size inference, constant propagation,
scheduling, the code-generation driver, and direct numeric simulation.

Model files are line-based text (grammar in the README): a `model` header,
`input`/`output` port declarations, `block`, `link` and `region` lines.
Matrix literals are written row-major with explicit dimensions and stored
column-major.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field

from . import matval as mv
from .matval import Dtype, MatValue, BOOL, F64
from . import blocks as blockmod
from .blocks import BlockRecord, IoList, StateList
from . import cemit
from .cemit import EmitConfig
from . import optimizer
from .directives import CallTarget, codegen_init, finalize_program, if_cos, inouts, inouts_insert
from .trace import (
    BVar, CopyMat, Program, Store, TraceContext, _force_named, _nom,
    _operand_expr, numerics,
)


class ModelError(Exception):
    pass


class ParseError(ModelError):
    pass


class Conflict(ModelError):
    pass


class Undetermined(ModelError):
    pass


class AlgebraicLoop(ModelError):
    pass


# ---------------------------------------------------------------------------
# the model


@dataclass
class BlockSpec:
    id: int
    kind: str
    params: dict = field(default_factory=dict)
    n_in: int = 0
    n_out: int = 0
    out_sig: dict = field(default_factory=dict)  # port -> (dtype, rows, cols)


@dataclass
class LinkSpec:
    id: int
    src: tuple                  # ("block", id, port) or ("in", k)
    dsts: list                  # of ("block", id, port) or ("out", k)
    dtype: Dtype = None
    rows: int = None
    cols: int = None
    const_value: MatValue = None

    @property
    def shape(self):
        return (self.rows, self.cols)


@dataclass
class PortSpec:
    index: int
    dtype: Dtype
    rows: int
    cols: int
    input: bool


@dataclass
class RegionSpec:
    ifthenelse: int
    then_blocks: list
    else_blocks: list
    select: int

    @property
    def members(self):
        return {self.ifthenelse, self.select, *self.then_blocks, *self.else_blocks}


@dataclass
class Model:
    base_id: int = 1000
    blocks: dict = field(default_factory=dict)
    links: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    regions: list = field(default_factory=list)
    inferred: bool = False
    folded_blocks: set = field(default_factory=set)

    def region_of(self, block_id):
        for r in self.regions:
            if block_id in r.members:
                return r
        return None


@dataclass
class Schedule:
    init_order: list
    output_order: list  # block ids and ("region", RegionSpec) entries
    state_order: list


# ---------------------------------------------------------------------------
# parsing


_LITERAL = re.compile(r"^(f64|bool|i8|i16|i32|u8|u16|u32)\[(\d+)x(\d+)\](?:\((.*)\))?$")
_NUMBER = re.compile(r"^-?(\d+\.?\d*([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?)$")


def _parse_value(text: str):
    m = _LITERAL.match(text)
    if m:
        dtype = mv.DTYPES[m.group(1)]
        rows, cols = int(m.group(2)), int(m.group(3))
        if m.group(4) is None:
            return ("sig", dtype, rows, cols)
        raw = m.group(4).replace(",", " ").split()
        if len(raw) != rows * cols:
            raise ParseError("literal needs {} entries, got {}".format(rows * cols, len(raw)))
        vals = [_scan_number(v, dtype) for v in raw]
        flat = [vals[i * cols + j] for j in range(cols) for i in range(rows)]  # row-major in
        return mv.make(dtype, rows, cols, flat)
    if _NUMBER.match(text):
        return mv.scalar(float(text))
    if text in ("true", "false"):
        return mv.scalar(text == "true", BOOL)
    return text  # bare word: op names, behavior names


def _scan_number(tok: str, dtype: Dtype):
    if dtype.is_bool:
        if tok in ("1", "true", "TRUE"):
            return True
        if tok in ("0", "false", "FALSE"):
            return False
        raise ParseError("bad bool literal {!r}".format(tok))
    return float(tok) if dtype.is_float else int(tok)


def _split_fields(text: str):
    """Whitespace split that keeps parenthesized literals together."""
    parts, cur, depth = [], [], 0
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch.isspace() and depth == 0:
            if cur:
                parts.append("".join(cur))
                cur = []
        else:
            cur.append(ch)
    if cur:
        parts.append("".join(cur))
    return parts


def _parse_endpoint(text: str, src: bool):
    text = text.strip()
    if text.startswith("in:"):
        if not src:
            raise ParseError("an input port cannot be a destination")
        return ("in", int(text[3:]))
    if text.startswith("out:"):
        if src:
            raise ParseError("an output port cannot be a source")
        return ("out", int(text[4:]))
    if "." not in text:
        raise ParseError("bad endpoint {!r}".format(text))
    b, p = text.split(".")
    return ("block", int(b), int(p))


def parse_model(text: str) -> Model:
    model = Model()
    seen_model = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            head, rest = (line.split(None, 1) + [""])[:2]
            if head == "model":
                model.base_id = int(rest.split()[0])
                seen_model = True
            elif head in ("input", "output"):
                idx, dt, r, c = rest.split()
                port = PortSpec(int(idx), mv.DTYPES[dt], int(r), int(c), head == "input")
                (model.inputs if head == "input" else model.outputs).append(port)
            elif head == "block":
                parts = _split_fields(rest)
                bid, kind = int(parts[0]), parts[1]
                if bid in model.blocks:
                    raise ParseError("duplicate block id {}".format(bid))
                if kind not in blockmod.ARITY and kind != "sciblk":
                    raise ParseError("unknown block kind {!r}".format(kind))
                params, out_sig = {}, {}
                for kv in parts[2:]:
                    key, _, val = kv.partition("=")
                    if not _:
                        raise ParseError("bad parameter {!r}".format(kv))
                    parsed = _parse_value(val)
                    m = re.match(r"^out(\d+)$", key)
                    if m and isinstance(parsed, tuple) and parsed[0] == "sig":
                        out_sig[int(m.group(1))] = parsed[1:]
                    else:
                        if isinstance(parsed, tuple) and parsed[0] == "sig":
                            raise ParseError("signature value for parameter {!r}".format(key))
                        params[key] = parsed
                model.blocks[bid] = BlockSpec(bid, kind, params, out_sig=out_sig)
            elif head == "link":
                lid_s, rest2 = rest.split(None, 1)
                lid = int(lid_s)
                if lid in model.links:
                    raise ParseError("duplicate link id {}".format(lid))
                src_s, dst_s = rest2.split("->")
                src = _parse_endpoint(src_s, src=True)
                dsts = [_parse_endpoint(d, src=False) for d in dst_s.split(",")]
                model.links[lid] = LinkSpec(lid, src, dsts)
            elif head == "region":
                m = re.match(r"^(\d+)\s+then=\[([\d\s,]*)\]\s+else=\[([\d\s,]*)\]\s+select=(\d+)$",
                             rest)
                if not m:
                    raise ParseError("bad region line")
                model.regions.append(RegionSpec(
                    int(m.group(1)),
                    [int(x) for x in m.group(2).replace(",", " ").split()],
                    [int(x) for x in m.group(3).replace(",", " ").split()],
                    int(m.group(4))))
            else:
                raise ParseError("unknown directive {!r}".format(head))
        except ParseError:
            raise
        except Exception as e:
            raise ParseError("line {}: {}".format(lineno, e)) from e
    if not seen_model:
        raise ParseError("missing model header")
    _validate_structure(model)
    return model


def _validate_structure(model: Model):
    for link in model.links.values():
        if link.src[0] == "block" and link.src[1] not in model.blocks:
            raise ParseError("link {}: unknown source block {}".format(link.id, link.src[1]))
        for d in link.dsts:
            if d[0] == "block" and d[1] not in model.blocks:
                raise ParseError("link {}: unknown destination block {}".format(link.id, d[1]))
            if d[0] == "out" and not any(p.index == d[1] for p in model.outputs):
                raise ParseError("link {}: unknown output port {}".format(link.id, d[1]))
        if link.src[0] == "in" and not any(p.index == link.src[1] for p in model.inputs):
            raise ParseError("link {}: unknown input port {}".format(link.id, link.src[1]))
    # port counts per block, then arity checks
    for b in model.blocks.values():
        b.n_in = max([d[2] for l in model.links.values() for d in l.dsts
                      if d[0] == "block" and d[1] == b.id] or [0])
        b.n_out = max([l.src[2] for l in model.links.values()
                       if l.src[0] == "block" and l.src[1] == b.id] or [0])
        if b.kind == "sciblk":
            b.n_out = max([b.n_out] + list(b.out_sig))
            continue
        n_in, n_out, _ = blockmod.ARITY[b.kind]
        if n_in is not None and b.n_in != n_in:
            raise ParseError("block {} ({}): {} inputs connected, needs {}"
                             .format(b.id, b.kind, b.n_in, n_in))
        if n_out is not None and b.n_out > n_out:
            raise ParseError("block {} ({}): too many outputs".format(b.id, b.kind))
        if n_out is not None:
            b.n_out = n_out
    for r in model.regions:
        if model.blocks[r.ifthenelse].kind != "ifthenelse":
            raise ParseError("region head {} is not an ifthenelse block".format(r.ifthenelse))
        if model.blocks[r.select].kind != "select":
            raise ParseError("region select {} is not a select block".format(r.select))
        for bid in r.then_blocks + r.else_blocks:
            if blockmod.ARITY.get(model.blocks[bid].kind, (0, 0, 0))[2]:
                raise ModelError("block {} inside a conditional branch has state".format(bid))
            # only the select's value leaves a region: branch results are
            # conditional, so nothing outside may consume them directly
            for l in model.links.values():
                if l.src == ("block", bid) or (l.src[0] == "block" and l.src[1] == bid):
                    for d in l.dsts:
                        if d[0] != "block" or d[1] not in r.members:
                            raise ModelError(
                                "link {} leaves the conditional region of block {}"
                                .format(l.id, r.ifthenelse))
    heads = {r.ifthenelse for r in model.regions}
    for b in model.blocks.values():
        if b.kind == "ifthenelse" and b.id not in heads:
            raise ParseError("ifthenelse block {} has no region line".format(b.id))


# ---------------------------------------------------------------------------
# inference


def _in_links(model, bid):
    """Input links of a block ordered by destination port index."""
    found = {}
    for l in model.links.values():
        for d in l.dsts:
            if d[0] == "block" and d[1] == bid:
                found[d[2]] = l
    return [found[k] for k in sorted(found)]


def _out_links(model, bid):
    found = {}
    for l in model.links.values():
        if l.src[0] == "block" and l.src[1] == bid:
            found[l.src[2]] = l
    return [found[k] for k in sorted(found)]


def _out_slot_templates(model, b):
    """(link-or-None, dtype, rows, cols) per output port, honoring gaps.

    An unconnected output adopts the first input link's signature (the only
    case that arises is a delay or gain nobody listens to)."""
    by_port = {l.src[2]: l for l in model.links.values()
               if l.src[0] == "block" and l.src[1] == b.id}
    fallback = None
    for l in _in_links(model, b.id):
        fallback = (l.dtype, l.rows, l.cols)
        break
    out = []
    for port in range(1, b.n_out + 1):
        link = by_port.get(port)
        if link is not None:
            out.append((link, link.dtype, link.rows, link.cols))
        elif fallback is not None:
            out.append((None,) + fallback)
        else:
            out.append((None, F64, 1, 1))
    return out


def _unify_dtype(link: LinkSpec, dtype: Dtype):
    if dtype is None:
        return False
    if link.dtype is None:
        link.dtype = dtype
        return True
    if link.dtype != dtype:
        raise Conflict("link {}: dtype {} vs {}".format(link.id, link.dtype, dtype))
    return False


def _unify_shape(link: LinkSpec, rows, cols):
    if rows is None:
        return False
    changed = False
    if link.rows is None:
        link.rows, link.cols = rows, cols
        changed = True
    elif (link.rows, link.cols) != (rows, cols):
        raise Conflict("link {}: shape {}x{} vs {}x{}".format(
            link.id, link.rows, link.cols, rows, cols))
    return changed


def infer(model: Model) -> Model:
    """Fixed-point dtype/shape propagation over the link graph."""
    for link in model.links.values():
        if link.src[0] == "in":
            p = next(p for p in model.inputs if p.index == link.src[1])
            _unify_dtype(link, p.dtype)
            _unify_shape(link, p.rows, p.cols)
        for d in link.dsts:
            if d[0] == "out":
                p = next(p for p in model.outputs if p.index == d[1])
                _unify_dtype(link, p.dtype)
                _unify_shape(link, p.rows, p.cols)
    changed = True
    while changed:
        changed = False
        for b in model.blocks.values():
            ins = _in_links(model, b.id)
            outs = _out_links(model, b.id)
            if b.kind == "const":
                v = b.params["value"]
                for l in outs:
                    changed |= _unify_dtype(l, v.dtype)
                    changed |= _unify_shape(l, v.rows, v.cols)
            elif b.kind == "unit_delay":
                group = ins + outs
                dt = next((l.dtype for l in group if l.dtype), None)
                sh = next((l.shape for l in group if l.rows is not None), (None, None))
                for l in group:
                    changed |= _unify_dtype(l, dt)
                    changed |= _unify_shape(l, *sh)
            elif b.kind == "gain":
                i, o = ins[0], outs[0]
                changed |= _unify_dtype(o, i.dtype)
                changed |= _unify_dtype(i, o.dtype)
                g = b.params["gain"]
                if g.is_scalar:
                    changed |= _unify_shape(o, *i.shape) if i.rows is not None else False
                    changed |= _unify_shape(i, *o.shape) if o.rows is not None else False
                else:
                    if i.rows is not None and i.rows != g.cols:
                        raise Conflict("gain {}: input rows {} vs gain cols {}"
                                       .format(b.id, i.rows, g.cols))
                    if i.cols is not None:
                        changed |= _unify_shape(o, g.rows, i.cols)
                    if o.cols is not None:
                        changed |= _unify_shape(i, g.cols, o.cols)
            elif b.kind in ("summation", "select"):
                group = ins + outs
                dt = next((l.dtype for l in group if l.dtype), None)
                sh = next((l.shape for l in group if l.rows is not None), (None, None))
                for l in group:
                    changed |= _unify_dtype(l, dt)
                    changed |= _unify_shape(l, *sh)
            elif b.kind == "mux":
                o = outs[0]
                dt = next((l.dtype for l in ins + outs if l.dtype), None)
                for l in ins + outs:
                    changed |= _unify_dtype(l, dt)
                if all(l.rows is not None for l in ins):
                    cols = {l.cols for l in ins}
                    if len(cols) > 1:
                        raise Conflict("mux {}: mixed column counts".format(b.id))
                    changed |= _unify_shape(o, sum(l.rows for l in ins), cols.pop())
            elif b.kind == "relational_op":
                a, c = ins
                dt = a.dtype or c.dtype
                changed |= _unify_dtype(a, dt)
                changed |= _unify_dtype(c, dt)
                sh = a.shape if a.rows is not None else c.shape
                if sh[0] is not None:
                    changed |= _unify_shape(a, *sh)
                    changed |= _unify_shape(c, *sh)
                    changed |= _unify_shape(outs[0], *sh)
            elif b.kind == "ifthenelse":
                changed |= _unify_shape(ins[0], 1, 1)
            elif b.kind == "sciblk":
                for port, (dt, r, c) in b.out_sig.items():
                    for l in outs:
                        if l.src[2] == port:
                            changed |= _unify_dtype(l, dt)
                            changed |= _unify_shape(l, r, c)
    for link in model.links.values():
        if link.dtype is None and link.src[0] == "block" \
                and model.blocks[link.src[1]].kind == "relational_op":
            link.dtype = BOOL
    for link in model.links.values():
        if link.dtype is None or link.rows is None:
            raise Undetermined("link {} has no inferred dtype/shape".format(link.id))
    model.inferred = True
    return model


# ---------------------------------------------------------------------------
# constant propagation


_STATELESS_FOLDABLE = ("gain", "summation", "mux", "relational_op")


def propagate_constants(model: Model) -> Model:
    """Links fed only by const blocks through stateless paths carry values;
    those links and blocks drop out of the generated code."""
    region_members = set()
    for r in model.regions:
        region_members |= r.members
    changed = True
    while changed:
        changed = False
        for b in model.blocks.values():
            if b.id in model.folded_blocks:
                continue
            outs = _out_links(model, b.id)
            if b.kind == "const":
                for l in outs:
                    l.const_value = mv.convert(b.params["value"], l.dtype)
                model.folded_blocks.add(b.id)
                changed = True
            elif b.kind in _STATELESS_FOLDABLE and b.id not in region_members:
                ins = _in_links(model, b.id)
                if ins and all(l.const_value is not None for l in ins):
                    values, _ = _run_numeric(None, b, [numerics(l.const_value) for l in ins],
                                             [], model, flag=1)
                    for l, v in zip(outs, values):
                        l.const_value = mv.convert(v.value, l.dtype)
                    model.folded_blocks.add(b.id)
                    changed = True
    return model


# ---------------------------------------------------------------------------
# scheduling


def _schedule_subset(model: Model, block_ids):
    """Topological order of a set of plain blocks (no regions)."""
    deps = {b: set() for b in block_ids}
    for l in model.links.values():
        if l.const_value is not None or l.src[0] != "block":
            continue
        if l.src[1] not in block_ids:
            continue
        for d in l.dsts:
            if d[0] == "block" and d[1] in block_ids and \
                    model.blocks[d[1]].kind != "unit_delay":
                deps[d[1]].add(l.src[1])
    return _topo(deps)


def _node_key(n):
    """Ties break on ascending block id; a region sorts at its head's id."""
    return n[1] if isinstance(n, tuple) else n


def _topo(deps):
    ready = [(_node_key(n), n) for n in deps if not deps[n]]
    heapq.heapify(ready)
    queued = {n for _, n in ready}
    order = []
    done = set()
    while ready:
        _, n = heapq.heappop(ready)
        order.append(n)
        done.add(n)
        for m in deps:
            if m not in done and m not in queued and deps[m] <= done:
                heapq.heappush(ready, (_node_key(m), m))
                queued.add(m)
    if len(order) != len(deps):
        cyc = sorted(_node_key(n) for n in set(deps) - set(order))
        raise AlgebraicLoop("algebraic loop through blocks {}".format(cyc))
    return order


def schedule(model: Model) -> Schedule:
    if not model.inferred:
        raise ModelError("schedule needs an inferred model")
    region_by_member = {}
    for r in model.regions:
        for m in r.members:
            region_by_member[m] = r
    live = [b for b in model.blocks if b not in model.folded_blocks]

    def node_of(bid):
        r = region_by_member.get(bid)
        return ("region", r.ifthenelse) if r else bid

    deps = {node_of(b): set() for b in live}
    for l in model.links.values():
        if l.const_value is not None or l.src[0] != "block" or l.src[1] not in live:
            continue
        src_node = node_of(l.src[1])
        for d in l.dsts:
            if d[0] != "block" or d[1] not in live:
                continue
            if model.blocks[d[1]].kind == "unit_delay":
                continue  # delay inputs are consumed in the state phase
            dst_node = node_of(d[1])
            if dst_node != src_node:
                deps[dst_node].add(src_node)
    order = _topo(deps)
    output_order = []
    for n in order:
        if isinstance(n, tuple):
            output_order.append(("region", region_by_member[n[1]]))
        else:
            output_order.append(n)
    stateful = sorted(b for b in live
                      if blockmod.ARITY.get(model.blocks[b].kind, (0, 0, 0))[2])
    return Schedule(init_order=list(stateful), output_order=output_order,
                    state_order=list(stateful))


# ---------------------------------------------------------------------------
# the generation driver


@dataclass
class CodegenResult:
    text: str
    program: Program
    context: TraceContext
    model: Model
    schedule: Schedule


class _Driver:
    """Shared machinery: holds link values and per-link homes during one
    output/state pass, numeric (simulation) or symbolic (generation)."""

    def __init__(self, model: Model, sched: Schedule):
        self.model = model
        self.sched = sched
        self.linkvals = {}
        for l in model.links.values():
            if l.const_value is not None:
                self.linkvals[l.id] = numerics(l.const_value)

    def lazy_link(self, link, reader):
        def resolve():
            try:
                return self.linkvals[link.id]
            except KeyError:
                raise ModelError(
                    "block {} read link {} before it was computed".format(reader, link.id))
        return resolve


def _run_numeric(ctx, bspec: BlockSpec, in_vals, state_vals, model, flag):
    """Run one block behavior on numeric bvars; returns output slot values."""
    n_in = len(in_vals)
    out_slots = [numerics(mv.zeros(dt, r, c))
                 for (_, dt, r, c) in _out_slot_templates(model, bspec)]
    io = IoList(in_vals + out_slots, n_in)
    st = StateList(state_vals, ctx=None)
    blk = BlockRecord(ctx or TraceContext(), io, st, dict(bspec.params))
    blockmod.behavior(bspec.kind)(blk, flag)
    return io.slots[n_in:], st


def _init_states(model: Model, sched: Schedule):
    """Flag -1 pass: numeric, produces every state's initial value."""
    states = {}
    for bid in sched.init_order:
        b = model.blocks[bid]
        ins = _in_links(model, bid)
        in_vals = [numerics(mv.zeros(l.dtype, l.rows, l.cols)) for l in ins]
        n_states = blockmod.ARITY.get(b.kind, (0, 0, 0))[2]
        st_vals = [numerics(mv.scalar(0.0))] * n_states
        _, st = _run_numeric(None, b, in_vals, st_vals, model, flag=-1)
        states[bid] = [e.value for e in st.entries]
    return states


def generate(model: Model, cfg: EmitConfig = None, opts: optimizer.OptOptions = None) -> CodegenResult:
    """Trace the model into pseudo-code and emit the C program."""
    model = infer(model) if not model.inferred else model
    model = propagate_constants(model)
    sched = schedule(model)
    base = model.base_id
    cfg = cfg or EmitConfig(block_id=base)

    ctx = codegen_init()
    init_values = _init_states(model, sched)

    # states become persistents, in init order
    state_names = {}
    j = 0
    for bid in sched.init_order:
        names = []
        for value in init_values[bid]:
            j += 1
            name = "z_{}".format(base * 10 + j)
            ctx.register_static(name, value)
            names.append(name)
        state_names[bid] = names

    # superblock ports: inputs first, then outputs
    io = inouts(ctx)
    ports_meta = []
    for p in sorted(model.inputs, key=lambda p: p.index) + \
            sorted(model.outputs, key=lambda p: p.index):
        name = "inouts{}".format(len(ports_meta) + 1)
        inouts_insert(io, name, mv.zeros(p.dtype, p.rows, p.cols))
        ports_meta.append({"name": name, "dtype": p.dtype, "rows": p.rows,
                           "cols": p.cols, "input": p.input})
    io_names = tuple(e for e in io.entries)

    drv = _Driver(model, sched)
    for p, meta in zip(sorted(model.inputs, key=lambda p: p.index), ports_meta):
        for l in model.links.values():
            if l.src == ("in", p.index):
                drv.linkvals[l.id] = io.entries[meta["name"]]
    out_port_names = {}
    for p, meta in zip(sorted(model.outputs, key=lambda p: p.index),
                       ports_meta[len(model.inputs):]):
        out_port_names[p.index] = meta["name"]

    # links read by the state phase need a durable home; so do links read
    # inside branch functions, which can only touch ports and globals
    state_read_links = set()
    for bid in sched.state_order:
        for l in _in_links(model, bid):
            state_read_links.add(l.id)
    region_read_links = set()
    region_out_links = set()
    for r in model.regions:
        for l in _out_links(model, r.select):
            region_out_links.add(l.id)
        for bid in r.then_blocks + r.else_blocks + [r.select]:
            for l in _in_links(model, bid):
                if l.src[0] == "block" and l.src[1] in r.members:
                    continue  # stays local to the branch function
                region_read_links.add(l.id)

    n_branch_fns = 2 * len([n for n in sched.output_order if isinstance(n, tuple)])
    main_id = base * 10 + n_branch_fns + 1
    fn_counter = [0]

    def link_static_name(link):
        return "link{}".format(base * 10 + link.id)

    def route_output(link, value: BVar):
        if not value.sym:
            value = numerics(mv.convert(value.value, link.dtype))
        elif not value.is_scalar and value.dtype != link.dtype:
            raise ModelError("link {}: produced {} but link is {}".format(
                link.id, value.dtype, link.dtype))
        port_dsts = [d for d in link.dsts if d[0] == "out"]
        for d in port_dsts:
            pname = out_port_names[d[1]]
            _copy_into_storage(ctx, pname, value, link)
        if port_dsts:
            drv.linkvals[link.id] = io.entries[out_port_names[port_dsts[0][1]]]
            return
        durable = (not value.sym) or value.storage in ("arg", "static")
        needs_durable = link.id in state_read_links or link.id in region_read_links
        if link.id in region_out_links or (needs_durable and not durable):
            sname = link_static_name(link)
            if sname not in ctx.statics:
                default = mv.convert(_nom(value), link.dtype)
                ctx.register_static(sname, default)
            _copy_into_storage(ctx, sname, value, link)
            drv.linkvals[link.id] = BVar(ctx, True, ctx.statics[sname].default,
                                         sname, storage="static")
            return
        drv.linkvals[link.id] = value

    def trace_block(bid, flag, branch=None):
        b = model.blocks[bid]
        ins = _in_links(model, bid)
        out_templates = _out_slot_templates(model, b)
        in_vals = [drv.lazy_link(l, bid) for l in ins]
        out_slots = [numerics(mv.zeros(dt, r, c)) for (_, dt, r, c) in out_templates]
        io_list = IoList(in_vals + out_slots, len(in_vals))
        st_entries = []
        for name in state_names.get(bid, []):
            st_entries.append(BVar(ctx, True, ctx.statics[name].default, name,
                                   storage="static"))
        st = StateList(st_entries, ctx=ctx)
        blk = BlockRecord(ctx, io_list, st, dict(b.params))
        if branch is not None:
            blk.params["active_branch"] = branch
        blockmod.behavior(b.kind)(blk, flag)
        if flag == 1:
            if st.written:
                raise blockmod.FlagPurityError(
                    "block {} wrote state during the output phase".format(bid))
            # flush link-homed outputs before port-homed ones
            pending = [(t[0], value) for t, value in
                       zip(out_templates, io_list.slots[len(in_vals):])
                       if t[0] is not None]
            for link, value in pending:
                if not any(d[0] == "out" for d in link.dsts):
                    route_output(link, value)
            for link, value in pending:
                if any(d[0] == "out" for d in link.dsts):
                    route_output(link, value)
        elif flag == 2:
            if io_list.written:
                raise blockmod.FlagPurityError(
                    "block {} wrote outputs during the state phase".format(bid))
            for k, entry in enumerate(st.entries):
                if k in st.written:
                    _copy_into_storage(ctx, state_names[bid][k], entry, None)

    def trace_region(region: RegionSpec):
        cond_link = _in_links(model, region.ifthenelse)[0]
        cond = drv.linkvals[cond_link.id]
        fids = []
        for branch_blocks, branch_idx in ((region.then_blocks, 1), (region.else_blocks, 2)):
            fn_counter[0] += 1
            fid = base * 10 + fn_counter[0]
            fids.append("updateOutput{}".format(fid))
            ctx.push_function(fids[-1], io)
            for bid in _schedule_subset(model, set(branch_blocks) - model.folded_blocks):
                trace_block(bid, 1)
            trace_block(region.select, 1, branch=branch_idx)
            ctx.pop_function(fids[-1])
        if_cos(ctx, cond, CallTarget(fids[0], io_names), CallTarget(fids[1], io_names))

    # ---- output phase
    update_output = "updateOutput{}".format(main_id)
    ctx.push_function(update_output, io)
    for node in sched.output_order:
        if isinstance(node, tuple):
            trace_region(node[1])
        else:
            trace_block(node, 1)
    ctx.pop_function(update_output)

    # ---- state phase
    update_state = "updateState{}".format(main_id)
    ctx.push_function(update_state, io)
    for bid in sched.state_order:
        trace_block(bid, 2)
    ctx.pop_function(update_state)

    meta = {"ports": ports_meta, "update_output": update_output,
            "update_state": update_state, "base_id": base}
    program = finalize_program(ctx, opts, init_name="initialize{}".format(base), meta=meta)
    text = cemit.emit_program(program, cfg)
    return CodegenResult(text, program, ctx, model, sched)


def _copy_into_storage(ctx, dst_name, value: BVar, link):
    """Emit the copy of a block output into a port or static."""
    if value.is_scalar:
        ctx.emit(Store(dst_name, _operand_expr(value)))
        return
    src = _force_named(ctx, value)
    ctx.emit(CopyMat(dst_name, src.name, value.size))


# ---------------------------------------------------------------------------
# direct numeric simulation


def simulate(model: Model, inputs_per_step, steps: int):
    """Run the model numerically: per step all blocks at flag 1 in output
    order, then flag 2 in state order; returns output-port values."""
    model = infer(model) if not model.inferred else model
    model = propagate_constants(model)
    sched = schedule(model)
    states = _init_states(model, sched)
    scratch = TraceContext()

    in_ports = sorted(model.inputs, key=lambda p: p.index)
    out_ports = sorted(model.outputs, key=lambda p: p.index)
    port_buffers = {p.index: mv.zeros(p.dtype, p.rows, p.cols) for p in out_ports}

    drv = _Driver(model, sched)

    def run_block(bid, flag, branch=None):
        b = model.blocks[bid]
        ins = _in_links(model, bid)
        out_templates = _out_slot_templates(model, b)
        in_vals = [drv.lazy_link(l, bid) for l in ins]
        out_slots = [numerics(mv.zeros(dt, r, c)) for (_, dt, r, c) in out_templates]
        io_list = IoList(in_vals + out_slots, len(in_vals))
        st = StateList([numerics(v) for v in states.get(bid, [])], ctx=None)
        blk = BlockRecord(scratch, io_list, st, dict(b.params))
        if branch is not None:
            blk.params["active_branch"] = branch
        blockmod.behavior(b.kind)(blk, flag)
        if flag == 2:
            states[bid] = [mv.convert(e.value, states[bid][k].dtype)
                           for k, e in enumerate(st.entries)]
            return
        for (link, _, _, _), value in zip(out_templates, io_list.slots[len(in_vals):]):
            if link is None:
                continue
            v = mv.convert(value.value, link.dtype)
            drv.linkvals[link.id] = numerics(v)
            for d in link.dsts:
                if d[0] == "out":
                    p = next(p for p in out_ports if p.index == d[1])
                    port_buffers[d[1]] = mv.convert(v, p.dtype)

    outputs = []
    for step in range(steps):
        stimuli = inputs_per_step[step]
        for p, v in zip(in_ports, stimuli):
            v = mv.convert(v, p.dtype) if isinstance(v, MatValue) else \
                mv.convert(mv.scalar(v), p.dtype)
            if v.shape != (p.rows, p.cols):
                raise ModelError("input {}: shape {} vs port {}x{}"
                                 .format(p.index, v.shape, p.rows, p.cols))
            for l in model.links.values():
                if l.src == ("in", p.index):
                    drv.linkvals[l.id] = numerics(v)
        for node in sched.output_order:
            if isinstance(node, tuple):
                region = node[1]
                cond_link = _in_links(model, region.ifthenelse)[0]
                cond = drv.linkvals[cond_link.id].value.data[0]
                branch_blocks, branch_idx = (region.then_blocks, 1) if cond > 0 \
                    else (region.else_blocks, 2)
                for bid in _schedule_subset(model, set(branch_blocks) - model.folded_blocks):
                    run_block(bid, 1)
                run_block(region.select, 1, branch=branch_idx)
            else:
                run_block(node, 1)
        outputs.append([port_buffers[p.index] for p in out_ports])
        for bid in sched.state_order:
            run_block(bid, 2)
    return outputs
