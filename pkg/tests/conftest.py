import pathlib
import random

from blockgen import matval as mv
from blockgen.directives import (
    codegen_init, end_function, finalize_program, inouts, inouts_insert,
    start_function,
)
from blockgen.irinterp import Machine
from blockgen.trace import numerics

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


def load_model_text(name):
    return (FIXTURES / name).read_text()


def random_matvalue(rng: random.Random, dtype, rows, cols):
    data = []
    for _ in range(rows * cols):
        if dtype.is_float:
            data.append(rng.uniform(-10.0, 10.0))
        elif dtype.is_bool:
            data.append(rng.random() < 0.5)
        elif dtype.signed:
            data.append(rng.randint(-(1 << (dtype.width - 1)), (1 << (dtype.width - 1)) - 1))
        else:
            data.append(rng.randint(0, (1 << dtype.width) - 1))
    return mv.make(dtype, rows, cols, data)


def trace_op(op_fn, input_templates, nominal_fn=None):
    """Record op_fn over symbolic arguments and seal it as a one-function
    program whose last argument receives the result.

    input_templates fix dtype/shape; nominal values are zeros so that any
    accidental constant folding of nominals shows up when the program is
    replayed on real data.
    """
    probe = op_fn(*[numerics(v) for v in input_templates])
    out_template = probe.value
    ctx = codegen_init()
    io = inouts(ctx)
    names = []
    for k, v in enumerate(input_templates, 1):
        name = "a{}".format(k)
        names.append(name)
        inouts_insert(io, name, mv.zeros(v.dtype, v.rows, v.cols))
    inouts_insert(io, "res", mv.zeros(out_template.dtype, out_template.rows,
                                      out_template.cols))
    start_function(ctx, "f", io)
    result = op_fn(*[io.entries[n] for n in names])
    inouts_insert(io, "res", result)
    end_function(ctx, "f", io)
    return finalize_program(ctx), out_template


def run_traced(program, out_template, input_values):
    machine = Machine(program)
    args = list(input_values) + [mv.zeros(out_template.dtype, out_template.rows,
                                          out_template.cols)]
    return machine.run_function("f", args)[-1]


def assert_close(a: mv.MatValue, b: mv.MatValue, rel=1e-12):
    assert a.shape == b.shape, "{} vs {}".format(a.shape, b.shape)
    if not a.dtype.is_float:
        assert a.data == b.data, "{} vs {}".format(a.data, b.data)
        return
    for x, y in zip(a.data, b.data):
        denom = max(abs(x), abs(y), 1.0)
        assert abs(x - y) <= rel * denom, "{} vs {}".format(x, y)
