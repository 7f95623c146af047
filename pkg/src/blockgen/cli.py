"""Command-line front end: generate, simulate, validate, dump-ir."""

from __future__ import annotations

import argparse
import random
import sys

from . import matval as mv
from .cemit import EmitConfig, format_number
from .irinterp import Machine
from .model import generate, parse_model, simulate
from .optimizer import OptOptions


def _load(path):
    with open(path) as f:
        return parse_model(f.read())


def _opts(args) -> OptOptions:
    return OptOptions(dce=not args.no_dce, fold=not args.no_fold)


def _config(args, model) -> EmitConfig:
    return EmitConfig(block_id=model.base_id,
                      include_runtime_header=(args.emit == "runtime"))


def _random_stimuli(model, steps, seed):
    rng = random.Random(seed)
    inputs = []
    for _ in range(steps):
        row = []
        for p in sorted(model.inputs, key=lambda p: p.index):
            data = []
            for _ in range(p.rows * p.cols):
                if p.dtype.is_float:
                    data.append(rng.uniform(-10.0, 10.0))
                elif p.dtype.is_bool:
                    data.append(rng.random() < 0.5)
                elif p.dtype.signed:
                    data.append(rng.randint(-5, 5))
                else:
                    data.append(rng.randint(0, 10))
            row.append(mv.make(p.dtype, p.rows, p.cols, data))
        inputs.append(row)
    return inputs


def cmd_generate(args) -> int:
    model = _load(args.model)
    result = generate(model, _config(args, model), _opts(args))
    out = args.out or (args.model.rsplit(".", 1)[0] + ".c")
    with open(out, "w", newline="\n") as f:
        f.write(result.text)
    n_instr = sum(len(fn.body) for fn in result.program.functions)
    print("wrote {} ({} statics, {} instructions, {} functions)".format(
        out, len(result.program.statics), n_instr, len(result.program.functions)))
    return 0


def cmd_simulate(args) -> int:
    model = _load(args.model)
    inputs = _random_stimuli(model, args.steps, args.seed)
    outputs = simulate(model, inputs, args.steps)
    ports = sorted(model.outputs, key=lambda p: p.index)
    header = ["step"]
    for p in ports:
        header.extend("out{}[{}]".format(p.index, k) for k in range(p.rows * p.cols))
    print("\t".join(header))
    for step, row in enumerate(outputs):
        cells = [str(step)]
        for value in row:
            cells.extend(format_number(v, value.dtype) for v in value.data)
        print("\t".join(cells))
    return 0


def _deviation(a: mv.MatValue, b: mv.MatValue):
    worst = 0.0
    exact = True
    for x, y in zip(a.data, b.data):
        if a.dtype.is_float:
            if x != y:
                exact = False
                denom = max(abs(x), abs(y), 1.0)
                worst = max(worst, abs(x - y) / denom)
        elif x != y:
            exact = False
            worst = max(worst, 1.0)
    return exact, worst


def cmd_validate(args) -> int:
    model = _load(args.model)
    inputs = _random_stimuli(model, args.steps, args.seed)
    simulated = simulate(model, inputs, args.steps)
    result = generate(model, _config(args, model), _opts(args))
    machine = Machine(result.program).run_init()
    interpreted = machine.run_steps(inputs, args.steps)
    worst = 0.0
    bad = None
    for step, (srow, irow) in enumerate(zip(simulated, interpreted)):
        for port, (s, i) in enumerate(zip(srow, irow)):
            exact, dev = _deviation(s, i)
            if s.dtype.is_float:
                if dev > worst:
                    worst, bad = dev, (step, port)
            elif not exact:
                worst, bad = 1.0, (step, port)
    tol = 0.0 if all(not p.dtype.is_float for p in model.outputs) else 1e-12
    print("max deviation {} over {} steps".format(worst, args.steps))
    if worst > tol:
        print("MISMATCH at step {} output {}".format(*bad), file=sys.stderr)
        return 1
    print("simulation and generated code agree")
    return 0


def cmd_dump_ir(args) -> int:
    model = _load(args.model)
    result = generate(model, _config(args, model), _opts(args))
    prog = result.program
    for s in prog.statics:
        print("static {} {} {}x{} = {}".format(
            s.name, s.dtype, s.rows, s.cols, list(s.default.data)))
    for fn in [prog.init_fn] + prog.functions:
        print("function {}({})".format(fn.name, ", ".join(p.name for p in fn.params)))
        for d in fn.decls.values():
            print("  decl {} {} {}x{}{}".format(
                d.name, d.dtype, d.rows, d.cols,
                " init" if d.init is not None else ""))
        for instr in fn.body:
            print("  {!r}".format(instr))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="blockgen",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, steps=False):
        p.add_argument("model", help="model file")
        p.add_argument("--emit", choices=("runtime", "freestanding"), default="runtime")
        p.add_argument("--no-dce", action="store_true", help="keep dead code")
        p.add_argument("--no-fold", action="store_true", help="keep literal expressions")
        if steps:
            p.add_argument("--steps", type=int, default=20)
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("generate", help="emit the C program for a model")
    common(p)
    p.add_argument("--out", help="output path (default: model path with .c)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("simulate", help="run the model numerically")
    common(p, steps=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("validate", help="compare simulation against the generated code")
    common(p, steps=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("dump-ir", help="print the optimized pseudo-code")
    common(p)
    p.set_defaults(fn=cmd_dump_ir)

    args = parser.parse_args(argv)
    if getattr(args, "steps", 1) < 0:
        parser.error("--steps must be nonnegative")
    try:
        return args.fn(args)
    except Exception as e:  # surface pipeline errors as diagnostics
        print("error: {}".format(e), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
