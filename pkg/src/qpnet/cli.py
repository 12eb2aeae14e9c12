"""Command-line interface: ``qpnet validate|solve|check|graph|constellation|example``.

Exit codes: 0 success, 1 validation failure, 2 no equilibrium, 3 I/O or parse error.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .equilibrium import SearchOptions, Termination, find_equilibrium, verify_equilibrium
from .experiments import (build_avoidance_qpn, build_bilevel_example, default_avoidance_instance,
                          avoidance_initial_point, run_constellation_study)
from .network import NetworkError
from .polyhedra import EPS_FEAS
from .problem_file import (KIND_NAMES, ProblemFileError, fmt_float, load_problem, save_problem,
                           trace_lines)
from .solution_graph import GraphError

logger = logging.getLogger("qpnet")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NO_EQUILIBRIUM = 2
EXIT_IO = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load(path):
    try:
        return load_problem(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from None
    except ProblemFileError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    except NetworkError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None


def _parse_point(text: str, n: int, what: str) -> np.ndarray:
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise CliError(f"{what}: expected {n} comma-separated numbers", EXIT_IO) from None
    if len(vals) != n or not np.all(np.isfinite(vals)):
        raise CliError(f"{what}: expected {n} finite numbers, got {len(vals)}", EXIT_IO)
    return np.array(vals)


def _fmt_vec(x) -> str:
    return ",".join(fmt_float(v) for v in x)


def _validated(net, out) -> bool:
    diags = net.validate()
    for d in diags:
        print(f"{d.level}: {d.code}: {d.message}", file=out)
    return not any(d.level == "error" for d in diags)


def cmd_validate(args) -> int:
    net, _ = _load(args.problem)
    ok = _validated(net, sys.stderr)
    if ok:
        layers = net.depth_mapping.layers
        print(f"ok: {net.N} nodes, {net.n} variables, {len(layers)} layers")
        for d, layer in enumerate(layers, 1):
            print(f"  depth {d}: nodes {' '.join(str(i + 1) for i in layer)}")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_solve(args) -> int:
    net, init = _load(args.problem)
    if not _validated(net, sys.stderr):
        return EXIT_INVALID
    if args.init is not None:
        x0 = _parse_point(args.init, net.n, "--init")
    elif init is not None:
        x0 = init
    else:
        x0 = np.zeros(net.n)
    opts = SearchOptions(tol=args.tol, max_restarts=args.max_restarts)
    x, trace = find_equilibrium(net, x0, opts)
    if args.trace:
        try:
            with open(args.trace, "w", encoding="utf-8") as fh:
                for line in trace_lines(trace):
                    fh.write(line + "\n")
        except OSError as exc:
            raise CliError(f"cannot write {args.trace}: {exc.strerror or exc}", EXIT_IO) from None
    print(_fmt_vec(x))
    print(f"status: {trace.termination.value}" + (f" ({trace.message})" if trace.message else ""),
          file=sys.stderr)
    print(f"events: {len(trace.events)}, iterates: {len(trace.iterates)}", file=sys.stderr)
    for i, node in enumerate(net.nodes):
        label = node.name or f"node {i + 1}"
        vals = " ".join(f"x{k + 1}={x[k]:.6g}" for k in node.decision_indices)
        print(f"  {label}: {vals}  cost={node.cost.value(x):.6g}", file=sys.stderr)
    return EXIT_OK if trace.termination is Termination.EQUILIBRIUM else EXIT_NO_EQUILIBRIUM


def cmd_check(args) -> int:
    net, init = _load(args.problem)
    if not _validated(net, sys.stderr):
        return EXIT_INVALID
    if args.point is not None:
        x = _parse_point(args.point, net.n, "--point")
    elif init is not None:
        x = init
    else:
        raise CliError("no point given (use --point or an init entry)", EXIT_IO)
    rep = verify_equilibrium(net, x, args.tol)
    for i in sorted(rep.nodes):
        print(f"node {i + 1}: {rep.nodes[i]}")
    print("equilibrium" if rep.ok else "not an equilibrium")
    return EXIT_OK if rep.ok else EXIT_NO_EQUILIBRIUM


def cmd_graph(args) -> int:
    net, init = _load(args.problem)
    if not _validated(net, sys.stderr):
        return EXIT_INVALID
    if not 1 <= args.node <= net.N:
        raise CliError(f"--node must lie in 1..{net.N}", EXIT_IO)
    x = _parse_point(args.point, net.n, "--point")
    target = args.node - 1
    from .solution_graph import local_node_graph

    graphs = {}
    # children first, in reverse depth order restricted to the target's descendants
    needed = set(net.descendants[target]) | {target}
    for d in range(len(net.depth_mapping.layers), 0, -1):
        for i in net.depth_mapping.layers[d - 1]:
            if i not in needed:
                continue
            node = net.nodes[i]
            child = [graphs[j] for j in net.children[i]]
            try:
                graphs[i] = local_node_graph(node.cost, node.feasible, net.controlled[i], x,
                                             child, args.tol, node=i).pieces
            except GraphError as exc:
                print(f"error: node {i + 1}: {exc}", file=sys.stderr)
                return EXIT_NO_EQUILIBRIUM
    G = graphs[target]
    print(f"node {args.node}: {len(G)} piece(s)")
    names = [f"x{k + 1}" for k in range(net.n)]
    for p, P in enumerate(G.pieces, 1):
        print(f"piece {p}:")
        for a, b, k in zip(P.A, P.b, P.kind):
            terms = " ".join(f"{'+' if v >= 0 else '-'} {abs(v):.6g}*{names[j]}"
                             for j, v in enumerate(a) if v != 0)
            op = {"ge": ">=", "gt": ">", "eq": "=="}[KIND_NAMES[int(k)]]
            print(f"  {terms or '0'} {'+' if b >= 0 else '-'} {abs(b):.6g} {op} 0")
    return EXIT_OK


def cmd_constellation(args) -> int:
    if args.samples < 1:
        raise CliError("--samples must be positive", EXIT_IO)
    res = run_constellation_study(args.samples, seed=args.seed, jobs=args.jobs, progress=True)
    text = res.to_csv()
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc.strerror or exc}", EXIT_IO) from None
    else:
        sys.stdout.write(text)
    print(f"{res.stats[0].samples} instances kept, {res.dropped} dropped", file=sys.stderr)
    return EXIT_OK


def cmd_example(args) -> int:
    if args.name == "bilevel":
        net, init = build_bilevel_example(), np.array([0.0, 0.0, -3.0, 4.0])
    else:
        inst = default_avoidance_instance(args.obstacles)
        net, init = build_avoidance_qpn(inst), avoidance_initial_point(inst)
    try:
        save_problem(args.out, net, init)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc.strerror or exc}", EXIT_IO) from None
    print(f"wrote {args.out}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors share the I/O code so that 2 always means "no equilibrium"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qpnet", description="Equilibria of quadratic program networks.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a problem file")
    s.add_argument("problem")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("solve", help="search for an equilibrium")
    s.add_argument("problem")
    s.add_argument("--init", help="initial point, comma-separated (overrides the file)")
    s.add_argument("--tol", type=float, default=EPS_FEAS)
    s.add_argument("--max-restarts", type=int, default=200)
    s.add_argument("--trace", metavar="FILE", help="write the search trace as JSON lines")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("check", aliases=["verify"], help="check whether a point is an equilibrium")
    s.add_argument("problem")
    s.add_argument("--point", help="comma-separated point (defaults to the file's init)")
    s.add_argument("--tol", type=float, default=EPS_FEAS)
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("graph", help="print a node's local solution graph at a point")
    s.add_argument("problem")
    s.add_argument("--node", type=int, required=True, help="1-based node index")
    s.add_argument("--point", required=True)
    s.add_argument("--tol", type=float, default=EPS_FEAS)
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("constellation", help="run the four-player configuration study")
    s.add_argument("--samples", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=0, help="worker processes (0 = all cores)")
    s.add_argument("--out", help="CSV output path (default stdout)")
    s.set_defaults(func=cmd_constellation)

    s = sub.add_parser("example", help="write a built-in problem file")
    s.add_argument("name", choices=["bilevel", "avoidance"])
    s.add_argument("--out", required=True)
    s.add_argument("--obstacles", type=int, default=2)
    s.set_defaults(func=cmd_example)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
