"""JSON problem files and JSONL traces.

Variable and node indices are 1-based in files and 0-based in memory.
Floats are written with 17 significant digits so files round-trip exactly.
"""
from __future__ import annotations

import json
import math
from typing import Any

import numpy as np

from .network import QpNetwork, QpNode
from .polyhedra import EQ, GE, GT, NncPolyhedron
from .qp_kernel import QuadCost

KIND_NAMES = {GE: "ge", GT: "gt", EQ: "eq"}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}
TOP_KEYS = {"n", "nodes", "edges", "init"}
NODE_KEYS = {"Q", "q", "constraints", "vars", "name"}
ROW_KEYS = {"a", "b", "kind"}


class ProblemFileError(ValueError):
    pass


def _num(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProblemFileError(f"{where}: expected a number, got {type(v).__name__}")
    if not math.isfinite(v):
        raise ProblemFileError(f"{where}: non-finite value")
    return float(v)


def _vec(v, n: int, where: str) -> np.ndarray:
    if not isinstance(v, list) or len(v) != n:
        raise ProblemFileError(f"{where}: expected an array of length {n}")
    return np.array([_num(e, f"{where}[{k}]") for k, e in enumerate(v)])


def _check_keys(d: Any, allowed: set, where: str, required: set):
    if not isinstance(d, dict):
        raise ProblemFileError(f"{where}: expected an object")
    extra = set(d) - allowed
    if extra:
        raise ProblemFileError(f"{where}: unknown key(s) {sorted(extra)}")
    missing = required - set(d)
    if missing:
        raise ProblemFileError(f"{where}: missing key(s) {sorted(missing)}")


def _matrix(v, n: int, where: str) -> np.ndarray:
    if isinstance(v, dict):
        _check_keys(v, {"triplets"}, where, {"triplets"})
        Q = np.zeros((n, n))
        for k, t in enumerate(v["triplets"]):
            if not isinstance(t, list) or len(t) != 3:
                raise ProblemFileError(f"{where}.triplets[{k}]: expected [row, col, value]")
            i, j = t[0], t[1]
            if not (isinstance(i, int) and isinstance(j, int) and 1 <= i <= n and 1 <= j <= n):
                raise ProblemFileError(f"{where}.triplets[{k}]: index out of range 1..{n}")
            Q[i - 1, j - 1] += _num(t[2], f"{where}.triplets[{k}]")
        return Q
    if not isinstance(v, list) or len(v) != n:
        raise ProblemFileError(f"{where}: expected an {n}x{n} array or {{\"triplets\": ...}}")
    return np.array([_vec(row, n, f"{where}[{k}]") for k, row in enumerate(v)])


def problem_from_dict(doc: dict) -> tuple[QpNetwork, np.ndarray | None]:
    _check_keys(doc, TOP_KEYS, "problem", {"n", "nodes"})
    n = doc["n"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ProblemFileError("problem.n: expected a positive integer")
    if not isinstance(doc["nodes"], list) or not doc["nodes"]:
        raise ProblemFileError("problem.nodes: expected a nonempty array")
    nodes = []
    for k, nd in enumerate(doc["nodes"]):
        where = f"nodes[{k}]"
        _check_keys(nd, NODE_KEYS, where, {"Q", "q", "vars"})
        Q = _matrix(nd["Q"], n, f"{where}.Q")
        q = _vec(nd["q"], n, f"{where}.q")
        rows = nd.get("constraints", [])
        if not isinstance(rows, list):
            raise ProblemFileError(f"{where}.constraints: expected an array")
        A, b, kinds = [], [], []
        for r, row in enumerate(rows):
            w = f"{where}.constraints[{r}]"
            _check_keys(row, ROW_KEYS, w, {"a", "b"})
            A.append(_vec(row["a"], n, f"{w}.a"))
            b.append(_num(row["b"], f"{w}.b"))
            kind = row.get("kind", "ge")
            if kind not in KIND_CODES:
                raise ProblemFileError(f"{w}.kind: expected one of ge, gt, eq")
            kinds.append(KIND_CODES[kind])
        vars_ = nd["vars"]
        if not isinstance(vars_, list) or not all(isinstance(v, int) and not isinstance(v, bool)
                                                  for v in vars_):
            raise ProblemFileError(f"{where}.vars: expected an array of integers")
        if any(v < 1 or v > n for v in vars_):
            raise ProblemFileError(f"{where}.vars: indices must lie in 1..{n}")
        name = nd.get("name", "")
        if not isinstance(name, str):
            raise ProblemFileError(f"{where}.name: expected a string")
        C = NncPolyhedron(np.array(A).reshape(-1, n), b, kinds, dim=n)
        nodes.append(QpNode(QuadCost(Q, q), C, tuple(v - 1 for v in vars_), name))
    edges = doc.get("edges", [])
    if not isinstance(edges, list):
        raise ProblemFileError("problem.edges: expected an array")
    E = []
    for k, e in enumerate(edges):
        if (not isinstance(e, list) or len(e) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in e)):
            raise ProblemFileError(f"edges[{k}]: expected [parent, child]")
        if not all(1 <= v <= len(nodes) for v in e):
            raise ProblemFileError(f"edges[{k}]: node index out of range 1..{len(nodes)}")
        E.append((e[0] - 1, e[1] - 1))
    init = None
    if "init" in doc:
        init = _vec(doc["init"], n, "problem.init")
    return QpNetwork(n, nodes, E), init


def load_problem(path: str) -> tuple[QpNetwork, np.ndarray | None]:
    """Parse a problem file; raises ``OSError`` or :class:`ProblemFileError`."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return problem_from_dict(doc)


def problem_to_dict(net: QpNetwork, init=None) -> dict:
    doc: dict[str, Any] = {"n": net.n, "nodes": []}
    for node in net.nodes:
        rows = [{"a": [float(v) for v in a], "b": float(b), "kind": KIND_NAMES[int(k)]}
                for a, b, k in zip(node.feasible.A, node.feasible.b, node.feasible.kind)]
        nd = {"Q": [[float(v) for v in row] for row in node.cost.Q],
              "q": [float(v) for v in node.cost.q],
              "constraints": rows,
              "vars": [i + 1 for i in node.decision_indices]}
        if node.name:
            nd["name"] = node.name
        doc["nodes"].append(nd)
    doc["edges"] = [[i + 1, j + 1] for i, j in net.edges]
    if init is not None:
        doc["init"] = [float(v) for v in init]
    return doc


def fmt_float(v: float) -> str:
    v = float(v) + 0.0  # no negative zero
    if not math.isfinite(v):
        raise ValueError("cannot serialize non-finite float")
    return f"{v:.17g}"


def dumps(obj, indent: int | None = None, _level: int = 0) -> str:
    """JSON text with floats written to 17 significant digits."""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    sep = ", " if indent is None else ","
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        # keep numeric vectors on one line
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
               for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in seq]
        return "[" + sep.join(items) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def save_problem(path: str, net: QpNetwork, init=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(problem_to_dict(net, init), indent=1))
        fh.write("\n")


def trace_lines(trace) -> list[str]:
    """One JSON object per event; node ids in region choices are 1-based."""
    out = []
    for e in trace.events:
        rec = {"iterate": list(e.iterate), "depth": e.depth, "action": e.action.value,
               "region_choices": {str(i + 1): l for i, l in e.region_choices}}
        out.append(dumps(rec))
    return out
