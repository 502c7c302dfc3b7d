"""LP text interchange (CPLEX LP file dialect): writer and parser.

The writer serializes an assembled relaxation so any external LP solver can
cross-check it; the parser reads the same dialect back into a solver-ready
form.  Supported subset: Minimize/Maximize, Subject To, Bounds (including
``free`` and fixed ``=`` bounds), End, backslash comments, and linear
expressions with optional ``*`` between coefficient and variable.  Integer
sections are rejected.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _var_name(problem, idx: int) -> str:
    KE = problem.K * problem.E
    if idx < problem.nx:
        t, rem = divmod(idx, KE)
        k, i = divmod(rem, problem.E)
        return f"x_{t}_{k}_{i}"
    idx -= problem.nx
    if idx < problem.nz:
        t, rem = divmod(idx, KE)
        k, i = divmod(rem, problem.E)
        return f"z_{t}_{k}_{i}"
    idx -= problem.nz
    if idx < problem.n_epi_x:
        t, rem = divmod(idx, KE)
        k, i = divmod(rem, problem.E)
        return f"gx_{t}_{k}_{i}"
    idx -= problem.n_epi_x
    t, rem = divmod(idx, KE)
    k, i = divmod(rem, problem.E)
    return f"gz_{t}_{k}_{i}"


def _write_terms(out, names, cols, vals, lead_written: bool):
    line_len = 0
    first = not lead_written
    for c, v in zip(cols, vals):
        if v == 0:
            continue
        if first:
            piece = f"{_fmt(v)} {names[c]}"
            first = False
        elif v >= 0:
            piece = f"+ {_fmt(v)} {names[c]}"
        else:
            piece = f"- {_fmt(-v)} {names[c]}"
        if line_len + len(piece) > 230:
            out.write("\n   ")
            line_len = 3
        out.write(" " + piece)
        line_len += len(piece) + 1
    if first:
        out.write(" 0 " + names[0])  # degenerate all-zero expression


def write_lp_text(problem, name: str = "relaxation") -> str:
    """Serialize an assembled relaxation problem to LP-format text."""
    n = problem.variable_count
    names = [_var_name(problem, j) for j in range(n)]
    out = io.StringIO()
    out.write(f"\\ {name}: discrete network-control relaxation\n")
    out.write(f"\\ variables: {n} (states, outflows, epigraph)\n")
    out.write("Minimize\n obj:")
    nz = np.nonzero(problem.c)[0]
    _write_terms(out, names, nz, problem.c[nz], lead_written=False)
    out.write("\nSubject To\n")
    A_eq = sp.csr_matrix(problem.A_eq)
    for r in range(A_eq.shape[0]):
        lo, hi = A_eq.indptr[r], A_eq.indptr[r + 1]
        out.write(f" dyn_{r}:")
        _write_terms(out, names, A_eq.indices[lo:hi], A_eq.data[lo:hi], False)
        out.write(f" = {_fmt(problem.b_eq[r])}\n")
    A_ub = sp.csr_matrix(problem.A_ub)
    for r in range(A_ub.shape[0]):
        lo, hi = A_ub.indptr[r], A_ub.indptr[r + 1]
        out.write(f" c_{r}:")
        _write_terms(out, names, A_ub.indices[lo:hi], A_ub.data[lo:hi], False)
        out.write(f" <= {_fmt(problem.b_ub[r])}\n")
    out.write("Bounds\n")
    for j in range(n):
        lo, hi = problem.lb[j], problem.ub[j]
        if lo == 0.0 and hi == np.inf:
            continue  # LP-format default
        if lo == hi:
            out.write(f" {names[j]} = {_fmt(lo)}\n")
        elif lo == -np.inf and hi == np.inf:
            out.write(f" {names[j]} free\n")
        else:
            if lo != 0.0:
                out.write(f" {names[j]} >= {_fmt(lo)}\n")
            if hi != np.inf:
                out.write(f" {names[j]} <= {_fmt(hi)}\n")
    out.write("End\n")
    return out.getvalue()


def write_lp_file(problem, path, name: str = "relaxation"):
    with open(path, "w") as fh:
        fh.write(write_lp_text(problem, name=name))


# -- parser --------------------------------------------------------------------


@dataclass
class LPConstraint:
    name: str
    coefs: dict
    sense: str   # "<=", ">=", "="
    rhs: float


@dataclass
class LPModel:
    sense: str                     # "min" | "max"
    objective: dict
    constraints: list[LPConstraint]
    bounds: dict                   # name -> [lo, hi]
    variables: list[str] = field(default_factory=list)

    def bound(self, name: str):
        return self.bounds.get(name, (0.0, np.inf))

    def to_linprog(self):
        """Arrays for a linear-programming solver call: (c, A_ub, b_ub,
        A_eq, b_eq, bounds, variable order). Maximization is negated."""
        order = {v: j for j, v in enumerate(self.variables)}
        n = len(order)
        c = np.zeros(n)
        for v, coef in self.objective.items():
            c[order[v]] = coef
        if self.sense == "max":
            c = -c
        ub_rows, eq_rows = [], []
        for con in self.constraints:
            if con.sense == "=":
                eq_rows.append((con.coefs, con.rhs))
            elif con.sense == "<=":
                ub_rows.append((con.coefs, con.rhs))
            else:
                ub_rows.append(({v: -k for v, k in con.coefs.items()}, -con.rhs))

        def build(rows):
            if not rows:
                return None, None
            data, ri, ci = [], [], []
            for r, (coefs, _) in enumerate(rows):
                for v, k in coefs.items():
                    ri.append(r)
                    ci.append(order[v])
                    data.append(k)
            A = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
            return A, np.array([rhs for _, rhs in rows])

        A_ub, b_ub = build(ub_rows)
        A_eq, b_eq = build(eq_rows)
        bounds = np.array([list(self.bound(v)) for v in self.variables])
        return c, A_ub, b_ub, A_eq, b_eq, bounds, list(self.variables)


_TOKEN = re.compile(
    r"""(?P<rel><=|>=|=<|=>|<|>|=)
      | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
      | (?P<name>[A-Za-z!"\#$%&(),;?@_'`{}|~][\w!"\#$%&(),;?@.'`{}|~]*)
      | (?P<colon>:)
      | (?P<sign>[-+])
      | (?P<star>\*)
    """,
    re.VERBOSE,
)

_SECTION_WORDS = {
    "minimize": "min", "minimum": "min", "min": "min",
    "maximize": "max", "maximum": "max", "max": "max",
    "subject": "st", "such": "st", "st": "st", "s.t.": "st",
    "bounds": "bounds", "bound": "bounds",
    "end": "end",
    "general": "int", "generals": "int", "gen": "int",
    "integer": "int", "integers": "int",
    "binary": "int", "binaries": "int", "bin": "int",
    "semi-continuous": "int", "semis": "int", "semi": "int",
}


def _tokenize(text: str):
    tokens = []
    for line in text.splitlines():
        body = line.split("\\", 1)[0]
        pos = 0
        while pos < len(body):
            if body[pos].isspace():
                pos += 1
                continue
            m = _TOKEN.match(body, pos)
            if not m:
                raise ValueError(f"cannot tokenize LP text at: {body[pos:pos+20]!r}")
            kind = m.lastgroup
            tokens.append((kind, m.group()))
            pos = m.end()
    return tokens


class _Cursor:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead=0):
        i = self.pos + ahead
        return self.tokens[i] if i < len(self.tokens) else (None, None)

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def done(self):
        return self.pos >= len(self.tokens)


def _is_section(cur: _Cursor):
    kind, val = cur.peek()
    if kind != "name":
        return None
    word = val.lower()
    if word not in _SECTION_WORDS:
        return None
    section = _SECTION_WORDS[word]
    if section == "st":
        # swallow "subject to" / "such that"
        k2, v2 = cur.peek(1)
        if word in ("subject", "such"):
            if k2 == "name" and v2.lower() in ("to", "that"):
                cur.next()
                cur.next()
                return "st"
            return None
        cur.next()
        return "st"
    cur.next()
    return section


def _parse_expression(cur: _Cursor):
    """Linear expression as {name: coef}; stops before a relation or a
    section keyword or a 'name:' label."""
    coefs = {}
    sign = 1.0
    pending_num = None
    while not cur.done():
        kind, val = cur.peek()
        if kind == "rel":
            break
        if kind == "name":
            word = val.lower()
            if word in _SECTION_WORDS and pending_num is None:
                break
            if cur.peek(1)[0] == "colon":
                break
            cur.next()
            coef = sign * (pending_num if pending_num is not None else 1.0)
            coefs[val] = coefs.get(val, 0.0) + coef
            sign, pending_num = 1.0, None
            continue
        if kind == "sign":
            cur.next()
            if pending_num is not None:
                raise ValueError("dangling coefficient before sign in LP expression")
            sign = sign * (1.0 if val == "+" else -1.0)
            continue
        if kind == "num":
            cur.next()
            if pending_num is not None:
                raise ValueError("two consecutive numbers in LP expression")
            pending_num = float(val)
            if cur.peek()[0] == "star":
                cur.next()
            continue
        break
    return coefs, sign * pending_num if pending_num is not None else None


def parse_lp_text(text: str) -> LPModel:
    """Parse LP-format text into an LPModel."""
    cur = _Cursor(_tokenize(text))
    section = _is_section(cur)
    if section not in ("min", "max"):
        raise ValueError("LP text must start with Minimize or Maximize")
    sense = section

    seen = {}
    variables: list[str] = []

    def note(coefs):
        for v in coefs:
            if v not in seen:
                seen[v] = True
                variables.append(v)

    # objective
    if cur.peek()[0] == "name" and cur.peek(1)[0] == "colon":
        cur.next()
        cur.next()
    objective, const = _parse_expression(cur)
    if const is not None:
        raise ValueError("objective has a dangling numeric term")
    note(objective)

    if _is_section(cur) != "st":
        raise ValueError("expected Subject To after the objective")

    constraints = []
    n_anon = 0
    while True:
        save = cur.pos
        section = _is_section(cur)
        if section is not None:
            break
        if cur.done():
            section = None
            break
        cur.pos = save
        if cur.peek()[0] == "name" and cur.peek(1)[0] == "colon":
            name = cur.next()[1]
            cur.next()
        else:
            name = f"r{n_anon}"
            n_anon += 1
        coefs, dangling = _parse_expression(cur)
        if dangling is not None:
            raise ValueError(f"constraint {name!r}: dangling number before relation")
        kind, rel = cur.next()
        if kind != "rel":
            raise ValueError(f"constraint {name!r}: expected a relation, got {rel!r}")
        rel = {"<": "<=", ">": ">=", "=<": "<=", "=>": ">="}.get(rel, rel)
        sgn, num = 1.0, None
        while num is None:
            kind, val = cur.next()
            if kind == "sign":
                sgn *= 1.0 if val == "+" else -1.0
            elif kind == "num":
                num = float(val)
            else:
                raise ValueError(f"constraint {name!r}: expected numeric right-hand side")
        note(coefs)
        constraints.append(LPConstraint(name, coefs, rel, sgn * num))

    bounds: dict = {}
    if section == "bounds":
        while True:
            save = cur.pos
            nxt = _is_section(cur)
            if nxt is not None:
                section = nxt
                break
            if cur.done():
                section = None
                break
            cur.pos = save
            # forms: v free | v = a | v <= a | v >= a | a <= v | a <= v <= b
            kind, val = cur.next()
            sgn = 1.0
            if kind == "sign":
                sgn = 1.0 if val == "+" else -1.0
                kind, val = cur.next()
            if kind == "num" or (kind == "name" and val.lower() in ("inf", "infinity")):
                lo = sgn * (np.inf if kind == "name" else float(val))
                kind, rel = cur.next()
                if kind != "rel" or rel not in ("<=", "<", "=<"):
                    raise ValueError("malformed bound line")
                kind, vname = cur.next()
                if kind != "name":
                    raise ValueError("malformed bound line")
                b = bounds.setdefault(vname, [0.0, np.inf])
                b[0] = lo
                if cur.peek()[0] == "rel":
                    _, rel2 = cur.next()
                    if rel2 not in ("<=", "<", "=<"):
                        raise ValueError("malformed double bound line")
                    hi, hsgn = None, 1.0
                    while hi is None:
                        k2, v2 = cur.next()
                        if k2 == "sign":
                            hsgn *= 1.0 if v2 == "+" else -1.0
                        elif k2 == "num":
                            hi = hsgn * float(v2)
                        elif k2 == "name" and v2.lower() in ("inf", "infinity"):
                            hi = hsgn * np.inf
                        else:
                            raise ValueError("malformed double bound line")
                    b[1] = hi
                note({vname: 1.0})
                continue
            if kind != "name":
                raise ValueError("malformed bound line")
            vname = val
            note({vname: 1.0})
            kind, val = cur.peek()
            if kind == "name" and val.lower() == "free":
                cur.next()
                bounds[vname] = [-np.inf, np.inf]
                continue
            kind, rel = cur.next()
            if kind != "rel":
                raise ValueError(f"malformed bound for {vname!r}")
            rel = {"<": "<=", ">": ">=", "=<": "<=", "=>": ">="}.get(rel, rel)
            sgn, num = 1.0, None
            while num is None:
                k2, v2 = cur.next()
                if k2 == "sign":
                    sgn *= 1.0 if v2 == "+" else -1.0
                elif k2 == "num":
                    num = sgn * float(v2)
                elif k2 == "name" and v2.lower() in ("inf", "infinity"):
                    num = sgn * np.inf
                else:
                    raise ValueError(f"malformed bound for {vname!r}")
            b = bounds.setdefault(vname, [0.0, np.inf])
            if rel == "<=":
                b[1] = num
            elif rel == ">=":
                b[0] = num
            else:
                bounds[vname] = [num, num]

    if section == "int":
        raise ValueError("integer/binary sections are not supported")
    if section not in ("end", None):
        raise ValueError(f"unexpected trailing section {section!r}")

    return LPModel(sense, objective, constraints,
                   {k: tuple(v) for k, v in bounds.items()}, variables)
