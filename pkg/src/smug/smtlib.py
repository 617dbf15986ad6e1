"""SMT-LIB v2 text for mask problems, and parsing of solver responses.

Emitted documents use one ``Int`` constant ``m<id>`` per mask variable bounded
to 0/1, one assertion per constraint, and an OMT ``minimize`` objective.
Reals are printed in plain decimal notation from 17 significant digits.
"""

from __future__ import annotations

import re
import shlex
import subprocess
import tempfile
from decimal import Decimal
from pathlib import Path

import numpy as np

from .encoding import FullMaskProblem, LinearConstraint, MaskProblem, MaskVariable
from .errors import ParseError, UnsupportedProblemError
from .solver import MaskSolution, Status
from .tensor_net import Flatten, Relu, layer_affine_map

_VAR_RE = re.compile(r"m(0|[1-9][0-9]*)$")


def format_real(value: float) -> str:
    """Exact-enough SMT-LIB decimal: 17 significant digits, no exponent."""
    value = float(value)
    if not np.isfinite(value):
        raise ValueError("cannot render a non-finite real")
    text = format(Decimal(format(abs(value), ".17g")), "f")
    if "." not in text:
        text += ".0"
    if value < 0 and Decimal(text) != 0:
        return f"(- {text})"
    return text


def _term(coef: float, var: str) -> str:
    return f"(* {format_real(coef)} (to_real {var}))"


def _sum(parts: list[str]) -> str:
    if not parts:
        return "0.0"
    if len(parts) == 1:
        return parts[0]
    return "(+ " + " ".join(parts) + ")"


def _objective(n: int) -> str:
    names = [f"m{i}" for i in range(n)]
    if not names:
        return "0"
    return names[0] if len(names) == 1 else "(+ " + " ".join(names) + ")"


def _header(problem, kind: str) -> list[str]:
    lines = [f"; minimal input mask problem ({kind})", f"; variables {problem.n_vars}"]
    for v in problem.variables:
        lines.append(f"; m{v.id} cell {' '.join(str(c) for c in v.cell)}")
    lines += ["(set-option :produce-models true)", "(set-logic QF_LIRA)"]
    for v in problem.variables:
        lines.append(f"(declare-const m{v.id} Int)")
        lines.append(f"(assert (and (>= m{v.id} 0) (<= m{v.id} 1)))")
    return lines


def _footer(n: int) -> list[str]:
    return [f"(minimize {_objective(n)})", "(check-sat)", "(get-objectives)", "(get-model)"]


def constraint_sexpr(c: LinearConstraint) -> str:
    parts = [_term(coef, f"m{v}") for v, coef in c.terms]
    parts.append(format_real(c.constant))
    return f"(assert (> {_sum(parts)} 0.0))"


def emit_smtlib(problem) -> str:
    """Deterministic SMT-LIB v2 document for a partial or full mask problem."""
    if isinstance(problem, FullMaskProblem):
        return _emit_full(problem)
    lines = _header(problem, "linear")
    lines.insert(2, f"; constraints {len(problem.constraints)} gamma {format_real(problem.gamma)}")
    lines += [constraint_sexpr(c) for c in problem.constraints]
    lines += _footer(problem.n_vars)
    return "\n".join(lines) + "\n"


def _emit_full(problem: FullMaskProblem) -> str:
    lines = _header(problem, "full network")
    net = problem.logit_net
    first = net.first_affine_index()
    prev = None  # SMT names of the current layer's flat values
    for li, layer in enumerate(net.layers):
        if isinstance(layer, Flatten):
            continue
        if isinstance(layer, Relu):
            names = []
            for j, z in enumerate(prev):
                h = f"h{li}_{j}"
                lines.append(f"(declare-const {h} Real)")
                lines.append(f"(assert (or (and (> {z} 0.0) (= {h} {z})) (and (<= {z} 0.0) (= {h} 0.0))))")
                names.append(h)
            prev = names
            continue
        names = []
        if li == first:
            for j, (vids, coefs, bias) in enumerate(problem.first_layer):
                parts = [_term(c, f"m{v}") for v, c in zip(vids, coefs)] + [format_real(bias)]
                names.append(_define(lines, f"z{li}_{j}", _sum(parts)))
        else:
            amap = layer_affine_map(layer, net.shapes[li], li)
            for j, (coords, weights) in enumerate(amap.rows):
                parts = [f"(* {format_real(w)} {prev[int(c)]})" for c, w in zip(coords, weights)]
                parts.append(format_real(amap.bias[j]))
                names.append(_define(lines, f"z{li}_{j}", _sum(parts)))
        prev = names
    for j, z in enumerate(prev):
        if j != problem.label:
            lines.append(f"(assert (> {prev[problem.label]} {z}))")
    lines += _footer(problem.n_vars)
    return "\n".join(lines) + "\n"


def _define(lines: list[str], name: str, expr: str) -> str:
    lines.append(f"(declare-const {name} Real)")
    lines.append(f"(assert (= {name} {expr}))")
    return name


# --------------------------------------------------------------------------
# S-expressions
# --------------------------------------------------------------------------


class Symbol(str):
    """An SMT-LIB symbol or keyword (as opposed to a string literal)."""


def tokenize(text: str):
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch == ";":
            j = text.find("\n", i)
            i = n if j < 0 else j + 1
        elif ch in "()":
            yield ch, i
            i += 1
        elif ch == '"':
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise ParseError("unterminated string literal", f"offset {i}")
                if text[j] == '"':
                    if j + 1 < n and text[j + 1] == '"':
                        buf.append('"')
                        j += 2
                        continue
                    break
                buf.append(text[j])
                j += 1
            yield ("str", "".join(buf)), i
            i = j + 1
        elif ch == "|":
            j = text.find("|", i + 1)
            if j < 0:
                raise ParseError("unterminated quoted symbol", f"offset {i}")
            yield Symbol(text[i + 1 : j]), i
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in '();"|':
                j += 1
            yield Symbol(text[i:j]), i
            i = j


def parse_sexprs(text: str) -> list:
    """All top-level s-expressions; lists become Python lists, strings stay tagged tuples."""
    stack: list[list] = [[]]
    opens: list[int] = []
    for tok, pos in tokenize(text):
        if tok == "(":
            stack.append([])
            opens.append(pos)
        elif tok == ")":
            if len(stack) == 1:
                raise ParseError("unbalanced ')'", f"offset {pos}")
            done = stack.pop()
            opens.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise ParseError("unbalanced '('", f"offset {opens[-1]}")
    return stack[0]


_NUMERAL = re.compile(r"(0|[1-9][0-9]*)$")
_DECIMAL = re.compile(r"(0|[1-9][0-9]*)\.[0-9]+$")


def _number(expr) -> float | None:
    if isinstance(expr, Symbol) and (_NUMERAL.match(expr) or _DECIMAL.match(expr)):
        return float(Decimal(expr))
    if isinstance(expr, list) and len(expr) == 2 and expr[0] == "-":
        v = _number(expr[1])
        return None if v is None else -v
    if isinstance(expr, list) and len(expr) == 3 and expr[0] == "/":
        a, b = _number(expr[1]), _number(expr[2])
        if a is None or b is None or b == 0:
            return None
        return a / b
    return None


# --------------------------------------------------------------------------
# Script checking
# --------------------------------------------------------------------------

_COMMAND_ARITY = {
    "set-option": (2, 2),
    "set-logic": (1, 1),
    "set-info": (1, 2),
    "declare-const": (2, 2),
    "declare-fun": (3, 3),
    "define-fun": (4, 4),
    "assert": (1, 1),
    "minimize": (1, 1),
    "maximize": (1, 1),
    "check-sat": (0, 0),
    "get-objectives": (0, 0),
    "get-model": (0, 0),
    "get-value": (1, 1),
    "exit": (0, 0),
}
_OPERATORS = {
    "and", "or", "not", "=>", "=", "distinct", "ite", "+", "-", "*", "/", "<", "<=", ">", ">=",
    "to_real", "to_int", "true", "false",
}
_SORTS = {"Int", "Real", "Bool"}


def check_script(text: str) -> list[str]:
    """Structural check of an SMT-LIB v2 command script; returns problems found.

    Every top-level form must be a known command with the right arity, every
    declared sort must be Int/Real/Bool, and every symbol in a term must be a
    numeral, decimal, operator, or a previously declared constant.
    """
    errors = []
    try:
        forms = parse_sexprs(text)
    except ParseError as exc:
        return [str(exc)]
    declared = set()

    def check_term(term, where):
        if isinstance(term, list):
            if not term:
                errors.append(f"{where}: empty application")
                return
            head = term[0]
            if not isinstance(head, Symbol) or head not in _OPERATORS:
                errors.append(f"{where}: unknown function {head!r}")
            for arg in term[1:]:
                check_term(arg, where)
        elif isinstance(term, Symbol):
            if not (_NUMERAL.match(term) or _DECIMAL.match(term) or term in declared or term in _OPERATORS):
                errors.append(f"{where}: undeclared symbol {term!r}")
        else:
            errors.append(f"{where}: string literal inside a term")

    for k, form in enumerate(forms):
        where = f"command {k + 1}"
        if not isinstance(form, list) or not form or not isinstance(form[0], Symbol):
            errors.append(f"{where}: not a command")
            continue
        name, args = form[0], form[1:]
        if name not in _COMMAND_ARITY:
            errors.append(f"{where}: unknown command {name}")
            continue
        lo, hi = _COMMAND_ARITY[name]
        if not lo <= len(args) <= hi:
            errors.append(f"{where}: {name} takes {lo}..{hi} arguments, got {len(args)}")
            continue
        if name == "declare-const":
            if args[1] not in _SORTS:
                errors.append(f"{where}: unknown sort {args[1]!r}")
            declared.add(args[0])
        elif name == "declare-fun":
            if args[1] != [] or args[2] not in _SORTS:
                errors.append(f"{where}: only nullary Int/Real/Bool functions are supported")
            declared.add(args[0])
        elif name in ("assert", "minimize", "maximize"):
            check_term(args[0], where)
        elif name == "set-option" and not str(args[0]).startswith(":"):
            errors.append(f"{where}: option name must be a keyword")
    return errors


# --------------------------------------------------------------------------
# Reading problems and responses
# --------------------------------------------------------------------------


def _linear_terms(expr, where):
    """Flatten a linear sum into ({var id: coef}, constant)."""
    coefs: dict[int, float] = {}
    const = 0.0

    def var_id(e):
        if isinstance(e, list) and len(e) == 2 and e[0] == "to_real":
            e = e[1]
        if isinstance(e, Symbol) and _VAR_RE.match(e):
            return int(e[1:])
        return None

    def walk(e, scale):
        nonlocal const
        num = _number(e)
        if num is not None:
            const += scale * num
            return
        v = var_id(e)
        if v is not None:
            coefs[v] = coefs.get(v, 0.0) + scale
            return
        if isinstance(e, list) and e and e[0] == "+":
            for arg in e[1:]:
                walk(arg, scale)
            return
        if isinstance(e, list) and len(e) == 3 and e[0] == "*":
            a, b = _number(e[1]), _number(e[2])
            if a is not None:
                walk(e[2], scale * a)
                return
            if b is not None:
                walk(e[1], scale * b)
                return
        raise UnsupportedProblemError(f"{where}: term is not linear in mask variables: {e!r}")

    walk(expr, 1.0)
    return coefs, const


def parse_smtlib_problem(text: str) -> MaskProblem:
    """Rebuild a linear ``MaskProblem`` from a document in the emitted subset."""
    forms = parse_sexprs(text)
    cells = {}
    for line in text.splitlines():
        m = re.match(r";\s*m(\d+) cell ((?:-?\d+ ?)+)$", line.strip())
        if m:
            cells[int(m.group(1))] = tuple(int(t) for t in m.group(2).split())
    names = []
    constraints = []
    for k, form in enumerate(forms):
        where = f"command {k + 1}"
        if not isinstance(form, list) or not form:
            raise ParseError("not a command", where)
        head = form[0]
        if head == "declare-const":
            if form[2] != "Int" or not _VAR_RE.match(form[1]):
                raise UnsupportedProblemError(f"{where}: only Int mask variables m<id> are supported")
            names.append(int(form[1][1:]))
        elif head == "assert":
            body = form[1]
            if isinstance(body, list) and body and body[0] == "and":
                continue  # 0/1 bounds
            if not (isinstance(body, list) and len(body) == 3 and body[0] == ">" and _number(body[2]) is not None):
                raise UnsupportedProblemError(f"{where}: expected (> <linear sum> <number>)")
            coefs, const = _linear_terms(body[1], where)
            const -= _number(body[2])
            constraints.append(LinearConstraint(tuple(sorted(coefs.items())), const))
    if names != list(range(len(names))):
        raise ParseError("mask variables must be declared as m0, m1, ... in order")
    variables = tuple(MaskVariable(i, cells.get(i, (i,)), np.zeros(0, dtype=np.int64)) for i in names)
    return MaskProblem(variables, tuple(constraints))


def parse_solver_output(text: str, problem) -> MaskSolution:
    """Read a ``sat|unsat|unknown`` response with optional objectives and model."""
    forms = parse_sexprs(text)
    if not forms or not isinstance(forms[0], Symbol) or forms[0] not in ("sat", "unsat", "unknown"):
        raise ParseError("response must start with sat, unsat or unknown", "offset 0")
    status = Status(str(forms[0]))
    known = {f"m{v.id}": v.id for v in problem.variables}
    aux_ok = isinstance(problem, FullMaskProblem)
    assignment: dict[int, int] = {}
    objective = None
    for form in forms[1:]:
        if not isinstance(form, list):
            raise ParseError(f"unexpected atom {form!r} in response")
        if form and form[0] == "error":
            if status is Status.SAT:
                raise ParseError(f"solver reported an error: {form[1:]!r}")
            continue
        if form and form[0] == "objectives":
            for entry in form[1:]:
                value = _number(entry[-1] if isinstance(entry, list) else entry)
                if value is not None:
                    objective = int(round(value))
                elif status is Status.SAT:
                    raise ParseError(f"unreadable objective {entry!r}")
            continue
        entries = form[1:] if form and form[0] == "model" else form
        for entry in entries:
            if not (isinstance(entry, list) and len(entry) == 5 and entry[0] == "define-fun"):
                raise ParseError(f"unexpected model entry {entry!r}")
            name = entry[1]
            if name in known:
                value = _number(entry[4])
                if value not in (0.0, 1.0):
                    raise ParseError(f"mask variable {name} assigned {entry[4]!r}")
                assignment[known[name]] = int(value)
            elif not (aux_ok and re.match(r"[hz]\d+_\d+$", name)):
                raise ParseError(f"model assigns {name!r}, which is not in the problem")
    if status is not Status.SAT:
        return MaskSolution(status, stats={"objective_reported": objective})
    for v in problem.variables:
        assignment.setdefault(v.id, 0)
    total = sum(assignment.values())
    return MaskSolution(Status.SAT, dict(sorted(assignment.items())), total,
                        {"objective_reported": objective})


def run_external(problem, command_template: str, timeout_s: float | None = None) -> MaskSolution:
    """Hand the emitted document to an external solver command.

    ``command_template`` is split shell-style; ``{path}`` is replaced by the
    ``.smt2`` file, otherwise the document is fed on stdin. A timeout gives
    an Unknown result.
    """
    text = emit_smtlib(problem)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "problem.smt2"
        path.write_text(text, encoding="utf-8")
        args = [a.replace("{path}", str(path)) for a in shlex.split(command_template)]
        use_stdin = not any("{path}" in a for a in shlex.split(command_template))
        try:
            proc = subprocess.run(
                args,
                input=text if use_stdin else None,
                capture_output=True,
                text=True,
                timeout=timeout_s,
            )
        except subprocess.TimeoutExpired:
            return MaskSolution(Status.UNKNOWN, stats={"incumbent": None, "timeout_s": timeout_s})
    try:
        return parse_solver_output(proc.stdout, problem)
    except ParseError:
        if proc.stdout.strip() == "" and proc.returncode != 0:
            raise ParseError(f"solver exited with {proc.returncode}: {proc.stderr.strip()[:200]}") from None
        raise
