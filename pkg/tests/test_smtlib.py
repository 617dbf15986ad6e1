import subprocess
import sys

import numpy as np
import pytest
from conftest import GOLDEN
from helpers import GRID_FOR_KIND, five_constraint_problem, random_problem, tiny_full_problem, two_var_problem
from hypothesis import given, settings
from hypothesis import strategies as st

from smug.attribution import first_layer_attribution, top_k_positive
from smug.encoding import MaskProblem, build_full_encoding, build_partial_encoding
from smug.errors import ParseError
from smug.smtlib import (
    check_script,
    emit_smtlib,
    format_real,
    parse_sexprs,
    parse_smtlib_problem,
    parse_solver_output,
    run_external,
)
from smug.solver import Status, brute_force, solve_min


class TestFormatReal:
    @pytest.mark.parametrize("value,text", [
        (2.0, "2.0"), (-1.0, "(- 1.0)"), (0.5, "0.5"), (0.0, "0.0"), (-0.0, "0.0"),
        (0.1, "0.10000000000000001"), (1e-13, "0.0000000000001"), (1 / 3, "0.33333333333333331"),
        (1e20, "100000000000000000000.0"),
    ])
    def test_rendering(self, value, text):
        assert format_real(value) == text

    @settings(max_examples=300, deadline=None)
    @given(st.floats(allow_nan=False, allow_infinity=False, width=64))
    def test_round_trips_exactly(self, value):
        text = format_real(value)
        back = -float(text[3:-1]) if text.startswith("(- ") else float(text)
        assert back == value

    def test_non_finite(self):
        with pytest.raises(ValueError):
            format_real(float("inf"))


class TestGoldens:
    @pytest.mark.parametrize("name,build", [
        ("two_var", two_var_problem), ("five_constraint", five_constraint_problem), ("tiny_full", tiny_full_problem),
    ])
    def test_byte_identical(self, name, build):
        assert emit_smtlib(build()).encode() == (GOLDEN / f"{name}.smt2").read_bytes()

    @pytest.mark.parametrize("name", ["two_var", "five_constraint", "tiny_full"])
    def test_goldens_pass_grammar_check(self, name):
        assert check_script((GOLDEN / f"{name}.smt2").read_text()) == []

    def test_five_constraint_problem_has_published_shape(self):
        p = five_constraint_problem()
        assert len(p.constraints) == 5
        assert [len(c.terms) for c in p.constraints] == [9, 9, 6, 6, 6]
        assert p.n_vars == 36

    def test_five_constraint_solution(self):
        p = five_constraint_problem()
        sol = solve_min(p)
        # constraints 3 and 5 hold with the constant alone; the other three each
        # need one positive cell, and the tie-break takes the lowest ids
        assert sol.objective == 3
        on = [p.variables[v].cell for v, b in sol.assignment.items() if b]
        assert on == [(76, 84), (112, 154), (132, 132)]

    def test_emission_is_deterministic(self):
        assert emit_smtlib(five_constraint_problem()) == emit_smtlib(five_constraint_problem())


class TestEmission:
    def test_empty_constraint_list(self):
        text = emit_smtlib(MaskProblem((), ()))
        assert "(minimize 0)" in text and check_script(text) == []
        assert solve_min(MaskProblem((), ())).objective == 0

    def test_structure(self):
        text = emit_smtlib(two_var_problem())
        assert text.count("(declare-const") == 2
        assert "(assert (> (+ (* 2.0 (to_real m0)) (* (- 1.0) (to_real m1)) 0.5) 0.0))" in text
        assert text.rstrip().endswith("(check-sat)\n(get-objectives)\n(get-model)")

    def test_fixture_documents_pass_checker(self, all_fixtures):
        for fx in all_fixtures:
            x = next(iter(fx.inputs.values()))
            sel = top_k_positive(first_layer_attribution(fx.net, x, None, 16), 8)
            assert check_script(emit_smtlib(build_partial_encoding(fx.net, x, sel, 0.5, 2))) == []
            if fx.spec.kind != "conv1d-text":
                assert check_script(emit_smtlib(build_full_encoding(fx.net, x, fx.labels["item00"], 4))) == []

    @pytest.mark.parametrize("seed", range(20))
    def test_parse_round_trip(self, seed):
        p = random_problem(np.random.default_rng(seed))
        back = parse_smtlib_problem(emit_smtlib(p))
        assert [c.terms for c in back.constraints] == [c.terms for c in p.constraints]
        assert [c.constant for c in back.constraints] == [c.constant for c in p.constraints]
        assert solve_min(back).assignment == solve_min(p).assignment


class TestChecker:
    def test_undeclared_symbol(self):
        errs = check_script("(declare-const m0 Int)\n(assert (> m1 0))")
        assert errs and "m1" in errs[0]

    def test_unknown_command(self):
        assert check_script("(frobnicate)")

    def test_unbalanced(self):
        assert check_script("(assert (> 1 0)")

    def test_bad_sort(self):
        assert check_script("(declare-const x Float)")


class TestResponses:
    def test_unsat(self):
        sol = parse_solver_output("unsat\n", two_var_problem())
        assert sol.status is Status.UNSAT and sol.assignment is None

    def test_unknown(self):
        assert parse_solver_output("unknown", two_var_problem()).status is Status.UNKNOWN

    def test_model(self):
        text = "sat\n(model\n  (define-fun m0 () Int 1)\n  (define-fun m1 () Int 0)\n)\n"
        sol = parse_solver_output(text, two_var_problem())
        assert sol.assignment == {0: 1, 1: 0} and sol.objective == 1

    def test_objectives_and_bare_model(self):
        text = "sat\n(objectives\n ((+ m0 m1) 0)\n)\n((define-fun m1 () Int 0)\n (define-fun m0 () Int 0))\n"
        sol = parse_solver_output(text, two_var_problem())
        assert sol.objective == 0 and sol.stats["objective_reported"] == 0

    def test_unknown_variable(self):
        with pytest.raises(ParseError, match="m7"):
            parse_solver_output("sat\n(model (define-fun m7 () Int 1))", two_var_problem())

    def test_garbage(self):
        with pytest.raises(ParseError):
            parse_solver_output("segfault", two_var_problem())

    def test_non_boolean_value(self):
        with pytest.raises(ParseError):
            parse_solver_output("sat\n(model (define-fun m0 () Int 2))", two_var_problem())

    def test_full_problem_auxiliaries_allowed(self):
        text = "sat\n(model (define-fun m0 () Int 1) (define-fun m1 () Int 0) (define-fun z0_0 () Real 1.0))"
        assert parse_solver_output(text, tiny_full_problem()).assignment == {0: 1, 1: 0}

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=80))
    def test_arbitrary_text_never_crashes(self, text):
        try:
            parse_solver_output(text, two_var_problem())
        except ParseError:
            pass

    def test_sexpr_errors_are_parse_errors(self):
        with pytest.raises(ParseError):
            parse_sexprs('(a "unterminated')


class TestExternal:
    def test_stub_solver_over_stdin(self, tmp_path):
        stub = tmp_path / "stub.py"
        stub.write_text("import sys\nsys.stdin.read()\nprint('sat')\nprint('(model (define-fun m0 () Int 1)"
                        " (define-fun m1 () Int 0))')\n")
        sol = run_external(two_var_problem(), f"{sys.executable} {stub}")
        assert sol.assignment == {0: 1, 1: 0}

    def test_timeout_is_unknown(self, tmp_path):
        stub = tmp_path / "slow.py"
        stub.write_text("import time\ntime.sleep(5)\n")
        sol = run_external(two_var_problem(), f"{sys.executable} {stub} {{path}}", timeout_s=0.2)
        assert sol.status is Status.UNKNOWN

    def test_z3_agrees_on_goldens(self, z3_path):
        for build in (two_var_problem, five_constraint_problem):
            p = build()
            assert run_external(p, f"{z3_path} {{path}}", 60).objective == solve_min(p).objective
        p = tiny_full_problem()
        assert run_external(p, f"{z3_path} {{path}}", 60).objective == brute_force(p).objective

    def test_z3_agrees_on_fixtures(self, z3_path, all_fixtures):
        for fx in all_fixtures:
            grid = GRID_FOR_KIND[fx.spec.kind]
            for x in list(fx.inputs.values())[:2]:
                sel = top_k_positive(first_layer_attribution(fx.net, x, None, 16), 8)
                for gamma in (0.0, 0.9):
                    p = build_partial_encoding(fx.net, x, sel, gamma, grid)
                    ext = run_external(p, f"{z3_path} {{path}}", 60)
                    assert ext.status is Status.SAT and ext.objective == solve_min(p).objective

    def test_z3_agrees_on_random_problems(self, z3_path):
        rng = np.random.default_rng(99)
        for _ in range(15):
            p = random_problem(rng, max_vars=10)
            ext, own = run_external(p, f"{z3_path} {{path}}", 60), solve_min(p)
            assert ext.status == own.status and ext.objective == own.objective


def test_cli_module_runs():
    out = subprocess.run([sys.executable, "-m", "smug.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "emit-smt" in out.stdout
