"""Command line interface.

Exit codes: 0 success, 1 usage or input error, 2 when some items failed.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .encoding import build_full_encoding, build_partial_encoding
from .errors import SmugError
from .evaluation import DEFAULT_THRESHOLDS, fixed_boxes, lsc_for_map
from .fixtures import KINDS, FixtureSpec, generate
from .harness import METHODS, ExperimentConfig, item_id_for, run_experiment, run_sweep
from .model_io import load_model, load_tensor, load_tokens
from .pipeline import ExplainConfig, explain
from .saliency import render_image, render_text, rescale_visual
from .smtlib import emit_smtlib, parse_smtlib_problem, run_external
from .solver import solve_min

EXIT_USAGE = 1
EXIT_ITEM_FAILURES = 2


def _input_paths(inputs, input_dir) -> list[str]:
    paths = [str(p) for p in inputs]
    if input_dir:
        paths += sorted(str(p) for p in Path(input_dir).glob("*.tnsr"))
    if not paths:
        raise click.UsageError("give --input or --input-dir")
    return paths


def _methods(text: str) -> tuple[str, ...]:
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise click.BadParameter(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    return methods


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc


def _explain_options(f):
    options = [
        click.option("--k", type=click.IntRange(min=1), default=3000, show_default=True,
                     help="Number of top positively attributed first-layer neurons."),
        click.option("--gamma", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.0, show_default=True,
                     help="Required fraction of each selected activation, subtracted as gamma * activation."),
        click.option("--grid", "grid_size", type=click.IntRange(min=1), default=4, show_default=True,
                     help="Cell side in pixels (or tokens) per mask variable."),
        click.option("--ig-steps", type=click.IntRange(min=1), default=64, show_default=True),
        click.option("--budget-ms", type=click.FloatRange(min=0), default=None,
                     help="Solver time budget; on timeout the base map is used."),
        click.option("--solver-cmd", default=None,
                     help="External SMT solver command; {path} is replaced by the .smt2 file, "
                          "otherwise the script goes to stdin."),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


@click.group()
def cli():
    """Minimal sufficient input masks for neural network explanations."""


@cli.command("explain")
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--label", type=int, default=None, help="Output index to explain (default: argmax).")
@click.option("--tokens", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Token file for text inputs; enables HTML rendering.")
@click.option("--thresholds", type=click.IntRange(min=1), default=DEFAULT_THRESHOLDS, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_explain_options
def explain_cmd(model, input_path, label, tokens, thresholds, out_dir, k, gamma, grid_size, ig_steps,
                budget_ms, solver_cmd):
    """Explain one input and write saliency files plus a JSON record."""
    net = load_model(model)
    x = load_tensor(input_path).astype(np.float64)
    cfg = ExplainConfig(k, gamma, grid_size, ig_steps, budget_ms, solver_cmd)
    e = explain(net, x, label, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    item = item_id_for(input_path)
    record = {
        "item_id": item,
        "label": e.label,
        "status": e.status,
        "selected_neurons": [int(i) for i in e.selection.indices],
        "variables": None if e.problem is None else e.problem.n_vars,
        "mask_bits": None if e.solution is None else e.solution.objective,
        "mask_cells": None,
    }
    if e.smug is not None:
        if e.solution is not None and e.solution.assignment:
            on = sorted(v for v, b in e.solution.assignment.items() if b)
            record["mask_cells"] = [list(e.problem.variables[v].cell) for v in on]
        for name, smap in (("smug", e.smug), ("smug-base", e.base)):
            vis = rescale_visual(smap)
            if x.ndim == 3:
                render_image(vis, out / f"{item}.{name}.pgm", x, out / f"{item}.{name}.overlay.ppm")
                rec = lsc_for_map(net, x, e.label, smap.scores, thresholds, name)
                record[f"{name}_lsc"] = rec.score
                record[f"{name}_box"] = list(rec.box.as_tuple())
            elif tokens:
                render_text(load_tokens(tokens), vis, out / f"{item}.{name}.html")
            np.save(out / f"{item}.{name}.npy", smap.scores)
        if x.ndim == 3:
            record["maxbox_lsc"] = fixed_boxes(net, x, e.label)["maxbox"].score
    path = out / f"{item}.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"{item}: {e.status}, mask bits {record['mask_bits']}, written to {out}")


@cli.command("evaluate")
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "inputs", multiple=True, type=click.Path(dir_okay=False))
@click.option("--input-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--methods", default=",".join(METHODS), show_default=True)
@click.option("--thresholds", type=click.IntRange(min=1), default=DEFAULT_THRESHOLDS, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--record-timing", is_flag=True, help="Fill solver_ms (makes reports run-dependent).")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_explain_options
def evaluate_cmd(model, inputs, input_dir, annotations, methods, thresholds, workers, record_timing, out_dir,
                 k, gamma, grid_size, ig_steps, budget_ms, solver_cmd):
    """Run the comparison methods over many inputs and write CSV/JSON reports."""
    cfg = ExperimentConfig(
        model, _input_paths(inputs, input_dir), out_dir, annotations, _methods(methods), k, gamma, grid_size,
        ig_steps, budget_ms, thresholds, solver_cmd, workers, record_timing,
    )
    summary, failed = run_experiment(cfg)
    for method, agg in summary.items():
        win = "-" if agg["win_pct"] is None else f"{agg['win_pct']:.1f}%"
        click.echo(f"{method:12s} items {agg['items']:4d}  median LSC {agg['lsc_median']:.4f}  win {win}")
    if failed:
        click.echo("some items failed; see records.csv", err=True)
        sys.exit(EXIT_ITEM_FAILURES)


@cli.command("sweep")
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "inputs", multiple=True, type=click.Path(dir_okay=False))
@click.option("--input-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--ks", default="4,8,100", show_default=True, help="Comma separated k values.")
@click.option("--gammas", default="0,0.5,0.9", show_default=True, help="Comma separated gamma values.")
@click.option("--grid", "grid_size", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--ig-steps", type=click.IntRange(min=1), default=64, show_default=True)
@click.option("--budget-ms", type=click.FloatRange(min=0), default=None)
@click.option("--solver-cmd", default=None)
@click.option("--record-timing", is_flag=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def sweep_cmd(model, inputs, input_dir, annotations, ks, gammas, grid_size, ig_steps, budget_ms, solver_cmd,
              record_timing, out_dir):
    """Minimal mask size over a grid of k and gamma values."""
    ks, gammas = _ints(ks), _floats(gammas)
    if not ks or min(ks) < 1:
        raise click.BadParameter("k values must be >= 1", param_hint="--ks")
    if not gammas or not all(0 <= g < 1 for g in gammas):
        raise click.BadParameter("gamma values must lie in [0, 1)", param_hint="--gammas")
    cfg = ExperimentConfig(
        model, _input_paths(inputs, input_dir), out_dir, annotations, ("smug",), max(ks), gammas[0], grid_size,
        ig_steps, budget_ms, DEFAULT_THRESHOLDS, solver_cmd, 1, record_timing,
    )
    failed = run_sweep(cfg, ks, gammas)
    click.echo(f"wrote {Path(out_dir) / 'sweep.csv'}")
    if failed:
        sys.exit(EXIT_ITEM_FAILURES)


@cli.command("emit-smt")
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--label", type=int, default=None)
@click.option("--full", is_flag=True, help="Encode the whole network instead of the first layer.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Default: stdout.")
@_explain_options
def emit_smt_cmd(model, input_path, label, full, out_path, k, gamma, grid_size, ig_steps, budget_ms, solver_cmd):
    """Write the mask minimization problem as an SMT-LIB v2 script."""
    from .attribution import default_output_index, first_layer_attribution, top_k_positive

    net = load_model(model)
    x = load_tensor(input_path).astype(np.float64)
    if label is None:
        label = default_output_index(net, x)
    if full:
        problem = build_full_encoding(net, x, label, grid_size)
    else:
        sel = top_k_positive(first_layer_attribution(net, x, label, ig_steps), k)
        problem = build_partial_encoding(net, x, sel, gamma, grid_size)
    text = emit_smtlib(problem)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@cli.command("solve")
@click.argument("script", type=click.Path(exists=True, dir_okay=False))
@click.option("--budget-ms", type=click.FloatRange(min=0), default=None)
@click.option("--solver-cmd", default=None, help="Hand the script to an external solver instead.")
def solve_cmd(script, budget_ms, solver_cmd):
    """Solve a linear mask script produced by emit-smt; prints status, objective and set variables."""
    problem = parse_smtlib_problem(Path(script).read_text(encoding="utf-8"))
    if solver_cmd:
        sol = run_external(problem, solver_cmd, None if budget_ms is None else budget_ms / 1000.0)
    else:
        sol = solve_min(problem, budget_ms)
    click.echo(sol.status.value)
    if sol.objective is not None:
        click.echo(f"objective {sol.objective}")
        on = sorted(v for v, b in (sol.assignment or {}).items() if b)
        click.echo("set " + " ".join(f"m{v}" for v in on))


@cli.command("generate-fixtures")
@click.option("--kind", type=click.Choice(KINDS), required=True)
@click.option("--seed", type=click.IntRange(min=0, max=2**64 - 1), default=1, show_default=True)
@click.option("--items", "n_items", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def generate_cmd(kind, seed, n_items, out_dir):
    """Write a deterministic model, inputs and annotations."""
    written = generate(FixtureSpec(kind, seed, n_items), out_dir)
    click.echo(f"wrote {len(written)} files to {out_dir}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="smug", standalone_mode=False)
    except SystemExit as exc:
        return int(exc.code or 0)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (SmugError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
