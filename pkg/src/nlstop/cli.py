"""Command line entry point.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for an
invalid problem file, a negative reward or an exceeded budget.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import oracle
from .errors import BudgetExceeded, HorizonTooLarge, NlstopError, SpecError
from .reports import error_report, run_solve_multi, run_solve_single, run_verify
from .specfile import (
    apply_overrides,
    dump_json,
    generate_instance,
    instance_digest,
    load_json,
    parse_spec,
    parse_tree_section,
)
from .tree import stop_at

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--spec", help="problem file (JSON)")
    p.add_argument("--tree", help="file replacing the tree section")
    p.add_argument("--engine", help="file replacing the engine section")
    p.add_argument("--reward", help="file replacing the reward section")
    p.add_argument("--mode", choices=["exact", "float"])
    p.add_argument("--tolerance", type=float, help="comparison tolerance in float mode (> 0)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--budget", type=int, help="override the command's main work budget")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlstop", description="Optimal single and multiple stopping under nonlinear expectations on finite trees.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-single", help="value, minimal optimal rule and lambda table")
    _add_common(p)
    p.add_argument("--lambda-grid", help="comma separated, e.g. 1/2,9/10,99/100")

    p = sub.add_parser("solve-multi", help="d-stop value and an assembled optimal vector")
    _add_common(p)
    p.add_argument("--d", type=int, help="number of stopping times (additive/swing rewards)")

    p = sub.add_parser("verify", help="run every check on an instance")
    _add_common(p)
    p.add_argument("--lambda-grid", help="comma separated, e.g. 1/2,9/10,99/100")
    p.add_argument("--d", type=int)

    p = sub.add_parser("enumerate", help="list or count the stopping rules of the tree")
    _add_common(p)
    p.add_argument("--count-only", action="store_true")
    p.add_argument("--from-node", type=int, help="enumerate rules starting at this node")

    p = sub.add_parser("generate", help="write a seeded random problem file")
    p.add_argument("--kind", choices=["single", "multi"], default="single")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--branching", type=int, choices=[2, 3])
    p.add_argument("--engine-kind", choices=["linear", "upper_prior", "g_driver"])
    p.add_argument("--reward-kind", choices=["process", "additive", "refraction_swing", "table"])
    p.add_argument("--out")
    return parser


def _load_raw(args, budget_key=None) -> dict:
    raw = load_json(args.spec) if args.spec else {}
    sections = {}
    for key in ("tree", "engine", "reward"):
        path = getattr(args, key)
        if path:
            data = load_json(path, key)
            # accept either the bare section or a file holding it under its key
            if isinstance(data, dict) and isinstance(data.get(key), dict):
                data = data[key]
            sections[key] = data
    grid = getattr(args, "lambda_grid", None)
    raw = apply_overrides(
        raw,
        **sections,
        mode=args.mode,
        tolerance=args.tolerance,
        seed=args.seed,
        lambda_grid=grid.split(",") if grid else None,
        d=getattr(args, "d", None),
    )
    if args.budget is not None and budget_key:
        raw["budgets"] = dict(raw.get("budgets") or {}, **{budget_key: args.budget})
    return raw


def _load(args, budget_key=None):
    return parse_spec(_load_raw(args, budget_key))


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _run_report(args, runner, budget_key):
    spec = _load(args, budget_key)
    report = runner(spec)
    _emit(report.to_csv() if args.format == "csv" else report.to_json(), args.out)
    return EXIT_OK if report.passed else EXIT_FAIL


def _enumerate(args):
    raw = _load_raw(args, "rules")
    tree = parse_tree_section(raw)
    budget = raw.get("budgets", {}).get("rules", oracle.DEFAULT_RULE_BUDGET)
    frm = tree.root if args.from_node is None else args.from_node
    if not 0 <= frm < tree.num_nodes:
        raise SpecError("from_node", f"no node {frm}")
    count = oracle.count_rules(tree, frm)
    out = {"schema_version": 1, "command": "enumerate", "instance_digest": instance_digest(raw), "from": frm, "count": count}
    if not args.count_only:
        rules = oracle.enumerate_rules(tree, stop_at(tree, frm), budget)
        out["rules"] = [list(r.stop_nodes) for r in rules]
    if args.format == "csv":
        lines = ["index,stop_nodes\n"] + [f'{i},"{" ".join(map(str, r))}"\n' for i, r in enumerate(out.get("rules", []))]
        text = f"# count={count}\n" + "".join(lines)
    else:
        text = json.dumps(out, indent=2) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def _generate(args):
    spec = generate_instance(
        args.kind, args.depth, args.seed, d=args.d, branching=args.branching,
        engine=args.engine_kind, reward=args.reward_kind,
    )
    _emit(dump_json(spec.raw), args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "solve-single": lambda: _run_report(args, run_solve_single, "rules"),
        "solve-multi": lambda: _run_report(args, run_solve_multi, "evals"),
        "verify": lambda: _run_report(args, run_verify, "rules"),
        "enumerate": lambda: _enumerate(args),
        "generate": lambda: _generate(args),
    }
    try:
        return handlers[args.command]()
    except (SpecError, BudgetExceeded, HorizonTooLarge, NlstopError, ValueError) as exc:
        text = json.dumps(error_report(args.command, exc), indent=2) + "\n"
        sys.stderr.write(text)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
