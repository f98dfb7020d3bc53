"""Command line: run scenarios, list them, describe their knobs.

Verbs
-----
run        execute one scenario and (optionally) write its report
list       one line per registered scenario
describe   defaults, parameters, and checks of one scenario

``run`` takes --scenario, --paths, --steps, --horizon, --seed, --out,
--param key=value (repeatable), --alpha, and --config FILE.  The config
file is flat ``key=value`` text (UTF-8, one key per line, ``#`` starts a
comment line); command-line flags override file values.  Scenario knobs
live under ``param.<name>`` keys in the file or ``--param name=value``
on the command line.  The seed is mandatory — there is no implicit
entropy anywhere in the package.

Exit status: 0 when every verdict passes, 1 when any fails, 2 for
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .reporting import emit_report, summary_lines
from .scenarios import SCENARIOS, ScenarioConfig, run_scenario

_CONFIG_KEYS = ("scenario", "paths", "steps", "horizon", "seed", "alpha",
                "rho_threshold", "out")


class UsageError(Exception):
    """Configuration or invocation problem; maps to exit status 2."""


def _coerce(text: str):
    """int if it parses, else float, else the bare string."""
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _read_config(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    entries: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        if not (key in _CONFIG_KEYS or key.startswith("param.")):
            raise UsageError(
                f"{path}:{lineno}: unknown key {key!r}; top-level keys are "
                f"{', '.join(_CONFIG_KEYS)} and scenario knobs go under param.<name>")
        entries[key] = _coerce(value.strip())
    return entries


def _parse_param(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise UsageError(f"--param expects key=value, got {text!r}")
    return key.strip(), _coerce(value.strip())


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enlargemc",
        description="Monte Carlo scenarios for random times in progressively "
                    "enlarged filtrations")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="execute one scenario")
    run.add_argument("--scenario", help="scenario key (see `list`)")
    run.add_argument("--paths", type=int, help="number of simulated paths")
    run.add_argument("--steps", type=int, help="number of grid steps")
    run.add_argument("--horizon", type=float, help="terminal time")
    run.add_argument("--seed", type=int, help="random seed (mandatory)")
    run.add_argument("--out", help="directory for summary.txt and CSV tables")
    run.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                     help="scenario-specific knob; repeatable")
    run.add_argument("--alpha", type=float, help="statistical test level")
    run.add_argument("--config", help="flat key=value config file; flags override")

    sub.add_parser("list", help="list registered scenarios")

    describe = sub.add_parser("describe", help="show one scenario's defaults")
    describe.add_argument("--scenario", required=True, help="scenario key")
    return parser


def _cmd_list(out) -> int:
    width = max(len(k) for k in SCENARIOS)
    for key in SCENARIOS:
        print(f"{key:<{width}}  {SCENARIOS[key].title}", file=out)
    return 0


def _cmd_describe(scenario: str, out) -> int:
    if scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {scenario!r}; "
                         f"known: {', '.join(SCENARIOS)}")
    entry = SCENARIOS[scenario]
    print(f"{entry.key}: {entry.title}", file=out)
    print(file=out)
    print(entry.blurb, file=out)
    print(file=out)
    print(f"defaults: paths={entry.n_paths} steps={entry.n_steps} "
          f"horizon={entry.horizon}", file=out)
    if entry.params:
        print("parameters (override with --param name=value):", file=out)
        for name in sorted(entry.params):
            print(f"  {name}={entry.params[name]}", file=out)
    return 0


def _cmd_run(args, out) -> int:
    file_cfg = _read_config(args.config) if args.config else {}

    def pick(flag_value, key):
        return flag_value if flag_value is not None else file_cfg.get(key)

    scenario = pick(args.scenario, "scenario")
    if scenario is None:
        raise UsageError("no scenario given (flag --scenario or config key)")
    if scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {scenario!r}; "
                         f"known: {', '.join(SCENARIOS)}")
    seed = pick(args.seed, "seed")
    if seed is None:
        raise UsageError("no seed given (flag --seed or config key); "
                         "runs are reproducible, so the seed is mandatory")

    params = {key[len("param."):]: value
              for key, value in file_cfg.items() if key.startswith("param.")}
    for text in args.param:
        key, value = _parse_param(text)
        params[key] = value

    kwargs = {}
    alpha = pick(args.alpha, "alpha")
    if alpha is not None:
        kwargs["alpha"] = float(alpha)
    rho = file_cfg.get("rho_threshold")
    if rho is not None:
        kwargs["rho_threshold"] = float(rho)
    try:
        cfg = ScenarioConfig(scenario=str(scenario), seed=seed,
                             n_paths=pick(args.paths, "paths"),
                             n_steps=pick(args.steps, "steps"),
                             horizon=pick(args.horizon, "horizon"),
                             params=params, **kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    started = time.perf_counter()
    try:
        result = run_scenario(cfg)
    except KeyError as exc:      # unknown scenario knob names
        raise UsageError(exc.args[0]) from exc
    wall = time.perf_counter() - started

    for line in summary_lines(result):
        print(line, file=out)
    # stdout only: never written to report files, which must be byte-identical
    print(f"# wall_time_s={wall:.2f}", file=out)

    out_dir = pick(args.out, "out")
    if out_dir is not None:
        for path in emit_report(result, out_dir):
            print(f"# wrote {path}", file=out)
    return 0 if result.passed else 1


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # argparse handles --help and usage errors
        return int(exc.code or 0)
    try:
        if args.verb == "list":
            return _cmd_list(sys.stdout)
        if args.verb == "describe":
            return _cmd_describe(args.scenario, sys.stdout)
        return _cmd_run(args, sys.stdout)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
