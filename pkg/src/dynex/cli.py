"""Command-line front door: matrix authoring, runs, reflection, eval, serving.

Offline by default: every subcommand works against scripted gateways unless
--live is given (or the run backend is "live"), in which case the provider
is read from DYNEX_LLM_BASE_URL / DYNEX_LLM_MODEL / DYNEX_LLM_API_KEY.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .engine import EngineError
from .evalharness import (
    DEFAULT_ATTEMPTS,
    EVAL_MAX_TICKS,
    EvalError,
    emit_csv,
    emit_table,
    load_pack,
    run_pack,
    verify_expected,
)
from .gateway import GatewayError, LiveGateway
from .guardrails import GuardrailError, guardrails_to_dict, load_guardrails
from .matrix import (
    DIMENSIONS,
    MatrixError,
    ROWS,
    CellContent,
    cell_text,
    compile_config,
    fill_cell,
    load_matrix,
    new_matrix,
    save_matrix,
    submit_cell,
)
from .nudge import NudgeError
from .orchestrator import (
    OrchestratorError,
    RunSettings,
    create_run,
    fork_session,
    reflect_run,
    scripted_gateway_for,
)
from .reflection import ReflectionError
from .scripting import ScriptError, load_script
from .store import DEFAULT_STORE, ENV_STORE, Store, StoreError
from .worldconfig import ConfigFormatError, load_config, serialize_config

_ERRORS = (ConfigFormatError, EngineError, EvalError, GatewayError,
           GuardrailError, MatrixError, NudgeError, OrchestratorError,
           ReflectionError, ScriptError, StoreError, OSError,
           json.JSONDecodeError)


def _store(args) -> Store:
    root = args.store or os.environ.get(ENV_STORE, DEFAULT_STORE)
    return Store(root)


def _gateway(args, script=None):
    if getattr(args, "live", False):
        return LiveGateway()
    replies = None
    if getattr(args, "replies", None):
        with open(args.replies, encoding="utf-8") as fh:
            replies = json.load(fh)
    return scripted_gateway_for(script, replies=replies)


# ------------------------------------------------------------------ matrix


def _cmd_matrix_new(args) -> int:
    matrix = new_matrix(args.scenario)
    save_matrix(matrix, args.file)
    print(f"created matrix for '{args.scenario}' at {args.file}")
    return 0


def _slot(args) -> tuple[str, str]:
    if args.dimension not in DIMENSIONS:
        raise MatrixError(f"unknown dimension '{args.dimension}' (one of {DIMENSIONS})")
    if args.row not in ROWS:
        raise MatrixError(f"unknown row '{args.row}' (one of {ROWS})")
    return args.dimension, args.row


def _cmd_matrix_fill(args) -> int:
    matrix = load_matrix(args.file)
    dimension, row = _slot(args)
    content = fill_cell(matrix, dimension, row, _gateway(args))
    # keep the draft in the file, unsubmitted, for a later `submit`
    matrix.cells[(dimension, row)] = content
    save_matrix(matrix, args.file)
    if row == "Idea":
        for i, (text, _) in enumerate(content.options, 1):
            print(f"{i}. {text}")
    else:
        print(content.text)
    print(f"\ndraft saved to {dimension}/{row}; submit it with "
          f"'dynex matrix submit {args.file} {dimension} {row} ...'")
    return 0


def _cmd_matrix_submit(args) -> int:
    matrix = load_matrix(args.file)
    dimension, row = _slot(args)
    draft = matrix.cells[(dimension, row)]
    if row == "Idea":
        options = [[text, False] for text, _ in draft.options]
        for extra in args.option or []:
            options.append([extra, True])
        for index in args.check or []:
            if not 1 <= index <= len(options):
                raise MatrixError(f"--check {index}: cell has {len(options)} options")
            options[index - 1][1] = True
        content = CellContent(options=[(t, on) for t, on in options])
    else:
        text = args.text if args.text is not None else draft.text
        content = CellContent(text=text)
    submit_cell(matrix, dimension, row, content)
    save_matrix(matrix, args.file)
    print(f"submitted {dimension}/{row}: {cell_text(content, row)}")
    return 0


def _cmd_matrix_show(args) -> int:
    matrix = load_matrix(args.file)
    print(f"scenario: {matrix.scenario}")
    for dimension in DIMENSIONS:
        for row in ROWS:
            content = matrix.cells[(dimension, row)]
            flags = []
            if content.submitted:
                flags.append("submitted")
            if content.stale:
                flags.append("STALE")
            label = f"{dimension}/{row}"
            print(f"\n[{label}] {' '.join(flags) or 'empty'}")
            if row == "Idea":
                for i, (text, on) in enumerate(content.options, 1):
                    print(f"  {'[x]' if on else '[ ]'} {i}. {text}")
            elif content.text:
                print(f"  {content.text}")
        history = matrix.grounding_versions[dimension]
        if len(history.versions) > 1:
            print(f"  ({len(history.versions)} grounding versions, "
                  f"active #{history.active + 1})")
    return 0


def _cmd_matrix_compile(args) -> int:
    matrix = load_matrix(args.file)
    config, guardrails = compile_config(matrix, _gateway(args))
    with open(args.config, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(config))
    print(f"wrote config to {args.config}")
    if args.guardrails:
        payload = json.dumps(guardrails_to_dict(guardrails),
                             indent=2, ensure_ascii=False) + "\n"
        with open(args.guardrails, "w", encoding="utf-8") as fh:
            fh.write(payload)
        print(f"wrote guardrails to {args.guardrails}")
    return 0


# --------------------------------------------------------------------- run


def _print_session_summary(session) -> None:
    view = session.status_view()
    print(f"run {view['run_id']}: {view['state']} ({view['reason']}) "
          f"after tick {view['tick']}")
    print(f"milestones reached: {view['milestones_reached']}, "
          f"frontier: {view['frontier']}")
    print(f"events: {view['counts']['events']}, "
          f"nudges: {view['counts']['nudges']}, "
          f"failures hit: {len(session.monitor.failures)}")


def _cmd_run(args) -> int:
    config = load_config(args.config)
    guardrails = load_guardrails(args.guardrails)
    script = load_script(args.script) if args.script else None
    settings = RunSettings(
        max_ticks=args.max_ticks,
        max_wall_seconds=args.max_wall_seconds,
        nudging=args.nudging,
        backend=args.backend,
        seed=args.seed,
        condition=args.condition,
        simulation_idea=args.idea,
    )
    session = create_run(config, guardrails, settings=settings,
                         store=_store(args), script=script)
    print(f"started run {session.run_id} ({config.world_name})")
    while session.step():
        if not args.quiet:
            statuses = session.monitor.statuses
            if statuses and statuses[-1].at == session.run.tick:
                latest = statuses[-1]
                print(f"  tick {latest.at}: {latest.level} {latest.reason}")
    _print_session_summary(session)
    return 0


# ----------------------------------------------------------------- reflect


def _cmd_reflect(args) -> int:
    store = _store(args)
    script = load_script(args.script) if args.script else None
    gateway = _gateway(args, script=script)
    fixes = reflect_run(store, args.run_id, gateway)
    if not fixes:
        print("reflection proposed no fixes")
        return 0
    for i, fix in enumerate(fixes, 1):
        print(f"{i}. problem: {fix.problem}")
        print(f"   solution: {fix.solution}")
    chosen = set(args.select or [])
    if args.select_all:
        chosen = set(range(1, len(fixes) + 1))
    for index in chosen:
        if not 1 <= index <= len(fixes):
            raise ReflectionError([f"--select {index}: only {len(fixes)} fixes"])
        fixes[index - 1].selected = True
    if not args.fork:
        if chosen:
            print(f"selected fixes: {sorted(chosen)} (re-run with --fork to apply)")
        return 0
    session = fork_session(store, args.run_id, fixes, gateway, script=script)
    print(f"forked run {session.run_id} from {args.run_id}")
    session.run_to_completion()
    _print_session_summary(session)
    return 0


# -------------------------------------------------------------------- eval


def _cmd_eval(args) -> int:
    results_by_scenario = {}
    mismatches = []
    for directory in args.packs:
        pack = load_pack(directory)
        store = _store(args) if args.store else None
        results = run_pack(pack, attempts=args.attempts, store=store,
                           max_ticks=args.max_ticks)
        results_by_scenario[pack.name] = results
        for label, result in results.items():
            if result.error:
                print(f"{pack.name}/{label}: all attempts failed: {result.error}",
                      file=sys.stderr)
        mismatches.extend(f"{pack.name}: {p}"
                          for p in verify_expected(pack, results))
    table = emit_table(results_by_scenario)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "tables.txt"), "w", encoding="utf-8") as fh:
            fh.write(table)
        with open(os.path.join(args.out, "scores.csv"), "w", encoding="utf-8") as fh:
            fh.write(emit_csv(results_by_scenario))
        print(f"wrote tables.txt and scores.csv to {args.out}")
    if mismatches:
        print("ground-truth mismatches:", file=sys.stderr)
        for line in mismatches:
            print(f"  {line}", file=sys.stderr)
        return 1
    return 0


# ------------------------------------------------------------------- serve


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    root = args.store or os.environ.get(ENV_STORE, DEFAULT_STORE)
    app = create_app(store_root=root, tick_delay=args.tick_delay)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynex",
        description="Orchestrate, steer, and score dynamic multi-agent simulations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    matrix = sub.add_parser("matrix", help="author configurations cell by cell")
    msub = matrix.add_subparsers(dest="matrix_command", required=True)

    m_new = msub.add_parser("new", help="start an empty configuration matrix")
    m_new.add_argument("file")
    m_new.add_argument("--scenario", required=True)
    m_new.set_defaults(func=_cmd_matrix_new)

    m_fill = msub.add_parser("fill", help="generate draft content for one cell")
    m_fill.add_argument("file")
    m_fill.add_argument("dimension", metavar="dimension", help=f"one of {DIMENSIONS}")
    m_fill.add_argument("row", metavar="row", help=f"one of {ROWS}")
    m_fill.add_argument("--live", action="store_true")
    m_fill.add_argument("--replies", help="JSON reply table for a scripted gateway")
    m_fill.set_defaults(func=_cmd_matrix_fill)

    m_submit = msub.add_parser("submit", help="approve content for one cell")
    m_submit.add_argument("file")
    m_submit.add_argument("dimension")
    m_submit.add_argument("row")
    m_submit.add_argument("--check", type=int, action="append", metavar="N",
                          help="check draft option N (Idea rows, 1-based)")
    m_submit.add_argument("--option", action="append", metavar="TEXT",
                          help="add a custom option, already checked")
    m_submit.add_argument("--text", help="cell text (Grounding rows)")
    m_submit.set_defaults(func=_cmd_matrix_submit)

    m_show = msub.add_parser("show", help="print the matrix grid")
    m_show.add_argument("file")
    m_show.set_defaults(func=_cmd_matrix_show)

    m_compile = msub.add_parser("compile", help="compile the matrix into a config")
    m_compile.add_argument("file")
    m_compile.add_argument("--config", required=True, metavar="OUT")
    m_compile.add_argument("--guardrails", metavar="OUT")
    m_compile.add_argument("--live", action="store_true")
    m_compile.add_argument("--replies")
    m_compile.set_defaults(func=_cmd_matrix_compile)

    run = sub.add_parser("run", help="execute a simulation to completion")
    run.add_argument("--config", required=True)
    run.add_argument("--guardrails", required=True)
    run.add_argument("--script", help="scripted agent behavior (scripted backend)")
    run.add_argument("--nudging", choices=("off", "auto", "manual"), default="off")
    run.add_argument("--backend", choices=("scripted", "live"), default="scripted")
    run.add_argument("--max-ticks", type=int, default=40)
    run.add_argument("--max-wall-seconds", type=float, default=None)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--condition", default="")
    run.add_argument("--idea", default="", help="one-line simulation idea for prompts")
    run.add_argument("--store", help=f"store root (default ${ENV_STORE} or {DEFAULT_STORE})")
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=_cmd_run)

    reflect = sub.add_parser("reflect", help="holistic reflection over a finished run")
    reflect.add_argument("run_id")
    reflect.add_argument("--store")
    reflect.add_argument("--script")
    reflect.add_argument("--select", type=int, action="append", metavar="N")
    reflect.add_argument("--select-all", action="store_true")
    reflect.add_argument("--fork", action="store_true",
                         help="apply selected fixes and run the forked child")
    reflect.add_argument("--live", action="store_true")
    reflect.add_argument("--replies")
    reflect.set_defaults(func=_cmd_reflect)

    evalp = sub.add_parser("eval", help="score scenario packs across conditions")
    evalp.add_argument("packs", nargs="+", metavar="PACK_DIR")
    evalp.add_argument("--attempts", type=int, default=DEFAULT_ATTEMPTS)
    evalp.add_argument("--max-ticks", type=int, default=EVAL_MAX_TICKS)
    evalp.add_argument("--out", help="directory for tables.txt and scores.csv")
    evalp.add_argument("--store", help="persist eval runs into this store")
    evalp.set_defaults(func=_cmd_eval)

    serve = sub.add_parser("serve", help="HTTP API for runs and steering")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8470)
    serve.add_argument("--store")
    serve.add_argument("--tick-delay", type=float, default=0.05)
    serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
