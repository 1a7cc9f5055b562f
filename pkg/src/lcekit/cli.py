"""Command-line entry point wiring the runtime, evaluator, and pipeline.

Exit codes: 0 success, 1 configuration or transport failure, 2 degraded
success (a solve that hit a limit, or an evaluation over zero problems).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import dataset as ds
from .answers import render_answer
from .config import AppConfig, ConfigError, load_config
from .evaluation import (
    DatasetFormat,
    FormatError,
    format_report_table,
    load_problems,
    run_eval,
    write_math_grid_csv,
)
from .executor import (
    ExecStatus,
    ExecutorError,
    KernelSession,
    SessionState,
    close_session,
    start_session,
)
from .format import LceFormatError, parse, serialize
from .orchestrator import (
    HttpCompletionClient,
    ModelError,
    SolveTrace,
    Termination,
    solve,
)

log = logging.getLogger(__name__)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON config file.")
@click.option("--workers", type=int, default=1, show_default=True, help="Parallel workers where a command supports them.")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, workers: int, verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    ctx.obj = {"cfg": cfg, "workers": max(1, workers)}


def _model_client(cfg: AppConfig) -> HttpCompletionClient:
    return HttpCompletionClient(
        base_url=cfg.model.base_url,
        model_name=cfg.model.model_name,
        auth_token=cfg.model.auth_token(),
        temperature=cfg.model.temperature,
    )


def _kernel_session(cfg: AppConfig) -> KernelSession:
    return start_session(
        cfg.executor.kernel_command,
        timeout_ms=cfg.executor.timeout_ms,
        max_chars=cfg.executor.max_chars,
        handshake_timeout=cfg.executor.handshake_timeout_s,
    )


@main.command("solve")
@click.argument("question", required=False)
@click.option("--file", "question_file", type=click.Path(exists=True, dir_okay=False), help="Read the question from a file instead.")
@click.pass_context
def cmd_solve(ctx: click.Context, question: str | None, question_file: str | None) -> None:
    """Solve one question and print the conversation plus a JSON trace."""
    cfg: AppConfig = ctx.obj["cfg"]
    if question is None and question_file is None:
        raise click.UsageError("give a QUESTION argument or --file")
    if question is None:
        question = Path(question_file).read_text(encoding="utf-8").strip()

    try:
        session = _kernel_session(cfg)
    except ExecutorError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    try:
        trace = solve(question, _model_client(cfg), session, cfg.generation, cfg.tokens)
    except (ModelError, ExecutorError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    finally:
        close_session(session)

    click.echo(serialize(trace.conversation, cfg.tokens))
    click.echo(
        json.dumps(
            {
                "termination": trace.termination.value,
                "blocks": sum(len(m.blocks) for m in trace.conversation.messages[2:]),
                "executions": len(trace.executions),
                "forced_block_closes": trace.forced_block_closes,
                "per_block_seconds": [round(t, 4) for t in trace.per_block_timing],
            }
        )
    )
    sys.exit(0 if trace.termination is Termination.END_OF_MESSAGE else 2)


@main.command("eval")
@click.argument("dataset_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice([f.value for f in DatasetFormat]), required=True)
@click.option("--solutions", type=click.Path(exists=True, dir_okay=False), default=None, help="Grade pre-computed conversations (JSONL of {id, conversation}) instead of solving live.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="eval-out", show_default=True)
@click.pass_context
def cmd_eval(ctx: click.Context, dataset_path: str, fmt: str, solutions: str | None, out_dir: str) -> None:
    """Evaluate on a benchmark and write report files."""
    cfg: AppConfig = ctx.obj["cfg"]
    workers: int = ctx.obj["workers"]
    try:
        problems = load_problems(dataset_path, DatasetFormat(fmt))
    except FormatError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)

    if solutions is not None:
        replay = _load_replay(solutions, cfg)
        report = run_eval(
            problems, lambda record: replay[record.id], cfg.equivalence
        )  # missing ids surface as per-problem solver errors
    else:
        sessions: list[KernelSession] = []

        def solver_factory():
            client = _model_client(cfg)
            session = _kernel_session(cfg)
            sessions.append(session)
            return lambda record: solve(
                record.question, client, session, cfg.generation, cfg.tokens
            )

        try:
            report = run_eval(
                problems,
                solver_factory() if workers == 1 else None,
                cfg.equivalence,
                workers=workers,
                solver_factory=solver_factory,
            )
        except ExecutorError as exc:
            click.echo(f"error: cannot start a solver: {exc}", err=True)
            sys.exit(1)
        finally:
            for session in sessions:
                close_session(session)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report.to_json_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    (out / "report.txt").write_text(format_report_table(report) + "\n", encoding="utf-8")
    if report.grid:
        write_math_grid_csv(report, out / "math_grid.csv")
    click.echo(f"accuracy={report.accuracy:.4f} n={report.total}")
    if report.total == 0:
        click.echo("warning: dataset was empty", err=True)
        sys.exit(2)


def _load_replay(path: str, cfg: AppConfig) -> dict[str, SolveTrace]:
    replay: dict[str, SolveTrace] = {}
    for line_no, raw in ds.read_jsonl(path):
        conv = parse(raw["conversation"], cfg.tokens)
        replay[str(raw["id"])] = SolveTrace(
            conversation=conv, termination=Termination.END_OF_MESSAGE
        )
    return replay


@main.group("dataset")
def cmd_dataset() -> None:
    """Data pipeline transforms, each a pure file-to-file step."""


@cmd_dataset.command("interpolate-prompts")
@click.option("--easy", "easy_path", type=click.Path(exists=True, dir_okay=False), required=True, help="JSONL of easier problems (gsm8k source).")
@click.option("--hard", "hard_path", type=click.Path(exists=True, dir_okay=False), required=True, help="JSONL of harder problems (math source).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def cmd_interpolate(ctx: click.Context, easy_path: str, hard_path: str, out_path: str) -> None:
    """Pair easy and hard problems line by line into generation prompts."""
    cfg: AppConfig = ctx.obj["cfg"]
    try:
        easy = load_problems(easy_path, DatasetFormat.UNIFIED_JSONL)
        hard = load_problems(hard_path, DatasetFormat.UNIFIED_JSONL)
    except (FormatError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    rows = []
    for e, h in zip(easy, hard):
        rows.append(
            {
                "easy_id": e.id,
                "hard_id": h.id,
                "prompt": ds.build_interpolation_prompt(e, h),
            }
        )
    ds.write_jsonl(out_path, rows)
    click.echo(f"wrote {len(rows)} prompts to {out_path}")


@cmd_dataset.command("distill-filter")
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False), required=True, help="JSONL of {problem_id, conversation}, n consecutive lines per problem.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--n", "n_samples", type=int, default=None, help="Samples per problem (default from config).")
@click.pass_context
def cmd_distill_filter(ctx: click.Context, in_path: str, out_path: str, n_samples: int | None) -> None:
    """Keep problems whose sampled solutions all agree on the answer."""
    cfg: AppConfig = ctx.obj["cfg"]
    n = n_samples or cfg.dataset.n_samples
    groups: dict[str, list[ds.CandidateSolution]] = {}
    order: list[str] = []
    try:
        for line_no, raw in ds.read_jsonl(in_path):
            pid = str(raw["problem_id"])
            conv = parse(raw["conversation"], cfg.tokens)
            groups.setdefault(pid, []).append(ds.CandidateSolution.from_conversation(conv))
            if pid not in order:
                order.append(pid)
    except (json.JSONDecodeError, KeyError, LceFormatError) as exc:
        click.echo(f"error: {in_path}: {exc}", err=True)
        sys.exit(1)
    kept, dropped = [], 0
    for pid in order:
        candidates = groups[pid]
        if len(candidates) != n:
            log.warning("problem %s has %d samples, expected %d; dropped", pid, len(candidates), n)
            dropped += 1
            continue
        result = ds.consistency_filter(candidates, n, cfg.equivalence)
        if result is None:
            dropped += 1
            continue
        solution, consensus = result
        kept.append(
            {
                "problem_id": pid,
                "conversation": serialize(solution.conversation, cfg.tokens),
                "consensus": render_answer(consensus),
            }
        )
    ds.write_jsonl(out_path, kept)
    click.echo(f"kept {len(kept)} dropped {dropped}")


@cmd_dataset.command("make-instances")
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False), required=True, help="JSONL with a 'conversation' field per line.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def cmd_make_instances(ctx: click.Context, in_path: str, out_path: str) -> None:
    """Annotate serialized conversations with loss spans."""
    cfg: AppConfig = ctx.obj["cfg"]
    rows = []
    try:
        for line_no, raw in ds.read_jsonl(in_path):
            conv = parse(raw["conversation"], cfg.tokens)
            rows.append(ds.make_training_instance(conv, cfg.tokens).to_json_dict())
    except (json.JSONDecodeError, KeyError, LceFormatError) as exc:
        click.echo(f"error: {in_path}: {exc}", err=True)
        sys.exit(1)
    ds.write_jsonl(out_path, rows)
    click.echo(f"wrote {len(rows)} instances to {out_path}")


@cmd_dataset.command("pack")
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False), required=True, help="JSONL of {text, loss_spans} instances.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--context-length", type=int, default=None, help="Tokens per packed sequence (default from config).")
@click.pass_context
def cmd_pack(ctx: click.Context, in_path: str, out_path: str, context_length: int | None) -> None:
    """Pack instances into fixed-length sequences with the byte tokenizer."""
    cfg: AppConfig = ctx.obj["cfg"]
    length = context_length or cfg.dataset.context_length
    try:
        instances = [
            ds.TrainingInstance.from_json_dict(raw) for _, raw in ds.read_jsonl(in_path)
        ]
    except (json.JSONDecodeError, KeyError) as exc:
        click.echo(f"error: {in_path}: {exc}", err=True)
        sys.exit(1)
    packs = ds.pack(instances, ds.ByteTokenizer(), length)
    ds.write_jsonl(out_path, [p.to_json_dict() for p in packs])
    click.echo(f"wrote {len(packs)} packed sequences to {out_path}")


@main.command("kernel-check")
@click.pass_context
def cmd_kernel_check(ctx: click.Context) -> None:
    """Spawn the configured kernel and probe handshake, state, and timeout."""
    cfg: AppConfig = ctx.obj["cfg"]
    failures = 0

    def report(name: str, ok: bool, detail: str = "") -> None:
        nonlocal failures
        if not ok:
            failures += 1
        suffix = f" ({detail})" if detail else ""
        click.echo(f"{'PASS' if ok else 'FAIL'} {name}{suffix}")

    try:
        session = _kernel_session(cfg)
    except ExecutorError as exc:
        report("handshake", False, str(exc))
        sys.exit(1)
    report("handshake", True)
    try:
        session.execute("x = 4*85")
        result = session.execute("x")
        report(
            "state",
            result.status is ExecStatus.OK and result.value_repr == "340",
            f"value_repr={result.value_repr!r}",
        )
        result = session.execute("while True: pass", timeout_ms=1000)
        restarted = result.status is ExecStatus.TIMEOUT and session.state is SessionState.LIVE
        report("timeout", restarted, f"status={result.status.value}")
    finally:
        close_session(session)
    sys.exit(1 if failures else 0)


if __name__ == "__main__":
    main()
