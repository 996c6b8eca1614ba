"""Operator command line: extraction, graph management, QA, evaluation,
judging and the HTTP service.

Exit codes are stable for scripting: 0 success, 1 partial or data failure
(some documents/records failed), 2 usage or configuration errors.

The language-model gateway is selected per invocation: ``--gateway
mock:<script.json>`` replays a scripted mock (fully offline), ``--gateway
http`` talks to the endpoint configured via KGQA_LLM_* environment
variables. The default comes from KGQA_GATEWAY, falling back to http.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import extraction as ex
from . import judge_eval
from .eval_metrics import (
    SMOOTHING_EPSILON,
    SMOOTHING_NONE,
    DatasetError,
    evaluate_dataset,
    load_alpaca,
    render_report_table,
)
from .graph_store import GraphStore, GraphStoreError
from .llm_gateway import (
    GatewayConfig,
    GatewayError,
    HttpGateway,
    MockGateway,
    default_model_from_env,
)
from .qa_engine import EngineConfig, TransitionKind, handle_command, start_session
from .retrieval import EmptyKeywordError

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise click.UsageError(f"cannot read config file {path}: {exc}")
    if not isinstance(data, dict):
        raise click.UsageError(f"config file {path} must hold a JSON object")
    return data


def file_config() -> dict:
    ctx = click.get_current_context(silent=True)
    return (ctx.obj or {}) if ctx else {}


def setting(flag_value, env_name: str, file_key: str, fallback):
    """Precedence: explicit flag, then environment, then config file,
    then the built-in default."""
    if flag_value is not None:
        return flag_value
    env_value = os.environ.get(env_name)
    if env_value is not None:
        return env_value
    if file_key in file_config():
        return file_config()[file_key]
    return fallback


def build_gateway(spec: str | None):
    """Resolve a gateway spec: ``mock:<script.json>`` or ``http``."""
    spec = setting(spec, "KGQA_GATEWAY", "gateway", "http")
    if spec.startswith("mock:"):
        path = spec[len("mock:") :]
        if not Path(path).is_file():
            raise click.UsageError(f"mock script not found: {path}")
        return MockGateway.from_file(path)
    if spec == "http":
        llm = file_config().get("llm", {})
        merged = {**llm, **_llm_env_overrides()}
        return HttpGateway(
            GatewayConfig(
                base_url=merged.get("base_url", GatewayConfig.base_url),
                api_key=merged.get("api_key", ""),
                max_retries=int(merged.get("max_retries", 2)),
                retry_backoff=float(merged.get("retry_backoff", 0.5)),
                max_concurrent_requests=int(merged.get("max_concurrent_requests", 4)),
            )
        )
    raise click.UsageError(f"unknown gateway spec {spec!r} (use http or mock:<file>)")


def _llm_env_overrides() -> dict:
    mapping = {
        "KGQA_LLM_BASE_URL": "base_url",
        "KGQA_LLM_API_KEY": "api_key",
        "KGQA_LLM_MAX_RETRIES": "max_retries",
        "KGQA_LLM_BACKOFF": "retry_backoff",
        "KGQA_LLM_MAX_CONCURRENT": "max_concurrent_requests",
    }
    return {
        key: os.environ[env]
        for env, key in mapping.items()
        if env in os.environ
    }


def build_predictor(spec: str, records, gateway_spec: str | None):
    """Predictor specs: ``echo`` (returns each record's reference),
    ``fixture:<answers.json>`` (prompt->answer map) or ``endpoint``."""
    if spec == "echo":
        by_prompt = {record.prompt(): record.output for record in records}
        return lambda prompt: by_prompt.get(prompt, "")
    if spec.startswith("fixture:"):
        path = spec[len("fixture:") :]
        try:
            table = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise click.UsageError(f"cannot read fixture answers {path}: {exc}")
        return lambda prompt: table.get(prompt, "")
    if spec == "endpoint":
        gateway = build_gateway(gateway_spec)
        model = default_model_from_env()

        def predictor(prompt: str) -> str:
            from .llm_gateway import ChatRequest

            return gateway.chat(
                ChatRequest.from_pairs([("user", prompt)], model=model)
            ).content

        return predictor
    raise click.UsageError(
        f"unknown predictor {spec!r} (use echo, fixture:<file> or endpoint)"
    )


@click.group()
@click.option(
    "--config",
    "config_path",
    default=None,
    help="JSON config file; flags and environment variables override it.",
)
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Knowledge-graph construction and graph-grounded QA toolkit."""
    ctx.obj = load_config_file(config_path)


# -- extract ---------------------------------------------------------------


@main.command()
@click.option("--input", "input_dir", required=True, help="Directory of .txt documents.")
@click.option("--out", "out_dir", required=True, help="Output directory for stage files.")
@click.option(
    "--theta",
    type=float,
    default=lambda: float(os.environ.get("KGQA_THETA", 0.8)),
    show_default="0.8 or KGQA_THETA",
    help="Confidence threshold (strict).",
)
@click.option(
    "--policy",
    type=click.Choice(["strict", "lenient"]),
    default="strict",
    show_default=True,
    help="Drop ontology-invalid triples, or keep them flagged.",
)
@click.option(
    "--stage",
    type=click.Choice(["heads", "relations", "tails", "all"]),
    default="all",
    show_default=True,
    help="How far to run the pipeline.",
)
@click.option("--window", default=600, show_default=True, help="Context snippet size in characters.")
@click.option("--gateway", "gateway_spec", default=None, help="Gateway: http or mock:<script.json>.")
def extract(input_dir, out_dir, theta, policy, stage, window, gateway_spec):
    """Run the three-stage extraction pipeline over a document directory."""
    input_path = Path(input_dir)
    if not input_path.is_dir():
        raise click.UsageError(f"input directory not found: {input_dir}")
    documents = sorted(input_path.glob("*.txt"))
    if not documents:
        raise click.UsageError(f"no .txt documents in {input_dir}")
    gateway = build_gateway(gateway_spec)
    cfg = ex.ExtractionConfig(
        theta=theta,
        snippet_window=window,
        validation_policy=(
            ex.ValidationPolicy.STRICT_DROP
            if policy == "strict"
            else ex.ValidationPolicy.LENIENT_KEEP_FLAGGED
        ),
    )
    failures: list[str] = []
    for path in documents:
        doc = ex.Document.from_file(path)
        manifest = ex.new_manifest(doc, cfg)
        result = ex.ExtractionResult([], [], [], manifest)
        try:
            result.heads = ex.extract_head_entities(doc, cfg, gateway, manifest)
            if stage in ("relations", "tails", "all"):
                result.candidates = ex.extract_relations(
                    result.heads, cfg, gateway, manifest
                )
            if stage in ("tails", "all"):
                result.triples = ex.extract_tail_entities(
                    result.candidates, cfg, gateway, manifest
                )
        except (ex.EmptyDocumentError, GatewayError) as exc:
            failures.append(f"{path.name}: {exc}")
            continue
        files = ex.write_stage_files(result, out_dir, path.stem)
        click.echo(
            f"{path.name}: {manifest.counts['heads']} heads, "
            f"{manifest.counts['candidates']} candidates, "
            f"{manifest.counts['triples']} triples -> {files['triples'].parent}"
        )
    if failures:
        click.echo(f"{len(failures)} document(s) failed:", err=True)
        for line in failures:
            click.echo(f"  {line}", err=True)
        sys.exit(EXIT_PARTIAL)


# -- graph -----------------------------------------------------------------


@main.group()
def graph() -> None:
    """Import, export and inspect the graph CSV directory."""


@graph.command("import")
@click.option("--dir", "csv_dir", required=True, help="Graph CSV directory.")
@click.option(
    "--triples",
    "triples_files",
    multiple=True,
    help="Extraction triples file(s) to ingest before saving.",
)
@click.option(
    "--policy",
    type=click.Choice(["strict", "lenient"]),
    default="strict",
    show_default=True,
)
@click.option(
    "--mode",
    type=click.Choice(["paper_exact", "extended"]),
    default="extended",
    show_default=True,
)
def graph_import(csv_dir, triples_files, policy, mode):
    """Build the store from CSVs (and optional triples files); print counts."""
    try:
        store = GraphStore.load(csv_dir) if Path(csv_dir).is_dir() else GraphStore()
        ingest_policy = (
            ex.ValidationPolicy.STRICT_DROP
            if policy == "strict"
            else ex.ValidationPolicy.LENIENT_KEEP_FLAGGED
        )
        for triples_file in triples_files:
            triples = ex.triples_from_json(
                Path(triples_file).read_text(encoding="utf-8")
            )
            store.upsert_triples(triples, ingest_policy)
        if triples_files:
            store.save(csv_dir, mode=mode)
    except (GraphStoreError, OSError, ValueError) as exc:
        click.echo(f"import failed: {exc}", err=True)
        sys.exit(EXIT_PARTIAL)
    stats = store.stats()
    click.echo(f"nodes: {stats.node_count}")
    click.echo(f"edges: {stats.edge_count}")


@graph.command("export")
@click.option("--dir", "csv_dir", required=True, help="Graph CSV directory to load.")
@click.option("--out", "out_dir", default=None, help="Destination (defaults to --dir).")
@click.option(
    "--mode",
    type=click.Choice(["paper_exact", "extended"]),
    default="extended",
    show_default=True,
)
def graph_export(csv_dir, out_dir, mode):
    """Rewrite the graph as canonical CSV files."""
    try:
        store = GraphStore.load(csv_dir)
        store.save(out_dir or csv_dir, mode=mode)
    except (GraphStoreError, OSError) as exc:
        click.echo(f"export failed: {exc}", err=True)
        sys.exit(EXIT_PARTIAL)
    click.echo(f"exported to {out_dir or csv_dir}")


@graph.command("stats")
@click.option("--dir", "csv_dir", required=True, help="Graph CSV directory.")
def graph_stats(csv_dir):
    """Print node/edge counts with per-label and per-relation breakdowns."""
    try:
        store = (
            GraphStore.load(csv_dir) if Path(csv_dir).is_dir() else GraphStore()
        )
    except GraphStoreError as exc:
        click.echo(f"stats failed: {exc}", err=True)
        sys.exit(EXIT_PARTIAL)
    click.echo(json.dumps(store.stats().to_dict(), indent=2))


# -- qa ----------------------------------------------------------------------


@main.command()
@click.option("--keyword", default=None, help="Initial search keyword.")
@click.option("--graph", "csv_dir", required=True, help="Graph CSV directory.")
@click.option("--gateway", "gateway_spec", default=None, help="Gateway: http or mock:<script.json>.")
@click.option("--transcript", "transcript_path", default=None, help="Save the session transcript here.")
@click.option("--model", default=None, help="Answer model name.")
def qa(keyword, csv_dir, gateway_spec, transcript_path, model):
    """Interactive graph-grounded QA loop.

    Retrieval first: the keyword's neighborhood is printed as context.
    Then questions are answered in rounds; "new" restarts with a fresh
    keyword and "exit" leaves the loop.
    """
    if not Path(csv_dir).is_dir():
        raise click.UsageError(f"graph directory not found: {csv_dir}")
    store = GraphStore.load(csv_dir)
    gateway = build_gateway(gateway_spec)
    cfg = EngineConfig(answer_model=model or default_model_from_env())
    transcript: list[str] = []

    def say(text: str) -> None:
        click.echo(text)
        transcript.append(text)

    if keyword is None:
        keyword = click.prompt("keyword")
        transcript.append(f"keyword: {keyword}")
    else:
        say(f"keyword: {keyword}")

    try:
        while True:
            try:
                session = start_session(store, keyword, cfg)
            except EmptyKeywordError:
                keyword = click.prompt("keyword")
                continue
            if session.no_context:
                say("(no graph context found for this keyword)")
            else:
                say(session.context.text)
            while session.active:
                try:
                    line = click.prompt("", prompt_suffix="> ")
                except click.Abort:
                    say("bye")
                    return
                transcript.append(f"> {line}")
                try:
                    transition = handle_command(session, line, gateway, cfg)
                except GatewayError as exc:
                    say(f"(model call failed: {exc})")
                    continue
                if transition.kind is TransitionKind.RESTARTED:
                    keyword = click.prompt("keyword")
                    transcript.append(f"keyword: {keyword}")
                    break
                if transition.kind is TransitionKind.ENDED:
                    say("bye")
                    return
                say(transition.answer)
    finally:
        if transcript_path:
            Path(transcript_path).write_text(
                "\n".join(transcript) + "\n", encoding="utf-8"
            )


# -- eval ----------------------------------------------------------------


@main.command("eval")
@click.option("--dataset", "dataset_path", required=True, help="Instruction dataset (JSON array).")
@click.option("--predictor", default="echo", show_default=True, help="echo, fixture:<file> or endpoint.")
@click.option(
    "--smooth",
    type=click.Choice([SMOOTHING_NONE, SMOOTHING_EPSILON]),
    default=SMOOTHING_NONE,
    show_default=True,
)
@click.option("--out", "out_path", default=None, help="Write the full report JSON here.")
@click.option("--gateway", "gateway_spec", default=None, help="Gateway for the endpoint predictor.")
def eval_command(dataset_path, predictor, smooth, out_path, gateway_spec):
    """Score a predictor against dataset references with BLEU/ROUGE."""
    try:
        records = load_alpaca(dataset_path)
    except DatasetError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_PARTIAL)
    predict = build_predictor(predictor, records, gateway_spec)
    report = evaluate_dataset(records, predict, smoothing=smooth)
    click.echo(render_report_table(report))
    if report.failed_count:
        click.echo(f"failed samples: {report.failed_count}", err=True)
    if out_path:
        Path(out_path).write_text(
            json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
    if report.failed_count:
        sys.exit(EXIT_PARTIAL)


# -- judge ---------------------------------------------------------------


@main.command()
@click.option("--dataset", "dataset_path", required=True, help="Instruction dataset (JSON array).")
@click.option("--system-a", "system_a_spec", required=True, help="echo, fixture:<file> or endpoint.")
@click.option("--system-b", "system_b_spec", required=True, help="echo, fixture:<file> or endpoint.")
@click.option("--judge", "judge_spec", required=True, help="Judge gateway: http or mock:<script.json>.")
@click.option("--label-a", default="System A", show_default=True)
@click.option("--label-b", default="System B", show_default=True)
@click.option("--out", "out_path", default=None, help="Write the comparison JSON here.")
@click.option("--gateway", "gateway_spec", default=None, help="Gateway for endpoint predictors.")
def judge(
    dataset_path,
    system_a_spec,
    system_b_spec,
    judge_spec,
    label_a,
    label_b,
    out_path,
    gateway_spec,
):
    """Compare two answering systems with an LLM judge."""
    try:
        records = load_alpaca(dataset_path)
    except DatasetError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_PARTIAL)
    system_a = build_predictor(system_a_spec, records, gateway_spec)
    system_b = build_predictor(system_b_spec, records, gateway_spec)
    judge_gateway = build_gateway(judge_spec)
    report = judge_eval.compare_systems(
        records,
        system_a,
        system_b,
        judge_gateway,
        system_a_label=label_a,
        system_b_label=label_b,
        model=default_model_from_env(),
    )
    click.echo(judge_eval.render_comparison_table(report))
    if report.failed_count:
        click.echo(f"failed records: {report.failed_count}", err=True)
    if out_path:
        Path(out_path).write_text(
            json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
    if report.judged_count == 0:
        sys.exit(EXIT_PARTIAL)


# -- serve ---------------------------------------------------------------


@main.command()
@click.option(
    "--host",
    default=lambda: os.environ.get("KGQA_BIND", "0.0.0.0"),
    show_default="0.0.0.0 or KGQA_BIND",
)
@click.option(
    "--port",
    type=int,
    default=lambda: int(os.environ.get("KGQA_PORT", 8000)),
    show_default="8000 or KGQA_PORT",
)
@click.option(
    "--graph",
    "csv_dir",
    default=None,
    help="Graph CSV directory to serve (or KGQA_GRAPH_DIR).",
)
@click.option("--ui", "ui_dir", default=None, help="Static UI bundle directory.")
@click.option("--api-key", default=None, help="API key (or KGQA_API_KEY).")
@click.option("--no-auth", is_flag=True, help="Disable API-key authentication.")
@click.option(
    "--session-ttl",
    type=float,
    default=lambda: float(os.environ.get("KGQA_SESSION_TTL", 1800.0)),
    show_default="1800 or KGQA_SESSION_TTL",
    help="Session idle TTL in seconds.",
)
@click.option("--gateway", "gateway_spec", default=None, help="Gateway: http or mock:<script.json>.")
def serve(host, port, csv_dir, ui_dir, api_key, no_auth, session_ttl, gateway_spec):
    """Run the HTTP QA service until interrupted."""
    import uvicorn

    from .service_api import ApiConfig, create_app

    key = setting(api_key, "KGQA_API_KEY", "api_key", "")
    if not no_auth and not key:
        raise click.UsageError(
            "an API key is required: pass --api-key, set KGQA_API_KEY, "
            "or disable auth with --no-auth"
        )
    csv_dir = setting(csv_dir, "KGQA_GRAPH_DIR", "graph_dir", None)
    store = None
    if csv_dir:
        if not Path(csv_dir).is_dir():
            raise click.UsageError(f"graph directory not found: {csv_dir}")
        store = GraphStore.load(csv_dir)
    app = create_app(
        store,
        build_gateway(gateway_spec),
        ApiConfig(
            bind_address=host,
            port=port,
            api_key=key,
            auth_enabled=not no_auth,
            ui_dir=ui_dir,
        ),
        EngineConfig(
            answer_model=default_model_from_env(), session_ttl=session_ttl
        ),
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
