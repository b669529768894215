"""Command-line front end for the pipeline stages and the benchmarks.

Commands mirror the stages: generate -> aggregate -> cluster -> stats, plus
mine1/mine2 for evaluation. All artifacts are JSON files; data artifacts are
order-normalized so identical inputs produce byte-identical outputs. Each
stage also writes a ``<out>.manifest.json`` sibling recording the model
configuration, the prompt-fixture digest, and timings (the manifest is the
only output that varies between identical runs).

Configuration comes from a key=value file (``--config``), overridden by
flags; the API key itself is read from the environment variable named by
``api_key_env``. Exit codes: 0 success, 1 pipeline error, 2 usage error.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from . import __version__
from .aggregate import aggregate
from .bench import (
    BenchParams,
    mine1_eval,
    mine2_eval,
    read_fixtures,
    read_qa_pairs,
    write_histogram_csv,
)
from .errors import TextKGError
from .extract import ChunkGraph, DEFAULT_MAX_CHARS, chunk_text, generate, read_corpus
from .gateway import ModelConfig, ModelGateway
from .graph import FORMAT_VERSION, compute_stats, deserialize, serialize
from .index import HashedBagEmbedder, RemoteEmbedder
from .prompts import prompt_digest
from .resolve import ResolutionParams, resolve

CONFIG_KEYS = {
    "backend",
    "model_name",
    "endpoint",
    "api_key_env",
    "max_retries",
    "temperature",
    "prompt_version",
    "mock_script",
    "mock_duplicate_rule",
    "embedding_backend",
    "embedding_endpoint",
    "embedding_model",
    "embedding_api_key_env",
    "embedding_dim",
    "jobs",
}


def _read_config(path: str | None) -> dict[str, str]:
    """Parse the key=value config format ('#' starts a comment)."""
    if path is None:
        return {}
    values: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise click.UsageError(f"{path}:{line_no}: expected key = value")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in CONFIG_KEYS:
            raise click.UsageError(f"{path}:{line_no}: unknown key {key!r}")
        values[key] = value
    return values


class Settings:
    """Effective configuration: defaults, overridden by file, overridden by flags."""

    def __init__(self, config_path: str | None, overrides: dict):
        self.values = _read_config(config_path)
        for key, value in overrides.items():
            if value is not None:
                self.values[key] = value

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            backend=str(self.get("backend", "mock")),
            model_name=str(self.get("model_name", "mock-model")),
            endpoint=str(self.get("endpoint", "")),
            api_key_env=str(self.get("api_key_env", "")),
            max_retries=int(self.get("max_retries", 3)),
            temperature=float(self.get("temperature", 0.0)),
            prompt_version=int(self.get("prompt_version", 2)),
            mock_script=self.get("mock_script") or None,
            mock_duplicate_rule=str(self.get("mock_duplicate_rule", "exact")),
            max_in_flight=int(self.get("jobs", 4)),
        )

    def embedder(self):
        backend = str(self.get("embedding_backend", "hashed"))
        if backend == "hashed":
            return HashedBagEmbedder(dim=int(self.get("embedding_dim", 64)))
        if backend == "remote":
            return RemoteEmbedder(
                endpoint=str(self.get("embedding_endpoint", "")),
                model_name=str(self.get("embedding_model", "")),
                api_key_env=str(self.get("embedding_api_key_env", "")),
            )
        raise click.UsageError(f"unknown embedding_backend {backend!r}")

    def jobs(self) -> int:
        return int(self.get("jobs", 1))


def _write_manifest(out_path: Path, command: str, settings: Settings, elapsed: float,
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "model_name": settings.get("model_name", "mock-model"),
        "backend": settings.get("backend", "mock"),
        "prompt_version": int(settings.get("prompt_version", 2)),
        "prompt_digest": prompt_digest(),
        "elapsed_seconds": round(elapsed, 3),
        **(extra or {}),
    }
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_json(path: Path, data: dict) -> None:
    path.write_text(
        json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _load_json(path: Path, expected_version: int = FORMAT_VERSION) -> dict:
    data = json.loads(path.read_text(encoding="utf-8"))
    version = data.get("format_version")
    if version != expected_version:
        raise TextKGError(
            f"{path}: format_version {version!r} is not supported (want "
            f"{expected_version}); re-run the producing stage with this build"
        )
    return data


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


_common_options = [
    click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
                 help="Key=value configuration file."),
    click.option("--backend", type=click.Choice(["remote", "mock"]), default=None),
    click.option("--model-name", default=None),
    click.option("--endpoint", default=None),
    click.option("--api-key-env", default=None),
    click.option("--max-retries", type=int, default=None),
    click.option("--temperature", type=float, default=None),
    click.option("--prompt-version", type=click.Choice(["1", "2"]), default=None),
    click.option("--mock-script", type=click.Path(exists=True, dir_okay=False), default=None),
    click.option("--mock-duplicate-rule", type=click.Choice(["exact", "token_subset"]),
                 default=None),
    click.option("--embedding-backend", type=click.Choice(["hashed", "remote"]), default=None),
    click.option("--embedding-endpoint", default=None),
    click.option("--embedding-model", default=None),
    click.option("--embedding-api-key-env", default=None),
    click.option("--embedding-dim", type=int, default=None),
    click.option("--jobs", type=int, default=None, help="Max in-flight model calls."),
]


def common_options(func):
    for option in reversed(_common_options):
        func = option(func)
    return func


def _settings(kwargs: dict) -> Settings:
    config_path = kwargs.pop("config")
    overrides = {key: kwargs.pop(key) for key in list(kwargs) if key in CONFIG_KEYS}
    return Settings(config_path, overrides)


@click.group()
@click.version_option(version=__version__)
def main():
    """Extract knowledge graphs from plain text and benchmark their quality."""


@main.command("generate")
@common_options
@click.argument("inputs", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--max-chars", type=int, default=DEFAULT_MAX_CHARS, show_default=True)
def cmd_generate(inputs, out, max_chars, **kwargs):
    """Chunk input documents and extract one graph fragment per chunk."""
    settings = _settings(kwargs)
    started = time.monotonic()
    try:
        gateway = ModelGateway(settings.model_config())
        chunks = []
        for doc_id, text in read_corpus(inputs):
            chunks.extend(chunk_text(text, max_chars=max_chars, doc_id=doc_id))
        if not chunks:
            click.echo("warning: no non-empty input text; writing an empty artifact",
                       err=True)
        result = generate(chunks, gateway, jobs=settings.jobs())
        out_path = Path(out)
        _write_json(
            out_path,
            {
                "format_version": FORMAT_VERSION,
                "chunk_graphs": [cg.to_jsonable() for cg in result.chunk_graphs],
                "failures": [
                    {"chunk_id": f.chunk_id, "error": f.error} for f in result.failures
                ],
            },
        )
        _write_manifest(
            out_path, "generate", settings, time.monotonic() - started,
            extra={
                "chunk_count": len(chunks),
                "failure_count": len(result.failures),
                "retry_counts": dict(sorted(gateway.retry_counts.items())),
            },
        )
    except TextKGError as exc:
        _fail(str(exc))


@main.command("aggregate")
@common_options
@click.argument("chunk_graphs_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_aggregate(chunk_graphs_file, out, **kwargs):
    """Merge chunk graphs into one lowercase-normalized graph."""
    settings = _settings(kwargs)
    started = time.monotonic()
    try:
        data = _load_json(Path(chunk_graphs_file))
        chunk_graphs = [ChunkGraph.from_jsonable(row) for row in data["chunk_graphs"]]
        graph = aggregate(chunk_graphs)
        Path(out).write_bytes(serialize(graph))
        _write_manifest(Path(out), "aggregate", settings, time.monotonic() - started,
                        extra={"triple_count": len(graph.triples)})
    except TextKGError as exc:
        _fail(str(exc))


@main.command("cluster")
@common_options
@click.argument("graph_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--strategy", type=click.Choice(["iterative", "hybrid"]), default="hybrid",
              show_default=True)
@click.option("--n", type=int, default=5, show_default=True,
              help="Failed proposals tolerated before leaving the proposal loop.")
@click.option("--b", type=int, default=10, show_default=True,
              help="Residual-assignment batch size.")
@click.option("--cluster-size", type=int, default=128, show_default=True,
              help="Target k-means cluster population.")
@click.option("--k", type=int, default=16, show_default=True,
              help="Fused-retrieval candidate count.")
@click.option("--instruction", default=None, help="Optional clustering instruction.")
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_cluster(graph_file, out, strategy, n, b, cluster_size, k, instruction, seed,
                **kwargs):
    """Merge synonymous entities and predicates; writes the rewritten graph."""
    settings = _settings(kwargs)
    started = time.monotonic()
    try:
        graph = deserialize(Path(graph_file).read_bytes())
        params = ResolutionParams(
            strategy=strategy, n=n, b=b, cluster_size=cluster_size, k=k,
            instruction=instruction, seed=seed, jobs=settings.jobs(),
        )
        gateway = ModelGateway(settings.model_config())
        embedder = settings.embedder() if strategy == "hybrid" else None
        result = resolve(graph, params, gateway, embedder)
        Path(out).write_bytes(serialize(result.graph))
        _write_manifest(
            Path(out), "cluster", settings, time.monotonic() - started,
            extra={
                "strategy": strategy,
                "seed": seed,
                "entity_clusters": len(result.entity_map.clusters),
                "predicate_clusters": len(result.edge_map.clusters),
                "retry_counts": dict(sorted(gateway.retry_counts.items())),
            },
        )
    except TextKGError as exc:
        _fail(str(exc))


@main.command("stats")
@click.option("--pre", "pre_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Graph before resolution.")
@click.option("--post", "post_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Graph after resolution.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def cmd_stats(pre_file, post_file, out):
    """Print de-dup ratios and the edge-reuse ratio for a resolved graph."""
    try:
        pre = deserialize(Path(pre_file).read_bytes())
        post = deserialize(Path(post_file).read_bytes())
        stats = compute_stats(pre, post)
        rendered = json.dumps(stats.to_jsonable(), indent=2, sort_keys=True)
        click.echo(rendered)
        if out:
            Path(out).write_text(rendered + "\n", encoding="utf-8")
    except TextKGError as exc:
        _fail(str(exc))


@main.command("mine1")
@common_options
@click.option("--fixtures", "fixtures_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON list of {id, title, text, facts[15]}.")
@click.option("--graphs", "graphs_dir", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Directory of per-article graphs named <article_id>.json.")
@click.option("--node-top-k", type=int, default=5, show_default=True)
@click.option("--report", "report_file", required=True, type=click.Path(dir_okay=False))
@click.option("--csv", "csv_file", type=click.Path(dir_okay=False), default=None)
@click.option("--histogram", "histogram_file", type=click.Path(dir_okay=False),
              default=None)
def cmd_mine1(fixtures_file, graphs_dir, node_top_k, report_file, csv_file,
              histogram_file, **kwargs):
    """Score fact retention of per-article graphs; emits JSON/CSV reports."""
    settings = _settings(kwargs)
    started = time.monotonic()
    try:
        fixtures = read_fixtures(fixtures_file)
        graphs = {}
        for fixture in fixtures:
            graph_path = Path(graphs_dir) / f"{fixture.article_id}.json"
            if not graph_path.exists():
                raise TextKGError(f"missing graph file {graph_path}")
            graphs[fixture.article_id] = deserialize(graph_path.read_bytes())
        params = BenchParams(node_top_k=node_top_k)
        gateway = ModelGateway(settings.model_config())
        report = mine1_eval(graphs, fixtures, params, gateway, settings.embedder())
        _write_json(Path(report_file), report.to_jsonable())
        if csv_file:
            report.write_csv(csv_file)
        if histogram_file:
            write_histogram_csv(report.rows, histogram_file)
        _write_manifest(Path(report_file), "mine1", settings,
                        time.monotonic() - started,
                        extra={"node_top_k": node_top_k,
                               "article_count": len(report.rows)})
        click.echo(f"mean score: {report.mean_score:.2f}")
    except TextKGError as exc:
        _fail(str(exc))


@main.command("mine2")
@common_options
@click.option("--graph", "graph_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--qa", "qa_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON-lines of {question, answer}.")
@click.option("--report", "report_file", required=True, type=click.Path(dir_okay=False))
@click.option("--csv", "csv_file", type=click.Path(dir_okay=False), default=None)
def cmd_mine2(graph_file, qa_file, report_file, csv_file, **kwargs):
    """Answer questions from fused-retrieved triples + chunks and judge them."""
    settings = _settings(kwargs)
    started = time.monotonic()
    try:
        graph = deserialize(Path(graph_file).read_bytes())
        qa_pairs = read_qa_pairs(qa_file)
        if not qa_pairs:
            raise TextKGError(f"{qa_file} contains no questions")
        gateway = ModelGateway(settings.model_config())
        report = mine2_eval(graph, qa_pairs, BenchParams(), gateway, settings.embedder())
        _write_json(Path(report_file), report.to_jsonable())
        if csv_file:
            report.write_csv(csv_file)
        _write_manifest(Path(report_file), "mine2", settings,
                        time.monotonic() - started,
                        extra={"question_count": len(report.verdicts)})
        click.echo(f"accuracy: {report.accuracy:.2f}")
    except TextKGError as exc:
        _fail(str(exc))


if __name__ == "__main__":
    main()
