"""Command-line interface: validate, analyze, serve, eval, gen-synthetic."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .errors import CdrAgentError
from .evaluation import gen_synthetic, load_dataset, load_tabular, load_templates, report_to_dict, run_eval
from .pipeline import PipelineConfig, SessionManager, Status, session_to_dict
from .providers import (
    MockEmbeddingProvider,
    MockLlmProvider,
    RemoteEmbeddingProvider,
    RemoteLlmProvider,
)
from .registry import load_registry, unused_variables, validate_definition
from .selection import SelectionConfig
from .service import serve as run_server


def _build_providers(provider: str, mock_llm_fixtures: str | None):
    if provider == "mock":
        llm = (
            MockLlmProvider.from_file(mock_llm_fixtures)
            if mock_llm_fixtures
            else MockLlmProvider()
        )
        return MockEmbeddingProvider(), llm
    return RemoteEmbeddingProvider.from_env(), RemoteLlmProvider.from_env()


def _selection_options(f):
    f = click.option("--alpha", type=float, default=0.05, show_default=True)(f)
    f = click.option("--truncations", type=int, default=10, show_default=True)(f)
    f = click.option("--retention", type=float, default=0.7, show_default=True)(f)
    f = click.option("--seed", type=int, default=0, show_default=True)(f)
    return f


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Select, extract variables for, and execute clinical decision rules."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@main.command()
@click.option("--registry", "registry_dir", required=True, type=click.Path(exists=True, file_okay=False))
def validate(registry_dir: str) -> None:
    """Validate every definition in a registry directory."""
    problems = 0
    for path in sorted(Path(registry_dir).glob("*.json")):
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            click.echo(f"{path.name}: PARSE ERROR line {exc.lineno}: {exc.msg}")
            problems += 1
            continue
        violations = validate_definition(raw)
        if violations:
            problems += len(violations)
            for v in violations:
                click.echo(f"{path.name}: {v}")
        else:
            click.echo(f"{path.name}: ok")
    try:
        registry = load_registry(registry_dir)
    except CdrAgentError as exc:
        click.echo(f"registry load failed: {exc}")
        sys.exit(1)
    for d in registry:
        dead = unused_variables(d)
        if dead:
            problems += len(dead)
            click.echo(f"{d.id}: unused variables: {', '.join(dead)}")
    click.echo(f"{len(registry)} definitions, digest {registry.source_digest[:12]}")
    sys.exit(1 if problems else 0)


@main.command()
@click.option("--note", "note_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--registry", "registry_dir", required=True, type=click.Path(exists=True, file_okay=False))
@_selection_options
@click.option("--provider", type=click.Choice(["mock", "remote"]), default="mock", show_default=True)
@click.option("--mock-llm-fixtures", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--interactive", is_flag=True, help="Prompt on the terminal for missing variables.")
@click.option("--age", type=float, default=None, help="Patient age in years (note metadata).")
@click.option("--sex", type=str, default=None, help="Patient sex (note metadata).")
@click.option("--json", "json_output", is_flag=True, help="Print the raw session JSON.")
def analyze(
    note_path: str,
    registry_dir: str,
    alpha: float,
    truncations: int,
    retention: float,
    seed: int,
    provider: str,
    mock_llm_fixtures: str | None,
    interactive: bool,
    age: float | None,
    sex: str | None,
    json_output: bool,
) -> None:
    """Analyze one note file and print the session report."""
    registry = load_registry(registry_dir)
    embedding, llm = _build_providers(provider, mock_llm_fixtures)
    config = PipelineConfig(
        selection=SelectionConfig(
            alpha=alpha, num_truncations=truncations, retention_ratio=retention, rng_seed=seed
        ),
        interactive=interactive,
    )
    manager = SessionManager(registry, embedding, llm, config)
    note = Path(note_path).read_text(encoding="utf-8").strip()
    note_meta = {}
    if age is not None:
        note_meta["patient_age_years"] = age
    if sex is not None:
        note_meta["patient_sex"] = sex
    session = manager.analyze(note, note_meta)

    while session.status is Status.AWAITING_INPUT:
        cdr_id, names = next(iter(session.pending.items()))
        d = registry.get(cdr_id)
        click.echo(f"\n{d.name} needs values for: {', '.join(names)}")
        supplied = {}
        for name in names:
            spec = d.variable(name)
            hint = spec.vtype.value if not spec.values else "/".join(spec.values)
            supplied[name] = click.prompt(f"  {name} ({hint}) - {spec.definition}")
        session = manager.resolve_variables(session.session_id, cdr_id, supplied)

    if json_output:
        click.echo(json.dumps(session_to_dict(session), indent=2, sort_keys=True))
        return
    _print_session(session, registry)


def _print_session(session, registry) -> None:
    click.echo(f"status: {session.status.value}")
    if session.error:
        click.echo(f"error: {session.error}")
        return
    profile = session.profile
    click.echo(f"fitted mu={profile.mu_hat:.4f} sigma={profile.sigma_hat:.4f}")
    for cdr_id in sorted(profile.per_cdr, key=lambda c: -profile.per_cdr[c].statistic):
        sim = profile.per_cdr[cdr_id]
        marker = "*" if cdr_id in profile.selected else " "
        click.echo(f" {marker} {cdr_id:24s} score={sim.statistic:.4f} z={sim.zscore:+.2f}")
    if not profile.selected:
        click.echo("no applicable rule for this note")
        return
    click.echo("outcomes:")
    for cdr_id in session.report.order:
        result = session.report.per_cdr[cdr_id]
        if result.kind == "outcome":
            flag = " [positive]" if result.outcome.is_positive else ""
            click.echo(f"  {cdr_id}: {result.outcome.label}{flag}")
        elif result.kind == "excluded":
            click.echo(f"  {cdr_id}: excluded ({'; '.join(result.reasons)})")
        else:
            click.echo(f"  {cdr_id}: ERROR {result.error}")
    t = session.timings
    click.echo(f"timings: t_sel={t.t_sel * 1e3:.1f}ms t_exe={t.t_exe * 1e3:.1f}ms t_tot={t.t_tot * 1e3:.1f}ms")


@main.command()
@click.option("--registry", "registry_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--provider", type=click.Choice(["mock", "remote"]), default="mock", show_default=True)
@click.option("--mock-llm-fixtures", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--interactive/--no-interactive", default=True, show_default=True)
@click.option("--session-ttl", type=float, default=3600.0, show_default=True)
def serve(
    registry_dir: str,
    host: str,
    port: int,
    provider: str,
    mock_llm_fixtures: str | None,
    interactive: bool,
    session_ttl: float,
) -> None:
    """Serve the HTTP API."""
    registry = load_registry(registry_dir)
    embedding, llm = _build_providers(provider, mock_llm_fixtures)
    config = PipelineConfig(interactive=interactive, session_ttl_s=session_ttl)
    manager = SessionManager(registry, embedding, llm, config)
    click.echo(f"serving {len(registry)} rules on http://{host}:{port}")
    run_server(manager, host=host, port=port)


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--registry", "registry_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--mode", type=click.Choice(["agent", "baseline"]), default="agent", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_selection_options
@click.option("--provider", type=click.Choice(["mock", "remote"]), default="mock", show_default=True)
@click.option("--mock-llm-fixtures", type=click.Path(exists=True, dir_okay=False), default=None)
def eval(
    dataset_path: str,
    registry_dir: str,
    mode: str,
    out_path: str,
    alpha: float,
    truncations: int,
    retention: float,
    seed: int,
    provider: str,
    mock_llm_fixtures: str | None,
) -> None:
    """Evaluate agent or baseline mode over a labeled dataset."""
    registry = load_registry(registry_dir)
    dataset = load_dataset(dataset_path)
    embedding, llm = _build_providers(provider, mock_llm_fixtures)
    report = run_eval(
        dataset,
        registry,
        mode=mode,
        embedding_provider=embedding,
        llm_provider=llm,
        selection=SelectionConfig(
            alpha=alpha, num_truncations=truncations, retention_ratio=retention, rng_seed=seed
        ),
    )
    Path(out_path).write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(
        f"mode={report.mode} notes={report.n_notes} EA={report.ea_accuracy:.4f} F1={report.f1:.4f} "
        f"sens={report.sensitivity} spec={report.specificity} failures={report.n_failures}"
    )
    click.echo(f"report written to {out_path}")


@main.command("gen-synthetic")
@click.option("--tabular", "tabular_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--templates", "templates_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n", type=int, required=True)
@click.option("--positive-fraction", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def gen_synthetic_cmd(
    tabular_path: str,
    templates_path: str,
    n: int,
    positive_fraction: float,
    seed: int,
    out_path: str,
) -> None:
    """Render synthetic labeled notes from tabular features and templates."""
    notes = gen_synthetic(
        load_tabular(tabular_path),
        load_templates(templates_path),
        n=n,
        positive_fraction=positive_fraction,
        seed=seed,
    )
    from .evaluation import save_dataset

    save_dataset(notes, out_path)
    positives = sum(1 for note in notes if "positive" in note.outcome_labels.values())
    click.echo(f"wrote {len(notes)} notes ({positives} positive) to {out_path}")


if __name__ == "__main__":
    main()
