"""`forge` command-line interface.

Exit codes: 0 success, 2 partial failure (some papers failed while others
succeeded), 1 fatal error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .corpus import CorpusError, corpus_stats, load_corpus
from .datagen import (
    DatagenError,
    EvalReport,
    build_manifest,
    eval_responses,
    evaluate_dataset,
    load_dataset,
    sample_dialogues,
    synthesize_dataset,
)
from .gateway import GatewayError
from .remuse import FeedbackMode, RemuseConfig, Scenario
from .scorer import ScorerEndpoint, UnavailablePolicy

EXIT_PARTIAL = 2

_FATAL = (CorpusError, DatagenError, GatewayError, ValueError, OSError)


def _load_provider_config(path: str | None) -> dict:
    if path is None:
        raise click.ClickException(
            "a provider is required: pass --provider-config pointing at a JSON file "
            'like {"kind": "http", "base_url": ..., "model_name": ...}'
        )
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"cannot read provider config {path}: {exc}")


def _scorer_endpoint(url: str | None, metrics: str, policy: str) -> ScorerEndpoint | None:
    if url is None:
        return None
    return ScorerEndpoint(
        base_url=url,
        metric_names=frozenset(m.strip() for m in metrics.split(",") if m.strip()),
        unavailable_policy=UnavailablePolicy(policy),
    )


def _print_report(report: EvalReport, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(report.to_dict(), indent=2))
        return
    means = report.to_dict()["means"]
    for name in ("k_prec", "q2_f1", "q2_nli", "specificity"):
        value = means[name]
        click.echo(f"{name:>12}: {value:.4f}" if value is not None else f"{name:>12}: n/a")
    if report.bleu is not None:
        click.echo(f"{'bleu':>12}: {report.bleu:.2f}")
    click.echo(
        f"counts: done={report.done} failed={report.failed} skipped={report.skipped} "
        f"annotation_discrepancies={report.annotation_discrepancies}"
    )


@click.group()
def main() -> None:
    """Synthesize, evaluate, and serve knowledge-grounded decision dialogues."""


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--out", "output_path", required=True, type=click.Path())
@click.option("--variant", type=click.Choice(["extensive", "paraphrased", "tldr"]), default="extensive")
@click.option("--rewards", default="k_prec,q2,specificity", show_default=True,
              help="Comma-separated subset of k_prec,q2,specificity.")
@click.option("--feedback", type=click.Choice(["generic", "actionable", "rewarded"]), default="rewarded")
@click.option("--iterations", type=int, default=1, show_default=True)
@click.option("--resume", is_flag=True, default=False)
@click.option("--scenario", type=click.Choice([s.value for s in Scenario]), default="meta_review")
@click.option("--provider-config", "provider_config_path", type=click.Path(), default=None)
@click.option("--scorer", "scorer_url", default=None, help="External scorer base URL.")
@click.option("--scorer-metrics", default="q2_f1,q2_nli", show_default=True)
@click.option("--scorer-policy", type=click.Choice(["omit", "fail"]), default="omit")
@click.option("--traces", "traces_path", type=click.Path(), default=None,
              help="Optional sidecar file for full refinement traces.")
@click.option("--workers", type=int, default=1, show_default=True,
              help="Bounded worker pool size; output order stays corpus order.")
@click.option("--select-best", is_flag=True, default=False,
              help="Write the highest-k_prec trace dialogue instead of the last refinement.")
def synth(corpus_path, output_path, variant, rewards, feedback, iterations, resume,
          scenario, provider_config_path, scorer_url, scorer_metrics, scorer_policy,
          traces_path, workers, select_best):
    """Run the refinement pipeline over a corpus into a dataset file."""
    try:
        rc = RemuseConfig(
            reward_subset=frozenset(r.strip() for r in rewards.split(",") if r.strip()),
            feedback_mode=FeedbackMode(feedback),
            iterations=iterations,
            prompt_variant=variant,
            scenario=Scenario(scenario),
        )
        provider = _load_provider_config(provider_config_path)
        scorer_cfg = None
        if scorer_url is not None:
            scorer_cfg = {
                "base_url": scorer_url,
                "metric_names": sorted(m.strip() for m in scorer_metrics.split(",") if m.strip()),
                "unavailable_policy": scorer_policy,
            }
        manifest = build_manifest(corpus_path, output_path, rc, provider, scorer_cfg, resume)
        manifest = synthesize_dataset(manifest, traces_path=traces_path, workers=workers,
                                      select_best=select_best)
    except _FATAL as exc:
        raise click.ClickException(str(exc))
    counts = manifest.counts()
    click.echo(f"done={counts['done']} failed={counts['failed']} pending={counts['pending']}")
    if counts["failed"]:
        for pid, st in manifest.status.items():
            if st.state == "failed":
                click.echo(f"failed {pid}: {st.reason}", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command("eval")
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--scorer", "scorer_url", default=None)
@click.option("--scorer-metrics", default="q2_f1,q2_nli", show_default=True)
@click.option("--scorer-policy", type=click.Choice(["omit", "fail"]), default="omit")
@click.option("--json", "as_json", is_flag=True, default=False)
def eval_cmd(dataset_path, corpus_path, scorer_url, scorer_metrics, scorer_policy, as_json):
    """Rescore a dataset from raw text and report role-aware means."""
    try:
        report = evaluate_dataset(
            dataset_path, corpus_path, _scorer_endpoint(scorer_url, scorer_metrics, scorer_policy)
        )
    except _FATAL as exc:
        raise click.ClickException(str(exc))
    _print_report(report, as_json)


@main.command("eval-responses")
@click.option("--pred", "predictions_path", required=True, type=click.Path())
@click.option("--gold", "gold_path", required=True, type=click.Path())
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--scorer", "scorer_url", default=None)
@click.option("--scorer-metrics", default="q2_f1,q2_nli", show_default=True)
@click.option("--scorer-policy", type=click.Choice(["omit", "fail"]), default="omit")
@click.option("--json", "as_json", is_flag=True, default=False)
def eval_responses_cmd(predictions_path, gold_path, corpus_path, scorer_url, scorer_metrics,
                       scorer_policy, as_json):
    """Score response predictions: BLEU vs gold plus faithfulness vs knowledge."""
    try:
        report = eval_responses(
            predictions_path, gold_path, corpus_path,
            _scorer_endpoint(scorer_url, scorer_metrics, scorer_policy),
        )
    except _FATAL as exc:
        raise click.ClickException(str(exc))
    _print_report(report, as_json)


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--sample", "sample_n", type=int, default=None, help="Analyze a random subsample.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True, default=False)
def stats(dataset_path, sample_n, seed, as_json):
    """Dataset statistics: token/turn averages and seeker n-gram diversity."""
    try:
        dialogues = load_dataset(dataset_path)
        if sample_n is not None:
            dialogues = sample_dialogues(dialogues, sample_n, seed)
        report = corpus_stats(dialogues)
    except _FATAL as exc:
        raise click.ClickException(str(exc))
    if as_json:
        click.echo(json.dumps({
            "dialogue_count": report.dialogue_count,
            "avg_agent_tokens": report.avg_agent_tokens,
            "avg_seeker_tokens": report.avg_seeker_tokens,
            "avg_turns": report.avg_turns,
            "distinct_ngrams": report.distinct_ngrams,
        }, indent=2))
        return
    click.echo(f"dialogues: {report.dialogue_count}")
    click.echo(f"avg agent tokens: {report.avg_agent_tokens:.2f}")
    click.echo(f"avg seeker tokens: {report.avg_seeker_tokens:.2f}")
    click.echo(f"avg turns: {report.avg_turns:.2f}")
    for n, count in sorted(report.distinct_ngrams.items()):
        click.echo(f"distinct {n}-grams (seeker): {count}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--store", "store_path", required=True, type=click.Path(),
              help="Append-only session event log.")
@click.option("--provider-config", "provider_config_path", type=click.Path(), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--show-rewards", is_flag=True, default=False,
              help="Attach k_prec/specificity diagnostics to replies.")
@click.option("--refine", "refine_enabled", is_flag=True, default=False,
              help="Apply one response-level refinement round per reply.")
def serve(corpus_path, store_path, provider_config_path, host, port, show_rewards, refine_enabled):
    """Serve the live grounded assistant HTTP API."""
    import uvicorn

    from .assistant import AssistantConfig, create_app
    from .gateway import build_llm

    try:
        corpus = load_corpus(corpus_path)
        llm = build_llm(_load_provider_config(provider_config_path))
        app = create_app(
            corpus=corpus,
            llm=llm,
            store_path=store_path,
            config=AssistantConfig(show_rewards=show_rewards, refine_enabled=refine_enabled),
        )
    except _FATAL as exc:
        raise click.ClickException(str(exc))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
