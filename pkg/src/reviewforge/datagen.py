"""Batch dataset synthesis with a resumable manifest, plus the evaluation
harness.

A synthesis run walks the corpus in order, runs the refinement loop per
paper, and appends one dialogue record per line to the dataset file. The
manifest tracks per-paper status (pending/done/failed) and is rewritten
atomically after every paper, so a killed run resumes without duplicating or
losing output. Evaluation always rescores dialogues from their raw text;
stored annotations are treated as provenance, never as truth.
"""

from __future__ import annotations

import json
import logging
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .corpus import PaperRecord, load_corpus
from .dialogue import (
    Dialogue,
    KnowledgeSource,
    Role,
    dialogue_from_record,
    dialogue_to_record,
    knowledge_text,
)
from .gateway import build_llm
from .metrics import MetricError, k_precision, specificity
from .remuse import (
    FeedbackMode,
    RemuseConfig,
    RemuseError,
    Scenario,
    best_of_trace,
    evaluate_and_annotate,
    run_remuse,
)
from .scorer import ScoreItem, ScorerEndpoint, UnavailablePolicy, request_scores

logger = logging.getLogger("reviewforge.datagen")

_ANNOTATION_TOLERANCE = 1e-6


class DatagenError(Exception):
    pass


@dataclass
class PaperStatus:
    state: str = "pending"  # pending | done | failed
    reason: str | None = None


@dataclass
class RunManifest:
    """Everything needed to (re)start a synthesis batch."""

    corpus_path: str
    output_path: str
    remuse: RemuseConfig
    provider: dict
    scorer: dict | None = None
    resume: bool = False
    status: dict[str, PaperStatus] = field(default_factory=dict)

    @property
    def manifest_path(self) -> Path:
        return Path(self.output_path + ".manifest.json")

    def counts(self) -> dict[str, int]:
        out = {"pending": 0, "done": 0, "failed": 0}
        for st in self.status.values():
            out[st.state] += 1
        return out

    def to_dict(self) -> dict:
        remuse = asdict(self.remuse)
        remuse["reward_subset"] = sorted(self.remuse.reward_subset)
        remuse["feedback_mode"] = self.remuse.feedback_mode.value
        remuse["scenario"] = self.remuse.scenario.value
        return {
            "corpus_path": self.corpus_path,
            "output_path": self.output_path,
            "remuse": remuse,
            "provider": self.provider,
            "scorer": self.scorer,
            "resume": self.resume,
            "status": {pid: asdict(st) for pid, st in self.status.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        remuse = dict(data["remuse"])
        remuse["reward_subset"] = frozenset(remuse["reward_subset"])
        remuse["feedback_mode"] = FeedbackMode(remuse["feedback_mode"])
        remuse["scenario"] = Scenario(remuse["scenario"])
        return cls(
            corpus_path=data["corpus_path"],
            output_path=data["output_path"],
            remuse=RemuseConfig(**remuse),
            provider=data["provider"],
            scorer=data.get("scorer"),
            resume=data.get("resume", False),
            status={pid: PaperStatus(**st) for pid, st in data["status"].items()},
        )

    def save(self) -> None:
        # Write-then-rename keeps the manifest readable even if we die mid-write.
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        os.replace(tmp, self.manifest_path)

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_manifest(
    corpus_path: str,
    output_path: str,
    remuse: RemuseConfig,
    provider: dict,
    scorer: dict | None = None,
    resume: bool = False,
) -> RunManifest:
    """Fresh manifest for a run, or the reconciled saved one when resuming.

    Every corpus id appears exactly once in the status map.
    """
    records = load_corpus(corpus_path)
    manifest = RunManifest(
        corpus_path=corpus_path,
        output_path=output_path,
        remuse=remuse,
        provider=provider,
        scorer=scorer,
        resume=resume,
    )
    previous: dict[str, PaperStatus] = {}
    if resume and manifest.manifest_path.exists():
        previous = RunManifest.load(manifest.manifest_path).status
    manifest.status = {r.id: previous.get(r.id, PaperStatus()) for r in records}
    return manifest


def knowledge_from_paper(record: PaperRecord) -> KnowledgeSource:
    return KnowledgeSource(
        title=record.title,
        paper_type=record.paper_type,
        documents=tuple((f"Review {i}", review) for i, review in enumerate(record.reviews, start=1)),
    )


def _scorer_from_dict(config: dict | None) -> ScorerEndpoint | None:
    if config is None:
        return None
    options = dict(config)
    options["metric_names"] = frozenset(options["metric_names"])
    if "unavailable_policy" in options:
        options["unavailable_policy"] = UnavailablePolicy(options["unavailable_policy"])
    return ScorerEndpoint(**options)


def _dumps_record(d: Dialogue) -> str:
    return json.dumps(dialogue_to_record(d), ensure_ascii=False, sort_keys=True)


def _reconcile_output(manifest: RunManifest) -> list[str]:
    """Lines to keep on resume: records of papers already marked done.

    A line written for a paper that never reached done status (crash between
    the write and the manifest update) is dropped and regenerated.
    """
    path = Path(manifest.output_path)
    if not path.exists():
        return []
    kept: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            pid = record["paper_id"]
        except (json.JSONDecodeError, KeyError, TypeError):
            continue  # torn write from an interrupted run
        st = manifest.status.get(pid)
        if st is not None and st.state == "done":
            kept.append(line)
    return kept


def _synthesize_one(record: PaperRecord, manifest: RunManifest, llm, scorer, select_best: bool):
    """One paper's pipeline run: the refinement trace plus the final dialogue
    scored with its construction-time rewards."""
    k = knowledge_from_paper(record)
    trace = run_remuse(k, manifest.remuse, llm, scorer, paper_id=record.id)
    chosen = best_of_trace(trace, k) if select_best else trace.final
    final, _ = evaluate_and_annotate(
        chosen, k, manifest.remuse.reward_subset, scorer, scenario=manifest.remuse.scenario
    )
    return trace, final


def synthesize_dataset(
    manifest: RunManifest,
    llm=None,
    scorer: ScorerEndpoint | None = None,
    *,
    traces_path: str | None = None,
    workers: int = 1,
    select_best: bool = False,
) -> RunManifest:
    """Run the pipeline over every pending paper, appending one dialogue
    record per line to the dataset file.

    Failures are recorded per paper without aborting the batch; done papers
    are skipped on resume. With ``select_best`` the highest-scoring trace
    dialogue is written instead of the last refined output (off by default).
    Papers run on a bounded worker pool, but the
    output file has a single writer and records always land in corpus order,
    so results are deterministic under scripted providers regardless of
    completion order.
    """
    if workers < 1:
        raise DatagenError("workers must be >= 1")
    records = load_corpus(manifest.corpus_path)
    missing = {r.id for r in records} ^ set(manifest.status)
    if missing:
        raise DatagenError(f"manifest/corpus id mismatch: {sorted(missing)}")

    llm = llm if llm is not None else build_llm(manifest.provider)
    scorer = scorer if scorer is not None else _scorer_from_dict(manifest.scorer)

    out_path = Path(manifest.output_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    kept = _reconcile_output(manifest) if manifest.resume else []
    pending = [r for r in records if manifest.status[r.id].state != "done"]

    traces_fh = open(traces_path, "a", encoding="utf-8") if traces_path else None
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        with out_path.open("w", encoding="utf-8") as fh:
            fh.write("".join(line + "\n" for line in kept))
            fh.flush()
            futures = (
                [executor.submit(_synthesize_one, r, manifest, llm, scorer, select_best) for r in pending]
                if executor is not None
                else None
            )
            for index, record in enumerate(pending):
                try:
                    if futures is not None:
                        trace, final = futures[index].result()
                    else:
                        trace, final = _synthesize_one(record, manifest, llm, scorer, select_best)
                    fh.write(_dumps_record(final) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
                    if traces_fh is not None:
                        traces_fh.write(_dumps_trace(record.id, trace) + "\n")
                        traces_fh.flush()
                    manifest.status[record.id] = PaperStatus(state="done")
                except (RemuseError, MetricError) as exc:
                    logger.warning("paper %s failed: %s", record.id, exc)
                    manifest.status[record.id] = PaperStatus(state="failed", reason=str(exc))
                manifest.save()
    finally:
        if executor is not None:
            executor.shutdown(wait=False, cancel_futures=True)
        if traces_fh is not None:
            traces_fh.close()
    return manifest


def _dumps_trace(paper_id: str, trace) -> str:
    return json.dumps(
        {
            "paper_id": paper_id,
            "initial": dialogue_to_record(trace.initial),
            "rounds": [
                {
                    "feedback": r.feedback.text,
                    "rewards_before": [rv.to_dict() for rv in r.feedback.rewards_before],
                    "refined": dialogue_to_record(r.refined),
                }
                for r in trace.rounds
            ],
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def load_dataset(path: str | Path) -> list[Dialogue]:
    path = Path(path)
    if not path.exists():
        raise DatagenError(f"dataset file not found: {path}")
    dialogues = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                dialogues.append(dialogue_from_record(json.loads(line)))
            except (json.JSONDecodeError, ValueError) as exc:
                raise DatagenError(f"{path}:{lineno}: {exc}") from exc
    if not dialogues:
        raise DatagenError(f"dataset file {path} holds no dialogues")
    return dialogues


def sample_dialogues(dialogues: list[Dialogue], n: int, seed: int) -> list[Dialogue]:
    """Deterministic analysis subsample (without replacement)."""
    if n >= len(dialogues):
        return list(dialogues)
    return random.Random(seed).sample(dialogues, n)


@dataclass(frozen=True)
class ItemEval:
    """Per-dialogue (or per-response) recomputed aggregates."""

    item_id: str
    agent_k_prec: float | None = None
    agent_q2_f1: float | None = None
    agent_q2_nli: float | None = None
    specificity_all: float | None = None


@dataclass(frozen=True)
class EvalReport:
    per_item: tuple[ItemEval, ...]
    mean_agent_k_prec: float | None
    mean_agent_q2_f1: float | None
    mean_agent_q2_nli: float | None
    mean_specificity: float | None
    bleu: float | None
    done: int
    failed: int
    skipped: int
    annotation_discrepancies: int = 0

    def to_dict(self) -> dict:
        return {
            "means": {
                "k_prec": self.mean_agent_k_prec,
                "q2_f1": self.mean_agent_q2_f1,
                "q2_nli": self.mean_agent_q2_nli,
                "specificity": self.mean_specificity,
            },
            "bleu": self.bleu,
            "counts": {"done": self.done, "failed": self.failed, "skipped": self.skipped},
            "annotation_discrepancies": self.annotation_discrepancies,
            "items": [asdict(item) for item in self.per_item],
        }


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _q2_scores(
    scorer: ScorerEndpoint | None, texts: list[str], ktext: str
) -> tuple[list[float] | None, list[float] | None]:
    """Q2 scores for a batch of utterances, or (None, None) when no scorer is
    configured or the scorer omits them."""
    if scorer is None:
        return None, None
    wanted = scorer.metric_names & {"q2_f1", "q2_nli"}
    if not wanted:
        return None, None
    endpoint = replace(scorer, metric_names=frozenset(wanted))
    vectors = request_scores(endpoint, [ScoreItem(utterance=t, knowledge=ktext) for t in texts])
    f1 = [v.q2_f1 for v in vectors]
    nli = [v.q2_nli for v in vectors]
    return (
        None if any(v is None for v in f1) else f1,  # omitted by policy
        None if any(v is None for v in nli) else nli,
    )


def evaluate_dataset(
    dataset_path: str | Path,
    corpus_path: str | Path,
    scorer: ScorerEndpoint | None = None,
) -> EvalReport:
    """Recompute per-utterance rewards for every dialogue and aggregate them.

    Groundedness means cover agent turns only; the specificity mean covers
    all turns. Stored annotations never influence the reported means, but any
    stored value disagreeing with its recomputation is counted in
    ``annotation_discrepancies``.
    """
    dialogues = load_dataset(dataset_path)
    corpus = {r.id: r for r in load_corpus(corpus_path)}
    unresolved = sorted({d.paper_id for d in dialogues} - set(corpus))
    if unresolved:
        raise DatagenError(f"dialogue paper ids not in corpus: {unresolved}")

    items: list[ItemEval] = []
    failed_papers: set[str] = set()
    done_papers: set[str] = set()
    discrepancies = 0
    for d in dialogues:
        ktext = knowledge_text(knowledge_from_paper(corpus[d.paper_id]))
        try:
            per_utt_kprec = [k_precision(u.text, ktext) for u in d.utterances]
            per_utt_spec = [specificity(u.text) for u in d.utterances]
        except MetricError:
            failed_papers.add(d.paper_id)
            continue
        q2_f1, q2_nli = _q2_scores(scorer, [u.text for u in d.utterances], ktext)

        agent_idx = [i for i, u in enumerate(d.utterances) if u.role is Role.AGENT]
        items.append(
            ItemEval(
                item_id=d.paper_id,
                agent_k_prec=_mean([per_utt_kprec[i] for i in agent_idx]),
                agent_q2_f1=_mean([q2_f1[i] for i in agent_idx]) if q2_f1 else None,
                agent_q2_nli=_mean([q2_nli[i] for i in agent_idx]) if q2_nli else None,
                specificity_all=_mean(per_utt_spec),
            )
        )
        done_papers.add(d.paper_id)

        recomputed = {
            "k_prec": per_utt_kprec,
            "specificity": per_utt_spec,
            "q2_f1": q2_f1,
            "q2_nli": q2_nli,
        }
        for i, u in enumerate(d.utterances):
            if u.rewards is None:
                continue
            for name, stored in u.rewards.to_dict().items():
                series = recomputed.get(name)
                if series is None:
                    continue  # not recomputable without a scorer
                if abs(stored - series[i]) > _ANNOTATION_TOLERANCE:
                    discrepancies += 1

    return EvalReport(
        per_item=tuple(items),
        mean_agent_k_prec=_mean([i.agent_k_prec for i in items if i.agent_k_prec is not None]),
        mean_agent_q2_f1=_mean([i.agent_q2_f1 for i in items if i.agent_q2_f1 is not None]),
        mean_agent_q2_nli=_mean([i.agent_q2_nli for i in items if i.agent_q2_nli is not None]),
        mean_specificity=_mean([i.specificity_all for i in items if i.specificity_all is not None]),
        bleu=None,
        done=len(done_papers),
        failed=len(failed_papers),
        skipped=len(set(corpus) - done_papers - failed_papers),
        annotation_discrepancies=discrepancies,
    )


def _load_examples(path: str | Path, *, need_paper_id: bool) -> dict[str, dict]:
    path = Path(path)
    if not path.exists():
        raise DatagenError(f"file not found: {path}")
    examples: dict[str, dict] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                example_id = record["id"]
                record["text"]
                if need_paper_id:
                    record["paper_id"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatagenError(f"{path}:{lineno}: malformed example: {exc}") from exc
            if example_id in examples:
                raise DatagenError(f"{path}:{lineno}: duplicate example id {example_id!r}")
            examples[example_id] = record
    if not examples:
        raise DatagenError(f"no examples in {path}")
    return examples


def eval_responses(
    predictions_path: str | Path,
    gold_path: str | Path,
    corpus_path: str | Path,
    scorer: ScorerEndpoint | None = None,
) -> EvalReport:
    """Response-prediction evaluation: BLEU against the gold responses plus
    faithfulness (knowledge precision, Q2 via scorer) against each example's
    knowledge source.

    Both files are JSONL with ``id`` and ``text``; the gold file also carries
    ``paper_id``. Files must align one-to-one by id.
    """
    preds = _load_examples(predictions_path, need_paper_id=False)
    gold = _load_examples(gold_path, need_paper_id=True)
    only_pred = sorted(set(preds) - set(gold))
    only_gold = sorted(set(gold) - set(preds))
    if only_pred or only_gold:
        raise DatagenError(
            f"prediction/gold id mismatch: missing in gold {only_pred}, missing in predictions {only_gold}"
        )
    corpus = {r.id: r for r in load_corpus(corpus_path)}
    unresolved = sorted({g["paper_id"] for g in gold.values()} - set(corpus))
    if unresolved:
        raise DatagenError(f"gold paper ids not in corpus: {unresolved}")

    ordered = sorted(gold)
    from .metrics import corpus_bleu  # local import keeps module load light

    bleu = corpus_bleu([preds[i]["text"] for i in ordered], [gold[i]["text"] for i in ordered])

    items = []
    for example_id in ordered:
        ktext = knowledge_text(knowledge_from_paper(corpus[gold[example_id]["paper_id"]]))
        text = preds[example_id]["text"]
        q2_f1, q2_nli = _q2_scores(scorer, [text], ktext)
        items.append(
            ItemEval(
                item_id=example_id,
                agent_k_prec=k_precision(text, ktext),
                agent_q2_f1=q2_f1[0] if q2_f1 else None,
                agent_q2_nli=q2_nli[0] if q2_nli else None,
                specificity_all=specificity(text),
            )
        )
    return EvalReport(
        per_item=tuple(items),
        mean_agent_k_prec=_mean([i.agent_k_prec for i in items]),
        mean_agent_q2_f1=_mean([i.agent_q2_f1 for i in items if i.agent_q2_f1 is not None]),
        mean_agent_q2_nli=_mean([i.agent_q2_nli for i in items if i.agent_q2_nli is not None]),
        mean_specificity=_mean([i.specificity_all for i in items]),
        bleu=bleu,
        done=len(items),
        failed=0,
        skipped=0,
    )
