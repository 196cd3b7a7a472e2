"""Native reward and evaluation metrics.

Implements knowledge precision (fraction of an utterance's tokens found in
the knowledge source's token set), a transparent feature-based specificity
proxy, distinct-n lexical diversity, corpus-level BLEU-4, and role-aware
aggregation over annotated dialogues. All functions are pure and reentrant.

Tokenization is deliberately simple and fixed: maximal alphanumeric runs,
lowercased by default. Model-backed scores (Q2 variants, or an external
specificity classifier) come from the scorer client instead
(:mod:`reviewforge.scorer`).
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

from .dialogue import Dialogue, RewardVector, Role

__all__ = [
    "MetricError",
    "TokenizerConfig",
    "DEFAULT_TOKENIZER",
    "RewardVector",
    "SpecificityWeights",
    "DEFAULT_SPECIFICITY_WEIGHTS",
    "tokenize",
    "k_precision",
    "specificity",
    "specificity_features",
    "combine_specificity_features",
    "distinct_ngrams",
    "corpus_bleu",
    "aggregate_dialogue",
]


class MetricError(ValueError):
    """Raised when a metric's preconditions are violated."""


# Maximal runs of unicode letters and digits (underscore excluded).
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

_SENTENCE_ENDERS = frozenset(".!?")


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    drop_stopwords: bool = False
    stopword_list: frozenset[str] | None = None

    def __post_init__(self) -> None:
        if self.drop_stopwords and not self.stopword_list:
            raise ValueError("drop_stopwords requires a stopword_list")


DEFAULT_TOKENIZER = TokenizerConfig()


def tokenize(text: str, cfg: TokenizerConfig = DEFAULT_TOKENIZER) -> list[str]:
    """Split text into maximal alphanumeric runs; "" yields []."""
    tokens = _TOKEN_RE.findall(text)
    if cfg.lowercase:
        tokens = [t.lower() for t in tokens]
    if cfg.drop_stopwords:
        assert cfg.stopword_list is not None
        tokens = [t for t in tokens if t not in cfg.stopword_list]
    return tokens


def k_precision(utterance: str, knowledge: str, cfg: TokenizerConfig = DEFAULT_TOKENIZER) -> float:
    """Fraction of the utterance's tokens present in the knowledge token set.

    The numerator counts utterance tokens per occurrence; membership is
    against the set of knowledge tokens, so repeating knowledge sentences
    never dilutes the score.
    """
    tokens = tokenize(utterance, cfg)
    if not tokens:
        raise MetricError("utterance has no tokens")
    known = set(tokenize(knowledge, cfg))
    return sum(1 for t in tokens if t in known) / len(tokens)


@dataclass(frozen=True)
class SpecificityWeights:
    """Non-negative weights for the four specificity features, in order:
    numeral fraction, long-token fraction, non-initial-capitalized fraction,
    normalized length."""

    numerals: float = 2.5
    long_tokens: float = 2.0
    capitalized: float = 1.0
    length: float = 1.5

    def __post_init__(self) -> None:
        for name in ("numerals", "long_tokens", "capitalized", "length"):
            if getattr(self, name) < 0:
                raise ValueError(f"specificity weight {name} must be >= 0")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.numerals, self.long_tokens, self.capitalized, self.length)


DEFAULT_SPECIFICITY_WEIGHTS = SpecificityWeights()

_LONG_TOKEN_CHARS = 8
_LENGTH_SCALE = 40


def specificity_features(utterance: str) -> tuple[float, float, float, float]:
    """Shallow detail features of an utterance, each in [0, 1].

    Features (over original-case alphanumeric tokens): fraction of numeral
    tokens, fraction of tokens with >= 8 characters, fraction of capitalized
    tokens not at a sentence start, and token count normalized as
    ``min(n / 40, 1)``.
    """
    matches = list(_TOKEN_RE.finditer(utterance))
    if not matches:
        raise MetricError("utterance has no tokens")
    n = len(matches)
    numerals = sum(1 for m in matches if m.group().isdigit())
    long_tokens = sum(1 for m in matches if len(m.group()) >= _LONG_TOKEN_CHARS)
    capitalized = 0
    prev_end = 0
    for i, m in enumerate(matches):
        gap = utterance[prev_end : m.start()]
        sentence_initial = i == 0 or any(c in _SENTENCE_ENDERS for c in gap)
        if not sentence_initial and m.group()[0].isupper():
            capitalized += 1
        prev_end = m.end()
    return (numerals / n, long_tokens / n, capitalized / n, min(n / _LENGTH_SCALE, 1.0))


def combine_specificity_features(
    features: tuple[float, float, float, float],
    weights: SpecificityWeights = DEFAULT_SPECIFICITY_WEIGHTS,
) -> float:
    """Logistic combination of the feature vector; monotone non-decreasing in
    every feature because all weights are non-negative."""
    z = sum(w * f for w, f in zip(weights.as_tuple(), features))
    return 1.0 / (1.0 + math.exp(-z))


def specificity(utterance: str, weights: SpecificityWeights = DEFAULT_SPECIFICITY_WEIGHTS) -> float:
    """Proxy for the level of technical detail in an utterance, in [0, 1]."""
    return combine_specificity_features(specificity_features(utterance), weights)


def _ngrams(tokens: list[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def distinct_ngrams(utterances: list[str], n: int, cfg: TokenizerConfig = DEFAULT_TOKENIZER) -> int:
    """Count unique n-grams across utterances (no cross-utterance n-grams)."""
    if n < 1:
        raise MetricError(f"n must be >= 1, got {n}")
    seen: set[tuple[str, ...]] = set()
    for text in utterances:
        seen.update(_ngrams(tokenize(text, cfg), n))
    return len(seen)


def corpus_bleu(
    hypotheses: list[str],
    references: list[str],
    cfg: TokenizerConfig = DEFAULT_TOKENIZER,
) -> float:
    """Corpus-level BLEU-4 on a 0-100 scale.

    Clipped n-gram counts (n = 1..4) accumulate over the whole corpus before
    the precision ratio is taken. An order whose clipped count is zero is
    smoothed by adding one to both numerator and denominator. The brevity
    penalty is ``exp(1 - r/c)`` when the hypothesis corpus is shorter than
    the reference corpus, else 1.
    """
    if len(hypotheses) != len(references):
        raise MetricError(
            f"hypothesis/reference length mismatch: {len(hypotheses)} vs {len(references)}"
        )
    if not hypotheses:
        raise MetricError("need at least one hypothesis/reference pair")

    clipped = [0] * 4
    totals = [0] * 4
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens = tokenize(hyp, cfg)
        if not hyp_tokens:
            raise MetricError("empty hypothesis")
        ref_tokens = tokenize(ref, cfg)
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for order in range(1, 5):
            hyp_counts = Counter(_ngrams(hyp_tokens, order))
            ref_counts = Counter(_ngrams(ref_tokens, order))
            totals[order - 1] += sum(hyp_counts.values())
            clipped[order - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items()
            )

    log_sum = 0.0
    for c, t in zip(clipped, totals):
        p = c / t if c > 0 else (c + 1) / (t + 1)
        log_sum += 0.25 * math.log(p)
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_sum)


ALL_REWARD_FIELDS = frozenset({"k_prec", "q2_f1", "q2_nli", "specificity"})


def aggregate_dialogue(
    d: Dialogue,
    fields: frozenset[str] = ALL_REWARD_FIELDS,
) -> tuple[RewardVector, float | None]:
    """Role-aware means over a reward-annotated dialogue.

    Groundedness fields (k_prec, q2_f1, q2_nli) average over agent utterances
    only; specificity averages over all utterances. ``fields`` narrows which
    rewards the dialogue is expected to carry; a contributing utterance
    missing a requested field is an error naming its index.
    """
    unknown = fields - ALL_REWARD_FIELDS
    if unknown:
        raise MetricError(f"unknown reward fields requested: {sorted(unknown)}")

    def collect(role_filter: Role | None, field_name: str) -> list[float]:
        values = []
        for i, u in enumerate(d.utterances):
            if role_filter is not None and u.role != role_filter:
                continue
            value = getattr(u.rewards, field_name) if u.rewards is not None else None
            if value is None:
                raise MetricError(f"utterance {i} missing required reward {field_name!r}")
            values.append(value)
        return values

    def mean(values: list[float]) -> float | None:
        return sum(values) / len(values) if values else None

    agent_means: dict[str, float | None] = {}
    for field_name in ("k_prec", "q2_f1", "q2_nli"):
        if field_name in fields:
            agent_means[field_name] = mean(collect(Role.AGENT, field_name))
    spec_mean = mean(collect(None, "specificity")) if "specificity" in fields else None
    return RewardVector(**{k: v for k, v in agent_means.items() if v is not None}), spec_mean
