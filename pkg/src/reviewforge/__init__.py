"""reviewforge: synthesize, evaluate, and serve knowledge-grounded
decision-making dialogues."""

from .corpus import (
    CorpusError,
    CorpusSplit,
    PaperRecord,
    StatsReport,
    corpus_stats,
    filter_by_review_count,
    load_corpus,
    split_corpus,
)
from .dialogue import (
    Dialogue,
    KnowledgeSource,
    RewardVector,
    Role,
    RoleLexicon,
    TooShortTranscript,
    TranscriptError,
    UnparseableTranscript,
    Utterance,
    knowledge_text,
    parse_transcript,
    render_transcript,
)
from .metrics import (
    MetricError,
    TokenizerConfig,
    aggregate_dialogue,
    corpus_bleu,
    distinct_ngrams,
    k_precision,
    specificity,
    tokenize,
)
from .remuse import (
    FeedbackMode,
    FeedbackRecord,
    GenerationUnparseable,
    RefinementTrace,
    RemuseConfig,
    RemuseError,
    refine_response,
    run_remuse,
)

__version__ = "0.1.0"
