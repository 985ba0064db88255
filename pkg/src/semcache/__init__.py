"""Semantic caching engine with a trainable ensemble embedding encoder."""

from .cache import CacheConfig, CacheEntry, CacheStats, LookupOutcome, SemanticCache
from .checkpoint import (
    AdamMoments,
    Checkpoint,
    encode,
    load_checkpoint,
    save_checkpoint,
)
from .embeddings import (
    EmbeddingSet,
    LabeledPair,
    build_pair_inputs,
    fuse_average,
    fuse_concat,
    load_embedding_set,
    load_pairs,
    normalize,
    normalize_rows,
    save_embedding_set,
    save_pairs,
)
from .encoder import EncoderConfig, EncoderState, MetaEncoder, contrastive_loss, init_state
from .errors import (
    CorruptionError,
    DegenerateVectorError,
    FormatError,
    SemcacheError,
    StateError,
    UnknownIdError,
    ValidationError,
)
from .experiments import (
    MetricsReport,
    MockBackend,
    eviction_sweep,
    make_embedder,
    run_cache_experiment,
)
from .index import FlatIndex, SearchResult
from .metrics import (
    ClassificationReport,
    CorrelationMatrix,
    classification_report,
    correlation_study,
    hit_ratio,
    mean_response_time,
    optimize_threshold,
    select_base_pair,
    token_saving_ratio,
)
from .training import TrainConfig, TrainResult, stratified_split, train

__version__ = "0.1.0"
