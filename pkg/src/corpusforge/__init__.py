"""corpusforge: genre-conditioned prompt corpora, synthetic clip generation,
embedding storage, and a shallow genre tagger with evaluation reports."""

from .embedding_store import (
    EmbeddingRecord,
    EmbeddingSet,
    extract_embeddings,
    load_embeddings,
    mock_embed,
    save_embeddings,
)
from .evaluation import (
    ConfusionMatrix,
    EvaluationReport,
    evaluate,
    metrics_from_matrix,
)
from .orchestrator import (
    ClipRecord,
    ClipSpec,
    DatasetManifest,
    load_manifest,
    plan_generation,
    run_generation,
    save_manifest,
)
from .prompt_corpus import (
    GenreTag,
    Prompt,
    PromptCorpus,
    TrackMetadata,
    balance_corpus,
    build_prompt,
    load_corpus,
    parse_metadata,
    save_corpus,
)
from .protocol import BackendClient
from .stub_backend import StubBackend, stub_generate
from .tagger import (
    AdamState,
    TaggerParams,
    TrainConfig,
    TrainReport,
    adam_step,
    compute_class_weights,
    forward,
    init_params,
    load_params,
    loss_and_grads,
    predict,
    save_params,
    stratified_split,
    train,
)

__version__ = "0.1.0"
