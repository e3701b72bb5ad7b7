"""Query-conditioned multi-level knowledge-graph retrieval."""

__version__ = "0.1.0"

from .corpus import (
    ChunkRecord,
    CorpusBundle,
    CorpusError,
    DocumentRecord,
    TripleRecord,
    normalize_entity,
    parse_corpus,
    serialize_corpus,
    validate_bundle,
)
from .graph import (
    EdgeKind,
    EdgeSet,
    GraphStats,
    Level,
    MultiLKG,
    NodeRef,
    build_graph,
    dump_graph,
    graph_stats,
    load_graph,
    neighbors,
)
from .embeddings import (
    EmbeddingError,
    FileSource,
    HashedSource,
    embed_graph,
    embed_text,
)
from .model import (
    ModelConfig,
    QsgnnParams,
    build_plan,
    forward,
    init_params,
    inter_block,
    intra_block,
    load_params,
    parameter_spec,
    project_inputs,
    save_params,
)
from .grad import AdamState, BatchItem, adam_step, backward_batch, batch_loss, fd_check, init_adam
from .training import (
    TrainConfig,
    TrainingExample,
    nt_xent_loss,
    read_examples,
    sample_hard_negatives,
    train,
    write_examples,
)
from .synthgen import (
    SyntheticQuestion,
    emit_examples,
    enumerate_chains,
    gen_one_hop,
    gen_two_hop,
)
from .retrieval import (
    EvalExample,
    EvalReport,
    RetrievalResult,
    evaluate,
    read_eval_examples,
    recall_at_k,
    score_documents,
    top_k,
    write_eval_examples,
)
from .config import RunConfig, load_config, substream

__all__ = [name for name in dir() if not name.startswith("_")]
