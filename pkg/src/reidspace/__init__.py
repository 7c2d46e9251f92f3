"""Evaluation and principal-subspace editing for person re-identification
embedding corpora."""

from .corpus import (
    CorpusError,
    CorpusView,
    EmbeddingCorpus,
    EmbeddingRecord,
    TemplateGallery,
    build_templates,
    concat_corpora,
    load_corpus,
    write_corpus,
)
from .metrics import (
    EvalReport,
    ScoreMatrix,
    cmc,
    evaluate,
    mean_average_precision,
    pairwise_scores,
    roc_auc,
    score_matrix,
    tar_at_far,
)
from .pca import PcaBasis, ProjectedSet, excise_prefix, fit_pca, load_basis, project, save_basis
from .probes import (
    ProbeConfig,
    ProbeModel,
    ProbeReport,
    ProbeSplit,
    eval_probe,
    identity_split,
    load_probe_model,
    run_attribute_probe,
    save_probe_model,
    train_probe,
)
from .subspace import (
    SubspaceSelection,
    SweepResult,
    apply_selection,
    load_selection,
    oracle_sweep,
    pca_eval,
    select_subspace,
)
from .synth import AttributeSpec, GroundTruth, SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "AttributeSpec",
    "CorpusError",
    "CorpusView",
    "EmbeddingCorpus",
    "EmbeddingRecord",
    "EvalReport",
    "GroundTruth",
    "PcaBasis",
    "ProbeConfig",
    "ProbeModel",
    "ProbeReport",
    "ProbeSplit",
    "ProjectedSet",
    "ScoreMatrix",
    "SubspaceSelection",
    "SweepResult",
    "SynthConfig",
    "TemplateGallery",
    "apply_selection",
    "build_templates",
    "cmc",
    "concat_corpora",
    "evaluate",
    "eval_probe",
    "excise_prefix",
    "fit_pca",
    "generate",
    "identity_split",
    "load_basis",
    "load_corpus",
    "load_probe_model",
    "load_selection",
    "mean_average_precision",
    "oracle_sweep",
    "pairwise_scores",
    "pca_eval",
    "project",
    "roc_auc",
    "run_attribute_probe",
    "save_basis",
    "save_probe_model",
    "score_matrix",
    "select_subspace",
    "tar_at_far",
    "train_probe",
    "write_corpus",
]
