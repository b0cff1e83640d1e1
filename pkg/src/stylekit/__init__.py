"""Embedding-space toolkit for few-shot, style-consistent character
generation experiments: token planning, identity sampling, style metrics,
validity filtering, human-judgment aggregation and report tables."""

from . import errors
from .identity_sampler import (
    EmbeddingStats,
    IdentityPayload,
    fit_embedding_stats,
    render_generation_prompt,
    sample_multivariate,
    sample_token,
    sample_univariate,
)
from .judgment_aggregator import (
    BTResult,
    aggregate_ratings,
    comparison_rank_tables,
    fit_bradley_terry,
    rating_rank_tables,
)
from .reporting import AggregateCell, invalid_breakdown_table, metrics_table, rank_table
from .store import (
    ComparisonRecord,
    EmbeddingMatrix,
    ImageSet,
    RatingRecord,
    RunManifest,
    TokenVocabulary,
    load_judgments,
    load_matrix,
    save_matrix,
)
from .style_metrics import MetricValue, cosine, diversity, fidelity, nearest_reference_similarity, per_image_fidelity
from .token_planner import (
    ClusteringResult,
    TokenPlan,
    kmeans_spherical,
    render_training_prompts,
    select_clustered,
    select_rarest,
)
from .validity_filter import FilterConfig, ValidityReport, run_pipeline, ssim

__version__ = "0.1.0"
