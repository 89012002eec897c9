"""Spatial relations as learnable pooling templates over object detections."""

from .errors import (
    DimensionMismatch,
    DivergenceError,
    EmptyBatch,
    GenerationError,
    MissingCategory,
    ParseError,
    SpatialError,
    UnknownPreposition,
    ValidationError,
)
from .metrics import LabeledRanking, average_precision, mean_average_precision, mean_rank, recall_at_k
from .query import PrepositionLexicon, SpatialTriplet, StructuredQuery, parse_query, validate_query
from .retrieval import CompatibilityWeights, RankedResult, rank_scenes, score_scene, spatial_term
from .scene import Box, Corpus, Detection, Scene, ScoreMap, box_mask, dirac_image, load_corpus, save_corpus
from .synth import GenConfig, generate_corpus, rule_relation
from .template import (
    PoolingScheme,
    Template,
    TemplateBank,
    discretize,
    estimate_templates,
    export_heatmap,
    pool,
)

__version__ = "0.1.0"
