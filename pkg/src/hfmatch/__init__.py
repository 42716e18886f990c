"""Cross-modality face matching with adaptive sparse patch codes.

The pipeline: lay a patch grid over aligned grayscale crops, describe each
patch with dense gradient descriptors, express every probe patch as a convex
combination of related patches drawn from a coupled representation set
(a simplex-constrained quadratic program with smoothness coupling between
overlapping patches), pool the per-patch weights over spatial regions,
project region vectors with PCA + LDA trained on coupled pairs, and match
with fused cosine scores evaluated as CMC curves.
"""

from .descriptors import DIM, KINDS, DescriptorBank, describe_image
from .discriminant import (
    DiscriminantFeature,
    ProjectionModel,
    fit_lda,
    fit_pca,
    load_model,
    project,
    save_model,
    train_models,
)
from .graphrep import (
    EncodeConfig,
    EncodingError,
    RepresentationDataset,
    SparseFaceCode,
    encode,
    load_code,
    save_code,
)
from .imagegrid import (
    FaceImage,
    PatchAdjacency,
    PatchGrid,
    adjacency,
    build_grid,
    extract_patch,
    load_image,
    overlap_region,
    write_pgm,
)
from .manifest import Manifest, ManifestEntry, read_manifest, write_manifest
from .matcher import (
    CmcCurve,
    ScoreMatrix,
    cosine_similarity,
    fuse,
    make_folds,
    min_max_normalize,
    rank_and_cmc,
    score_matrix,
)
from .partition import (
    PartitionScheme,
    column_partition,
    learned_partition,
    rectangle_partition,
    row_partition,
)
from .pipeline import (
    EvalResult,
    PipelineConfig,
    build_representation,
    config_from_text,
    config_to_text,
    cross_validate,
    direct_feature_evaluate,
    encode_images,
    evaluate,
    fit_models,
)
from .qpsolver import (
    EnergyProblem,
    SolverConfig,
    SolverResult,
    brute_force_oracle,
    project_simplex,
    solve_block_coordinate,
)
from .synthdata import SynthSpec, generate, generate_distractors

__version__ = "0.1.0"
