"""Room scene grouping engine.

Groups a property's images into per-room clusters (rule-based room typing,
pairwise overlap matrix, spectral clustering, mean-overlap noise removal)
and maps bedroom clusters to the property's bed-type inventory through a
constrained sequential assignment.  Ships a synthetic ground-truth generator
and clustering metrics for verification.
"""

from .catalog import (
    Group,
    GroupingOutput,
    ImageRecord,
    PropertyCatalog,
    PropertyMetadata,
    TagSet,
    canonical_label,
    load_catalog,
    load_grouping,
    write_grouping,
)
from .clustering import (
    Grouping,
    SpectralParams,
    jacobi_eigen,
    kmeans,
    normalized_laplacian,
    remove_noise,
    spectral_cluster,
    spectral_embed,
)
from .bedmap import (
    BedAssignment,
    BedInventory,
    BedroomGroup,
    FirstOption,
    OracleFromTruth,
    RemoteService,
    build_frequency_dict,
    map_spaces,
    remote_predict,
)
from .metrics import (
    adjusted_rand_index,
    contingency,
    normalized_ari,
    property_accuracy,
    v_measure,
)
from .overlap import (
    CallAccounting,
    Embedding,
    HeadWeights,
    LinearHead,
    OverlapMatrix,
    PrecomputedScores,
    build_overlap_matrix,
    head_score,
    load_precomputed_scores,
    read_embedding_cache,
    write_embedding_cache,
)
from .room_typing import (
    RoomType,
    RuleTable,
    classify_room_type,
    default_rule_table,
    partition_by_room_type,
)
from .synthgen import (
    CameraPose,
    GroundTruth,
    PairCounts,
    SynthConfig,
    SyntheticOracle,
    generate_pair_manifest,
    generate_property,
    synth_embeddings_and_weights,
    synth_overlap_score,
)

__version__ = "0.1.0"
