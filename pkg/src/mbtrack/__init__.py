"""Compressed-domain multi-object detection and tracking.

Objects are detected and tracked from P-frame macroblock features alone
(skip flags, coefficient masks, motion vectors) and their blobs are
sharpened once per GOP from partially decoded I-frame pixels. A
synthetic scene generator produces feature streams with ground truth for
end-to-end evaluation.
"""

from .filtering import (
    BlockGroup,
    Entity,
    EntityTracker,
    Label,
    PsmfConfig,
    classify_entity,
    cluster_blocks,
    compute_succeeding_region,
    occurrence_term,
    spatial_filter,
)
from .intra import (
    DecodeStats,
    IntraPayload,
    PixelTile,
    decode_full,
    decode_region_partial,
    encode_iframe,
)
from .occlusion import (
    HueHistogram,
    OcclusionGroup,
    hue_histogram,
    match_identities,
)
from .pipeline import TrackerConfig, TrackRecord, evaluate, run_tracker
from .refinement import (
    BlobFeature,
    RefineConfig,
    background_subtract,
    interpolate_blobs,
    predict_blob,
    refine_gop,
)
from .scene import GroundTruthRecord, SceneScript, encode_p_frame, synthesize
from .stream import (
    BackgroundChunk,
    FrameFeatures,
    MacroblockGrid,
    MacroblockRecord,
    StreamHeader,
    read_stream,
    stream_to_bytes,
    write_stream,
)

__version__ = "0.1.0"
