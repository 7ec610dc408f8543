"""Metamorphic testing toolkit for image-captioning systems.

Builds semantic layouts from seed images, applies label-preserving layout
edits (translate, rotate, scale, mirror), re-renders the edited layouts,
and checks the captions produced for them against segmentation-derived
ground truth.
"""

from .core import (
    BACKGROUND_COLOR,
    BACKGROUND_LABEL,
    BinaryMask,
    BoundingBox,
    CandidateSet,
    CategoryPalette,
    ObjectInstance,
    PaletteEntry,
    SceneRecord,
    SemanticMap,
    candidates_from_map,
    component_census,
    load_map,
    save_map,
    split_instances,
    tight_bbox,
)
from .corpus import ingest_corpus, write_synthetic_corpus
from .detector import (
    CaseVerdict,
    ConfusionTable,
    Detector,
    Violation,
    detect,
    evaluate_case,
)
from .editor import EditConfig, EditStep, EditTrace, apply_trace, edit
from .errors import (
    BackendError,
    CaseFailure,
    ConstraintViolation,
    CorpusError,
    DegenerateTransform,
    EditExhausted,
    EmptyMask,
    ExtractionFailed,
    LayoutMorphError,
    MissingCandidates,
    NoLegalMove,
    PaletteMismatch,
    ShapeError,
    Throttled,
    UnknownTarget,
)
from .extractor import ExtractionConfig, ExtractionResult, extract_single, map_split
from .harness import (
    RunConfig,
    RunReport,
    ablation_run,
    replay_case,
    run_pipeline,
    summarize,
)
from .parser import CaptionParser, ObjInfo, SynonymMapper, objs_extract, pos_tag_extract
from .scenegen import default_palette, generate_scene

__version__ = "0.1.0"
