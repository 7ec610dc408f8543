from .base import (
    CaptionService,
    FaultPolicy,
    Inpainter,
    MaskToImage,
    SegmentationResult,
    Segmenter,
    TranslationParams,
)
from .http import (
    HttpCaptionService,
    HttpClient,
    HttpInpainter,
    HttpMaskToImage,
    HttpSegmenter,
    TOKEN_ENV_VAR,
)
from .synthetic import (
    BackgroundFillInpainter,
    ExactSegmenter,
    FaultInjectingCaptioner,
    FaultRecord,
    FlatRenderer,
    caption_synthetic,
    image_to_map,
    render_caption,
    render_flat,
    replay_caption,
)
