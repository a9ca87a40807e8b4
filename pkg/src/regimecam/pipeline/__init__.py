"""Real-time classification pipeline, smoothing and event transport."""
from .runner import (
    ArraySource,
    CsvSink,
    DropOldestQueue,
    FileSource,
    Inference,
    LatestSlot,
    ListSink,
    NetworkSource,
    PipelineConfig,
    PipelineStats,
    Prediction,
    StatusSink,
    TeeSink,
    classify_windows,
    run_pipeline,
)
from .smoother import SmootherState, predictive_entropy, regime_proportions, smoother_push
from .transport import (
    StreamDecoder,
    decode_stream_frame,
    encode_batch_message,
    encode_end_message,
    encode_header_message,
    encode_stream_frame,
)
