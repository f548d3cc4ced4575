from .bundle import (
    E_TA,
    E_TAG,
    E_TS,
    ConfigError,
    DecoderConfig,
    ExtractorConfig,
    ModelBundle,
    init_weights,
    parameter_shapes,
)
from .network import (
    classify_head,
    decode_step,
    decoder_hidden,
    extract_features,
    forward_from_prefix,
    forward_teacher_forced,
    project,
)
