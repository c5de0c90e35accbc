"""Neon-beam perturbations for black-box attacks on image classifiers."""

from .attack import (
    AttackAborted,
    AttackConfig,
    AttackResult,
    CleanMisclassifiedError,
    EotConfig,
    Transform,
    apply_transform,
    eot_confidence,
    result_to_dict,
    run_attack,
    sample_transform,
)
from .beam import (
    GRID27_PALETTE,
    NEON5_PALETTE,
    BeamGroup,
    NeonBeam,
    ParamBounds,
    beam_alpha,
    beams_from_lines,
    beams_to_lines,
    parse_palette,
    render,
    sample_beam,
)
from .harness import (
    DatasetSpec,
    EvalRecord,
    LabelMappingError,
    UndefinedMetricError,
    compute_asr,
    generate_dataset,
    misclass_histogram,
    transfer_matrix,
)
from .imaging import DecodeError, Image, Mask, decode_image, encode_image, mask_from_image
from .oracle import (
    HttpOracle,
    OnnxOracle,
    Oracle,
    ProtocolError,
    ScoreVector,
    ToyOracle,
    TransportError,
    confidence,
    top1,
    toy_predict,
)

__version__ = "0.1.0"

__all__ = [
    "AttackAborted",
    "AttackConfig",
    "AttackResult",
    "BeamGroup",
    "CleanMisclassifiedError",
    "DatasetSpec",
    "DecodeError",
    "EotConfig",
    "EvalRecord",
    "GRID27_PALETTE",
    "HttpOracle",
    "Image",
    "LabelMappingError",
    "Mask",
    "NEON5_PALETTE",
    "NeonBeam",
    "OnnxOracle",
    "Oracle",
    "ParamBounds",
    "ProtocolError",
    "ScoreVector",
    "ToyOracle",
    "Transform",
    "TransportError",
    "UndefinedMetricError",
    "apply_transform",
    "beam_alpha",
    "beams_from_lines",
    "beams_to_lines",
    "compute_asr",
    "confidence",
    "decode_image",
    "encode_image",
    "eot_confidence",
    "generate_dataset",
    "mask_from_image",
    "misclass_histogram",
    "parse_palette",
    "render",
    "result_to_dict",
    "run_attack",
    "sample_beam",
    "sample_transform",
    "top1",
    "toy_predict",
    "transfer_matrix",
]
