"""Guided amodal completion: occluder detection, selective chat-model guidance,
mask-resized multi-scale inpainting, and the matching evaluation harness."""

from .backends import BackendRegistry, ChatVisionRequest, DecodeParams
from .config import PipelineConfig, load_config
from .maskcore import BBox, Stratum
from .pipeline import RunRecord, TargetSpec, run, run_batch

__all__ = [
    "BBox",
    "BackendRegistry",
    "ChatVisionRequest",
    "DecodeParams",
    "PipelineConfig",
    "RunRecord",
    "Stratum",
    "TargetSpec",
    "load_config",
    "run",
    "run_batch",
]
__version__ = "0.1.0"
