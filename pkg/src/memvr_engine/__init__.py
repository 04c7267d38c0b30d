__version__ = "2026.10.19.1"

from .config import ModelConfig, Settings, load_settings
from .decoding import DecodePolicy, RetraceSource, StepDecision, Strategy, generate
from .engine import Generation, MemVREngine
from .exceptions import (
    MVException,
    MVShapeError,
    MVValueError,
    MVConfigError,
    MVTokenError,
    MVCacheOverflowError,
    MVFileFormatError,
    MVBadMagicError,
    MVVersionError,
    MVTruncatedFileError,
    MVIOError,
    MVTraceError,
)
from .model import VisualContext, Weights, synthesize_visual_context, synthesize_weights
from ._io import load_visual, load_weights, save_visual, save_weights
from .trace import UncertaintyTrace, export_trace_csv, export_trace_json, load_trace

__all__ = [
    "MemVREngine",
    "Generation",
    "ModelConfig",
    "Settings",
    "load_settings",
    "DecodePolicy",
    "RetraceSource",
    "StepDecision",
    "Strategy",
    "generate",
    "Weights",
    "VisualContext",
    "synthesize_weights",
    "synthesize_visual_context",
    "load_weights",
    "save_weights",
    "load_visual",
    "save_visual",
    "UncertaintyTrace",
    "export_trace_csv",
    "export_trace_json",
    "load_trace",
    "MVException",
    "MVShapeError",
    "MVValueError",
    "MVConfigError",
    "MVTokenError",
    "MVCacheOverflowError",
    "MVFileFormatError",
    "MVBadMagicError",
    "MVVersionError",
    "MVTruncatedFileError",
    "MVIOError",
    "MVTraceError",
]
