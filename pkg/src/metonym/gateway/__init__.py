"""Provider-agnostic access to text, image, embedding, and multimodal backends."""

from .core import (
    BackendConfig,
    BackoffExhaustedError,
    CapabilityError,
    EmbeddingDimensionError,
    EmptyCompletionError,
    GatewayError,
    ModelGateway,
    ModerationRefusalError,
    PreconditionError,
    RenderedImage,
    RenderParams,
    RetryPolicy,
    RunLog,
    SamplingParams,
    TransientBackendError,
)
from .config import build_gateway, load_gateway_config

__all__ = [
    "BackendConfig",
    "BackoffExhaustedError",
    "CapabilityError",
    "EmbeddingDimensionError",
    "EmptyCompletionError",
    "GatewayError",
    "ModelGateway",
    "ModerationRefusalError",
    "PreconditionError",
    "RenderedImage",
    "RenderParams",
    "RetryPolicy",
    "RunLog",
    "SamplingParams",
    "TransientBackendError",
    "build_gateway",
    "load_gateway_config",
]
