"""Sequence models driven by the search engine."""
from egb.lm.base import (
    EOS,
    ContextOverflowError,
    GenerationEvent,
    MeteredModel,
    ModelContext,
    ModelError,
    SamplerSettings,
    SequenceModel,
    StepBoundaryRule,
    StepOutput,
    TokenizationError,
    Vocabulary,
    generate_step,
    next_distribution,
)
from egb.lm.ngram import NgramModel, build_ngram_model
from egb.lm.remote import RemoteModel, distribution_from_logprobs
from egb.lm.scripted import ProfileModel, ScriptError, TableModel, load_scripted_model


def remote_model_client(endpoint: str, auth: str | None = None, **kwargs) -> RemoteModel:
    return RemoteModel(endpoint, auth, **kwargs)


__all__ = [
    "EOS",
    "ContextOverflowError",
    "GenerationEvent",
    "MeteredModel",
    "ModelContext",
    "ModelError",
    "NgramModel",
    "ProfileModel",
    "RemoteModel",
    "SamplerSettings",
    "ScriptError",
    "SequenceModel",
    "StepBoundaryRule",
    "StepOutput",
    "TableModel",
    "TokenizationError",
    "Vocabulary",
    "build_ngram_model",
    "distribution_from_logprobs",
    "generate_step",
    "load_scripted_model",
    "next_distribution",
    "remote_model_client",
]
