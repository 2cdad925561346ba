"""Persona-based alignment of choice oracles with observed travel mode choices."""

from .data import (
    ALTERNATIVES,
    Alternative,
    ChoiceContext,
    ChoiceRecord,
    DatasetBundle,
    ModeAttributes,
    RespondentPanel,
    SocioDemographics,
)
from .em import TrainConfig, TrainState, e_step, exact_log_likelihood, m_step, simulated_likelihood, train
from .loading import EmbeddingParams, LoadingDistribution, loading_distribution, sample_personas
from .personas import Persona, PersonaBasis, infer_personas
from .predictor import PredictionConfig, PredictionSet, predict

__version__ = "0.1.0"

__all__ = [
    "ALTERNATIVES",
    "Alternative",
    "ChoiceContext",
    "ChoiceRecord",
    "DatasetBundle",
    "EmbeddingParams",
    "LoadingDistribution",
    "ModeAttributes",
    "Persona",
    "PersonaBasis",
    "PredictionConfig",
    "PredictionSet",
    "RespondentPanel",
    "SocioDemographics",
    "TrainConfig",
    "TrainState",
    "__version__",
    "e_step",
    "exact_log_likelihood",
    "infer_personas",
    "loading_distribution",
    "m_step",
    "predict",
    "sample_personas",
    "simulated_likelihood",
    "train",
]
