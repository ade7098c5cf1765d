"""gaitforge: planar musculoskeletal gait simulation and learning."""

from ._core import BACKEND_NAME
from .model import (
    AnatomyCondition,
    DomainViolationError,
    ModelSpec,
    ParameterDomain,
    ScaledModel,
    apply_anatomy,
    build_reference_model,
    load_model,
    sample_condition,
    save_model,
    validate_condition,
)

__version__ = "0.1.0"

__all__ = [
    "AnatomyCondition",
    "BACKEND_NAME",
    "DomainViolationError",
    "ModelSpec",
    "ParameterDomain",
    "ScaledModel",
    "apply_anatomy",
    "build_reference_model",
    "load_model",
    "sample_condition",
    "save_model",
    "validate_condition",
    "__version__",
]
