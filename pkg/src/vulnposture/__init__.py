"""Vulnerability posture reasoning for system design models."""

from .errors import PostureError
from .model import (
    Component,
    ComponentType,
    Control,
    Delete,
    DesignModel,
    Link,
    Rule,
    TypeOrigin,
    Unlink,
    Upsert,
    VulnKind,
    VulnMetadata,
    Vulnerability,
    mutate,
    validate_model,
)
from .persistence import load_model, save_model
from .reasoner import check_design, cvulns, explain, mitigated, mitigated_v, vulnerable

__version__ = "0.1.0"

__all__ = [
    "Component",
    "ComponentType",
    "Control",
    "Delete",
    "DesignModel",
    "Link",
    "PostureError",
    "Rule",
    "TypeOrigin",
    "Unlink",
    "Upsert",
    "VulnKind",
    "VulnMetadata",
    "Vulnerability",
    "check_design",
    "cvulns",
    "explain",
    "load_model",
    "mitigated",
    "mitigated_v",
    "mutate",
    "save_model",
    "validate_model",
    "vulnerable",
]
