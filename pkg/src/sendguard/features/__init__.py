"""Behavioral feature extraction: writing, composition and interaction habits."""
from .extract import (
    extract_features,
    extract_matrix,
    interaction_features,
    message_characteristics,
    time_features,
    url_features,
    writing_features,
)
from .schema import FeatureEntry, FeatureSchema, FeatureVector, build_schema, OTHER, WRITING_FAMILIES
from .text import char_occurrence, regex_ratio, style_metrics, token_ratio, tokenize

__all__ = [
    "FeatureEntry", "FeatureSchema", "FeatureVector", "OTHER", "WRITING_FAMILIES",
    "build_schema", "char_occurrence", "extract_features", "extract_matrix",
    "interaction_features", "message_characteristics", "regex_ratio", "style_metrics",
    "time_features", "token_ratio", "tokenize", "url_features", "writing_features",
]
