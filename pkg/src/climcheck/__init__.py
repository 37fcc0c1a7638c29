"""Retrieval-augmented verification of climate image-claim pairs."""

__version__ = "0.1.0"

from climcheck.domain import (  # noqa: F401
    AssemblyMode,
    ClimcheckError,
    ConfigError,
    Label2,
    Label4,
    RunConfig,
    Sample,
    Scheme,
    SourceKind,
    Strategy,
    legal_labels,
    map_to_binary,
)
