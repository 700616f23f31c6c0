"""Tree-based classifiers, evaluation and interpretation for survey plus drought-index data."""

__version__ = "0.1.0"
