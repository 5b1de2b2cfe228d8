"""Quality assessment for semi-structured cultural-heritage object descriptions."""

__version__ = "0.1.0"
