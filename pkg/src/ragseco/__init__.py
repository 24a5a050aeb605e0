"""Relation-aware graph structure embedding with co-contrastive learning for DDI prediction."""

__version__ = "0.1.0"
