"""Relation-tuple modeling of cloud IAM and minimum-cost attack planning."""

__version__ = "0.1.0"
