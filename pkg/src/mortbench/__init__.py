"""Mortality-prediction benchmark: classical models vs zero-shot LLM
classification over tabular patient cohorts."""

__version__ = "0.1.0"
