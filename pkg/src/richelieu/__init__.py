"""Diplomacy engine and a self-evolving LLM agent framework."""

__version__ = "0.1.0"
