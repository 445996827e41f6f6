"""Experiment harness: configuration, data, pipeline, CLI."""
