"""Experiment infrastructure: configs, dataset splits, orchestration, ablations, plots, CLI."""
