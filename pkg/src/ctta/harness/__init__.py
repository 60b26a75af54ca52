"""Experiment surface: config files, source pretraining, run/ablate/sweep drivers and the CLI."""
