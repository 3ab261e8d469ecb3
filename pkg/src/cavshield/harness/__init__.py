"""Scenarios, reward assembly, episode orchestration, evaluation, CLI."""
