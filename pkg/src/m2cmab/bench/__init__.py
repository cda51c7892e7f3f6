"""Synthetic traces, baseline policies and experiment orchestration."""
