"""Offline rendering of cooperative-driving run artifacts."""

from cavplots.render import render_convergence, render_profiles, render_snapshots

__all__ = ["render_snapshots", "render_profiles", "render_convergence"]
