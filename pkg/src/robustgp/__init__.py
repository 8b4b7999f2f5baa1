"""Grammar-guided generation of robust particle swarm heuristics."""

__version__ = "0.1.0"
