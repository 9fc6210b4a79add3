"""Forward-backward behavioral foundation model on toy control environments.

Submodules are imported on demand so the command-line entry point can set
thread environment variables before numpy loads.
"""
__version__ = "0.1.0"

__all__ = [
    "toyenv", "motions", "nets", "fbcore", "trainer", "inference",
    "adaptation", "evaluation", "cli", "config", "plots", "rollout", "kernels",
]
