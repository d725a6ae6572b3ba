"""Robot episode narration pipeline: alignment, key events, summaries,
progressive narration, plus a task simulator, sweep harness, and service."""

from .errors import RonarError

__version__ = "0.1.0"

__all__ = ["RonarError", "__version__"]
