"""Shared exception root for the package.

Module-specific errors live next to the code that raises them and all
derive from RonarError so the CLI can catch one type.
"""


class RonarError(Exception):
    pass
