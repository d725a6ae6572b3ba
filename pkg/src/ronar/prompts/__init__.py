"""Versioned prompt templates shipped with the package.

Templates are plain-text files with $name placeholders; provenance records
carry the template name and content hash so any generated text can be traced
to the exact prompt that produced it.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from importlib import resources
from string import Template

PROMPTS_VERSION = "1"


@lru_cache(maxsize=None)
def _load(name: str) -> str:
    return resources.files("ronar.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render(name: str, **fields: str) -> str:
    return Template(_load(name)).substitute(**fields)


def template_sha(name: str) -> str:
    return hashlib.sha256(_load(name).encode("utf-8")).hexdigest()[:12]
