"""Loader for the versioned prompt templates shipped with the package.

Templates are plain-text assets using ``string.Template`` ($name)
placeholders. The version is part of the file name so prompt changes are
visible in run manifests.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template

HEAD_ENTITIES = "head_entities_v1"
RELATIONS = "relations_v1"
TAIL_ENTITIES = "tail_entities_v1"
QA_GROUNDED = "qa_grounded_v1"
QA_PLAIN = "qa_plain_v1"
JUDGE_RUBRIC = "judge_rubric_v1"


@lru_cache(maxsize=None)
def load_text(name: str) -> str:
    """Return the raw template text for a versioned prompt name."""
    return (
        resources.files("kgqa.prompts").joinpath(f"{name}.txt").read_text("utf-8")
    )


def load_template(name: str) -> Template:
    return Template(load_text(name))


def render(name: str, **values: str) -> str:
    return load_template(name).substitute(**values)
