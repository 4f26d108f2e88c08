"""Prompt templates for live workers, managers, and the planner.

Templates ship as text files with named slots. Task-level slots such as
``{extremes_clause}`` or ``{budget}`` are filled when the prompt pair is
built; ``{chunk}``, ``{query}`` and ``{responses}`` survive until call time
and are substituted per request. Substitution is plain string replacement,
so payload text can never collide with the slot syntax.
"""

from __future__ import annotations

from importlib import resources
from typing import Optional, Tuple

from .tasks import TaskInstance, TaskKind

_NUMBER_WORDS = {
    2: "two", 3: "three", 4: "four", 5: "five", 6: "six", 7: "seven",
    8: "eight", 9: "nine", 10: "ten", 11: "eleven", 12: "twelve",
}

_WORKER_FILES = {
    TaskKind.KV: "worker_kv.txt",
    TaskKind.MATH: "worker_math.txt",
    TaskKind.ALIAS_CHAIN: "worker_alias.txt",
}
_MANAGER_FILES = {
    TaskKind.KV: "manager_kv.txt",
    TaskKind.MATH: "manager_math.txt",
    TaskKind.ALIAS_CHAIN: "manager_alias.txt",
}


def load_template(name: str) -> str:
    return resources.files("chunklab.templates").joinpath(name).read_text()


def extremes_clause(k: int, direction: str) -> str:
    if k == 1:
        return f"the {direction} number"
    word = _NUMBER_WORDS.get(k, str(k))
    return f"the {word} {direction} numbers"


def default_prompt_pair(instance: TaskInstance) -> Tuple[str, str]:
    """Built-in worker and manager prompts for the instance's task kind,
    with task-level slots already filled."""
    worker = load_template(_WORKER_FILES[instance.kind])
    manager = load_template(_MANAGER_FILES[instance.kind])
    if instance.kind is TaskKind.MATH:
        clause = extremes_clause(
            instance.params["k"], instance.params["direction"]
        )
        worker = worker.replace("{extremes_clause}", clause)
        manager = manager.replace("{extremes_clause}", clause)
    elif instance.kind is TaskKind.ALIAS_CHAIN:
        worker = worker.replace("{budget}", str(instance.artifact_budget))
    return worker, manager


def render_worker_prompt(template: str, instance: TaskInstance, chunk_text: str) -> str:
    return template.replace("{query}", instance.query).replace("{chunk}", chunk_text)


def render_manager_prompt(template: str, instance: TaskInstance, responses: str) -> str:
    return template.replace("{query}", instance.query).replace(
        "{responses}", responses
    )


def parse_prompt_pair(text: str) -> Optional[Tuple[str, str]]:
    """Extract the two prompts from a planner response; None when the
    delimiters are missing or out of order."""
    wmark, mmark = "WORKER PROMPT:", "MANAGER PROMPT:"
    wi = text.find(wmark)
    mi = text.find(mmark)
    if wi < 0 or mi < 0 or mi <= wi:
        return None
    worker = text[wi + len(wmark):mi].strip()
    manager = text[mi + len(mmark):].strip()
    if not worker or not manager:
        return None
    return worker, manager
