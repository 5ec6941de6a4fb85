"""Question templates and prompt rendering.

Fifteen built-in question templates (five per entity category) are
instantiated with a disease name and rendered in one of four prompt styles.
The guided style is a byte-stable text asset; rendering is pure, so prompts
are golden-file testable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path


class EntityCategory(Enum):
    """The three relation categories a disease edge can carry.

    The third category's built-in questions are the "effect"-phrased ones
    (what does X lead to / convert to), which the relation model files under
    coexists_with.
    """

    TREATMENT = "treatment"
    FACTOR = "factor"
    COEXISTS_WITH = "coexists_with"

    @property
    def question_type(self) -> str:
        """Token used in the guided prompt grammar for this category."""
        return _QUESTION_TYPES[self]

    @classmethod
    def from_wire(cls, value: str) -> "EntityCategory":
        return cls(value)


_QUESTION_TYPES = {
    EntityCategory.TREATMENT: "treat",
    EntityCategory.FACTOR: "factor",
    EntityCategory.COEXISTS_WITH: "coexists_with",
}

CATEGORY_ORDER = tuple(EntityCategory)


class PromptStyle(Enum):
    ZERO_SHOT = "zero"
    FEW_SHOT = "few"
    INSTRUCT = "instruct"
    GUIDED = "guided"


@dataclass(frozen=True)
class QuestionTemplate:
    """A category-tagged question pattern with exactly one '%s' placeholder."""

    id: str
    category: EntityCategory
    pattern: str

    def __post_init__(self):
        if self.pattern.count("%s") != 1:
            raise ValueError(
                f"template {self.id}: pattern must contain exactly one '%s' placeholder"
            )


TEMPLATES: tuple[QuestionTemplate, ...] = (
    QuestionTemplate("T1", EntityCategory.TREATMENT, "What can slow the progression of %s?"),
    QuestionTemplate("T2", EntityCategory.TREATMENT, "What can decrease the chance of %s?"),
    QuestionTemplate("T3", EntityCategory.TREATMENT, "What can reduce the risk of %s?"),
    QuestionTemplate("T4", EntityCategory.TREATMENT, "What is a treatment for %s?"),
    QuestionTemplate("T5", EntityCategory.TREATMENT, "What treats %s?"),
    QuestionTemplate("F1", EntityCategory.FACTOR, "What does cause %s?"),
    QuestionTemplate("F2", EntityCategory.FACTOR, "What is the cause of %s?"),
    QuestionTemplate("F3", EntityCategory.FACTOR, "What is the factor for %s?"),
    QuestionTemplate("F4", EntityCategory.FACTOR, "What can increase the risk of %s?"),
    QuestionTemplate("F5", EntityCategory.FACTOR, "What can convert to %s?"),
    QuestionTemplate("E1", EntityCategory.COEXISTS_WITH, "What can %s convert to?"),
    QuestionTemplate("E2", EntityCategory.COEXISTS_WITH, "What is the effect of %s?"),
    QuestionTemplate("E3", EntityCategory.COEXISTS_WITH, "What does %s lead to?"),
    QuestionTemplate("E4", EntityCategory.COEXISTS_WITH, "What can %s become?"),
    QuestionTemplate("E5", EntityCategory.COEXISTS_WITH, "What does %s affect?"),
)


@dataclass(frozen=True)
class Prompt:
    """A fully rendered backend input.

    The rendered text always contains the instantiated question and the note
    text verbatim; ``context`` keeps the note text separately so extractive
    backends can be checked for substring answers.
    """

    text: str
    style: PromptStyle
    category: EntityCategory
    question: str
    context: str
    note_id: str = ""
    question_id: str = ""


@dataclass(frozen=True)
class Exemplar:
    input: str
    output: str


def instantiate_questions(
    disease: str,
    category: EntityCategory,
    templates: tuple[QuestionTemplate, ...] = TEMPLATES,
) -> list[tuple[str, str]]:
    """Render every template of ``category`` for ``disease``, in template order."""
    if not disease.strip():
        raise ValueError("disease must be non-empty")
    return [
        (t.id, t.pattern.replace("%s", disease))
        for t in templates
        if t.category is category
    ]


def load_template_overrides(path: str | Path) -> tuple[QuestionTemplate, ...]:
    """Template set from a JSON override file: [{"id", "category", "pattern"}].

    Entries whose id matches a built-in replace it; new ids are appended.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    overrides = {
        entry["id"]: QuestionTemplate(
            entry["id"], EntityCategory.from_wire(entry["category"]), entry["pattern"]
        )
        for entry in raw
    }
    merged = [overrides.pop(t.id, t) for t in TEMPLATES]
    merged.extend(overrides.values())
    return tuple(merged)


def _guided_template() -> str:
    return (
        resources.files("notekg.assets").joinpath("guided_prompt.txt").read_text("utf-8")
    )


INSTRUCT_PREAMBLE = (
    "I want you to act as a question answering machine. I will provide you with "
    "a questions and a context and you will reply with the answers."
)
INSTRUCT_RETRIEVAL = 'Instruction: If the answer is not in context answer "i do not know".'


def build_prompt(
    style: PromptStyle,
    question: str,
    context: str,
    category: EntityCategory,
    exemplars: tuple[Exemplar, ...] = (),
    note_id: str = "",
    question_id: str = "",
) -> Prompt:
    """Render a prompt in the given style.

    Zero-shot is the bare question/context block; few-shot prepends the
    exemplars (at least one required); instruct wraps the block in the task
    instruction and retrieval message; guided renders the guided-grammar
    template with the category's question_type substituted.
    """
    if not question.strip() or not context.strip():
        raise ValueError("question and context must be non-empty")

    if style is PromptStyle.GUIDED:
        text = (
            _guided_template()
            .replace("{question_type}", category.question_type)
            .replace("{question}", question)
            .replace("{context}", context)
        )
    elif style is PromptStyle.ZERO_SHOT:
        text = f"Question: {question}\nContext: {context}\nAnswer:\n"
    elif style is PromptStyle.INSTRUCT:
        text = (
            f"{INSTRUCT_PREAMBLE}\n"
            f"Question: {question}\n"
            f"{INSTRUCT_RETRIEVAL}\n"
            f"Context: {context}\n"
            f"Answer:\n"
        )
    elif style is PromptStyle.FEW_SHOT:
        if not exemplars:
            raise ValueError("few-shot prompting requires at least one exemplar")
        blocks = [f"{ex.input}\nAnswer: {ex.output}\n" for ex in exemplars]
        text = "\n".join(blocks) + f"\nQuestion: {question}\nContext: {context}\nAnswer:\n"
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown prompt style: {style}")

    return Prompt(
        text=text,
        style=style,
        category=category,
        question=question,
        context=context,
        note_id=note_id,
        question_id=question_id,
    )
