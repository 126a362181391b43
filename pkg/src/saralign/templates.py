"""Caption templates and the rule-based caption verifier.

Four template families: general and complex descriptions fill a single
[class] slot; absolute-region descriptions add [location]; relative-region
descriptions relate two targets through [class1]/[location1]/
[relative_direction]/[class2]/[location2].

Pool contents are listed with their stable ids in docs/templates.md.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .errors import ValidationError
from .geometry import Direction, RegionLabel


class TemplateKind(enum.Enum):
    GENERAL = "general"
    COMPLEX = "complex"
    ABSOLUTE_REGION = "absolute_region"
    RELATIVE_REGION = "relative_region"
    NATIVE = "native"  # pass-through captions from caption manifests


_SLOT_NAMES = frozenset(
    ["class", "location", "class1", "location1", "relative_direction", "class2", "location2"]
)
_SLOT_RE = re.compile(r"\[([a-z_0-9]+)\]")


@dataclass(frozen=True, slots=True)
class Template:
    template_id: str
    kind: TemplateKind
    text: str
    slots: tuple[str, ...] = ()

    def __post_init__(self):
        found = tuple(_SLOT_RE.findall(self.text))
        for slot in found:
            if slot not in _SLOT_NAMES:
                raise ValidationError(f"template {self.template_id}: unknown slot [{slot}]")
        object.__setattr__(self, "slots", found)


@dataclass(frozen=True, slots=True)
class Caption:
    text: str
    template_id: str
    kind: TemplateKind
    image_id: str


GENERAL_TEMPLATES = (
    Template("g-01", TemplateKind.GENERAL, "A SAR image of the [class]"),
    Template("g-02", TemplateKind.GENERAL, "A SAR image showing the [class]"),
    Template("g-03", TemplateKind.GENERAL, "A radar image containing the [class]"),
    Template("g-04", TemplateKind.GENERAL, "The [class] captured in a SAR image"),
    Template("g-05", TemplateKind.GENERAL, "A synthetic aperture radar image of the [class]"),
)

COMPLEX_TEMPLATES = (
    Template("c-01", TemplateKind.COMPLEX,
             "A SAR image reveals the distinct texture and structure of the [class]."),
    Template("c-02", TemplateKind.COMPLEX,
             "The bright backscatter returns in this SAR image outline the [class]."),
    Template("c-03", TemplateKind.COMPLEX,
             "Against a speckled background, this SAR image depicts the [class]."),
    Template("c-04", TemplateKind.COMPLEX,
             "This radar acquisition highlights the characteristic signature of the [class]."),
    Template("c-05", TemplateKind.COMPLEX,
             "A SAR scene in which the [class] stands out from the surrounding clutter."),
)

ABSOLUTE_TEMPLATES = (
    Template("a-01", TemplateKind.ABSOLUTE_REGION,
             "A SAR image of [class] located in the [location] of the image."),
    Template("a-02", TemplateKind.ABSOLUTE_REGION,
             "In this SAR image, [class] can be seen in the [location] of the scene."),
    Template("a-03", TemplateKind.ABSOLUTE_REGION,
             "A SAR image showing [class] in the [location] of the image."),
)

RELATIVE_TEMPLATES = (
    Template("r-01", TemplateKind.RELATIVE_REGION,
             "In this SAR image, the [class1] in the [location1] are positioned "
             "[relative_direction] the [class2] in the [location2]."),
    Template("r-02", TemplateKind.RELATIVE_REGION,
             "A SAR image where the [class1] in the [location1] appears "
             "[relative_direction] the [class2] in the [location2]."),
)

TEMPLATE_POOLS = {
    TemplateKind.GENERAL: GENERAL_TEMPLATES,
    TemplateKind.COMPLEX: COMPLEX_TEMPLATES,
    TemplateKind.ABSOLUTE_REGION: ABSOLUTE_TEMPLATES,
    TemplateKind.RELATIVE_REGION: RELATIVE_TEMPLATES,
}

ALL_TEMPLATES = {
    t.template_id: t for pool in TEMPLATE_POOLS.values() for t in pool
}

REGION_PHRASES = {
    RegionLabel.UPPER_LEFT: "upper left",
    RegionLabel.UPPER_RIGHT: "upper right",
    RegionLabel.BOTTOM_LEFT: "bottom left",
    RegionLabel.BOTTOM_RIGHT: "bottom right",
    RegionLabel.CENTER: "center",
}

# "positioned above the X" reads fine; bare "left"/"right" does not, so the
# horizontal directions render with a preposition.
DIRECTION_PHRASES = {
    Direction.ABOVE: "above",
    Direction.BELOW: "below",
    Direction.LEFT: "to the left of",
    Direction.RIGHT: "to the right of",
}

_COUNT_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")


def count_word(n: int) -> str:
    return _COUNT_WORDS[n] if 0 <= n <= 9 else str(n)


def pluralize(label: str, count: int) -> str:
    if count == 1 or label.endswith("s"):
        return label
    return label + "s"


def summarize_objects(entries) -> str:
    """Render detection entries as a count phrase, e.g. "two ships and one bridge".

    Classes are ordered by descending count, then lexicographically; counts
    one through nine render as words and larger ones as digits.
    """
    if not entries:
        raise ValidationError("summarize_objects requires a non-empty entry list")
    counts: dict[str, int] = {}
    for label, _box in entries:
        counts[label] = counts.get(label, 0) + 1
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    parts = [f"{count_word(n)} {pluralize(label, n)}" for label, n in ordered]
    if len(parts) == 1:
        return parts[0]
    return ", ".join(parts[:-1]) + " and " + parts[-1]


def fill_template(template: Template, slots: dict[str, str], image_id: str = "") -> Caption:
    """Substitute every slot of the template; missing slots are an error."""
    text = template.text
    for slot in template.slots:
        if slot not in slots:
            raise ValidationError(
                f"template {template.template_id}: no value for slot [{slot}]")
        text = text.replace(f"[{slot}]", slots[slot])
    return Caption(text=text, template_id=template.template_id,
                   kind=template.kind, image_id=image_id)


_UNFILLED_RE = re.compile(r"\[[^\]]*\]")
_BALANCED_PAIRS = (("(", ")"), ("[", "]"), ("{", "}"))


def verify_caption(caption: Caption) -> tuple[bool, str]:
    """Rule-based fluency gate: (accepted, reason).

    Stands in for an external language-model verifier; pass a different
    callable with the same signature to export_pairs to plug one in.
    """
    text = caption.text
    if not text:
        return False, "empty"
    if not text[0].isalpha() or not text[0].isupper():
        return False, "must start with an uppercase letter"
    if _UNFILLED_RE.search(text):
        return False, "unfilled slot marker"
    for opener, closer in _BALANCED_PAIRS:
        if text.count(opener) != text.count(closer):
            return False, f"unbalanced {opener}{closer}"
    if text.count('"') % 2 != 0:
        return False, "unbalanced quotes"
    last = text[-1]
    if not (last.isalnum() or last == "."):
        return False, "must end with a letter, digit or period"
    return True, ""
