"""Clause template inventory: skeleton texts with typed, named slots.

Template library text format (versioned, one template per line):

    templates v1
    # comment
    template <id> | <skeleton with {slot} placeholders> | <schema>

where <schema> is either "-" (no slots) or a comma-separated list of
<name>:<kind>:<required|optional> entries. Slot kinds: laterality, region,
measurement, qualifier, concept-phrase. Every placeholder appearing in the
skeleton must be declared in the schema.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ConfigurationError, ParseError

SLOT_KINDS = ("laterality", "region", "measurement", "qualifier", "concept-phrase")

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class SlotSpec:
    name: str
    kind: str
    required: bool


@dataclass(frozen=True)
class TemplateSkeleton:
    template_id: int
    text: str
    slots: tuple[SlotSpec, ...] = ()

    def __post_init__(self):
        names = {s.name for s in self.slots}
        if len(names) != len(self.slots):
            raise ConfigurationError(f"template {self.template_id}: duplicate slot names")
        for s in self.slots:
            if s.kind not in SLOT_KINDS:
                raise ConfigurationError(
                    f"template {self.template_id}: unknown slot kind {s.kind!r}")
        for ph in _PLACEHOLDER_RE.findall(self.text):
            if ph not in names:
                raise ConfigurationError(
                    f"template {self.template_id}: placeholder {{{ph}}} missing from schema")

    def slot(self, name: str) -> SlotSpec:
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def placeholder_names(self) -> list[str]:
        return _PLACEHOLDER_RE.findall(self.text)

    def render(self, bindings: dict[str, str], missing: str = "unspecified") -> str:
        """Substitute bound slots; required-but-unbound slots render as `missing`,
        unbound optional slots are spliced out."""
        def sub(m: re.Match) -> str:
            name = m.group(1)
            if name in bindings:
                return bindings[name]
            return missing if self.slot(name).required else ""

        text = _PLACEHOLDER_RE.sub(sub, self.text)
        text = re.sub(r"\s{2,}", " ", text)
        text = re.sub(r"\s+([.,;])", r"\1", text)
        text = re.sub(r",([.;])", r"\1", text)  # comma orphaned by a dropped slot
        return text.strip()


class TemplateLibrary:
    """Indexed, read-only template inventory."""

    def __init__(self, templates: list[TemplateSkeleton]):
        self._by_id: dict[int, TemplateSkeleton] = {}
        for t in templates:
            if t.template_id in self._by_id:
                raise ConfigurationError(f"duplicate template id {t.template_id}")
            self._by_id[t.template_id] = t

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, template_id: int) -> bool:
        return template_id in self._by_id

    def get(self, template_id: int) -> TemplateSkeleton:
        if template_id not in self._by_id:
            raise KeyError(f"template {template_id} not in library")
        return self._by_id[template_id]

    def ids(self) -> list[int]:
        return sorted(self._by_id)

    def all(self) -> list[TemplateSkeleton]:
        return [self._by_id[i] for i in self.ids()]


def parse_template_library(text: str) -> TemplateLibrary:
    lines = text.splitlines()
    header_seen = False
    templates: list[TemplateSkeleton] = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if not header_seen:
            if stripped != "templates v1":
                raise ParseError(f"expected header 'templates v1', found {stripped!r}",
                                 lineno, 1)
            header_seen = True
            continue
        parts = line.split("|")
        if len(parts) != 3:
            raise ParseError("expected: template <id> | <skeleton> | <schema>", lineno, 1)
        head = parts[0].strip()
        m = re.fullmatch(r"template\s+(\d+)", head)
        if not m:
            raise ParseError(f"bad template head {head!r}", lineno, 1)
        tid = int(m.group(1))
        skeleton = parts[1].strip()
        schema_text = parts[2].strip()
        slots: list[SlotSpec] = []
        if schema_text != "-":
            for entry in schema_text.split(","):
                entry = entry.strip()
                em = re.fullmatch(
                    r"([A-Za-z_][A-Za-z0-9_]*):([a-z-]+):(required|optional)", entry)
                if not em:
                    col = line.index(entry) + 1 if entry and entry in line else 1
                    raise ParseError(f"bad slot entry {entry!r}", lineno, col)
                slots.append(SlotSpec(name=em.group(1), kind=em.group(2),
                                      required=em.group(3) == "required"))
        try:
            templates.append(TemplateSkeleton(template_id=tid, text=skeleton,
                                              slots=tuple(slots)))
        except ConfigurationError as e:
            raise ParseError(str(e), lineno, 1) from e
    if not header_seen:
        raise ParseError("empty template library: missing 'templates v1' header", 1, 1)
    return TemplateLibrary(templates)


def format_template_library(lib: TemplateLibrary) -> str:
    lines = ["templates v1"]
    for t in lib.all():
        if t.slots:
            schema = ", ".join(
                f"{s.name}:{s.kind}:{'required' if s.required else 'optional'}"
                for s in t.slots)
        else:
            schema = "-"
        lines.append(f"template {t.template_id} | {t.text} | {schema}")
    return "\n".join(lines) + "\n"
