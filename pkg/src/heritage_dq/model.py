"""In-memory model of semi-structured descriptive records.

A :class:`Dataset` is an ordered list of :class:`DataElement` records, each
holding named :class:`Property` values and :class:`Link` references. Ingestion
never repairs input: lexical forms are kept verbatim, and units and
uncertainty qualifiers are only *annotated* on the value.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from datetime import date
from typing import Iterable, Iterator, Mapping, Sequence, Union

from .errors import ConfigError, DuplicateId, MalformedInput, MappingError, UnresolvablePath, WrongKind

KINDS = ("text", "number", "date", "uri")

DEFAULT_UNITS = ("cm", "mm", "m")
DEFAULT_QUALIFIERS = ("ca.", "circa", "um", "?", "vermutlich", "around")
ISO_DATE_GRAMMARS = ("YYYY-MM-DD", "YYYY-MM", "YYYY")
LEGACY_DATE_GRAMMARS = ("DD.MM.YYYY", "MM.YYYY")

_ID_RE = re.compile(r"^[A-Za-z_][\w.\-:]*$")
_URI_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*:(//[^\s/?#]+[^\s]*|[^\s/][^\s]*)$")
_NUMBER_RE = re.compile(r"^[+-]?(\d+(\.\d+)?|\.\d+)([eE][+-]?\d+)?$")
_COMMA_NUMBER_RE = re.compile(r"^[+-]?\d+(,\d+)?$")


def is_element_id(text: str) -> bool:
    return bool(_ID_RE.match(text))


def is_absolute_uri(text: str) -> bool:
    return bool(_URI_RE.match(text))


def is_number(text: str, *, comma_decimal: bool = False) -> bool:
    if _NUMBER_RE.match(text):
        return True
    return comma_decimal and bool(_COMMA_NUMBER_RE.match(text))


# --- value analysis -------------------------------------------------------


@dataclass(frozen=True)
class DateGrammar:
    """A date layout built from the tokens ``YYYY``, ``MM`` and ``DD``."""

    pattern: str
    regex: re.Pattern = field(repr=False, compare=False)

    @classmethod
    def compile(cls, pattern: str) -> "DateGrammar":
        if "YYYY" not in pattern:
            raise ConfigError(f"date grammar {pattern!r} has no YYYY token")
        out, i = [], 0
        tokens = {"YYYY": r"(?P<y>\d{4})", "MM": r"(?P<m>\d{2})", "DD": r"(?P<d>\d{2})"}
        while i < len(pattern):
            for tok, rx in tokens.items():
                if pattern.startswith(tok, i):
                    out.append(rx)
                    i += len(tok)
                    break
            else:
                out.append(re.escape(pattern[i]))
                i += 1
        return cls(pattern, re.compile("^" + "".join(out) + "$"))

    def parse(self, text: str) -> tuple[int, ...] | None:
        """Return ``(year[, month[, day]])`` or ``None`` if not a valid date."""
        match = self.regex.match(text)
        if not match:
            return None
        parts = match.groupdict()
        y = int(parts["y"])
        m = int(parts["m"]) if parts.get("m") else None
        d = int(parts["d"]) if parts.get("d") else None
        try:
            date(y or 1, m or 1, d or 1)
        except ValueError:
            return None
        if d is not None and m is None:
            return None
        return tuple(v for v in (y, m, d) if v is not None)


def compile_grammars(patterns: Iterable[str]) -> tuple[DateGrammar, ...]:
    return tuple(DateGrammar.compile(p) for p in patterns)


_ISO = compile_grammars(ISO_DATE_GRAMMARS)
_LEGACY = compile_grammars(LEGACY_DATE_GRAMMARS)


def parse_date(text: str, grammars: Sequence[DateGrammar] = _ISO + _LEGACY) -> tuple[int, ...] | None:
    for g in grammars:
        parsed = g.parse(text)
        if parsed is not None:
            return parsed
    return None


@lru_cache(maxsize=64)
def _longest_first(lexicon: tuple[str, ...]) -> tuple[str, ...]:
    return tuple(sorted(set(lexicon), key=lambda mk: (-len(mk), mk)))


def split_qualifiers(text: str, lexicon: Iterable[str] = DEFAULT_QUALIFIERS) -> tuple[str, list[str]]:
    """Strip uncertainty markers from both ends of ``text``.

    Alphabetic markers must be separated from the rest by whitespace, so
    ``"umbrella"`` keeps its ``um``; punctuation markers such as ``?`` may be
    attached directly (``"1900?"``). Returns the remainder and the markers in
    the order found.
    """
    markers = _longest_first(tuple(lexicon))
    found: list[str] = []
    rest = text.strip()
    changed = True
    while changed and rest:
        changed = False
        low = rest.lower()
        for mk in markers:
            mkl = mk.lower()
            if low.startswith(mkl):
                tail = rest[len(mk):]
                if not tail.strip() or (mk[-1].isalnum() and not tail[0].isspace()):
                    continue
                found.append(rest[: len(mk)])
                rest = tail.strip()
                changed = True
                break
            if low.endswith(mkl) and len(rest) > len(mk):
                head = rest[: -len(mk)]
                if mk[0].isalnum() and not head[-1].isspace():
                    continue
                found.append(rest[-len(mk):])
                rest = head.strip()
                changed = True
                break
    return rest, found


def split_unit(text: str, units: Iterable[str] = DEFAULT_UNITS) -> tuple[str, str | None]:
    parts = text.rsplit(None, 1)
    if len(parts) == 2 and parts[1] in set(units):
        return parts[0], parts[1]
    return text, None


def infer_kind(core: str, grammars: Sequence[DateGrammar] = _ISO + _LEGACY) -> str:
    if not core:
        return "text"
    if is_number(core):
        # a bare four-digit year reads as a date, not a count
        if parse_date(core, grammars) is not None and re.fullmatch(r"\d{4}", core):
            return "date"
        return "number"
    if parse_date(core, grammars) is not None:
        return "date"
    if is_absolute_uri(core):
        return "uri"
    return "text"


# --- core types -----------------------------------------------------------


@dataclass(frozen=True)
class DataValue:
    lexical: str
    kind: str = "text"
    unit: str | None = None
    qualifiers: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown value kind {self.kind!r}")

    def core(self, lexicon: Iterable[str] | None = None, units: Iterable[str] | None = None) -> str:
        """Lexical form without qualifiers and trailing unit."""
        text = self.lexical.strip()
        if self.unit:
            text, _ = split_unit(text, (self.unit,))
        elif units is not None:
            text, _ = split_unit(text, units)
        lex = self.qualifiers if lexicon is None else tuple(lexicon)
        text, _ = split_qualifiers(text, lex)
        return text

    @property
    def is_empty(self) -> bool:
        return not self.lexical.strip()


def make_value(
    lexical: str,
    kind: str | None = None,
    *,
    unit: str | None = None,
    units: Iterable[str] = DEFAULT_UNITS,
    lexicon: Iterable[str] = DEFAULT_QUALIFIERS,
) -> DataValue:
    """Analyze a raw lexical form into a :class:`DataValue`."""
    text = lexical.strip()
    core, found_unit = split_unit(text, units)
    core, qualifiers = split_qualifiers(core, lexicon)
    return DataValue(
        lexical=lexical,
        kind=kind or infer_kind(core),
        unit=unit or found_unit,
        qualifiers=tuple(qualifiers),
    )


@dataclass(frozen=True)
class Property:
    name: str
    value: DataValue

    def __post_init__(self):
        if not self.name:
            raise ValueError("property name must be non-empty")


@dataclass(frozen=True)
class Link:
    target_kind: str
    target: str
    role: str

    def __post_init__(self):
        if self.target_kind == "internal":
            if not is_element_id(self.target):
                raise ValueError(f"internal link target {self.target!r} is not an element id")
        elif self.target_kind == "interlink":
            if not is_absolute_uri(self.target):
                raise ValueError(f"interlink target {self.target!r} is not an absolute URI")
        else:
            raise ValueError(f"unknown link kind {self.target_kind!r}")


@dataclass(frozen=True)
class DataElement:
    id: str
    type_name: str
    properties: tuple[Property, ...] = ()
    links: tuple[Link, ...] = ()

    def get(self, name: str) -> list[Property]:
        return [p for p in self.properties if p.name == name]

    def first(self, name: str) -> Property | None:
        for p in self.properties:
            if p.name == name:
                return p
        return None

    def iter_properties(self) -> Iterator[tuple[int, Property]]:
        """Yield ``(occurrence index, property)`` in order."""
        seen: dict[str, int] = {}
        for p in self.properties:
            idx = seen.get(p.name, 0)
            seen[p.name] = idx + 1
            yield idx, p


@dataclass(frozen=True)
class Dataset:
    id: str
    elements: tuple[DataElement, ...] = ()
    source_info: str | None = None

    def check_unique_ids(self) -> None:
        seen = set()
        for el in self.elements:
            if el.id in seen:
                raise DuplicateId(f"duplicate element id {el.id!r}")
            seen.add(el.id)

    @cached_property
    def _index(self) -> dict[str, list[DataElement]]:
        index: dict[str, list[DataElement]] = {}
        for el in self.elements:
            index.setdefault(el.id, []).append(el)
        return index

    def by_id(self, element_id: str) -> list[DataElement]:
        return list(self._index.get(element_id, ()))

    @property
    def property_count(self) -> int:
        return sum(len(el.properties) for el in self.elements)

    @property
    def link_count(self) -> int:
        return sum(len(el.links) for el in self.elements)


# --- paths ----------------------------------------------------------------


@dataclass(frozen=True)
class Path:
    """Address of an element, a property occurrence or a link.

    Text form: ``o1``, ``o1/name``, ``o1/name[2]``, ``o1/@link[0]``.
    """

    element: str
    prop: str | None = None
    occurrence: int = 0
    link: int | None = None

    def __str__(self) -> str:
        if self.link is not None:
            return f"{self.element}/@link[{self.link}]"
        if self.prop is None:
            return self.element
        if self.occurrence:
            return f"{self.element}/{self.prop}[{self.occurrence}]"
        return f"{self.element}/{self.prop}"

    @classmethod
    def parse(cls, text: str) -> "Path":
        text = text.strip()
        element, sep, rest = text.partition("/")
        if not element:
            raise UnresolvablePath(f"bad path {text!r}")
        if not sep:
            return cls(element)
        m = re.fullmatch(r"@link\[(\d+)\]", rest)
        if m:
            return cls(element, link=int(m.group(1)))
        m = re.fullmatch(r"([^/\[\]]+)(?:\[(\d+)\])?", rest)
        if not m:
            raise UnresolvablePath(f"bad path {text!r}")
        return cls(element, m.group(1), int(m.group(2) or 0))

    def resolve(self, d: Dataset) -> Union[DataElement, Property, Link]:
        matches = d.by_id(self.element)
        if len(matches) != 1:
            raise UnresolvablePath(f"{self}: element id matches {len(matches)} elements")
        el = matches[0]
        if self.link is not None:
            if not 0 <= self.link < len(el.links):
                raise UnresolvablePath(f"{self}: no such link")
            return el.links[self.link]
        if self.prop is None:
            return el
        occ = el.get(self.prop)
        if not 0 <= self.occurrence < len(occ):
            raise UnresolvablePath(f"{self}: no such property occurrence")
        return occ[self.occurrence]


def resolve_link(d: Dataset, link: Link) -> list[DataElement]:
    """Elements the internal ``link`` points at (0 = dangling, >1 = ambiguous)."""
    if link.target_kind != "internal":
        raise WrongKind(f"cannot resolve {link.target_kind} link {link.target!r} locally")
    return d.by_id(link.target)


# --- XML ingestion --------------------------------------------------------


@dataclass(frozen=True)
class XmlMapping:
    """How XML tags map onto the record model.

    ``elements`` maps record tags (direct children of the root) to type
    names; the key ``"*"`` accepts any tag, using the tag as type name when
    the value is null. ``properties`` renames property tags; tags not listed
    are kept under their own name. ``links`` maps link tags to a role (null:
    take the ``role`` attribute, else the tag).
    """

    elements: Mapping[str, str | None]
    properties: Mapping[str, str] = field(default_factory=dict)
    links: Mapping[str, str | None] = field(default_factory=lambda: {"link": None})
    id_attribute: str = "id"
    dataset_id_attribute: str = "id"
    units: tuple[str, ...] = DEFAULT_UNITS
    qualifiers: tuple[str, ...] = DEFAULT_QUALIFIERS

    _KEYS = ("elements", "properties", "links", "id_attribute", "dataset_id_attribute", "units", "qualifiers")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "XmlMapping":
        unknown = set(raw) - set(cls._KEYS)
        if unknown:
            raise MappingError(f"unknown mapping keys: {', '.join(sorted(unknown))}")
        if "elements" not in raw:
            raise MappingError("mapping is missing mandatory key 'elements'")
        kwargs = dict(raw)
        for key in ("units", "qualifiers"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def type_for(self, tag: str) -> str | None:
        if tag in self.elements:
            return self.elements[tag] or tag
        if "*" in self.elements:
            return self.elements["*"] or tag
        return None


DEFAULT_MAPPING = XmlMapping(elements={"*": None})


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1] if tag.startswith("{") else tag


def parse_xml(data: bytes, mapping: XmlMapping | Mapping = DEFAULT_MAPPING, *, dataset_id: str | None = None,
              source: str | None = None) -> Dataset:
    """Read records from an XML document.

    Root children mapped as record tags become elements. Inside a record,
    link tags become links (``ref`` attribute: internal, ``href``:
    interlink), leaf tags become properties and nested tags are flattened
    with dotted names (``event.date``). Unmapped root children are kept as
    elements typed by their tag so structural validation can report them.
    """
    if not isinstance(mapping, XmlMapping):
        mapping = XmlMapping.from_dict(mapping)
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise MalformedInput(f"malformed XML: {exc}", offset=_byte_offset(data, line, col), line=line) from None
    ds_id = dataset_id or root.get(mapping.dataset_id_attribute) or _local(root.tag)
    elements = []
    counters: dict[str, int] = {}
    for child in root:
        if not isinstance(child.tag, str):
            continue
        tag = _local(child.tag)
        type_name = mapping.type_for(tag) or tag
        el_id = child.get(mapping.id_attribute)
        if el_id is None:
            counters[tag] = counters.get(tag, 0) + 1
            el_id = f"_{tag}{counters[tag]}"
        props: list[Property] = []
        links: list[Link] = []
        for attr, val in child.attrib.items():
            if attr != mapping.id_attribute:
                props.append(Property("@" + _local(attr), make_value(val, units=mapping.units, lexicon=mapping.qualifiers)))
        _walk(child, "", mapping, props, links, el_id)
        elements.append(DataElement(el_id, type_name, tuple(props), tuple(links)))
    return Dataset(ds_id, tuple(elements), source)


def _walk(node: ET.Element, prefix: str, mapping: XmlMapping, props: list, links: list, el_id: str) -> None:
    for sub in node:
        if not isinstance(sub.tag, str):
            continue
        tag = _local(sub.tag)
        if tag in mapping.links:
            role = mapping.links[tag] or sub.get("role") or tag
            if sub.get("ref") is not None:
                kind, target = "internal", sub.get("ref").strip()
            elif sub.get("href") is not None:
                kind, target = "interlink", sub.get("href").strip()
            else:
                kind, target = None, (sub.text or "").strip()
                kind = "interlink" if is_absolute_uri(target) else "internal"
            try:
                links.append(Link(kind, target, role))
            except ValueError as exc:
                raise MalformedInput(f"element {el_id!r}: {exc}") from None
            continue
        name = prefix + mapping.properties.get(tag, tag)
        if len(sub):
            _walk(sub, name + ".", mapping, props, links, el_id)
            continue
        kind = sub.get("kind")
        if kind is not None and kind not in KINDS:
            raise MalformedInput(f"element {el_id!r}: unknown kind {kind!r} on <{tag}>")
        value = make_value(sub.text or "", kind, unit=sub.get("unit"), units=mapping.units, lexicon=mapping.qualifiers)
        props.append(Property(name, value))


def _byte_offset(data: bytes, line: int, col: int) -> int:
    lines = data.split(b"\n")
    return sum(len(x) + 1 for x in lines[: max(line - 1, 0)]) + col


# --- canonical interchange format -----------------------------------------


def dataset_to_dict(d: Dataset) -> dict:
    out: dict = {"id": d.id, "elements": []}
    if d.source_info is not None:
        out["source"] = d.source_info
    for el in d.elements:
        props = []
        for p in el.properties:
            v = p.value
            entry = {"name": p.name, "lexical": v.lexical, "kind": v.kind}
            if v.unit is not None:
                entry["unit"] = v.unit
            if v.qualifiers:
                entry["qualifiers"] = list(v.qualifiers)
            props.append(entry)
        out["elements"].append(
            {
                "id": el.id,
                "type": el.type_name,
                "properties": props,
                "links": [{"kind": l.target_kind, "target": l.target, "role": l.role} for l in el.links],
            }
        )
    return out


def serialize_canonical(d: Dataset) -> bytes:
    return (json.dumps(dataset_to_dict(d), ensure_ascii=False, indent=1) + "\n").encode("utf-8")


def parse_canonical(data: bytes, *, check_ids: bool = True) -> Dataset:
    try:
        doc = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise MalformedInput(f"not UTF-8: {exc}", offset=exc.start) from None
    except json.JSONDecodeError as exc:
        raise MalformedInput(exc.msg, line=exc.lineno, offset=exc.pos) from None
    try:
        elements = []
        for raw in doc["elements"]:
            props = tuple(
                Property(
                    p["name"],
                    DataValue(p["lexical"], p["kind"], p.get("unit"), tuple(p.get("qualifiers", ()))),
                )
                for p in raw["properties"]
            )
            links = tuple(Link(l["kind"], l["target"], l["role"]) for l in raw["links"])
            elements.append(DataElement(raw["id"], raw["type"], props, links))
        d = Dataset(doc["id"], tuple(elements), doc.get("source"))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"invalid canonical document: {exc!r}") from None
    if check_ids:
        d.check_unique_ids()
    return d


# --- model descriptor -----------------------------------------------------


@dataclass(frozen=True)
class PropertySpec:
    kind: str | None = None
    units: tuple[str, ...] = ()
    vocabulary: str | None = None
    format: str | None = None
    authority: bool = False
    repeatable: bool = False
    qualifier_field: str | None = None


@dataclass(frozen=True)
class ModelDescriptor:
    types: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    properties: Mapping[str, PropertySpec] = field(default_factory=dict)
    links: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def spec(self, name: str) -> PropertySpec | None:
        return self.properties.get(name)

    def declared_kind(self, name: str) -> str | None:
        spec = self.properties.get(name)
        return spec.kind if spec else None

    def required(self, type_name: str) -> tuple[str, ...]:
        return self.types.get(type_name, ())

    def referenced_vocabularies(self) -> set[str]:
        return {s.vocabulary for s in self.properties.values() if s.vocabulary}

    def referenced_formats(self) -> set[str]:
        return {s.format for s in self.properties.values() if s.format}

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ModelDescriptor":
        try:
            types = {t: tuple(spec.get("required", ())) for t, spec in raw.get("types", {}).items()}
            props = {}
            for name, spec in raw.get("properties", {}).items():
                unknown = set(spec) - set(PropertySpec.__dataclass_fields__)
                if unknown:
                    raise ConfigError(f"property {name!r}: unknown keys {sorted(unknown)}")
                spec = dict(spec)
                if "units" in spec:
                    spec["units"] = tuple(spec["units"])
                if spec.get("kind") not in (None, *KINDS):
                    raise ConfigError(f"property {name!r}: unknown kind {spec['kind']!r}")
                props[name] = PropertySpec(**spec)
            links = {}
            for role, spec in raw.get("links", {}).items():
                target = spec.get("target_type", ())
                links[role] = (target,) if isinstance(target, str) else tuple(target)
        except (AttributeError, TypeError) as exc:
            raise ConfigError(f"invalid model descriptor: {exc}") from None
        return cls(types, props, links)

    def to_dict(self) -> dict:
        props = {}
        for name, s in self.properties.items():
            entry = {}
            for key, default in PropertySpec().__dict__.items():
                val = getattr(s, key)
                if val != default:
                    entry[key] = list(val) if isinstance(val, tuple) else val
            props[name] = entry
        return {
            "types": {t: {"required": list(r)} for t, r in self.types.items()},
            "properties": props,
            "links": {r: {"target_type": list(t)} for r, t in self.links.items()},
        }


def load_descriptor(data: bytes) -> ModelDescriptor:
    try:
        raw = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedInput(f"model descriptor is not valid JSON: {exc}") from None
    return ModelDescriptor.from_dict(raw)


@dataclass(frozen=True)
class StructuralViolation:
    rule: str  # MissingRequired | KindMismatch | UnknownType | LinkTargetType
    path: Path
    detail: str

    def __str__(self) -> str:
        return f"{self.rule}({self.detail}) at {self.path}"


def value_matches_kind(value: DataValue, kind: str, *, comma_decimal: bool = False,
                       grammars: Sequence[DateGrammar] = _ISO + _LEGACY) -> bool:
    core = value.core()
    if kind == "text" or not core:
        return True
    if kind == "number":
        return is_number(core, comma_decimal=comma_decimal)
    if kind == "date":
        return parse_date(core, grammars) is not None
    if kind == "uri":
        return is_absolute_uri(core)
    return False


def validate_structure(d: Dataset, m: ModelDescriptor) -> list[StructuralViolation]:
    out: list[StructuralViolation] = []
    index = {}
    for el in d.elements:
        index.setdefault(el.id, []).append(el)
    for el in d.elements:
        if m.types and el.type_name not in m.types:
            out.append(StructuralViolation("UnknownType", Path(el.id), el.type_name))
        present = {p.name for p in el.properties}
        for name in m.required(el.type_name):
            if name not in present:
                out.append(StructuralViolation("MissingRequired", Path(el.id), name))
        for occ, p in el.iter_properties():
            kind = m.declared_kind(p.name)
            if kind and not value_matches_kind(p.value, kind):
                out.append(StructuralViolation("KindMismatch", Path(el.id, p.name, occ), f"{p.name}: {kind}"))
        for i, link in enumerate(el.links):
            allowed = m.links.get(link.role)
            if not allowed or link.target_kind != "internal":
                continue
            for target in index.get(link.target, ()):
                if target.type_name not in allowed:
                    out.append(StructuralViolation("LinkTargetType", Path(el.id, link=i),
                                                   f"{link.role} -> {target.type_name}"))
    return out
