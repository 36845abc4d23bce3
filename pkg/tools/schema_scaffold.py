"""
tools/schema_scaffold.py
Compile the four-section driving output schema into a token scaffold

The scaffold splits every response position into an anchor (a token fixed by
the schema: keys, brackets, punctuation) or an editable value slot. Decoders
only ever predict editable positions; anchors are copied from the template.
"""

import json
import math
import string
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from tools.errors import (
    AnchorViolation, InteriorNull, MalformedNumber, MalformedValue,
    ParseError, SchemaShape, TextTooLong, UnknownToken, ValueOverflow,
)

SECTION_ORDER = ("critical_objects", "explanation", "future_meta_behavior", "trajectory")

DEFAULT_SCHEMA_PATH = Path(__file__).resolve().parent.parent / "schemas" / "wod_e2e.json"

MASK, NULL, BOS, EOS = "<mask>", "<null>", "<bos>", "<eos>"
SPECIAL_TOKENS = (MASK, NULL, BOS, EOS)

TEXT_CHARS = string.ascii_lowercase + string.ascii_uppercase + string.digits + " ,.'-"
BASE_CHARS = TEXT_CHARS + "+"

YES, NO = "yes", "no"

COORD_WIDTH = 7          # sign + 3 digits + '.' + 2 digits
COORD_LIMIT = 999.99


# ==================== VOCABULARY ====================

class TokenVocab:
    """
    Token inventory: specials, single characters, closed-class words and
    schema anchor tokens. Order is significant (ids are list indices).
    """

    def __init__(self, tokens: Sequence[str]):
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        for special in SPECIAL_TOKENS:
            if special not in tokens:
                raise ValueError(f"vocabulary lacks special token {special}")
        self.tokens: Tuple[str, ...] = tuple(tokens)
        self._index: Dict[str, int] = {tok: i for i, tok in enumerate(self.tokens)}

        self.mask_id = self._index[MASK]
        self.null_id = self._index[NULL]
        self.bos_id = self._index[BOS]
        self.eos_id = self._index[EOS]
        self.special_ids = frozenset(self._index[t] for t in SPECIAL_TOKENS)
        self.text_ids = np.array(sorted(self._index[c] for c in TEXT_CHARS if c in self._index), dtype=np.int64)

    @classmethod
    def build(cls, schema: Optional["OutputSchema"] = None) -> "TokenVocab":
        """Deterministic vocabulary covering the characters, words and anchors of a schema"""
        tokens: List[str] = list(SPECIAL_TOKENS)
        seen = set(tokens)

        def add(tok: str):
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)

        for ch in BASE_CHARS:
            add(ch)
        add(YES)
        add(NO)
        if schema is not None:
            for tok in schema.word_tokens():
                add(tok)
            for tok in schema.anchor_tokens():
                add(tok)
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise UnknownToken(f"token {token!r} is not in the vocabulary") from None

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode_chars(self, text: str) -> List[int]:
        """Character-level encoding"""
        return [self.id(ch) for ch in text]

    def encode_prompt(self, text: str) -> List[int]:
        """BOS followed by the prompt characters"""
        return [self.bos_id] + self.encode_chars(text)

    def decode(self, ids: Sequence[int], skip_null: bool = True) -> str:
        return "".join(self.tokens[i] for i in ids if not (skip_null and i == self.null_id))


# ==================== SCHEMA ====================

class ValueKind(Enum):
    BINARY = "binary"
    CATEGORICAL = "categorical"
    FREE_TEXT = "free_text"
    WAYPOINT_LIST = "waypoint_list"


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: ValueKind
    key_tokens: Tuple[str, ...]
    max_len: int = 0
    count: int = 0
    values: Tuple[Tuple[str, Tuple[str, ...]], ...] = ()

    @property
    def value_width(self) -> int:
        if self.kind is ValueKind.BINARY:
            return 1
        if self.kind is ValueKind.CATEGORICAL:
            return len(self.values[0][1]) if self.values else 0
        if self.kind is ValueKind.FREE_TEXT:
            return self.max_len
        return self.count * 2 * COORD_WIDTH

    def value_pieces(self) -> Dict[str, Tuple[str, ...]]:
        return dict(self.values)


@dataclass(frozen=True)
class SectionSpec:
    name: str
    fields: Tuple[FieldSpec, ...]
    head: Tuple[str, ...] = ()
    tail: Tuple[str, ...] = ()


@dataclass(frozen=True)
class OutputSchema:
    """Ordered four-section output schema"""
    sections: Tuple[SectionSpec, ...]
    name: str = "schema"

    @classmethod
    def from_dict(cls, data: Mapping) -> "OutputSchema":
        sections = []
        for sec in data["sections"]:
            fields = []
            for f in sec["fields"]:
                try:
                    kind = ValueKind(f["kind"])
                except ValueError:
                    raise SchemaShape(f"unknown value kind {f['kind']!r} for field {f['name']}") from None
                values = tuple((k, tuple(v)) for k, v in f.get("values", {}).items())
                fields.append(FieldSpec(
                    name=f["name"],
                    kind=kind,
                    key_tokens=tuple(f["key_tokens"]),
                    max_len=int(f.get("max_len", 0)),
                    count=int(f.get("count", 0)),
                    values=values,
                ))
            sections.append(SectionSpec(
                name=sec["name"],
                fields=tuple(fields),
                head=tuple(sec.get("head", ())),
                tail=tuple(sec.get("tail", ())),
            ))
        return cls(sections=tuple(sections), name=data.get("name", "schema"))

    @classmethod
    def load(cls, path=DEFAULT_SCHEMA_PATH) -> "OutputSchema":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def section(self, name: str) -> SectionSpec:
        for sec in self.sections:
            if sec.name == name:
                return sec
        raise KeyError(name)

    @property
    def key_names(self) -> Dict[str, Tuple[str, ...]]:
        return {sec.name: tuple(f.name for f in sec.fields) for sec in self.sections}

    def validate(self):
        """Raise SchemaShape unless this is the four-section family"""
        names = tuple(sec.name for sec in self.sections)
        if names != SECTION_ORDER:
            raise SchemaShape(f"section order must be {SECTION_ORDER}, got {names}")

        def expect(section: str, kind: ValueKind, n_fields: int):
            sec = self.section(section)
            if len(sec.fields) != n_fields or any(f.kind is not kind for f in sec.fields):
                raise SchemaShape(f"{section} needs {n_fields} {kind.value} field(s)")

        expect("critical_objects", ValueKind.BINARY, 12)
        expect("explanation", ValueKind.FREE_TEXT, 1)
        expect("future_meta_behavior", ValueKind.CATEGORICAL, 2)
        expect("trajectory", ValueKind.WAYPOINT_LIST, 1)

        if self.section("explanation").fields[0].max_len < 0:
            raise SchemaShape("free_text max_len must be >= 0")
        if self.section("trajectory").fields[0].count != 5:
            raise SchemaShape("trajectory must hold exactly 5 waypoints")
        for f in self.section("future_meta_behavior").fields:
            widths = {len(pieces) for _, pieces in f.values}
            if not f.values or len(widths) != 1 or 0 in widths:
                raise SchemaShape(f"categorical field {f.name} needs values of one equal, nonzero piece count")

    def word_tokens(self) -> List[str]:
        words: List[str] = []
        for sec in self.sections:
            for f in sec.fields:
                for _, pieces in f.values:
                    words.extend(p for p in pieces if p not in words)
        return words

    def anchor_tokens(self) -> List[str]:
        """Every anchor token the compiler may emit, in first-use order"""
        out: List[str] = []

        def add(tok):
            if tok not in out:
                out.append(tok)

        for sec in self.sections:
            for tok in sec.head:
                add(tok)
            for f in sec.fields:
                for tok in f.key_tokens:
                    add(tok)
                add(":")
                if f.kind is ValueKind.WAYPOINT_LIST:
                    for tok in ("[", "],", ",", "]]"):
                        add(tok)
                else:
                    add('"')
                add(",")
            for tok in sec.tail:
                add(tok)
        return out


# ==================== LAYOUT ====================

class SlotRole(Enum):
    BINARY = "binary"
    CATEGORICAL = "categorical"
    TEXT = "text"
    SIGN = "sign"
    DIGIT = "digit"
    POINT = "point"


@dataclass(frozen=True)
class ValueSlot:
    """One value of the record: a binary flag, a category, the text, or one coordinate"""
    section: str
    field: str
    kind: ValueKind
    positions: Tuple[int, ...]
    roles: Tuple[SlotRole, ...]
    categories: Tuple[Tuple[str, Tuple[int, ...]], ...] = ()


@dataclass(frozen=True)
class ScaffoldLayout:
    """
    Compiled scaffold: template with anchors filled and MASK at every
    editable position, plus the per-section and per-slot bookkeeping
    """
    schema: OutputSchema
    vocab: TokenVocab
    template: Tuple[int, ...]
    anchors: FrozenSet[int]
    editable: Tuple[int, ...]
    section_tokens: Dict[str, Tuple[int, int]]
    section_editable: Dict[str, Tuple[int, ...]]
    slots: Tuple[ValueSlot, ...]
    slot_of: Tuple[int, ...]
    _static_allowed: Tuple[Optional[np.ndarray], ...] = field(repr=False, compare=False, default=())

    @property
    def total_len(self) -> int:
        return len(self.template)

    @property
    def section_spans(self) -> Dict[str, Tuple[int, ...]]:
        return self.section_editable

    def is_anchor(self, pos: int) -> bool:
        return self.slot_of[pos] < 0

    def section_of(self, pos: int) -> str:
        for name, (start, end) in self.section_tokens.items():
            if start <= pos < end:
                return name
        raise IndexError(pos)

    def section_counts(self) -> Dict[str, Tuple[int, int]]:
        """Per-section (value, scaffold) token counts"""
        counts = {}
        for name, (start, end) in self.section_tokens.items():
            n_values = len(self.section_editable[name])
            counts[name] = (n_values, (end - start) - n_values)
        return counts

    # ---------- constrained choice ----------

    def static_allowed(self, pos: int) -> np.ndarray:
        """Token ids a value slot position may ever hold"""
        allowed = self._static_allowed[pos]
        if allowed is None:
            return np.array([self.template[pos]], dtype=np.int64)
        return allowed

    def allowed(self, pos: int, tokens: Sequence[int], causal: bool = True) -> np.ndarray:
        """
        Token ids position `pos` may take given the current sequence

        `tokens` holds MASK where undecided. With causal=True only positions
        before `pos` are consulted, which is what left-to-right prediction
        and verification see; causal=False also honours later finalized
        positions (parallel finalization).
        """
        slot_idx = self.slot_of[pos]
        if slot_idx < 0:
            return np.array([self.template[pos]], dtype=np.int64)
        slot = self.slots[slot_idx]
        vocab = self.vocab

        def visible(p: int) -> bool:
            return tokens[p] != vocab.mask_id and (not causal or p < pos)

        if slot.kind is ValueKind.FREE_TEXT:
            for p in slot.positions:
                if p < pos and visible(p) and tokens[p] == vocab.null_id:
                    return np.array([vocab.null_id], dtype=np.int64)
            if not causal:
                for p in slot.positions:
                    if p > pos and visible(p) and tokens[p] != vocab.null_id:
                        return vocab.text_ids
            return self.static_allowed(pos)

        if slot.kind is ValueKind.CATEGORICAL:
            k = slot.positions.index(pos)
            candidates = [
                ids for _, ids in slot.categories
                if all(tokens[p] == ids[j] for j, p in enumerate(slot.positions) if p != pos and visible(p))
            ]
            return np.array(sorted({ids[k] for ids in candidates}), dtype=np.int64)

        return self.static_allowed(pos)


def _static_sets(vocab: TokenVocab) -> Dict[SlotRole, np.ndarray]:
    def ids(tokens):
        return np.array(sorted(vocab.id(t) for t in tokens), dtype=np.int64)

    return {
        SlotRole.BINARY: ids([YES, NO]),
        SlotRole.TEXT: np.array(sorted(list(vocab.text_ids) + [vocab.null_id]), dtype=np.int64),
        SlotRole.SIGN: ids("+-"),
        SlotRole.DIGIT: ids(string.digits),
        SlotRole.POINT: ids("."),
    }


def compile_schema(schema: OutputSchema, vocab: TokenVocab) -> ScaffoldLayout:
    """
    Build the token scaffold for a schema

    Args:
        schema: four-section output schema
        vocab: vocabulary that must contain every anchor token

    Returns:
        ScaffoldLayout with anchors filled and MASK at editable positions

    Raises:
        SchemaShape: wrong section order or field counts
        UnknownToken: an anchor token is missing from vocab
    """
    schema.validate()
    static = _static_sets(vocab)

    template: List[int] = []
    slot_of: List[int] = []
    allowed: List[Optional[np.ndarray]] = []
    slots: List[ValueSlot] = []
    section_tokens: Dict[str, Tuple[int, int]] = {}
    section_editable: Dict[str, Tuple[int, ...]] = {}

    def anchor(tok: str):
        template.append(vocab.id(tok))
        slot_of.append(-1)
        allowed.append(None)

    def value_slot(section: str, f: FieldSpec, roles: Sequence[SlotRole], categories=()):
        start = len(template)
        slot_idx = len(slots)
        for k, role in enumerate(roles):
            template.append(vocab.mask_id)
            slot_of.append(slot_idx)
            if role is SlotRole.CATEGORICAL:
                allowed.append(np.array(sorted({ids[k] for _, ids in categories}), dtype=np.int64))
            else:
                allowed.append(static[role])
        slots.append(ValueSlot(
            section=section,
            field=f.name,
            kind=f.kind,
            positions=tuple(range(start, start + len(roles))),
            roles=tuple(roles),
            categories=tuple(categories),
        ))

    coord_roles = (SlotRole.SIGN, SlotRole.DIGIT, SlotRole.DIGIT, SlotRole.DIGIT,
                   SlotRole.POINT, SlotRole.DIGIT, SlotRole.DIGIT)

    for sec in schema.sections:
        start = len(template)
        for tok in sec.head:
            anchor(tok)
        for fi, f in enumerate(sec.fields):
            for tok in f.key_tokens:
                anchor(tok)
            anchor(":")
            if f.kind is ValueKind.WAYPOINT_LIST:
                for w in range(f.count):
                    for tok in (("[", "[") if w == 0 else ("],", "[")):
                        anchor(tok)
                    value_slot(sec.name, f, coord_roles)
                    anchor(",")
                    value_slot(sec.name, f, coord_roles)
                anchor("]]")
            else:
                anchor('"')
                if f.kind is ValueKind.BINARY:
                    value_slot(sec.name, f, (SlotRole.BINARY,))
                elif f.kind is ValueKind.CATEGORICAL:
                    categories = tuple((name, tuple(vocab.id(p) for p in pieces)) for name, pieces in f.values)
                    value_slot(sec.name, f, (SlotRole.CATEGORICAL,) * f.value_width, categories)
                elif f.max_len > 0:
                    value_slot(sec.name, f, (SlotRole.TEXT,) * f.max_len)
                anchor('"')
            if fi < len(sec.fields) - 1:
                anchor(",")
        for tok in sec.tail:
            anchor(tok)
        section_tokens[sec.name] = (start, len(template))
        section_editable[sec.name] = tuple(p for p in range(start, len(template)) if slot_of[p] >= 0)

    editable = tuple(p for p in range(len(template)) if slot_of[p] >= 0)
    anchors = frozenset(p for p in range(len(template)) if slot_of[p] < 0)

    return ScaffoldLayout(
        schema=schema,
        vocab=vocab,
        template=tuple(template),
        anchors=anchors,
        editable=editable,
        section_tokens=section_tokens,
        section_editable=section_editable,
        slots=tuple(slots),
        slot_of=tuple(slot_of),
        _static_allowed=tuple(allowed),
    )


def load_reference_layout(path=DEFAULT_SCHEMA_PATH) -> ScaffoldLayout:
    """Reference schema compiled against its own vocabulary"""
    schema = OutputSchema.load(path)
    return compile_schema(schema, TokenVocab.build(schema))


# ==================== BLOCK PLAN ====================

@dataclass(frozen=True)
class Block:
    section: str
    positions: Tuple[int, ...]     # editable positions, ascending
    token_start: int
    token_end: int                 # exclusive

    @property
    def token_span(self) -> range:
        return range(self.token_start, self.token_end)


@dataclass(frozen=True)
class BlockPlan:
    block_size: int
    blocks: Tuple[Block, ...]

    @property
    def total_blocks(self) -> int:
        return len(self.blocks)

    def blocks_per_section(self) -> Dict[str, int]:
        counts = {name: 0 for name in SECTION_ORDER}
        for b in self.blocks:
            counts[b.section] += 1
        return counts

    def block_of(self, pos: int) -> int:
        for i, b in enumerate(self.blocks):
            if b.token_start <= pos < b.token_end:
                return i
        raise IndexError(pos)


def plan_blocks(layout: ScaffoldLayout, d: int) -> BlockPlan:
    """
    Split each section's editable positions into ceil(|E_s| / d) blocks

    Blocks never cross sections. Each block also owns a contiguous token
    span so the anchors between values belong to exactly one block.
    """
    if d < 1:
        raise ValueError(f"block size must be >= 1, got {d}")

    groups: List[Tuple[str, Tuple[int, ...], int]] = []
    for name in SECTION_ORDER:
        positions = layout.section_editable[name]
        _, section_end = layout.section_tokens[name]
        n_blocks = math.ceil(len(positions) / d)
        for k in range(n_blocks):
            chunk = positions[k * d:(k + 1) * d]
            end = section_end if k == n_blocks - 1 else chunk[-1] + 1
            groups.append((name, chunk, end))

    blocks: List[Block] = []
    start = 0
    for i, (name, chunk, end) in enumerate(groups):
        if i == len(groups) - 1:
            end = layout.total_len
        blocks.append(Block(section=name, positions=chunk, token_start=start, token_end=end))
        start = end
    return BlockPlan(block_size=d, blocks=tuple(blocks))


def fixed_size_blocks(total_len: int, d: int) -> List[range]:
    """Section-unaware spans of d tokens over the whole response"""
    if d < 1:
        raise ValueError(f"block size must be >= 1, got {d}")
    return [range(s, min(s + d, total_len)) for s in range(0, total_len, d)]


# ==================== RECORDS ====================

@dataclass
class DrivingRecord:
    """Structured driving output plus the prompt it answers"""
    critical_objects: Dict[str, bool]
    longitudinal: str
    lateral: str
    explanation: str
    waypoints: List[Tuple[float, float]]
    prompt: str = ""

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "critical_objects": dict(self.critical_objects),
            "future_meta_behavior": {"longitudinal": self.longitudinal, "lateral": self.lateral},
            "explanation": self.explanation,
            "trajectory": [[x, y] for x, y in self.waypoints],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DrivingRecord":
        fmb = data["future_meta_behavior"]
        return cls(
            critical_objects={k: bool(v) for k, v in data["critical_objects"].items()},
            longitudinal=fmb["longitudinal"],
            lateral=fmb["lateral"],
            explanation=data["explanation"],
            waypoints=[(float(x), float(y)) for x, y in data["trajectory"]],
            prompt=data.get("prompt", ""),
        )

    def same_output(self, other: "DrivingRecord") -> bool:
        """Equality of the structured output, ignoring the prompt"""
        return (
            self.critical_objects == other.critical_objects
            and self.longitudinal == other.longitudinal
            and self.lateral == other.lateral
            and self.explanation == other.explanation
            and all(abs(a - b) < 1e-9 for p, q in zip(self.waypoints, other.waypoints) for a, b in zip(p, q))
            and len(self.waypoints) == len(other.waypoints)
        )


def format_coordinate(value: float) -> str:
    """Fixed-width numeral: sign, 3 integer digits, '.', 2 fraction digits"""
    cents = int(round(value * 100))
    if abs(cents) > int(round(COORD_LIMIT * 100)):
        raise ValueOverflow(f"|{value}| exceeds {COORD_LIMIT}")
    sign = "-" if cents < 0 else "+"
    cents = abs(cents)
    return f"{sign}{cents // 100:03d}.{cents % 100:02d}"


def parse_coordinate(chars: str, position: Optional[int] = None) -> float:
    if (len(chars) != COORD_WIDTH or chars[0] not in "+-" or chars[4] != "."
            or not (chars[1:4] + chars[5:7]).isdigit()):
        raise MalformedNumber(f"bad numeral {chars!r}", position)
    value = int(chars[1:4]) + int(chars[5:7]) / 100.0
    if chars[0] == "-":
        value = -value
    return value + 0.0      # -0.0 -> 0.0


def serialize_record(record: DrivingRecord, layout: ScaffoldLayout) -> List[int]:
    """
    Render a record into a full response token sequence of length L

    Raises:
        ValueOverflow: a coordinate does not fit the fixed-width numeral
        TextTooLong: the explanation exceeds its section capacity
        UnknownToken: a value token is missing from the vocabulary
    """
    vocab = layout.vocab
    tokens = list(layout.template)
    waypoint_slots = [s for s in layout.slots if s.kind is ValueKind.WAYPOINT_LIST]
    coords = [c for wp in record.waypoints for c in wp]
    if len(coords) != len(waypoint_slots):
        raise ValueError(f"record has {len(record.waypoints)} waypoints, schema expects {len(waypoint_slots) // 2}")
    coord_iter = iter(coords)

    for slot in layout.slots:
        if slot.kind is ValueKind.BINARY:
            values = [vocab.id(YES if record.critical_objects[slot.field] else NO)]
        elif slot.kind is ValueKind.CATEGORICAL:
            chosen = record.longitudinal if slot.field == "longitudinal" else record.lateral
            lookup = dict(slot.categories)
            if chosen not in lookup:
                raise MalformedValue(f"{chosen!r} is not a {slot.field} value")
            values = list(lookup[chosen])
        elif slot.kind is ValueKind.FREE_TEXT:
            text = record.explanation
            if len(text) > len(slot.positions):
                raise TextTooLong(f"explanation has {len(text)} chars, capacity {len(slot.positions)}")
            bad = [c for c in text if c not in TEXT_CHARS]
            if bad:
                raise UnknownToken(f"explanation characters {sorted(set(bad))!r} are not text tokens")
            values = vocab.encode_chars(text) + [vocab.null_id] * (len(slot.positions) - len(text))
        else:
            values = vocab.encode_chars(format_coordinate(next(coord_iter)))
        for pos, tok in zip(slot.positions, values):
            tokens[pos] = tok
    if layout.schema.section("explanation").fields[0].max_len == 0 and record.explanation:
        raise TextTooLong("explanation section has zero capacity")
    return tokens


def parse_output(tokens: Sequence[int], layout: ScaffoldLayout) -> DrivingRecord:
    """
    Inverse of serialize_record up to NULL padding

    Raises:
        AnchorViolation, MalformedNumber, MalformedValue, InteriorNull
    """
    vocab = layout.vocab
    if len(tokens) != layout.total_len:
        raise ParseError(f"expected {layout.total_len} tokens, got {len(tokens)}")
    for pos in sorted(layout.anchors):
        if tokens[pos] != layout.template[pos]:
            raise AnchorViolation(
                f"expected {vocab.token(layout.template[pos])!r}, got {vocab.token(tokens[pos])!r}", pos)

    critical: Dict[str, bool] = {}
    behavior: Dict[str, str] = {}
    explanation = ""
    coords: List[float] = []
    text_set = set(int(i) for i in vocab.text_ids)

    for slot in layout.slots:
        ids = [tokens[p] for p in slot.positions]
        if slot.kind is ValueKind.BINARY:
            tok = vocab.token(ids[0])
            if tok not in (YES, NO):
                raise MalformedValue(f"{slot.field} must be yes/no, got {tok!r}", slot.positions[0])
            critical[slot.field] = tok == YES
        elif slot.kind is ValueKind.CATEGORICAL:
            match = [name for name, pieces in slot.categories if list(pieces) == ids]
            if not match:
                raise MalformedValue(f"{slot.field} pieces {vocab.decode(ids)!r} name no value", slot.positions[0])
            behavior[slot.field] = match[0]
        elif slot.kind is ValueKind.FREE_TEXT:
            chars = []
            seen_null = False
            for pos, tok in zip(slot.positions, ids):
                if tok == vocab.null_id:
                    seen_null = True
                elif seen_null:
                    raise InteriorNull("text after NULL padding", pos)
                elif tok not in text_set:
                    raise MalformedValue(f"{vocab.token(tok)!r} is not a text character", pos)
                else:
                    chars.append(vocab.token(tok))
            explanation = "".join(chars)
        else:
            if any(t in vocab.special_ids for t in ids):
                raise MalformedNumber("special token inside numeral", slot.positions[0])
            coords.append(parse_coordinate("".join(vocab.token(t) for t in ids), slot.positions[0]))

    waypoints = [(coords[i], coords[i + 1]) for i in range(0, len(coords), 2)]
    return DrivingRecord(
        critical_objects=critical,
        longitudinal=behavior.get("longitudinal", ""),
        lateral=behavior.get("lateral", ""),
        explanation=explanation,
        waypoints=waypoints,
    )


def render_text(tokens: Sequence[int], layout: ScaffoldLayout) -> str:
    """Human-readable JSON-like rendering (NULL padding dropped)"""
    return layout.vocab.decode(tokens)
