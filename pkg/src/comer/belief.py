"""Belief-state data model: nested (domain, (slot, value)) maps, frequency-based
canonical ordering, and the flat token paradigm used for sequence generation:

    Domain1 - Slot1 , Value1 ; Slot2 , Value2 ; Domain2 - ...

Structural delimiters are reserved control tokens, never punctuation inside
values.  Values are token sequences and may contain the ">" operator token
(accepted and round-tripped; no semantics attached).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .embeddings import DOMAIN_MARK, SLOT_MARK, VALUE_MARK, TokenUnit

# domain -> slot -> value token list
BeliefState = dict[str, dict[str, list[str]]]

RESERVED = {DOMAIN_MARK, SLOT_MARK, VALUE_MARK}


class FlattenError(ValueError):
    pass


class ParseError(ValueError):
    pass


@dataclass
class FrequencyTables:
    """Training-set occurrence counts used for canonical ordering."""

    domain: dict[str, int] = field(default_factory=dict)
    slot: dict[tuple[str, str], int] = field(default_factory=dict)

    def domain_rank(self, d: str):
        # descending frequency, ties lexicographic
        return (-self.domain.get(d, 0), d)

    def slot_rank(self, d: str, s: str):
        return (-self.slot.get((d, s), 0), s)


def canonical_order(b: BeliefState, freq: FrequencyTables) -> BeliefState:
    """Domains by descending training frequency then name; slots likewise within
    their domain.  Idempotent; unknown domains/slots count as frequency 0."""
    out: BeliefState = {}
    for d in sorted(b, key=freq.domain_rank):
        out[d] = {s: list(b[d][s]) for s in sorted(b[d], key=lambda s: freq.slot_rank(d, s))}
    return out


def flatten(b: BeliefState) -> list[TokenUnit]:
    """Belief state -> flat token sequence (assumes canonical ordering)."""
    tokens: list[TokenUnit] = []
    for d, slots in b.items():
        tokens.append(TokenUnit(d, "domain"))
        tokens.append(TokenUnit(DOMAIN_MARK, "control"))
        for s, value in slots.items():
            tokens.append(TokenUnit(s, "slot"))
            tokens.append(TokenUnit(SLOT_MARK, "control"))
            for w in value:
                if w in RESERVED:
                    raise FlattenError(f"value token {w!r} collides with a reserved delimiter")
                tokens.append(TokenUnit(w, "word"))
            tokens.append(TokenUnit(VALUE_MARK, "control"))
    return tokens


def parse_flat(tokens: list[TokenUnit], strict: bool = False) -> BeliefState:
    """Inverse of ``flatten``.  Lenient mode (default) skips malformed triplets,
    mirroring evaluation post-processing; strict mode raises on any damage."""
    state: BeliefState = {}
    domain: str | None = None
    slot: str | None = None
    value: list[str] = []
    in_value = False

    def fail(msg: str):
        if strict:
            raise ParseError(msg)

    for tok in tokens:
        is_ctrl = tok.kind == "control" and tok.surface in RESERVED
        if tok.kind == "domain":
            if slot is not None or in_value:
                fail(f"domain {tok.surface!r} opens before {VALUE_MARK!r} closes the previous triplet")
            domain, slot, value, in_value = tok.surface, None, [], False
        elif is_ctrl and tok.surface == DOMAIN_MARK:
            if domain is None or slot is not None or in_value:
                fail(f"unexpected {DOMAIN_MARK!r}")
        elif tok.kind == "slot":
            if domain is None or in_value:
                fail(f"unexpected slot token {tok.surface!r}")
            slot, value, in_value = tok.surface, [], False
        elif is_ctrl and tok.surface == SLOT_MARK:
            if slot is None or in_value:
                fail(f"unexpected {SLOT_MARK!r}")
            else:
                in_value = True
        elif is_ctrl and tok.surface == VALUE_MARK:
            if domain is not None and slot is not None and in_value and value:
                state.setdefault(domain, {})[slot] = value
            else:
                fail(f"{VALUE_MARK!r} closes an incomplete triplet")
            slot, value, in_value = None, [], False
        else:  # value token (word or the ">" operator)
            if in_value:
                value.append(tok.surface)
            else:
                fail(f"value token {tok.surface!r} outside a value")
    if strict and (in_value or slot is not None):
        raise ParseError("dangling tokens at end of sequence")
    return state


def postprocess(triplets: list[tuple[str, str, str]]) -> list[tuple[str, str, str]]:
    """Drop triplets with any empty component; last occurrence wins per (domain, slot)."""
    kept: dict[tuple[str, str], str] = {}
    order: list[tuple[str, str]] = []
    for d, s, v in triplets:
        if not d or not s or not v:
            continue
        if (d, s) not in kept:
            order.append((d, s))
        kept[(d, s)] = v
    return [(d, s, kept[(d, s)]) for d, s in order]


def to_triplets(b: BeliefState) -> list[tuple[str, str, str]]:
    return [(d, s, " ".join(v)) for d, slots in b.items() for s, v in slots.items()]


def from_triplets(triplets: list[tuple[str, str, str]]) -> BeliefState:
    state: BeliefState = {}
    for d, s, v in triplets:
        state.setdefault(d, {})[s] = v.split()
    return state


def postprocess_state(b: BeliefState) -> BeliefState:
    return from_triplets(postprocess(to_triplets(b)))


def compute_frequencies(dialogues) -> FrequencyTables:
    """Count each domain/slot occurrence per turn label across the corpus."""
    freq = FrequencyTables()
    for dlg in dialogues:
        for turn in dlg.turns:
            for d, slots in turn.state.items():
                freq.domain[d] = freq.domain.get(d, 0) + 1
                for s in slots:
                    freq.slot[(d, s)] = freq.slot.get((d, s), 0) + 1
    return freq


# Combined-slot view: bijection (domain, slot) <-> "domain;slot".
def to_combined(b: BeliefState) -> dict[str, list[str]]:
    return {f"{d};{s}": list(v) for d, slots in b.items() for s, v in slots.items()}


def from_combined(c: dict[str, list[str]]) -> BeliefState:
    state: BeliefState = {}
    for key, v in c.items():
        d, _, s = key.partition(";")
        state.setdefault(d, {})[s] = list(v)
    return state


def state_to_json(b: BeliefState) -> dict[str, dict[str, str]]:
    """Belief-state JSON: {"domain": {"slot": "value string"}}."""
    return {d: {s: " ".join(v) for s, v in slots.items()} for d, slots in b.items()}


def state_from_json(obj: dict[str, dict[str, str]]) -> BeliefState:
    return {d: {s: str(v).split() for s, v in slots.items()} for d, slots in obj.items()}
