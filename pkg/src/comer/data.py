"""Corpus ingestion (WoZ2.0, MultiWoZ, and a canonical JSON mirror), corpus
statistics, and a deterministic synthetic dialogue generator for desk-scale
training runs.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .belief import BeliefState, state_from_json, state_to_json

_TOKEN_RE = re.compile(r"[a-z0-9][a-z0-9:'.]*|\S")


class DataError(Exception):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and punctuation; times like 20:45 stay whole."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Turn:
    system: list[str]
    user: list[str]
    state: BeliefState


@dataclass
class Dialogue:
    id: str
    turns: list[Turn]


@dataclass
class OntologyStats:
    t: float                 # avg turns per dialogue
    s: float                 # avg user tokens per turn
    n: int                   # combined (domain;slot) count
    n_nested: int            # nested slot count
    m: int                   # distinct value count
    n_dialogues: int = 0
    n_turns: int = 0


def load_corpus(path: str | Path, format: str) -> list[Dialogue]:
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise DataError(f"corpus file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"malformed JSON in {path}: {e}") from None
    loaders = {"woz": _load_woz, "multiwoz": _load_multiwoz, "canonical": _load_canonical}
    if format not in loaders:
        raise DataError(f"unknown corpus format {format!r}")
    dialogues = loaders[format](raw)
    _check_accumulation(dialogues)
    return dialogues


def _clean_state(state: BeliefState) -> BeliefState:
    return {
        d: {s: v for s, v in slots.items() if d and s and v}
        for d, slots in state.items()
        if d and any(s and v for s, v in slots.items())
    }


def _load_canonical(raw) -> list[Dialogue]:
    try:
        out = []
        for dlg in raw["dialogues"]:
            turns = [
                Turn(
                    system=tokenize(t.get("system", "")),
                    user=tokenize(t.get("user", "")),
                    state=_clean_state(state_from_json(t.get("state", {}))),
                )
                for t in dlg["turns"]
            ]
            out.append(Dialogue(id=str(dlg["id"]), turns=turns))
        return out
    except (KeyError, TypeError, AttributeError) as e:
        raise DataError(f"canonical corpus schema violation: {e!r}") from None


def _load_woz(raw) -> list[Dialogue]:
    """WoZ2.0 layout; the rarely-annotated name slot is dropped and the single
    restaurant domain is made explicit."""
    out = []
    try:
        for dlg in raw:
            turns = []
            for turn in dlg["dialogue"]:
                slots: dict[str, list[str]] = {}
                for item in turn.get("belief_state", []):
                    if item.get("act") != "inform":
                        continue
                    for slot, value in item.get("slots", []):
                        slot = slot.replace("_", " ").strip().lower()
                        value = str(value).strip().lower()
                        if slot == "name" or not slot or not value:
                            continue
                        slots[slot] = tokenize(value)
                turns.append(Turn(
                    system=tokenize(turn.get("system_transcript", "")),
                    user=tokenize(turn.get("transcript", "")),
                    state=_clean_state({"restaurant": slots} if slots else {}),
                ))
            out.append(Dialogue(id=str(dlg.get("dialogue_idx", len(out))), turns=turns))
    except (KeyError, TypeError, AttributeError) as e:
        raise DataError(f"woz corpus schema violation: {e!r}") from None
    return out


def _multiwoz_state(metadata: dict) -> BeliefState:
    state: BeliefState = {}
    for domain, groups in metadata.items():
        slots: dict[str, list[str]] = {}
        for slot, value in groups.get("semi", {}).items():
            value = str(value).strip().lower()
            if value and value != "not mentioned":
                slots[slot.strip().lower()] = tokenize(value)
        for slot, value in groups.get("book", {}).items():
            if slot == "booked":
                continue
            value = str(value).strip().lower()
            if value and value != "not mentioned":
                slots[f"book {slot.strip().lower()}"] = tokenize(value)
        if slots:
            state[domain.strip().lower()] = slots
    return _clean_state(state)


def _load_multiwoz(raw) -> list[Dialogue]:
    """MultiWoZ data.json layout: alternating user/system log entries; the
    accumulated state lives in the system turn's metadata."""
    out = []
    try:
        for dlg_id, dlg in raw.items():
            log = dlg["log"]
            turns = []
            prev_system = ""
            for i in range(0, len(log) - 1, 2):
                user_text = log[i]["text"]
                system_entry = log[i + 1]
                turns.append(Turn(
                    system=tokenize(prev_system),
                    user=tokenize(user_text),
                    state=_multiwoz_state(system_entry.get("metadata", {})),
                ))
                prev_system = system_entry["text"]
            out.append(Dialogue(id=str(dlg_id), turns=turns))
    except (KeyError, TypeError, AttributeError, IndexError) as e:
        raise DataError(f"multiwoz corpus schema violation: {e!r}") from None
    return out


def _check_accumulation(dialogues: list[Dialogue]) -> list[str]:
    """Report (not raise) turns whose state drops earlier (domain, slot) pairs;
    real data contains annotation noise."""
    violations = []
    for dlg in dialogues:
        prev: set[tuple[str, str]] = set()
        for t, turn in enumerate(dlg.turns):
            pairs = {(d, s) for d, slots in turn.state.items() for s in slots}
            if not prev <= pairs:
                violations.append(f"{dlg.id}:{t}")
            prev = pairs
    return violations


def corpus_stats(dialogues: list[Dialogue]) -> OntologyStats:
    if not dialogues:
        raise DataError("cannot compute statistics of an empty corpus")
    n_turns = sum(len(d.turns) for d in dialogues)
    if n_turns == 0:
        raise DataError("corpus has no turns")
    pairs: set[tuple[str, str]] = set()
    values: set[str] = set()
    user_tokens = 0
    for dlg in dialogues:
        for turn in dlg.turns:
            user_tokens += len(turn.user)
            for d, slots in turn.state.items():
                for s, v in slots.items():
                    pairs.add((d, s))
                    values.add(" ".join(v))
    return OntologyStats(
        t=n_turns / len(dialogues),
        s=user_tokens / n_turns,
        n=len(pairs),
        n_nested=len({s for _, s in pairs}),
        m=len(values),
        n_dialogues=len(dialogues),
        n_turns=n_turns,
    )


_DOMAIN_POOL = ["restaurant", "hotel", "train", "taxi", "attraction", "hospital", "police"]
# single-word slots first: a multi-word slot's mean-composed embedding scores
# the average of its words' logits, so it can never outrank its best word in a
# greedy decode; small synthetic runs should not depend on such slots
_SLOT_POOL = ["food", "area", "parking", "stars", "day", "destination",
              "departure", "internet", "type", "price range", "leave at", "arrive by"]
_VALUE_POOL = ["cheap", "expensive", "moderate", "north", "south", "east", "west",
               "centre", "yes", "no", "monday", "tuesday", "wednesday", "chinese",
               "seafood", "italian", "indian", "british", "cambridge", "london",
               "norwich", "three", "four", "five"]


@dataclass
class SyntheticSpec:
    n_domains: int = 2
    n_slots: int = 3
    n_values: int = 6
    min_turns: int = 2
    max_turns: int = 3


def gen_synthetic(spec: SyntheticSpec, n_dialogues: int, seed: int) -> list[Dialogue]:
    """Deterministic templated corpus; every value appears verbatim in a user
    utterance and gold states accumulate across turns."""
    if min(spec.n_domains, spec.n_slots, spec.n_values, n_dialogues) < 1:
        raise ValueError("all synthetic counts must be >= 1")
    rng = np.random.default_rng(seed)
    domains = _DOMAIN_POOL[: spec.n_domains]
    slot_names = {
        d: [_SLOT_POOL[(i * spec.n_slots + j) % len(_SLOT_POOL)] for j in range(spec.n_slots)]
        for i, d in enumerate(domains)
    }
    value_names = {
        (d, s): [_VALUE_POOL[(k + j * spec.n_values + i * spec.n_slots * spec.n_values)
                             % len(_VALUE_POOL)]
                 for k in range(spec.n_values)]
        for i, d in enumerate(domains)
        for j, s in enumerate(slot_names[d])
    }

    dialogues = []
    for di in range(n_dialogues):
        n_turns = int(rng.integers(spec.min_turns, spec.max_turns + 1))
        state: BeliefState = {}
        turns = []
        prev_value = ""
        for _ in range(n_turns):
            d = domains[int(rng.integers(len(domains)))]
            s = slot_names[d][int(rng.integers(spec.n_slots))]
            v = value_names[(d, s)][int(rng.integers(spec.n_values))]
            state.setdefault(d, {})[s] = v.split()
            user = f"i want {v} {s} for the {d}"
            system = f"ok noted {prev_value}" if prev_value else ""
            turns.append(Turn(
                system=tokenize(system),
                user=tokenize(user),
                state={dd: {ss: list(vv) for ss, vv in slots.items()}
                       for dd, slots in state.items()},
            ))
            prev_value = v
        dialogues.append(Dialogue(id=f"syn-{di:04d}", turns=turns))
    return dialogues


def corpus_vocabulary(dialogues: list[Dialogue]) -> tuple[list[str], list[tuple[str, str]]]:
    """All surface words plus the (surface, kind) units needed to embed a corpus."""
    words: set[str] = set()
    units: set[tuple[str, str]] = set()
    for dlg in dialogues:
        for turn in dlg.turns:
            words.update(turn.user)
            words.update(turn.system)
            for d, slots in turn.state.items():
                units.add((d, "domain"))
                words.update(d.split())
                for s, v in slots.items():
                    units.add((s, "slot"))
                    words.update(s.split())
                    words.update(v)
    return sorted(words), sorted(units)


def save_canonical(dialogues: list[Dialogue], path: str | Path) -> None:
    payload = {
        "dialogues": [
            {
                "id": d.id,
                "turns": [
                    {"system": " ".join(t.system), "user": " ".join(t.user),
                     "state": state_to_json(t.state)}
                    for t in d.turns
                ],
            }
            for d in dialogues
        ]
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)
