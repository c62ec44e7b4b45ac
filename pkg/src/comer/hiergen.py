"""Three-level hierarchical generation controller.

Level 1 decodes the domain sequence with a zero condition; level 2 decodes
each domain's slot sequence conditioned on that domain's hidden row; level 3
decodes each slot's value tokens conditioned on that slot's hidden row.  The
same decoder parameters serve every level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .belief import BeliefState, canonical_order, flatten, postprocess_state
from .cmrd import DecodeResult, decode_sequence
from .embeddings import EmbeddingTable, TokenUnit, key_of
from .encoder import EncodedMemory, encode, init_decoder_state
from .model import ComerModel


@dataclass
class TurnInput:
    user: list[str]
    system: list[str] = field(default_factory=list)
    prev_state: BeliefState = field(default_factory=dict)


@dataclass
class TurnPrediction:
    state: BeliefState
    domain_tokens: list[TokenUnit] = field(default_factory=list)
    slot_tokens: dict[str, list[TokenUnit]] = field(default_factory=dict)
    attention_dumps: list[dict] = field(default_factory=list)
    decode_calls: int = 0


@dataclass
class Instrumentation:
    """Hooks for the complexity and wiring assertions."""

    decode_calls: int = 0
    conditions: list[tuple[str, np.ndarray]] = field(default_factory=list)

    def record(self, level: str, cond: Tensor) -> None:
        self.decode_calls += 1
        self.conditions.append((level, cond.data.copy()))


def _resolve_belief_tokens(tokens: list[TokenUnit], table: EmbeddingTable) -> list[TokenUnit]:
    """Predicted states can carry surfaces under the wrong kind (the decoder is
    free to emit any token at any level).  Re-key against the table, preferring
    the intended kind; drop what stays unresolvable rather than crash the feed."""
    out = []
    for tok in tokens:
        if tok.key in table:
            out.append(tok)
            continue
        for kind in ("word", "domain", "slot", "control"):
            alt = TokenUnit(tok.surface, kind)
            if alt.key in table:
                out.append(alt)
                break
    return out


def encode_turn(inp: TurnInput, model: ComerModel, table: EmbeddingTable) -> dict[str, EncodedMemory]:
    """Encode previous belief, system transcript, and user utterance into the
    three memories keyed by attention role."""
    belief_tokens = _resolve_belief_tokens(
        flatten(canonical_order(inp.prev_state, model.freq)), table)
    sys_tokens = [TokenUnit(w, "word") for w in inp.system]
    usr_tokens = [TokenUnit(w, "word") for w in inp.user]
    d_m = model.cfg.d_m
    return {
        "belief": encode(belief_tokens, table, model.params, d_m, role="belief"),
        "sys": encode(sys_tokens, table, model.params, d_m, role="system"),
        "usr": encode(usr_tokens, table, model.params, d_m, role="user"),
    }


def predict_turn(
    inp: TurnInput,
    model: ComerModel,
    table: EmbeddingTable,
    instrument: Instrumentation | None = None,
) -> TurnPrediction:
    """Full eval-mode hierarchical decode of one turn."""
    cfg = model.cfg
    memories = encode_turn(inp, model, table)
    q0 = init_decoder_state(memories["belief"], memories["sys"], memories["usr"])
    zero_cond = Tensor(np.zeros(cfg.d_m))

    def run(cond: Tensor, max_len: int, level: str) -> DecodeResult:
        if instrument is not None:
            instrument.record(level, cond)
        return decode_sequence(cond, memories, table, q0, model.params, cfg,
                               max_len, mode="eval", level=level)

    pred = TurnPrediction(state={})
    dumps = pred.attention_dumps

    domains = run(zero_cond, cfg.max_len_domain, "domain")
    dumps.extend(domains.attention_dumps)
    pred.domain_tokens = domains.tokens
    pred.decode_calls = 1

    for i, d_tok in enumerate(domains.tokens):
        slots = run(domains.hidden[i], cfg.max_len_slot, "slot")
        dumps.extend(slots.attention_dumps)
        pred.slot_tokens[d_tok.surface] = slots.tokens
        pred.decode_calls += 1
        for j, s_tok in enumerate(slots.tokens):
            values = run(slots.hidden[j], cfg.max_len_value, "value")
            dumps.extend(values.attention_dumps)
            pred.decode_calls += 1
            value_words = [t.surface for t in values.tokens]
            if value_words:
                pred.state.setdefault(d_tok.surface, {})[s_tok.surface] = value_words

    pred.state = canonical_order(postprocess_state(pred.state), model.freq)
    return pred


def track_dialogue(
    turns: list[TurnInput],
    model: ComerModel,
    table: EmbeddingTable,
    state_feed: str = "predicted",
    instrument: Instrumentation | None = None,
) -> list[TurnPrediction]:
    """Predict every turn; ``predicted`` feed chains each prediction into the
    next turn's previous-state input, ``gold`` keeps the provided ones."""
    if state_feed not in ("gold", "predicted"):
        raise ValueError(f"unknown state_feed {state_feed!r}")
    preds: list[TurnPrediction] = []
    prev: BeliefState = {}
    for turn in turns:
        if state_feed == "predicted":
            turn = TurnInput(user=turn.user, system=turn.system, prev_state=prev)
        pred = predict_turn(turn, model, table, instrument)
        preds.append(pred)
        prev = pred.state
    return preds


def gold_token_keys(state: BeliefState) -> tuple[list[str], list[list[str]], list[list[list[str]]]]:
    """Teacher-forcing targets per level for a canonically ordered gold state."""
    domain_keys = [key_of(d, "domain") for d in state]
    slot_keys = [[key_of(s, "slot") for s in slots] for slots in state.values()]
    value_keys = [
        [[key_of(w, "word") for w in v] for v in slots.values()]
        for slots in state.values()
    ]
    return domain_keys, slot_keys, value_keys
