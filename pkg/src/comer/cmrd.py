"""Conditional Memory Relation Decoder.

One shared parameter set decodes at every hierarchy level.  Each step: a
2-layer LSTM over the fed-back token embedding, additive condition injection,
a residual attention chain over the belief/system/user memories, a 4-layer
ReLU MLP over the concatenated working memory (with the three supplementary
taps gradient-blocked), dropout, and a dynamic-vocabulary projection through
the embedding matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embeddings import CLS, SEP, EmbeddingError, EmbeddingTable, TokenUnit, key_of
from .encoder import EncodedMemory, lstm_cell
from .model import ModelConfig

# decoder LSTM state: ((h, c) per layer)
LstmState = tuple[tuple[Tensor, Tensor], tuple[Tensor, Tensor]]


def initial_lstm_state(q0: Tensor) -> LstmState:
    """Both layers start from q0 as the hidden state with zero cell state."""
    zeros = Tensor(np.zeros_like(q0.data))
    return ((q0, zeros), (q0, zeros))


def attention(h: Tensor, memory: EncodedMemory, params: dict[str, Tensor]) -> tuple[Tensor, np.ndarray]:
    """Weighted read of the memory rows: query projection, softmax over scores,
    output projection.  Returns the read vector and the weights (diagnostics)."""
    if memory.d_m != h.data.shape[0]:
        raise ad.ShapeError(f"attention width mismatch: {h.data.shape[0]} vs {memory.d_m}")
    a = ad.linear(params["attn.W1"], params["attn.b1"], h)
    c = ad.softmax(ad.matmul(memory.H, a))
    read = ad.matmul(ad.transpose(memory.H), c)
    out = ad.linear(params["attn.W2"], params["attn.b2"], read)
    return out, c.data.copy()


@dataclass
class StepResult:
    token_index: int
    h_s: Tensor
    state: LstmState
    logits: Tensor
    attention_weights: dict[str, np.ndarray]


def cmrd_step(
    x_key: str,
    q_prev: LstmState,
    cond: Tensor,
    memories: dict[str, EncodedMemory],
    table: EmbeddingTable,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> StepResult:
    """One decode step; ``memories`` maps role in {belief, sys, usr} to its H."""
    if x_key not in table:
        raise EmbeddingError(f"decoder input token {x_key!r} not in embedding table")
    e_x = Tensor(table.vector(x_key))
    (h0p, c0p), (h1p, c1p) = q_prev
    h_l0, c_l0 = lstm_cell(params["dec.l0.W"], params["dec.l0.b"], e_x, h0p, c0p)
    h_l1, c_l1 = lstm_cell(params["dec.l1.W"], params["dec.l1.b"], h_l0, h1p, c1p)
    q_next: LstmState = ((h_l0, c_l0), (h_l1, c_l1))

    h = ad.add(h_l1, cond)
    chain = [h]
    weights: dict[str, np.ndarray] = {}
    for role in cfg.attention_order:
        read, w = attention(chain[-1], memories[role], params)
        weights[role] = w
        chain.append(ad.add(chain[-1], read))
    # the residual chain stays differentiable; only the taps feeding the
    # concatenation are blocked (blocking the chain would sever all gradient
    # flow to the LSTM and the attention modules)
    taps = chain[:-1]
    if cfg.block_grad:
        taps = [ad.stop_gradient(t) for t in taps]
    r = ad.concat([*taps, chain[-1]])

    z = r
    for i in (1, 2, 3, 4):
        z = ad.relu(ad.linear(params[f"mlp.W{i}"], params[f"mlp.b{i}"], z))
    h_k = z

    if cfg.move_dropout:
        h_s = h_k
        h_o = ad.linear(params["out.Wk"], params["out.bk"], h_s)
        h_o = ad.dropout(h_o, cfg.dropout, mode, rng)
    else:
        h_s = ad.dropout(h_k, cfg.dropout, mode, rng)
        h_o = ad.linear(params["out.Wk"], params["out.bk"], h_s)
    logits = ad.matmul(Tensor(table.matrix()), h_o)
    # argmax with first-occurrence (lowest-index) tie break
    token_index = int(np.argmax(logits.data))
    return StepResult(token_index, h_s, q_next, logits, weights)


@dataclass
class DecodeResult:
    """Generated sequence with per-step hidden rows and diagnostics."""

    tokens: list[TokenUnit]
    hidden: list[Tensor]               # one h_s per generated token
    losses: list[Tensor] = field(default_factory=list)   # teacher forcing only
    attention_dumps: list[dict] = field(default_factory=list)
    steps: int = 0


def decode_sequence(
    cond: Tensor,
    memories: dict[str, EncodedMemory],
    table: EmbeddingTable,
    q0: Tensor,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    max_len: int,
    forced: list[str] | None = None,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    level: str = "",
) -> DecodeResult:
    """Greedy (or teacher-forced) sequence decode starting from [CLS].

    Free-running mode stops at [SEP] (excluded from the output) or after
    ``max_len`` tokens.  With ``forced`` gold keys the fed-back token is the
    gold one, exactly len(forced)+1 steps run (gold plus terminator), losses
    cover every step, and hidden rows cover the gold positions only.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    sep_index = table.index(key_of(SEP, "control"))
    state = initial_lstm_state(q0)
    x_key = key_of(CLS, "control")
    result = DecodeResult(tokens=[], hidden=[])

    n_steps = (len(forced) + 1) if forced is not None else max_len + 1
    for t in range(n_steps):
        step = cmrd_step(x_key, state, cond, memories, table, params, cfg, mode, rng)
        result.steps += 1
        result.attention_dumps.append({
            "level": level,
            "step": t,
            "token": table.key_at(step.token_index),
            "weights_belief": step.attention_weights["belief"].tolist(),
            "weights_sys": step.attention_weights["sys"].tolist(),
            "weights_usr": step.attention_weights["usr"].tolist(),
        })
        state = step.state
        if forced is not None:
            target = table.index(forced[t]) if t < len(forced) else sep_index
            result.losses.append(ad.cross_entropy(step.logits, target))
            if t < len(forced):
                result.tokens.append(table.token_at(target))
                result.hidden.append(step.h_s)
                x_key = forced[t]
        else:
            if step.token_index == sep_index or t == max_len:
                break
            result.tokens.append(table.token_at(step.token_index))
            result.hidden.append(step.h_s)
            x_key = table.key_at(step.token_index)
    return result
