"""Shared-parameter 2-layer BiLSTM encoders for the belief, system, and user
sequences, plus the decoder initial-state construction.

One parameter set serves all three roles.  Inputs are wrapped with [CLS]/[SEP]
uniformly, hidden state starts at zero, and each output row is the
concatenation of the last layer's forward and backward hidden states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embeddings import CLS, SEP, EmbeddingError, EmbeddingTable, TokenUnit


def lstm_cell(W: Tensor, b: Tensor, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step.  W is (4H, d_in+H); gate order i, f, g, o; no peepholes.

    Implemented as a single graph node with an analytic backward (the cell
    runs thousands of times per turn, so per-node overhead dominates); the
    backward is finite-difference checked in the tests like every other op.
    """
    hidden = h.data.shape[0]
    d_in = x.data.shape[0]
    if W.data.shape != (4 * hidden, d_in + hidden):
        raise ad.ShapeError(f"lstm_cell: W is {W.data.shape}, expected {(4 * hidden, d_in + hidden)}")
    xh = np.concatenate([x.data, h.data])
    z = W.data @ xh + b.data
    i = 1.0 / (1.0 + np.exp(-z[:hidden]))
    f = 1.0 / (1.0 + np.exp(-z[hidden:2 * hidden]))
    g = np.tanh(z[2 * hidden:3 * hidden])
    o = 1.0 / (1.0 + np.exp(-z[3 * hidden:]))
    c_new = f * c.data + i * g
    tc = np.tanh(c_new)
    out = np.concatenate([o * tc, c_new])

    def backward(grad):
        gh = grad[:hidden]
        dc = grad[hidden:] + gh * o * (1.0 - tc * tc)
        do = gh * tc
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c.data * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        dxh = W.data.T @ dz
        return np.outer(dz, xh), dz, dxh[:d_in], dxh[d_in:], dc * f

    hc = ad._result(out, (W, b, x, h, c), backward)
    return ad.narrow(hc, 0, 0, hidden), ad.narrow(hc, 0, hidden, hidden)


def _run_direction(params, prefix: str, xs: list[Tensor], hidden: int, reverse: bool) -> list[Tensor]:
    W, b = params[f"{prefix}.W"], params[f"{prefix}.b"]
    h = Tensor(np.zeros(hidden))
    c = Tensor(np.zeros(hidden))
    out: list[Tensor] = []
    seq = reversed(xs) if reverse else xs
    for x in seq:
        h, c = lstm_cell(W, b, x, h, c)
        out.append(h)
    if reverse:
        out.reverse()
    return out


@dataclass
class EncodedMemory:
    """Per-token hidden matrix H (T, d_m) from one encoder role."""

    H: Tensor
    role: str
    final_forward: Tensor
    final_backward: Tensor

    @property
    def length(self) -> int:
        return self.H.data.shape[0]

    @property
    def d_m(self) -> int:
        return self.H.data.shape[1]


def embed_tokens(tokens: list[TokenUnit], table: EmbeddingTable) -> list[Tensor]:
    vecs = []
    for tok in tokens:
        if tok.key not in table:
            raise EmbeddingError(f"token {tok.key!r} not resolvable in embedding table")
        vecs.append(Tensor(table.vector(tok.key)))
    return vecs


def encode(tokens: list[TokenUnit], table: EmbeddingTable, params: dict[str, Tensor],
           d_m: int, role: str = "user") -> EncodedMemory:
    """Wrap with [CLS]/[SEP], embed, and run the stacked BiLSTM (last layer out)."""
    if not tokens and role not in ("belief", "system"):
        raise ValueError("cannot encode an empty token sequence")
    wrapped = [TokenUnit(CLS, "control"), *tokens, TokenUnit(SEP, "control")]
    xs = embed_tokens(wrapped, table)
    hidden = d_m // 2
    layer_in = xs
    fwd: list[Tensor] = []
    bwd: list[Tensor] = []
    for layer in ("l0", "l1"):
        fwd = _run_direction(params, f"enc.{layer}.f", layer_in, hidden, reverse=False)
        bwd = _run_direction(params, f"enc.{layer}.r", layer_in, hidden, reverse=True)
        layer_in = [ad.concat([f, r]) for f, r in zip(fwd, bwd)]
    return EncodedMemory(
        H=ad.stack_rows(layer_in),
        role=role,
        final_forward=fwd[-1],
        final_backward=bwd[0],
    )


def mean_rows(H: Tensor) -> Tensor:
    t = H.data.shape[0]
    ones = Tensor(np.full(t, 1.0 / t))
    return ad.matmul(ad.transpose(H), ones)


def init_decoder_state(h_b: EncodedMemory, h_a: EncodedMemory, h_u: EncodedMemory) -> Tensor:
    """Mean of the three per-encoder mean hidden states (grand mean over time)."""
    widths = {h_b.d_m, h_a.d_m, h_u.d_m}
    if len(widths) != 1:
        raise ad.ShapeError(f"encoder width mismatch: {sorted(widths)}")
    total = ad.add(ad.add(mean_rows(h_b.H), mean_rows(h_a.H)), mean_rows(h_u.H))
    return ad.smul(total, 1.0 / 3.0)
