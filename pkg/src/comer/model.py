"""Model configuration and parameter construction.

All learnable parameters live in one flat name -> Tensor dict.  One encoder
parameter set serves the belief/system/user roles, one decoder parameter set
serves all three hierarchy levels, and one attention parameter set serves all
attention modules; sharing is structural, not a runtime copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import Tensor
from .belief import FrequencyTables

ATTENTION_ROLES = ("belief", "sys", "usr")


@dataclass
class ModelConfig:
    d_m: int = 512
    d_e: int = 1024
    dropout: float = 0.5
    attention_order: tuple[str, ...] = ATTENTION_ROLES
    block_grad: bool = True
    move_dropout: bool = False
    max_len_domain: int = 8
    max_len_slot: int = 12
    max_len_value: int = 10

    def __post_init__(self):
        if self.d_m % 2 != 0:
            raise ValueError("d_m must be even (BiLSTM halves)")
        if sorted(self.attention_order) != sorted(ATTENTION_ROLES):
            raise ValueError(f"attention_order must permute {ATTENTION_ROLES}")
        self.attention_order = tuple(self.attention_order)

    def to_json(self) -> dict:
        d = asdict(self)
        d["attention_order"] = list(self.attention_order)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "attention_order" in d:
            d["attention_order"] = tuple(d["attention_order"])
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Shapes of every learnable parameter; a function of (d_m, d_e) only."""
    d_m, d_e = cfg.d_m, cfg.d_e
    h = d_m // 2  # per-direction encoder hidden size
    shapes: dict[str, tuple[int, ...]] = {}
    # shared 2-layer BiLSTM encoder; layer 1 consumes the bidirectional output
    for layer, d_in in (("l0", d_e), ("l1", d_m)):
        for direction in ("f", "r"):
            shapes[f"enc.{layer}.{direction}.W"] = (4 * h, d_in + h)
            shapes[f"enc.{layer}.{direction}.b"] = (4 * h,)
    # shared 2-layer decoder LSTM
    for layer, d_in in (("l0", d_e), ("l1", d_m)):
        shapes[f"dec.{layer}.W"] = (4 * d_m, d_in + d_m)
        shapes[f"dec.{layer}.b"] = (4 * d_m,)
    # one attention parameter set for all attention modules
    shapes["attn.W1"] = (d_m, d_m)
    shapes["attn.b1"] = (d_m,)
    shapes["attn.W2"] = (d_m, d_m)
    shapes["attn.b2"] = (d_m,)
    # 4-layer relational MLP over the concatenated working memory
    shapes["mlp.W1"] = (d_m, 4 * d_m)
    shapes["mlp.b1"] = (d_m,)
    for i in (2, 3, 4):
        shapes[f"mlp.W{i}"] = (d_m, d_m)
        shapes[f"mlp.b{i}"] = (d_m,)
    # output projection into embedding space (vocabulary-size independent)
    shapes["out.Wk"] = (d_e, d_m)
    shapes["out.bk"] = (d_e,)
    return shapes


def init_params(shapes: dict[str, tuple[int, ...]], seed: int) -> dict[str, Tensor]:
    """Kaiming-normal weights (std = sqrt(2/fan_in)), zero biases; seeded."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in shapes.items():
        if len(shape) == 2:
            std = np.sqrt(2.0 / shape[1])
            data = rng.standard_normal(shape) * std
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def param_count(params: dict[str, Tensor]) -> int:
    return sum(p.data.size for p in params.values())


def snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def snapshots_equal(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


@dataclass
class ComerModel:
    """Bundle of everything needed to predict: config, parameters, ordering stats."""

    cfg: ModelConfig
    params: dict[str, Tensor]
    freq: FrequencyTables = field(default_factory=FrequencyTables)

    @classmethod
    def build(cls, cfg: ModelConfig, seed: int) -> "ComerModel":
        return cls(cfg=cfg, params=init_params(param_shapes(cfg), seed))
