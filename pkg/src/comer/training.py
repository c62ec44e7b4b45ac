"""Loss assembly over the teacher-forced three-level decode, Adam/AMSGrad
optimizers with global-norm gradient clipping, the epoch loop with best-
checkpoint retention, and the checkpoint format.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .belief import BeliefState, FrequencyTables, canonical_order, compute_frequencies
from .data import Dialogue
from .embeddings import EmbeddingTable
from .encoder import init_decoder_state
from .hiergen import TurnInput, encode_turn, gold_token_keys, track_dialogue
from .model import ComerModel, ModelConfig
from .cmrd import decode_sequence


class NumericError(RuntimeError):
    """Non-finite loss or gradient; training must not continue silently."""


@dataclass
class TrainConfig:
    d_m: int = 512
    dropout: float = 0.5
    learning_rate: float = 0.0005
    clip_norm: float = 2.0
    optimizer: str = "adam"           # adam | amsgrad
    batch_size: int = 32
    epochs: int = 150
    seed: int = 0
    early_stop_jg: float | None = None

    def __post_init__(self):
        if self.d_m <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.optimizer not in ("adam", "amsgrad"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def loss_turn(
    model: ComerModel,
    table: EmbeddingTable,
    inp: TurnInput,
    gold: BeliefState,
    mode: str = "train",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Sum of per-step cross-entropies over the teacher-forced decode of all
    three levels, terminator positions included.  ``gold`` must be canonical."""
    cfg = model.cfg
    memories = encode_turn(inp, model, table)
    q0 = init_decoder_state(memories["belief"], memories["sys"], memories["usr"])
    domain_keys, slot_keys, value_keys = gold_token_keys(gold)

    losses: list[Tensor] = []
    zero = Tensor(np.zeros(cfg.d_m))
    level1 = decode_sequence(zero, memories, table, q0, model.params, cfg,
                             cfg.max_len_domain, forced=domain_keys, mode=mode,
                             rng=rng, level="domain")
    losses.extend(level1.losses)
    for i in range(len(domain_keys)):
        level2 = decode_sequence(level1.hidden[i], memories, table, q0, model.params,
                                 cfg, cfg.max_len_slot, forced=slot_keys[i],
                                 mode=mode, rng=rng, level="slot")
        losses.extend(level2.losses)
        for j in range(len(slot_keys[i])):
            level3 = decode_sequence(level2.hidden[j], memories, table, q0,
                                     model.params, cfg, cfg.max_len_value,
                                     forced=value_keys[i][j], mode=mode, rng=rng,
                                     level="value")
            losses.extend(level3.losses)

    total = losses[0]
    for piece in losses[1:]:
        total = ad.add(total, piece)
    return total


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Global L2-norm clipping, applied uniformly across all parameters."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        grads = {k: g * scale for k, g in grads.items()}
    return grads


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    v_max: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def optimizer_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: TrainConfig,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Adam / AMSGrad update with bias correction; mutates params and state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    lr = cfg.learning_rate
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m[...] = beta1 * m + (1 - beta1) * g
        v[...] = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        if cfg.optimizer == "amsgrad":
            v_max = state.v_max.setdefault(name, np.zeros_like(p.data))
            np.maximum(v_max, v, out=v_max)
            v_hat = v_max / (1 - beta2 ** t)
        else:
            v_hat = v / (1 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def collect_gradients(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.grad.copy() for k, p in params.items() if p.grad is not None}


def zero_gradients(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


# --- checkpoint format: JSON header line + raw little-endian f32 blobs ---

class CheckpointError(Exception):
    pass


def save_checkpoint(model: ComerModel, path: str | Path, extra: dict | None = None) -> None:
    names = list(model.params)
    blob = b"".join(model.params[n].data.astype("<f4").tobytes() for n in names)
    header = {
        "version": 1,
        "config": model.cfg.to_json(),
        "params": {n: list(model.params[n].data.shape) for n in names},
        "freq": {
            "domain": model.freq.domain,
            "slot": [[d, s, c] for (d, s), c in model.freq.slot.items()],
        },
        "checksum": hashlib.sha256(blob).hexdigest(),
    }
    if extra:
        header.update(extra)
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode() + b"\n")
        f.write(blob)


def load_checkpoint(path: str | Path) -> tuple[ComerModel, dict]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError("missing checkpoint header")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"malformed checkpoint header: {e}") from None
    blob = raw[nl + 1:]
    if hashlib.sha256(blob).hexdigest() != header.get("checksum"):
        raise CheckpointError("checkpoint checksum mismatch")
    cfg = ModelConfig.from_json(header["config"])
    params: dict[str, Tensor] = {}
    offset = 0
    for name, shape in header["params"].items():
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        params[name] = Tensor(arr.astype(np.float64).reshape(shape), requires_grad=True)
    freq = FrequencyTables(
        domain=dict(header["freq"]["domain"]),
        slot={(d, s): c for d, s, c in header["freq"]["slot"]},
    )
    return ComerModel(cfg=cfg, params=params, freq=freq), header


def checkpoint_precision(model: ComerModel) -> ComerModel:
    """Copy of the model with parameters rounded through the checkpoint's f32
    storage, so recorded metrics match a reloaded checkpoint exactly."""
    params = {
        k: Tensor(p.data.astype("<f4").astype(np.float64), requires_grad=True)
        for k, p in model.params.items()
    }
    return ComerModel(cfg=model.cfg, params=params, freq=model.freq)


def _turn_pairs(dialogues: list[Dialogue], freq: FrequencyTables) -> list[tuple[TurnInput, BeliefState]]:
    pairs = []
    for dlg in dialogues:
        prev: BeliefState = {}
        for turn in dlg.turns:
            gold = canonical_order(turn.state, freq)
            pairs.append((TurnInput(user=turn.user, system=turn.system, prev_state=prev), gold))
            prev = turn.state
    return pairs


def evaluate_model(model: ComerModel, table: EmbeddingTable, dialogues: list[Dialogue],
                   state_feed: str = "predicted"):
    from .evalbench import metrics
    preds = []
    golds = []
    for dlg in dialogues:
        inputs = []
        prev: BeliefState = {}
        for t in dlg.turns:
            inputs.append(TurnInput(user=t.user, system=t.system, prev_state=prev))
            prev = t.state
        results = track_dialogue(inputs, model, table, state_feed=state_feed)
        preds.extend(r.state for r in results)
        golds.extend(t.state for t in dlg.turns)
    return metrics(preds, golds, model.freq)


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    jd: float
    jds: float
    jg: float


@dataclass
class TrainResult:
    model: ComerModel            # best checkpoint (f32 precision)
    history: list[EpochMetrics]
    best_epoch: int
    best_jg: float


def train(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    dataset: list[Dialogue],
    table: EmbeddingTable,
    validation: list[Dialogue] | None = None,
) -> TrainResult:
    """Epoch loop of shuffled turn-level mini-batches.  Loss is averaged over
    the batch; the model with the best validation joint goal accuracy wins."""
    if not dataset:
        raise ValueError("training set is empty")
    freq = compute_frequencies(dataset)
    model = ComerModel.build(model_cfg, cfg.seed)
    model.freq = freq
    validation = validation if validation is not None else dataset
    pairs = _turn_pairs(dataset, freq)

    opt_state = OptimizerState()
    rng = np.random.default_rng(cfg.seed)
    history: list[EpochMetrics] = []
    best: ComerModel = checkpoint_precision(model)
    best_jg = -1.0
    best_epoch = -1

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [pairs[i] for i in order[start:start + cfg.batch_size]]
            zero_gradients(model.params)
            total = None
            for inp, gold in batch:
                piece = loss_turn(model, table, inp, gold, mode="train", rng=rng)
                total = piece if total is None else ad.add(total, piece)
            batch_loss = ad.smul(total, 1.0 / len(batch))
            if not np.isfinite(batch_loss.item()):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            batch_loss.backward()
            grads = clip_gradients(collect_gradients(model.params), cfg.clip_norm)
            optimizer_step(model.params, grads, opt_state, cfg)
            epoch_losses.append(batch_loss.item())

        eval_model = checkpoint_precision(model)
        report = evaluate_model(eval_model, table, validation, state_feed="predicted")
        history.append(EpochMetrics(epoch=epoch, loss=float(np.mean(epoch_losses)),
                                    jd=report.jd, jds=report.jds, jg=report.jg))
        if report.jg > best_jg:
            best_jg = report.jg
            best_epoch = epoch
            best = eval_model
        if cfg.early_stop_jg is not None and report.jg >= cfg.early_stop_jg:
            break

    return TrainResult(model=best, history=history, best_epoch=best_epoch, best_jg=best_jg)
