"""Joint accuracy metrics, the inference-time-multiplier arithmetic, and the
wall-clock benchmark that checks latency stays flat as the registered ontology
grows.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

from .belief import BeliefState, FrequencyTables, canonical_order, postprocess_state
from .data import Dialogue, OntologyStats
from .embeddings import EmbeddingTable, TokenUnit, compose_embedding, pseudo_embed
from .hiergen import Instrumentation, TurnInput, track_dialogue
from .model import ComerModel

ITC_CLASSES = ("O(1)", "O(n)", "O(mn)")


@dataclass
class MetricsReport:
    jd: float
    jds: float
    jg: float
    n_turns: int

    def __post_init__(self):
        assert self.jg <= self.jds + 1e-12 <= self.jd + 2e-12, \
            f"metric ordering violated: jg={self.jg} jds={self.jds} jd={self.jd}"

    def to_json(self) -> dict:
        return {"jd": self.jd, "jds": self.jds, "jg": self.jg, "turns": self.n_turns}


def _normalize(state: BeliefState, freq: FrequencyTables) -> dict:
    ordered = canonical_order(postprocess_state(state), freq)
    return {d: {s: " ".join(v) for s, v in slots.items()} for d, slots in ordered.items()}


def metrics(preds: list[BeliefState], golds: list[BeliefState],
            freq: FrequencyTables | None = None) -> MetricsReport:
    """Exact-match accuracy at the domain-set (jd), domain-slot-set (jds), and
    full-value (jg) levels over post-processed states."""
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    freq = freq or FrequencyTables()
    jd = jds = jg = 0
    for p, g in zip(preds, golds):
        pn, gn = _normalize(p, freq), _normalize(g, freq)
        if set(pn) == set(gn):
            jd += 1
            if {(d, s) for d in pn for s in pn[d]} == {(d, s) for d in gn for s in gn[d]}:
                jds += 1
                if pn == gn:
                    jg += 1
    n = len(preds)
    if n == 0:
        return MetricsReport(0.0, 0.0, 0.0, 0)
    return MetricsReport(jd / n, jds / n, jg / n, n)


def itm(d1: OntologyStats, d2: OntologyStats, itc: str) -> float:
    """Predicted slowdown moving from dataset d1 to d2 under an ITC class:
    turn and token counts always scale; n joins for O(n), n and m for O(mn)."""
    if itc not in ITC_CLASSES:
        raise ValueError(f"unknown ITC class {itc!r}; expected one of {ITC_CLASSES}")
    for name, x in (("t", d1.t), ("s", d1.s), ("n", d1.n), ("m", d1.m)):
        if x <= 0:
            raise ValueError(f"d1.{name} must be positive")
    k = (d2.t / d1.t) * (d2.s / d1.s)
    if itc in ("O(n)", "O(mn)"):
        k *= d2.n / d1.n
    if itc == "O(mn)":
        k *= d2.m / d1.m
    return k


@dataclass
class BenchRow:
    n_slots: int
    mean_latency: float          # seconds per turn, mean across repeats
    stddev: float
    ratio: float                 # vs the smallest inflation level
    decode_calls: int
    per_run: list[float] = field(default_factory=list)


@dataclass
class BenchReport:
    rows: list[BenchRow]
    repeats: int
    n_turns: int

    def to_json(self) -> dict:
        return {
            "repeats": self.repeats,
            "turns": self.n_turns,
            "rows": [
                {"n_slots": r.n_slots, "mean_latency_s": r.mean_latency,
                 "stddev_s": r.stddev, "ratio": r.ratio,
                 "decode_calls": r.decode_calls, "per_run_s": r.per_run}
                for r in self.rows
            ],
        }

    def text_table(self) -> str:
        lines = [f"{'slots':>6}  {'mean s/turn':>12}  {'stddev':>10}  {'ratio':>7}  {'decodes':>8}"]
        for r in self.rows:
            lines.append(f"{r.n_slots:>6}  {r.mean_latency:>12.6f}  {r.stddev:>10.6f}"
                         f"  {r.ratio:>7.3f}  {r.decode_calls:>8}")
        return "\n".join(lines)


def inflate_table(table: EmbeddingTable, n_slots: int) -> EmbeddingTable:
    """Register dummy slots until the table holds ``n_slots`` slot entries.
    Dialogue content is untouched; only the registered ontology grows."""
    out = EmbeddingTable(table.d_e)
    for i, k in enumerate(table.keys):
        out.add(k, table.vector(k), "vocab" if table.token_at(i).kind in ("word", "control") else "unit")
    base_slots = sum(1 for k in table.keys if k.startswith("slot:"))
    for i in range(max(0, n_slots - base_slots)):
        unit = TokenUnit(f"dummyslot{i}", "slot")
        out.add(unit.key, pseudo_embed(unit.surface, table.d_e, seed=9), "unit")
    return out


def benchmark_inference(
    model: ComerModel,
    table: EmbeddingTable,
    dialogues: list[Dialogue],
    inflation: list[int],
    repeats: int = 5,
) -> BenchReport:
    """Per inflation level: time eval-mode tracking of the same dialogues,
    batch size 1, warm-up run excluded, ``repeats`` timed runs."""
    if not dialogues:
        raise ValueError("benchmark needs at least one dialogue")
    if not inflation:
        raise ValueError("benchmark needs at least one inflation level")
    turn_lists = [
        [TurnInput(user=t.user, system=t.system) for t in dlg.turns]
        for dlg in dialogues
    ]
    n_turns = sum(len(ts) for ts in turn_lists)
    rows: list[BenchRow] = []
    for level in sorted(inflation):
        inflated = inflate_table(table, level)

        def run_once(instrument=None) -> float:
            start = time.perf_counter()
            for turns in turn_lists:
                track_dialogue(turns, model, inflated, state_feed="predicted",
                               instrument=instrument)
            return time.perf_counter() - start

        instrument = Instrumentation()
        run_once(instrument)                      # warm-up, also counts decodes
        per_run = [run_once() / n_turns for _ in range(repeats)]
        rows.append(BenchRow(
            n_slots=level,
            mean_latency=statistics.fmean(per_run),
            stddev=statistics.pstdev(per_run) if len(per_run) > 1 else 0.0,
            ratio=0.0,
            decode_calls=instrument.decode_calls,
            per_run=per_run,
        ))
    base = rows[0].mean_latency
    for r in rows:
        r.ratio = r.mean_latency / base
    return BenchReport(rows=rows, repeats=repeats, n_turns=n_turns)
