"""Offline embedding extraction from a pretrained BERT-style encoder.

Static export feeds each vocabulary word through the model as a singleton
sequence, averages the hidden states of all layers (the embedding layer
included), pools subword positions, and writes one vector record per word;
whole-unit domain/slot vectors are the mean of their word vectors.  The output
is the tracker's embedding file format, so it loads with the tracker's own
validation.

Contextual export encodes whole utterances ([CLS]/[SEP]-wrapped) and writes
one all-layer-averaged matrix per utterance in an analogous container (matrix
records carry a row count; the vector format cannot).
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from comer.embeddings import EmbeddingTable, TokenUnit, save_embedding_file


class ExportError(Exception):
    pass


@dataclass
class ExportSpec:
    model: str                      # model name or local path
    words: list[str] = field(default_factory=list)
    units: list[TokenUnit] = field(default_factory=list)
    utterances: dict[str, str] = field(default_factory=dict)  # id -> text
    output: str | Path = "embeddings.bin"


class _Encoder:
    """Thin wrapper owning the tokenizer/model pair in eval mode."""

    def __init__(self, model: str):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as e:  # pragma: no cover
            raise ExportError(f"transformers/torch unavailable: {e}") from None
        self._torch = torch
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model)
            self.model = AutoModel.from_pretrained(model, output_hidden_states=True)
        except Exception as e:
            raise ExportError(f"cannot load model {model!r}: {e}") from None
        self.model.eval()
        self.d_e = int(self.model.config.hidden_size)

    def layer_mean(self, text: str) -> np.ndarray:
        """(T, d_e) hidden matrix averaged over all layers, embedding layer
        included; T covers the [CLS]/[SEP] wrapping."""
        enc = self.tokenizer(text, return_tensors="pt")
        with self._torch.no_grad():
            out = self.model(**enc)
        stacked = self._torch.stack(out.hidden_states)      # (L+1, 1, T, d_e)
        return stacked.mean(dim=0)[0].numpy().astype(np.float64)

    def word_vector(self, word: str) -> np.ndarray:
        """Average over the word's subword positions (wrapping excluded),
        pooled after the layer average."""
        mat = self.layer_mean(word)
        if mat.shape[0] <= 2:
            raise ExportError(f"word {word!r} produced no subword positions")
        return mat[1:-1].mean(axis=0)


def export_static(spec: ExportSpec) -> Path:
    """Write the static vocabulary + unit embedding file; returns its path."""
    if not spec.words:
        raise ExportError("static export needs a non-empty word list")
    enc = _Encoder(spec.model)
    table = EmbeddingTable(enc.d_e)
    vectors: dict[str, np.ndarray] = {}
    for word in dict.fromkeys(spec.words):    # dedupe, keep caller's order
        vectors[word] = enc.word_vector(word)
        table.add(TokenUnit(word, "word").key, vectors[word], "vocab")
    for unit in dict.fromkeys(spec.units):
        missing = [w for w in unit.words if w not in vectors]
        if missing:
            raise ExportError(f"unit {unit.surface!r} needs words {missing} "
                              "in the vocabulary list")
        table.add(unit.key, np.mean([vectors[w] for w in unit.words], axis=0), "unit")
    save_embedding_file(table, spec.output)
    return Path(spec.output)


def _matrix_record(utt_id: str, mat: np.ndarray) -> bytes:
    payload = struct.pack(f"<{mat.size}f", *mat.astype(np.float32).ravel())
    return f"{utt_id}\t{mat.shape[0]}\t{base64.b64encode(payload).decode()}\n".encode()


def export_contextual(spec: ExportSpec) -> Path:
    """Write one per-utterance contextual matrix record each; returns the path."""
    if not spec.utterances:
        raise ExportError("contextual export needs at least one utterance")
    enc = _Encoder(spec.model)
    records = b"".join(
        _matrix_record(utt_id, enc.layer_mean(text))
        for utt_id, text in spec.utterances.items()
    )
    header = {
        "version": 1,
        "d_e": enc.d_e,
        "counts": {"utterances": len(spec.utterances)},
        "checksum": hashlib.sha256(records).hexdigest(),
    }
    path = Path(spec.output)
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode() + b"\n")
        f.write(records)
    return path


def load_contextual(path: str | Path) -> dict[str, np.ndarray]:
    """Read a contextual export back; validates the checksum."""
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ExportError("missing header line")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as e:
        raise ExportError(f"malformed header: {e}") from None
    records = raw[nl + 1:]
    if hashlib.sha256(records).hexdigest() != header.get("checksum"):
        raise ExportError("checksum mismatch")
    d_e = int(header["d_e"])
    out: dict[str, np.ndarray] = {}
    for line in records.split(b"\n"):
        if not line:
            continue
        utt_id, rows, b64 = line.split(b"\t")
        mat = np.frombuffer(base64.b64decode(b64), dtype="<f4").astype(np.float64)
        out[utt_id.decode()] = mat.reshape(int(rows), d_e)
    if len(out) != header["counts"]["utterances"]:
        raise ExportError(f"expected {header['counts']['utterances']} records, "
                          f"found {len(out)}")
    return out
