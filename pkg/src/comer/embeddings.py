"""Static token embedding table: vocabulary words plus whole-unit domain/slot entries.

Keys are kind-qualified ("word:food" vs "slot:food") so a unit surface can
coincide with a vocabulary word without colliding.  Iteration order is stable:
the vocab section (control tokens and words) precedes the unit section
(domains and slots), so token indices are reproducible across runs.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CLS = "[CLS]"
SEP = "[SEP]"
DOMAIN_MARK = "-"
SLOT_MARK = ","
VALUE_MARK = ";"
VALUE_OP = ">"

CONTROL_TOKENS = (CLS, SEP, DOMAIN_MARK, SLOT_MARK, VALUE_MARK, VALUE_OP)

VOCAB_KINDS = frozenset({"word", "control"})
UNIT_KINDS = frozenset({"domain", "slot"})
_KIND_PREFIX = {"word": "word", "control": "ctrl", "domain": "domain", "slot": "slot"}
_PREFIX_KIND = {v: k for k, v in _KIND_PREFIX.items()}


@dataclass(frozen=True)
class TokenUnit:
    """A decodable unit: a word, a control token, or a whole domain/slot."""

    surface: str
    kind: str = "word"

    def __post_init__(self):
        if self.kind not in _KIND_PREFIX:
            raise ValueError(f"unknown token kind {self.kind!r}")

    @property
    def key(self) -> str:
        return f"{_KIND_PREFIX[self.kind]}:{self.surface}"

    @property
    def words(self) -> list[str]:
        return self.surface.split()


def key_of(surface: str, kind: str) -> str:
    return TokenUnit(surface, kind).key


def parse_key(key: str) -> TokenUnit:
    prefix, _, surface = key.partition(":")
    if prefix not in _PREFIX_KIND or not surface:
        raise ValueError(f"malformed token key {key!r}")
    return TokenUnit(surface, _PREFIX_KIND[prefix])


class EmbeddingError(Exception):
    pass


class EmbeddingTable:
    """Ordered token -> vector map with a vocab section followed by a unit section."""

    def __init__(self, d_e: int):
        if d_e < 1:
            raise ValueError("d_e must be >= 1")
        self.d_e = d_e
        self._keys: list[str] = []
        self._index: dict[str, int] = {}
        self._vectors: list[np.ndarray] = []
        self._sections: list[str] = []
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def add(self, key: str, vector: np.ndarray, section: str) -> None:
        if section not in ("vocab", "unit"):
            raise ValueError(f"bad section {section!r}")
        if key in self._index:
            raise EmbeddingError(f"duplicate token key {key!r}")
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.d_e,):
            raise EmbeddingError(f"vector for {key!r} has shape {v.shape}, expected ({self.d_e},)")
        if section == "vocab" and self._sections and self._sections[-1] == "unit":
            raise EmbeddingError("vocab entries must precede unit entries")
        self._index[key] = len(self._keys)
        self._keys.append(key)
        self._vectors.append(v)
        self._sections.append(section)
        self._matrix = None

    def index(self, key: str) -> int:
        try:
            return self._index[key]
        except KeyError:
            raise EmbeddingError(f"token {key!r} not in embedding table") from None

    def vector(self, key: str) -> np.ndarray:
        return self._vectors[self.index(key)]

    def key_at(self, i: int) -> str:
        return self._keys[i]

    def token_at(self, i: int) -> TokenUnit:
        return parse_key(self._keys[i])

    @property
    def keys(self) -> list[str]:
        return list(self._keys)

    @property
    def n_vocab(self) -> int:
        return sum(1 for s in self._sections if s == "vocab")

    @property
    def n_unit(self) -> int:
        return sum(1 for s in self._sections if s == "unit")

    def matrix(self) -> np.ndarray:
        """(|E|, d_e) matrix in index order; cached, treated as read-only."""
        if self._matrix is None:
            self._matrix = np.stack(self._vectors) if self._vectors else np.zeros((0, self.d_e))
            self._matrix.setflags(write=False)
        return self._matrix


def pseudo_embed(token: str, d_e: int, seed: int) -> np.ndarray:
    """Deterministic unit-norm stand-in vector derived from the token bytes."""
    if not token:
        raise ValueError("cannot embed an empty token")
    if d_e < 1:
        raise ValueError("d_e must be >= 1")
    digest = hashlib.sha256(f"{seed}\x00{token}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(d_e)
    return v / np.linalg.norm(v)


class PseudoProvider:
    """Serves pseudo vectors for any word; caches for stable identity."""

    def __init__(self, d_e: int, seed: int = 0):
        self.d_e = d_e
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def word_vector(self, word: str) -> np.ndarray:
        if word not in self._cache:
            self._cache[word] = pseudo_embed(word, self.d_e, self.seed)
        return self._cache[word]


def build_unit_embedding(unit: TokenUnit, word_vectors, provider: PseudoProvider | None = None) -> np.ndarray:
    """Mean of the unit's word vectors ("price range" -> mean of price, range)."""
    vecs = []
    for w in unit.words:
        k = key_of(w, "word")
        if word_vectors is not None and k in word_vectors:
            vecs.append(word_vectors.vector(k))
        elif provider is not None:
            vecs.append(provider.word_vector(w))
        else:
            raise EmbeddingError(f"no vector for word {w!r} of unit {unit.surface!r}")
    return np.mean(vecs, axis=0)


def compose_embedding(e_v: EmbeddingTable, e_s: EmbeddingTable) -> EmbeddingTable:
    """Merge vocab table and unit table; vocab section first, vectors bitwise-preserved."""
    if e_v.d_e != e_s.d_e:
        raise EmbeddingError(f"d_e mismatch: {e_v.d_e} vs {e_s.d_e}")
    out = EmbeddingTable(e_v.d_e)
    for k in e_v.keys:
        out.add(k, e_v.vector(k), "vocab")
    for k in e_s.keys:
        out.add(k, e_s.vector(k), "unit")
    return out


def build_pseudo_table(words: list[str], units: list[TokenUnit], d_e: int, seed: int = 0) -> EmbeddingTable:
    """Full table for desk-scale runs: control tokens, then words, then units."""
    provider = PseudoProvider(d_e, seed)
    e_v = EmbeddingTable(d_e)
    for c in CONTROL_TOKENS:
        e_v.add(key_of(c, "control"), provider.word_vector(c), "vocab")
    for w in sorted(set(words)):
        k = key_of(w, "word")
        if k not in e_v:
            e_v.add(k, provider.word_vector(w), "vocab")
    e_s = EmbeddingTable(d_e)
    for u in sorted(set(units), key=lambda u: (u.kind, u.surface)):
        e_s.add(u.key, build_unit_embedding(u, e_v, provider), "unit")
    return compose_embedding(e_v, e_s)


def _record_bytes(key: str, vector: np.ndarray) -> bytes:
    payload = struct.pack(f"<{vector.size}f", *vector.astype(np.float32))
    return f"{key}\t{base64.b64encode(payload).decode()}\n".encode()


def save_embedding_file(table: EmbeddingTable, path: str | Path) -> None:
    """Write the embedding file: JSON header line, then one base64 record per entry."""
    records = b"".join(_record_bytes(k, table.vector(k)) for k in table.keys)
    header = {
        "version": 1,
        "d_e": table.d_e,
        "counts": {"vocab": table.n_vocab, "unit": table.n_unit},
        "checksum": hashlib.sha256(records).hexdigest(),
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode() + b"\n")
        f.write(records)


def load_embedding_file(path: str | Path) -> EmbeddingTable:
    """Load and validate an embedding file; rejects any corruption atomically."""
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise EmbeddingError("missing header line")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as e:
        raise EmbeddingError(f"malformed header: {e}") from None
    for field in ("version", "d_e", "counts", "checksum"):
        if field not in header:
            raise EmbeddingError(f"header missing {field!r}")
    if header["version"] != 1:
        raise EmbeddingError(f"unsupported version {header['version']}")
    records = raw[nl + 1:]
    if hashlib.sha256(records).hexdigest() != header["checksum"]:
        raise EmbeddingError("checksum mismatch")

    d_e = int(header["d_e"])
    table = EmbeddingTable(d_e)
    lines = records.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    for line in lines:
        key_b, tab, b64 = line.partition(b"\t")
        if not tab:
            raise EmbeddingError(f"malformed record: {line[:60]!r}")
        key = key_b.decode()
        unit = parse_key(key)
        payload = base64.b64decode(b64)
        if len(payload) != 4 * d_e:
            raise EmbeddingError(f"record {key!r} has {len(payload) // 4} dims, header says {d_e}")
        vec = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        table.add(key, vec, "vocab" if unit.kind in VOCAB_KINDS else "unit")
    counts = header["counts"]
    if table.n_vocab != counts.get("vocab") or table.n_unit != counts.get("unit"):
        raise EmbeddingError(
            f"section counts {table.n_vocab}/{table.n_unit} disagree with header {counts}"
        )
    return table
