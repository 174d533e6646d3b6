"""Monolingual corpus preparation: cleaning, exact dedup, statistics, packing.

Documents arrive one per line in UTF-8 text files laid out as one directory
per language. Cleaning strips non-whitespace control characters, normalizes
to NFC, collapses whitespace runs, and rejects anything under three words.
Deduplication is exact (hash of cleaned text), first occurrence wins.

Packing concatenates each document's token ids followed by one eos, chunks
the stream into rows of exactly seq_len, pads the final partial row, and
records a loss mask over the padding. No token is created or lost: the
unmasked count always equals the sum of document lengths plus one eos per
document.
"""

from __future__ import annotations

import hashlib
import os
import re
import struct
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from . import tokenizer as tok
from .errors import ConfigInvalid

AFRICAN_LANGUAGES = ("hau", "yor", "swa", "zul", "xho")
LANGUAGES = AFRICAN_LANGUAGES + ("eng", "fra")
LANGUAGE_NAMES = {
    "hau": "Hausa", "yor": "Yoruba", "swa": "Swahili", "zul": "isiZulu",
    "xho": "isiXhosa", "eng": "English", "fra": "French",
}

MIN_WORDS = 3
_SENTENCE_SPLIT = re.compile(r"[.?!\n]+")
_WS = re.compile(r"\s+")


@dataclass
class CorpusDocument:
    text: str
    language: str
    source: str = ""

    def __post_init__(self):
        if self.language not in LANGUAGES:
            raise ConfigInvalid(f"unknown language code {self.language!r}")


def clean_text(text: str) -> str | None:
    """Cleaned text, or None when the document is rejected."""
    text = "".join(ch for ch in text
                   if ch.isspace() or unicodedata.category(ch) != "Cc")
    text = unicodedata.normalize("NFC", text)
    text = _WS.sub(" ", text).strip()
    if len(text.split(" ")) < MIN_WORDS or not text:
        return None
    return text


def clean(doc: CorpusDocument) -> CorpusDocument | None:
    text = clean_text(doc.text)
    if text is None:
        return None
    return CorpusDocument(text=text, language=doc.language, source=doc.source)


def dedup(docs: Iterable[CorpusDocument]) -> Iterator[CorpusDocument]:
    """Drop exact duplicates of cleaned text, keeping first occurrences."""
    seen: set[bytes] = set()
    for doc in docs:
        digest = hashlib.sha256(doc.text.encode("utf-8")).digest()
        if digest in seen:
            continue
        seen.add(digest)
        yield doc


def split_sentences(text: str) -> list[str]:
    return [s for s in (_SENTENCE_SPLIT.split(text)) if s.strip()]


@dataclass
class LangStats:
    sentences: int = 0
    tokens: int = 0


@dataclass
class CorpusStats:
    per_language: dict[str, LangStats] = field(default_factory=dict)

    def _rollup(self, langs) -> LangStats:
        total = LangStats()
        for code in langs:
            s = self.per_language.get(code, LangStats())
            total.sentences += s.sentences
            total.tokens += s.tokens
        return total

    @property
    def african_only(self) -> LangStats:
        return self._rollup(AFRICAN_LANGUAGES)

    @property
    def total(self) -> LangStats:
        return self._rollup(LANGUAGES)

    def rows(self) -> list[tuple[str, int, int]]:
        """Row order: the five African languages, their rollup, English,
        French, grand total."""
        out = []
        for code in AFRICAN_LANGUAGES:
            s = self.per_language.get(code, LangStats())
            out.append((LANGUAGE_NAMES[code], s.sentences, s.tokens))
        a = self.african_only
        out.append(("African only", a.sentences, a.tokens))
        for code in ("eng", "fra"):
            s = self.per_language.get(code, LangStats())
            out.append((LANGUAGE_NAMES[code], s.sentences, s.tokens))
        t = self.total
        out.append(("Total", t.sentences, t.tokens))
        return out

    def render_table(self) -> str:
        rows = self.rows()
        header = ("Language", "Sentences", "Tokens")
        widths = [max(len(header[i]), *(len(f"{r[i]:,}") if i else len(r[i])
                                        for r in rows)) for i in range(3)]
        lines = [f"{header[0]:<{widths[0]}}  {header[1]:>{widths[1]}}  "
                 f"{header[2]:>{widths[2]}}"]
        lines.append("-" * (sum(widths) + 4))
        for name, sents, tokens in rows:
            lines.append(f"{name:<{widths[0]}}  {sents:>{widths[1]},}  "
                         f"{tokens:>{widths[2]},}")
        return "\n".join(lines)


def compute_stats(docs: Iterable[CorpusDocument],
                  model: tok.TokenizerModel) -> CorpusStats:
    stats = CorpusStats()
    for doc in docs:
        s = stats.per_language.setdefault(doc.language, LangStats())
        s.sentences += len(split_sentences(doc.text))
        s.tokens += len(tok.encode(model, doc.text))
    return stats


# --- packing into fixed-length shards ----------------------------------------


def pack(token_streams: Iterable[list[int]], seq_len: int,
         eos_id: int = tok.EOS_ID, pad_id: int = tok.PAD_ID):
    """Concatenate documents with eos separators into [n, seq_len] rows.

    Returns (ids uint32, mask bool); mask is False exactly on padding."""
    if seq_len < 2:
        raise ConfigInvalid("seq_len must be >= 2")
    flat: list[int] = []
    for stream in token_streams:
        flat.extend(stream)
        flat.append(eos_id)
    if not flat:
        return (np.zeros((0, seq_len), dtype=np.uint32),
                np.zeros((0, seq_len), dtype=bool))
    n_rows = (len(flat) + seq_len - 1) // seq_len
    ids = np.full((n_rows, seq_len), pad_id, dtype=np.uint32)
    mask = np.zeros((n_rows, seq_len), dtype=bool)
    ids.reshape(-1)[: len(flat)] = np.asarray(flat, dtype=np.uint32)
    mask.reshape(-1)[: len(flat)] = True
    return ids, mask


SHARD_MAGIC = b"TOKSHRD1"


def save_shard(path, ids: np.ndarray, mask: np.ndarray) -> None:
    """Header (seq_len, row count), ids as little-endian u32 row-major, then
    the loss mask bit-packed."""
    n_rows, seq_len = ids.shape
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<IQ", seq_len, n_rows))
        fh.write(np.ascontiguousarray(ids, dtype="<u4").tobytes())
        fh.write(np.packbits(mask.reshape(-1)).tobytes())


def load_shard(path):
    with open(path, "rb") as fh:
        if fh.read(8) != SHARD_MAGIC:
            raise ConfigInvalid(f"{path}: not a token shard")
        seq_len, n_rows = struct.unpack("<IQ", fh.read(12))
        count = n_rows * seq_len
        ids = np.frombuffer(fh.read(4 * count), dtype="<u4").reshape(
            n_rows, seq_len).copy()
        packed = np.frombuffer(fh.read((count + 7) // 8), dtype=np.uint8)
        mask = np.unpackbits(packed)[:count].astype(bool).reshape(n_rows, seq_len)
    return ids, mask


def load_shard_dir(directory):
    """Concatenate every *.shard file (sorted) into one (ids, mask) pair."""
    paths = sorted(p for p in os.listdir(directory) if p.endswith(".shard"))
    if not paths:
        raise ConfigInvalid(f"no .shard files in {directory}")
    parts = [load_shard(os.path.join(directory, p)) for p in paths]
    seq_lens = {ids.shape[1] for ids, _ in parts}
    if len(seq_lens) != 1:
        raise ConfigInvalid(f"shards disagree on seq_len: {sorted(seq_lens)}")
    return (np.concatenate([ids for ids, _ in parts]),
            np.concatenate([mask for _, mask in parts]))


# --- directory input ---------------------------------------------------------


def read_language_dir(root) -> Iterator[CorpusDocument]:
    """Yield documents from root/<lang>/*.txt (one document per line)."""
    for code in LANGUAGES:
        lang_dir = os.path.join(root, code)
        if not os.path.isdir(lang_dir):
            continue
        for fname in sorted(os.listdir(lang_dir)):
            if not fname.endswith(".txt"):
                continue
            path = os.path.join(lang_dir, fname)
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.rstrip("\n")
                    if line:
                        yield CorpusDocument(text=line, language=code,
                                             source=fname)
