"""Byte-level BPE tokenizer: training, encoding, decoding, serialization.

Every string is NFC-normalized and then handled as raw UTF-8 bytes, so the
base alphabet covers any input and no unknown token is ever produced. Merges
are learned per whitespace-delimited pre-token and never cross a pre-token
boundary; a single leading space stays attached to the following word so
word-initial and word-internal occurrences stay distinct.

Id layout: pad=0, unk=1, bos=2, eos=3, bytes 4..259, merged tokens 260+.
"""

from __future__ import annotations

import heapq
import re
import unicodedata
import warnings
from dataclasses import dataclass, field
from typing import Iterable

from .errors import ConfigInvalid, IdOutOfRange, TrainingDataEmpty

PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")
N_SPECIALS = 4
BASE_VOCAB = N_SPECIALS + 256  # smallest legal vocabulary

# Whitespace runs before a word leave exactly one space attached to it; any
# other whitespace becomes its own pre-token. Merges never cross pre-tokens.
_PRETOKEN_RE = re.compile(r" ?\S+|\s+(?!\S)|\s+")


def _byte_id(b: int) -> int:
    return N_SPECIALS + b


@dataclass
class TokenizerModel:
    """Trained BPE model.

    merges is the ordered list of byte-string pairs learned during training;
    replaying it over the base alphabet regenerates the vocabulary exactly.
    """

    merges: list[tuple[bytes, bytes]]
    special_tokens: tuple[str, str, str, str] = SPECIAL_TOKENS
    # id -> token bytes for ids >= 4; derived, rebuilt on load
    _id_to_bytes: list[bytes] = field(default_factory=list, repr=False)
    _merge_ranks: dict[tuple[int, int], tuple[int, int]] = field(
        default_factory=dict, repr=False
    )

    def __post_init__(self):
        if not self._id_to_bytes:
            self._rebuild_tables()

    def _rebuild_tables(self):
        self._id_to_bytes = [bytes([b]) for b in range(256)]
        self._merge_ranks = {}
        token_ids = {bytes([b]): _byte_id(b) for b in range(256)}
        for rank, (left, right) in enumerate(self.merges):
            if left not in token_ids or right not in token_ids:
                raise ConfigInvalid(f"merge {rank} references unknown token")
            new_id = BASE_VOCAB + rank
            merged = left + right
            token_ids[merged] = new_id
            self._id_to_bytes.append(merged)
            self._merge_ranks[(token_ids[left], token_ids[right])] = (rank, new_id)

    @property
    def vocab_size(self) -> int:
        return BASE_VOCAB + len(self.merges)

    @property
    def token_to_id(self) -> dict[bytes, int]:
        return {tok: N_SPECIALS + i for i, tok in enumerate(self._id_to_bytes)}

    def id_to_token_bytes(self, token_id: int) -> bytes:
        if not 0 <= token_id < self.vocab_size:
            raise IdOutOfRange(f"id {token_id} outside vocabulary of {self.vocab_size}")
        if token_id < N_SPECIALS:
            return b""
        return self._id_to_bytes[token_id - N_SPECIALS]


def normalize(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def pretokenize(text: str) -> list[str]:
    return _PRETOKEN_RE.findall(text)


def _word_to_ids(word: str) -> list[int]:
    return [_byte_id(b) for b in word.encode("utf-8")]


def train_bpe(
    corpus: Iterable[str],
    target_vocab_size: int,
    specials: tuple[str, str, str, str] = SPECIAL_TOKENS,
) -> TokenizerModel:
    """Learn merges until the vocabulary reaches target_vocab_size.

    Merge selection each round: highest total pair count, ties broken by the
    earliest first occurrence in the normalized corpus stream (scanning
    pre-tokens in order, offsets within a pre-token left to right). Stops
    early with a warning when no remaining pair occurs at least twice.
    """
    if target_vocab_size < BASE_VOCAB:
        raise ConfigInvalid(
            f"target vocab {target_vocab_size} below base size {BASE_VOCAB}"
        )

    # Distinct pre-tokens in first-appearance order; that order doubles as
    # the stream-position key used by the tie-break.
    word_index: dict[str, int] = {}
    words: list[list[int]] = []
    word_freq: list[int] = []
    for doc in corpus:
        for word in pretokenize(normalize(doc)):
            idx = word_index.get(word)
            if idx is None:
                word_index[word] = len(words)
                words.append(_word_to_ids(word))
                word_freq.append(1)
            else:
                word_freq[idx] += 1
    if not words:
        raise TrainingDataEmpty("corpus is empty after normalization")

    id_to_bytes: list[bytes] = [bytes([b]) for b in range(256)]

    def tok_bytes(token_id: int) -> bytes:
        return id_to_bytes[token_id - N_SPECIALS]

    pair_counts: dict[tuple[int, int], int] = {}
    pair_words: dict[tuple[int, int], set[int]] = {}
    for w, symbols in enumerate(words):
        freq = word_freq[w]
        for pair in zip(symbols, symbols[1:]):
            pair_counts[pair] = pair_counts.get(pair, 0) + freq
            pair_words.setdefault(pair, set()).add(w)

    # Lazy max-heap over (-count, pair); stale entries are re-pushed with the
    # current count when popped so no live pair is ever lost.
    heap: list[tuple[int, tuple[int, int]]] = [
        (-c, p) for p, c in pair_counts.items()
    ]
    heapq.heapify(heap)

    def first_occurrence(pair: tuple[int, int]) -> tuple[int, int]:
        a, b = pair
        for w in sorted(pair_words.get(pair, ())):
            symbols = words[w]
            for off in range(len(symbols) - 1):
                if symbols[off] == a and symbols[off + 1] == b:
                    return (w, off)
        return (len(words), 0)  # stale-only entry; ranks last

    def pop_best() -> tuple[int, int] | None:
        while heap:
            neg, pair = heapq.heappop(heap)
            count = pair_counts.get(pair, 0)
            if count != -neg:
                if count > 0:
                    heapq.heappush(heap, (-count, pair))
                continue
            if count < 2:
                return None
            tied = [pair]
            spill = []
            while heap and heap[0][0] == neg:
                neg2, p2 = heapq.heappop(heap)
                c2 = pair_counts.get(p2, 0)
                if c2 == -neg2:
                    if p2 not in tied:
                        tied.append(p2)
                elif c2 > 0:
                    spill.append((-c2, p2))
            for item in spill:
                heapq.heappush(heap, item)
            if len(tied) == 1:
                best = tied[0]
            else:
                best = min(tied, key=first_occurrence)
            for p2 in tied:
                if p2 is not best:
                    heapq.heappush(heap, (-pair_counts[p2], p2))
            return best
        return None

    def apply_merge(pair: tuple[int, int], new_id: int):
        a, b = pair
        for w in sorted(pair_words.get(pair, ())):
            old = words[w]
            found = False
            for i in range(len(old) - 1):
                if old[i] == a and old[i + 1] == b:
                    found = True
                    break
            if not found:
                continue
            freq = word_freq[w]
            for p in zip(old, old[1:]):
                c = pair_counts.get(p, 0) - freq
                if c > 0:
                    pair_counts[p] = c
                else:
                    pair_counts.pop(p, None)
            new: list[int] = []
            i = 0
            while i < len(old):
                if i < len(old) - 1 and old[i] == a and old[i + 1] == b:
                    new.append(new_id)
                    i += 2
                else:
                    new.append(old[i])
                    i += 1
            words[w] = new
            for p in zip(new, new[1:]):
                c = pair_counts.get(p, 0) + freq
                pair_counts[p] = c
                pair_words.setdefault(p, set()).add(w)
                heapq.heappush(heap, (-c, p))
        pair_words.pop(pair, None)

    n_merges = target_vocab_size - BASE_VOCAB
    merges: list[tuple[bytes, bytes]] = []
    for _ in range(n_merges):
        pair = pop_best()
        if pair is None:
            warnings.warn(
                f"stopped after {len(merges)} merges: no pair occurs twice "
                f"(target was {n_merges})"
            )
            break
        merges.append((tok_bytes(pair[0]), tok_bytes(pair[1])))
        id_to_bytes.append(tok_bytes(pair[0]) + tok_bytes(pair[1]))
        apply_merge(pair, BASE_VOCAB + len(merges) - 1)

    return TokenizerModel(merges=merges, special_tokens=tuple(specials))


def _encode_word(model: TokenizerModel, word: str) -> list[int]:
    ids = _word_to_ids(word)
    ranks = model._merge_ranks
    while len(ids) >= 2:
        best_rank = None
        best_pair = None
        for pair in zip(ids, ids[1:]):
            hit = ranks.get(pair)
            if hit is not None and (best_rank is None or hit[0] < best_rank):
                best_rank, best_pair = hit[0], pair
        if best_pair is None:
            break
        new_id = ranks[best_pair][1]
        out: list[int] = []
        i = 0
        while i < len(ids):
            if i < len(ids) - 1 and ids[i] == best_pair[0] and ids[i + 1] == best_pair[1]:
                out.append(new_id)
                i += 2
            else:
                out.append(ids[i])
                i += 1
        ids = out
    return ids


def encode(model: TokenizerModel, text: str) -> list[int]:
    """NFC-normalize, split into pre-tokens, apply merges in training order."""
    ids: list[int] = []
    for word in pretokenize(normalize(text)):
        ids.extend(_encode_word(model, word))
    return ids


def decode(model: TokenizerModel, ids: Iterable[int]) -> str:
    """Inverse of encode on valid sequences; specials render as empty."""
    chunks = [model.id_to_token_bytes(i) for i in ids]
    return b"".join(chunks).decode("utf-8", errors="replace")


# --- serialization -----------------------------------------------------------
#
# Text format: header line "bpe-v1 <vocab_size>", four special-token lines,
# then one merge per line as two space-separated token strings with every
# byte outside printable ASCII (plus space and backslash) escaped as \xNN.

_PRINTABLE = set(range(0x21, 0x7F)) - {0x5C}


def _escape(token: bytes) -> str:
    return "".join(chr(b) if b in _PRINTABLE else f"\\x{b:02x}" for b in token)


def _unescape(text: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(text):
        if text[i] == "\\":
            if i + 3 >= len(text) or text[i + 1] != "x":
                raise ConfigInvalid(f"bad escape in token {text!r}")
            out.append(int(text[i + 2 : i + 4], 16))
            i += 4
        else:
            out.append(ord(text[i]))
            i += 1
    return bytes(out)


def save(model: TokenizerModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"bpe-v1 {model.vocab_size}\n")
        for tok in model.special_tokens:
            fh.write(tok + "\n")
        for left, right in model.merges:
            fh.write(f"{_escape(left)} {_escape(right)}\n")


def load(path) -> TokenizerModel:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "bpe-v1":
            raise ConfigInvalid(f"{path}: not a bpe-v1 tokenizer file")
        declared = int(header[1])
        specials = tuple(fh.readline().rstrip("\n") for _ in range(N_SPECIALS))
        merges = []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            left, right = line.split(" ")
            merges.append((_unescape(left), _unescape(right)))
    model = TokenizerModel(merges=merges, special_tokens=specials)
    if model.vocab_size != declared:
        raise ConfigInvalid(
            f"{path}: header says {declared} tokens, merges give {model.vocab_size}"
        )
    return model
