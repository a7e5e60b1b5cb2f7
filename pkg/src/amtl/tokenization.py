"""Character and BPE word-piece vocabularies.

Both kinds reserve id 0 for the CTC blank and id 1 for unknown symbols.
Character vocabularies spell spaces as ``|``. Word pieces mark the end of a
word with ``</w>``; decoding turns those markers back into spaces.
"""
from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from amtl.errors import AmtlError

BLANK = "<blank>"
UNK = "<unk>"
WORD_SEP = "|"
EOW = "</w>"
BLANK_ID = 0
UNK_ID = 1


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


@dataclass
class Vocabulary:
    tokens: list[str]
    kind: str = "character"
    merges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("character", "wordpiece"):
            raise AmtlError(f"unknown vocabulary kind {self.kind!r}")
        if self.tokens[:2] != [BLANK, UNK]:
            raise AmtlError("vocabulary must start with <blank> and <unk>")
        if len(set(self.tokens)) != len(self.tokens):
            raise AmtlError("vocabulary tokens must be unique")
        self._ids = {t: i for i, t in enumerate(self.tokens)}
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}

    blank_id = BLANK_ID
    unk_id = UNK_ID

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def encode(self, text: str) -> list[int]:
        return encode_text(self, text)

    def decode(self, ids: Sequence[int]) -> str:
        return decode_ids(self, ids)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    def save_merges(self, path) -> None:
        Path(path).write_text("".join(f"{a} {b}\n" for a, b in self.merges), encoding="utf-8")

    @classmethod
    def load(cls, path, merges_path=None) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        merges: list[tuple[str, str]] = []
        kind = "character"
        if merges_path is not None:
            kind = "wordpiece"
            for i, line in enumerate(Path(merges_path).read_text(encoding="utf-8").splitlines(), 1):
                parts = line.split(" ")
                if len(parts) != 2:
                    raise AmtlError(f"merge table line {i}: expected 'left right', got {line!r}")
                merges.append((parts[0], parts[1]))
        elif EOW in tokens:
            kind = "wordpiece"
        return cls(tokens, kind, merges)


def build_char_vocab(corpus: Iterable[str]) -> Vocabulary:
    corpus = [_nfc(t) for t in corpus]
    if not corpus:
        raise AmtlError("cannot build a vocabulary from an empty corpus")
    chars = sorted({c for text in corpus for c in text} - {" ", WORD_SEP})
    return Vocabulary([BLANK, UNK, WORD_SEP, *chars], "character")


def _words(text: str) -> list[str]:
    # split on single spaces so repeated/leading/trailing spaces survive a round trip
    return text.split(" ")


def train_bpe(corpus: Iterable[str], vocab_size: int) -> tuple[Vocabulary, list[tuple[str, str]]]:
    """Greedy byte-pair merging over whitespace-split words.

    Each step merges the most frequent adjacent pair (ties broken by the
    lexicographic order of the pair) until ``vocab_size`` is reached or no
    pair occurs at least twice.
    """
    corpus = [_nfc(t) for t in corpus]
    if not corpus:
        raise AmtlError("cannot train BPE on an empty corpus")
    word_counts = Counter(w for text in corpus for w in _words(text))
    base = sorted({c for w in word_counts for c in w} | {EOW})
    minimum = len(base) + 2
    if vocab_size < minimum:
        raise AmtlError(f"vocab_size {vocab_size} too small; minimum feasible size is {minimum}")

    seqs = {w: [*w, EOW] for w in word_counts}
    tokens = [BLANK, UNK, *base]
    known = set(tokens)
    merges: list[tuple[str, str]] = []
    while len(tokens) < vocab_size:
        pairs: Counter = Counter()
        for w, n in word_counts.items():
            s = seqs[w]
            for a, b in zip(s, s[1:]):
                pairs[(a, b)] += n
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
        if best[1] < 2:
            break
        pair = best[0]
        merged = pair[0] + pair[1]
        merges.append(pair)
        for w in seqs:
            seqs[w] = _merge_pair(seqs[w], pair, merged)
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
    vocab = Vocabulary(tokens, "wordpiece", merges)
    return vocab, merges


def _merge_pair(seq: list[str], pair: tuple[str, str], merged: str) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(seq):
        if i + 1 < len(seq) and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def _bpe_word(word: str, ranks: dict[tuple[str, str], int]) -> list[str]:
    # repeatedly apply the earliest-learned merge present; equivalent to replaying the table in order
    seq = [*word, EOW]
    while len(seq) > 1:
        best_rank, best_pair = None, None
        for pair in zip(seq, seq[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best_rank, best_pair = r, pair
        if best_pair is None:
            break
        seq = _merge_pair(seq, best_pair, best_pair[0] + best_pair[1])
    return seq


def encode_text(v: Vocabulary, text: str, merges: Sequence[tuple[str, str]] | None = None) -> list[int]:
    text = _nfc(text)
    if not text:
        return []
    if v.kind == "character":
        return [v.id(WORD_SEP) if c == " " else (v.id(c) if c != WORD_SEP else UNK_ID) for c in text]
    ranks = v._ranks if merges is None else {p: i for i, p in enumerate(merges)}
    ids: list[int] = []
    for w in _words(text):
        ids.extend(v.id(p) for p in _bpe_word(w, ranks))
    return ids


def decode_ids(v: Vocabulary, ids: Sequence[int]) -> str:
    n = len(v)
    for i in ids:
        if not 0 <= int(i) < n:
            raise AmtlError(f"token id {int(i)} out of range for vocabulary of size {n}")
    pieces = [v.tokens[int(i)] for i in ids if int(i) != BLANK_ID]
    if v.kind == "character":
        return "".join(" " if p == WORD_SEP else p for p in pieces)
    text = "".join(pieces).replace(EOW, " ")
    return text[:-1] if text.endswith(" ") else text
