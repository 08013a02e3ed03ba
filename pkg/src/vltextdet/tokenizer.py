"""Byte-pair-encoding tokenizer with byte fallback.

The tokenizer lowercases its input, splits it into word-like pieces, and
merges bytes according to a ranked merge table.  Every byte has its own id,
so any UTF-8 string can be encoded without an unknown-token path.  The merge
table is a plain text file, one merge per line, rank = line number; a small
default table trained on the bundled corpus ships with the package.

Id layout (within a CLIP-compatible 49,152 id space by default):
    0                   padding
    1..256              single bytes (id = 1 + byte value)
    257..256+n_merges   merged tokens, in merge-rank order
    vocab_size-2        start-of-sequence
    vocab_size-1        end-of-sequence
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

DEFAULT_VOCAB_SIZE = 49152
PAD_ID = 0

# Word-ish pieces with their leading space attached, so detokenization is a
# plain concatenation and round-trips exactly on lowercased text.
_PRETOKEN_RE = re.compile(r" ?[a-z]+| ?[0-9]+| ?[^\sa-z0-9]+|\s+")


def byte_alphabet() -> dict[int, str]:
    """Bijective map from byte value to a printable character.

    Printable ASCII and Latin-1 symbols map to themselves; the remaining
    bytes are shifted into unused codepoints above 255.  Makes merge-table
    files readable and whitespace-safe.
    """
    keep = list(range(ord("!"), ord("~") + 1)) + \
        list(range(0xA1, 0xAD)) + list(range(0xAE, 0x100))
    mapping = {}
    shift = 0
    for b in range(256):
        if b in keep:
            mapping[b] = chr(b)
        else:
            mapping[b] = chr(256 + shift)
            shift += 1
    return mapping


_BYTE_TO_CHAR = byte_alphabet()
_CHAR_TO_BYTE = {c: b for b, c in _BYTE_TO_CHAR.items()}


class TokenizerError(ValueError):
    pass


@dataclass
class TokenSequence:
    """Padded id sequence bracketed by SOS/EOS.

    ``ids`` always has length ``max_len``; ``length`` counts the real tokens
    including the brackets, so ``ids[length - 1]`` is the EOS id and anything
    after it is padding.
    """

    ids: list[int]
    length: int
    max_len: int = 77

    def __post_init__(self):
        if len(self.ids) != self.max_len:
            raise TokenizerError(
                f"ids must be padded to max_len={self.max_len}, got {len(self.ids)}")
        if not 2 <= self.length <= self.max_len:
            raise TokenizerError(f"length {self.length} out of range")

    @property
    def real_ids(self) -> list[int]:
        return self.ids[: self.length]


@dataclass
class BpeTokenizer:
    merges: dict[tuple[str, str], int]
    vocab_size: int = DEFAULT_VOCAB_SIZE
    _token_to_id: dict[str, int] = field(init=False, repr=False)
    _id_to_token: dict[int, str] = field(init=False, repr=False)

    def __post_init__(self):
        n_reserved = 1 + 256 + len(self.merges) + 2
        if self.vocab_size < n_reserved:
            raise TokenizerError(
                f"vocab_size {self.vocab_size} too small for {len(self.merges)} merges")
        self._token_to_id = {_BYTE_TO_CHAR[b]: 1 + b for b in range(256)}
        for (a, b), rank in self.merges.items():
            self._token_to_id[a + b] = 257 + rank
        self._id_to_token = {i: t for t, i in self._token_to_id.items()}

    @property
    def sos_id(self) -> int:
        return self.vocab_size - 2

    @property
    def eos_id(self) -> int:
        return self.vocab_size - 1

    @classmethod
    def from_merge_file(cls, path: str | Path, vocab_size: int = DEFAULT_VOCAB_SIZE) -> "BpeTokenizer":
        merges = {}
        for rank, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise TokenizerError(f"merge file line {rank + 1}: expected two tokens")
            merges[(parts[0], parts[1])] = rank
        return cls(merges=merges, vocab_size=vocab_size)

    @classmethod
    def default(cls, vocab_size: int = DEFAULT_VOCAB_SIZE) -> "BpeTokenizer":
        with resources.as_file(resources.files("vltextdet.resources") / "merges.txt") as p:
            return cls.from_merge_file(p, vocab_size)

    # -- encoding ---------------------------------------------------------

    def _bpe_word(self, word: str) -> list[str]:
        symbols = [_BYTE_TO_CHAR[b] for b in word.encode("utf-8")]
        while len(symbols) >= 2:
            best = None
            for i in range(len(symbols) - 1):
                rank = self.merges.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best is None or rank < best[0]):
                    best = (rank, i)
            if best is None:
                break
            _, i = best
            symbols = symbols[:i] + [symbols[i] + symbols[i + 1]] + symbols[i + 2:]
        return symbols

    def encode(self, text: str) -> list[int]:
        """Body ids only, no SOS/EOS/padding."""
        ids = []
        for piece in _PRETOKEN_RE.findall(text.lower()):
            for tok in self._bpe_word(piece):
                ids.append(self._token_to_id[tok])
        return ids

    def decode(self, ids: list[int]) -> str:
        chars = []
        for i in ids:
            if i in (PAD_ID, self.sos_id, self.eos_id):
                continue
            tok = self._id_to_token.get(i)
            if tok is None:
                raise TokenizerError(f"unknown token id {i}")
            chars.append(tok)
        data = bytes(_CHAR_TO_BYTE[c] for c in "".join(chars))
        return data.decode("utf-8", errors="replace")

    def tokenize(self, prompt: str, max_len: int = 77) -> TokenSequence:
        """Bracketed, truncated-or-padded sequence; truncation keeps EOS."""
        if max_len < 2:
            raise TokenizerError(f"max_len must be >= 2, got {max_len}")
        body = self.encode(prompt)[: max_len - 2]
        ids = [self.sos_id] + body + [self.eos_id]
        length = len(ids)
        ids = ids + [PAD_ID] * (max_len - length)
        return TokenSequence(ids=ids, length=length, max_len=max_len)


def learn_merges(corpus: str, num_merges: int) -> dict[tuple[str, str], int]:
    """Classic frequency-based merge learning over the pre-token stream.

    Ties break toward the lexicographically smallest pair so the table is
    identical across platforms.
    """
    words: dict[tuple[str, ...], int] = {}
    for piece in _PRETOKEN_RE.findall(corpus.lower()):
        key = tuple(_BYTE_TO_CHAR[b] for b in piece.encode("utf-8"))
        words[key] = words.get(key, 0) + 1

    merges: dict[tuple[str, str], int] = {}
    for rank in range(num_merges):
        counts: dict[tuple[str, str], int] = {}
        for word, freq in words.items():
            for pair in zip(word, word[1:]):
                counts[pair] = counts.get(pair, 0) + freq
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        if counts[best] < 2:
            break
        merges[best] = rank
        merged = best[0] + best[1]
        new_words = {}
        for word, freq in words.items():
            out, i = [], 0
            while i < len(word):
                if i + 1 < len(word) and word[i] == best[0] and word[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(word[i])
                    i += 1
            new_words[tuple(out)] = new_words.get(tuple(out), 0) + freq
        words = new_words
    return merges


def write_merge_file(merges: dict[tuple[str, str], int], path: str | Path) -> None:
    ordered = sorted(merges.items(), key=lambda kv: kv[1])
    Path(path).write_text(
        "".join(f"{a} {b}\n" for (a, b), _ in ordered), encoding="utf-8")
