"""Hash vocabulary for the verifier.

Reserved ids cover padding, the newline separator, the two label tokens,
and the three prompt field markers. Surface tokens are lowercased, split on
whitespace/punctuation, and hashed with CRC-32 into the non-reserved range,
which keeps tokenization deterministic across runs and platforms.
"""
from __future__ import annotations

import re
import zlib
from dataclasses import dataclass

from ..errors import ConfigError

# Markers are matched case-sensitively and before the word branch; runs of
# letters/digits form words, any other non-space character stands alone.
_TOKEN = re.compile(r"\n|INDICATION:|TECHNIQUE:|COMPARISON:|[A-Za-z0-9]+|[^\sA-Za-z0-9]")


@dataclass(frozen=True)
class Vocabulary:
    size: int = 4096

    PAD = 0
    SEP = 1
    LABEL0 = 2
    LABEL1 = 3
    IND = 4
    TECH = 5
    COMP = 6
    RESERVED = 7

    def __post_init__(self):
        if self.size < 16:
            raise ConfigError(f"vocabulary size must be >= 16, got {self.size}")

    def label_id(self, y: int) -> int:
        return self.LABEL1 if y else self.LABEL0

    def hash_token(self, token: str) -> int:
        span = self.size - self.RESERVED
        return self.RESERVED + zlib.crc32(token.encode("utf-8")) % span


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Map text to token ids; '\\n' becomes SEP, markers their reserved ids."""
    marker_ids = {"INDICATION:": vocab.IND, "TECHNIQUE:": vocab.TECH, "COMPARISON:": vocab.COMP}
    ids = []
    for token in _TOKEN.findall(text):
        if token == "\n":
            ids.append(vocab.SEP)
        elif token in marker_ids:
            ids.append(marker_ids[token])
        else:
            ids.append(vocab.hash_token(token.lower()))
    return ids
