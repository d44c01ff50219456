"""Byte-level vocabulary and fixed-length packet tokenisation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import VocabularyError
from .dataset import RawPacket

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
BYTE_OFFSET = len(SPECIALS)
DEFAULT_PACKET_LEN = 64


class Vocabulary:
    """Bijection between token strings and ids.

    The byte-level vocabulary has 260 entries: the four specials at ids 0-3
    followed by the hex strings "00".."ff".
    """

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != SPECIALS:
            raise VocabularyError("specials must occupy ids 0-3")
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate tokens")
        self.tokens = tuple(tokens)
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def byte_level(cls) -> "Vocabulary":
        return cls(SPECIALS + tuple(f"{b:02x}" for b in range(256)))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def is_byte_level(self) -> bool:
        return len(self) == 260 and self.tokens[BYTE_OFFSET] == "00" and self.tokens[-1] == "ff"

    def encode(self, token: str) -> int:
        return self._index.get(token, UNK)

    def decode(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise VocabularyError(f"token id {token_id} outside vocabulary of size {len(self)}")
        return self.tokens[token_id]

    def byte_id(self, b: int) -> int:
        return self.encode(f"{b:02x}")

    def decode_payload(self, ids: Sequence[int]) -> bytes:
        """Bytes of the non-special tokens in ``ids``."""
        return bytes(int(self.decode(int(i)), 16) for i in ids if int(i) >= BYTE_OFFSET)


@dataclass(frozen=True)
class TokenizedPacket:
    ids: np.ndarray
    true_len: int

    @property
    def mask(self) -> np.ndarray:
        return np.arange(len(self.ids)) < self.true_len


def tokenize_packet(p: RawPacket | bytes, vocab: Vocabulary | None = None,
                    packet_len: int = DEFAULT_PACKET_LEN) -> TokenizedPacket:
    """[BOS] + one token per byte + [EOS], cut to ``packet_len`` then PAD-filled.

    EOS survives only when the payload fits in ``packet_len - 2`` tokens.
    """
    payload = p.payload if isinstance(p, RawPacket) else bytes(p)
    vocab = vocab or BYTE_VOCAB
    if vocab.is_byte_level:
        body = np.frombuffer(payload, dtype=np.uint8).astype(np.int64) + BYTE_OFFSET
    else:
        body = np.array([vocab.byte_id(b) for b in payload], dtype=np.int64)
    seq = np.concatenate([[BOS], body, [EOS]])[:packet_len]
    ids = np.full(packet_len, PAD, dtype=np.int64)
    ids[: len(seq)] = seq
    return TokenizedPacket(ids=ids, true_len=len(seq))


def tokenize_many(payloads: Sequence[bytes | RawPacket], packet_len: int = DEFAULT_PACKET_LEN,
                  vocab: Vocabulary | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack tokenised packets: ``(ids (N, packet_len), true_len (N,))``."""
    n = len(payloads)
    ids = np.full((n, packet_len), PAD, dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for k, p in enumerate(payloads):
        tp = tokenize_packet(p, vocab, packet_len)
        ids[k] = tp.ids
        lengths[k] = tp.true_len
    return ids, lengths


BYTE_VOCAB = Vocabulary.byte_level()
