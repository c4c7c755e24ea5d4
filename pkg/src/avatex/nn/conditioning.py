"""Attribute-token conditioning.

The "text prompt" is a fixed vocabulary of identity attributes plus two
reserved tokens: ``<null>`` (the unconditional embedding, also used as
padding) and ``<uv>`` (prepended when the denoiser is working in texture
space rather than image space).  Conditions are padded to a fixed length
so batches never need attention masks.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError

NULL_TOKEN = "<null>"
UV_TOKEN = "<uv>"

COND_LEN = 4

TONE_TOKENS = ("tone:porcelain", "tone:fair", "tone:olive",
               "tone:tan", "tone:brown", "tone:deep")
AGE_TOKENS = ("age:young", "age:adult", "age:elder")
ACCESSORY_TOKENS = ("acc:none", "acc:headband", "acc:paint")


class Vocabulary:
    """Bidirectional token <-> id mapping."""

    def __init__(self, tokens: tuple[str, ...]):
        self.tokens = tuple(tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        if self.tokens[0] != NULL_TOKEN:
            raise ConfigError("vocabulary must start with the null token")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise ConfigError(f"unknown attribute token {token!r}; "
                              f"known: {', '.join(self.tokens)}") from None

    def encode(self, tokens, uv_mode: bool = False) -> "Condition":
        ids = [self.id_of(t) for t in tokens]
        if uv_mode:
            ids = [self.id_of(UV_TOKEN)] + ids
        if len(ids) > COND_LEN:
            raise ConfigError(f"at most {COND_LEN} tokens supported, got {len(ids)}")
        ids = ids + [0] * (COND_LEN - len(ids))
        return Condition(tuple(ids), is_null=all(i == 0 for i in ids))

    def null(self) -> "Condition":
        return Condition((0,) * COND_LEN, is_null=True)

    def parse_prompt(self, prompt: str, uv_mode: bool = False) -> "Condition":
        """Split a whitespace/comma separated prompt string into tokens."""
        tokens = [t for t in prompt.replace(",", " ").split() if t]
        return self.encode(tokens, uv_mode=uv_mode)


def default_vocabulary() -> Vocabulary:
    return Vocabulary((NULL_TOKEN, UV_TOKEN) + TONE_TOKENS + AGE_TOKENS + ACCESSORY_TOKENS)


@dataclass(frozen=True)
class Condition:
    """A fixed-length sequence of attribute-token ids."""

    tokens: tuple[int, ...]
    is_null: bool = False

    def __post_init__(self):
        if len(self.tokens) != COND_LEN:
            raise ConfigError(f"condition must have exactly {COND_LEN} token ids")
        if self.is_null and any(t != 0 for t in self.tokens):
            raise ConfigError("null condition must be the reserved all-null sequence")
