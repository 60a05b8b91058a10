"""Character set handling for word recognition.

The default set has 94 recognizable characters: 26 uppercase letters,
26 lowercase letters, 10 digits, and the 32 ASCII punctuation marks.
Special tokens (padding, unknown, space) live alongside them; decoder
specific tokens ([CTCblank], [SOS], [EOS]) are declared by the model
heads that need them.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
SPACE_TOKEN = " "

_UPPER = string.ascii_uppercase
_LOWER = string.ascii_lowercase
_DIGITS = string.digits
_PUNCT = string.punctuation  # exactly the 32 ASCII punctuation marks


@dataclass(frozen=True)
class CharsetSpec:
    """Ordered recognizable characters plus special tokens.

    Index assignment over ``recognizable_chars`` is positional and stable.
    """

    recognizable_chars: str = _UPPER + _LOWER + _DIGITS + _PUNCT
    special_tokens: tuple[str, ...] = (PAD_TOKEN, UNK_TOKEN, SPACE_TOKEN)
    _index: dict[str, int] = field(init=False, repr=False, compare=False, hash=False, default=None)

    def __post_init__(self):
        chars = self.recognizable_chars
        if len(set(chars)) != len(chars):
            raise ValueError("recognizable_chars contains duplicates")
        for token in self.special_tokens:
            if len(token) == 1 and token in chars:
                raise ValueError(f"special token {token!r} collides with a recognizable character")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(chars)})

    def __len__(self) -> int:
        return len(self.recognizable_chars)

    def __contains__(self, char: str) -> bool:
        return char in self._index

    def index_of(self, char: str) -> int:
        try:
            return self._index[char]
        except KeyError:
            raise KeyError(f"character {char!r} is not recognizable") from None

    def char_at(self, index: int) -> str:
        return self.recognizable_chars[index]

    def is_clean(self, label: str) -> bool:
        """True when every character of ``label`` is recognizable."""
        return all(c in self._index for c in label)


def default_charset() -> CharsetSpec:
    """The 94-character set used for prediction."""
    return CharsetSpec()
