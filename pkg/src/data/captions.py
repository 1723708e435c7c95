"""Caption templates and the small caption vocabulary."""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

from src.utils.validation_utils import ArgumentError

NULL_TOKEN = "<null>"
NULL_TOKEN_ID = 0
CAPTION_TEMPLATE = "a photo of {name}"
_TEMPLATE_WORDS = ("a", "photo", "of")


def caption_for(class_name: str) -> str:
    return CAPTION_TEMPLATE.format(name=class_name)


class CaptionTokenizer:
    """Word-level tokenizer over the template words and the class names."""

    def __init__(self, class_names: Sequence[str]):
        words = [NULL_TOKEN, *_TEMPLATE_WORDS]
        for name in class_names:
            for word in name.split():
                if word not in words:
                    words.append(word)
        self.vocabulary: Tuple[str, ...] = tuple(words)
        self._index: Dict[str, int] = {w: i for i, w in enumerate(self.vocabulary)}

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def encode(self, caption: str) -> Tuple[int, ...]:
        try:
            return tuple(self._index[word] for word in caption.split())
        except KeyError as e:
            raise ArgumentError(f"Caption word {e} not in vocabulary") from e

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.vocabulary[i] for i in ids if i != NULL_TOKEN_ID)

    def pad(self, ids: Sequence[int], length: int) -> List[int]:
        """Truncate or right-pad with the null token to exactly length ids."""
        ids = list(ids)[:length]
        return ids + [NULL_TOKEN_ID] * (length - len(ids))

    def null_ids(self, length: int) -> List[int]:
        return [NULL_TOKEN_ID] * length


__all__ = [
    "NULL_TOKEN",
    "NULL_TOKEN_ID",
    "CAPTION_TEMPLATE",
    "caption_for",
    "CaptionTokenizer",
]
