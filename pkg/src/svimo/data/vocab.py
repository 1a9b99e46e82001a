"""Prompt template grammar and its closed word vocabulary."""

from typing import Iterable, List, Sequence

import torch

from svimo.errors import VocabularyError

PAD = "<pad>"
PAD_ID = 0

HANDS = ("left", "right")
TOOLS = ("spoon", "spatula", "stick", "scraper", "ladle")
TARGETS = ("bowl", "plate", "cup", "pan", "board")
ACTIONS = ("stir", "push", "lift", "rotate", "brush")
TEMPLATE_WORDS = ("hand", "uses", "the", "to")


def make_prompt(hand: str, tool: str, action: str, target: str) -> str:
    return f"{hand} hand uses the {tool} to {action} the {target}"


def tokenize(prompt: str) -> List[str]:
    return prompt.lower().split()


class PromptVocab:
    """Word -> id table; id 0 is the pad token."""

    def __init__(self, words: Sequence[str]):
        if not words or words[0] != PAD:
            raise VocabularyError(f"vocabulary must start with {PAD!r}")
        if len(set(words)) != len(words):
            raise VocabularyError("vocabulary contains duplicate words")
        self.words = tuple(words)
        self._ids = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def build(cls) -> "PromptVocab":
        grammar = set(HANDS) | set(TOOLS) | set(TARGETS) | set(ACTIONS) | set(TEMPLATE_WORDS)
        return cls([PAD] + sorted(grammar))

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other) -> bool:
        return isinstance(other, PromptVocab) and self.words == other.words

    @property
    def pad_id(self) -> int:
        return PAD_ID

    def encode(self, prompt: str, length: int) -> List[int]:
        words = tokenize(prompt)
        if len(words) > length:
            raise VocabularyError(f"prompt has {len(words)} words, L_text is {length}: {prompt!r}")
        ids = []
        for word in words:
            if word not in self._ids:
                raise VocabularyError(f"out-of-vocabulary token {word!r} in prompt {prompt!r}")
            ids.append(self._ids[word])
        return ids + [PAD_ID] * (length - len(ids))

    def encode_batch(self, prompts: Iterable[str], length: int) -> torch.Tensor:
        return torch.tensor([self.encode(p, length) for p in prompts], dtype=torch.long)

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.words[i] for i in ids if i != PAD_ID)
