"""Text and phoneme-string handling via a pronunciation lexicon.

Words are looked up in a CMU-dictionary-format lexicon; out-of-vocabulary
words become a single UNK token and are reported through the module logger.
Stress digits are part of the symbol (AH0 and AH1 are distinct tokens).
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataFormatError, TokenError
from .model import PhonemeSequence

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
PAD_SYMBOL = "<pad>"
UNK_SYMBOL = "<unk>"

_WORD_RE = re.compile(r"[a-z']+")
_ALT_SUFFIX_RE = re.compile(r"\(\d+\)$")


@dataclass
class Lexicon:
    """word -> phoneme list, plus the phoneme symbol table (ids 0/1 reserved)."""

    entries: dict[str, list[str]]
    symbol_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.symbol_to_id:
            symbols = sorted({p for phones in self.entries.values() for p in phones})
            self.symbol_to_id = {s: i + 2 for i, s in enumerate(symbols)}
        self.id_to_symbol = {i: s for s, i in self.symbol_to_id.items()}
        self.id_to_symbol[PAD_ID] = PAD_SYMBOL
        self.id_to_symbol[UNK_ID] = UNK_SYMBOL

    @property
    def vocab_size(self) -> int:
        return len(self.symbol_to_id) + 2

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.entries

    def __getitem__(self, word: str) -> list[str]:
        return self.entries[word.lower()]


def load_lexicon(path) -> Lexicon:
    """Parse a CMU-format lexicon: `WORD  PH1 PH2 ...`, `;;;` comments.

    Keys are case-insensitive; duplicate words (including `WORD(2)`-style
    alternates) keep the first pronunciation. Symbol ids are assigned from 2
    over the sorted union of phonemes.
    """
    entries: dict[str, list[str]] = {}
    try:
        text = Path(path).read_text(encoding="utf-8", errors="strict")
    except OSError as exc:
        raise DataFormatError(f"cannot read lexicon {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"lexicon {path} is not valid UTF-8: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith(";;;"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise DataFormatError(
                f"{path}:{lineno}: expected 'WORD PH1 PH2 ...', got {line!r}")
        word = _ALT_SUFFIX_RE.sub("", parts[0]).lower()
        if word and word not in entries:
            entries[word] = parts[1:]
    return Lexicon(entries)


def builtin_lexicon() -> Lexicon:
    """The packaged demo lexicon; covers the full stress-marked symbol set."""
    with resources.as_file(resources.files("tinytts") / "data" / "lexicon.txt") as p:
        return load_lexicon(p)


def text_to_phonemes(text: str, lexicon: Lexicon) -> list[str]:
    """Lowercase, split at punctuation, look words up; OOV maps to UNK."""
    phonemes: list[str] = []
    for word in _WORD_RE.findall(text.lower()):
        if word in lexicon:
            phonemes.extend(lexicon[word])
        else:
            log.warning("word %r is not in the lexicon; emitting UNK", word)
            phonemes.append(UNK_SYMBOL)
    return phonemes


def phonemes_to_ids(phonemes: list[str], lexicon: Lexicon) -> PhonemeSequence:
    """Symbol-table lookup; unknown symbols map to the UNK id."""
    if not phonemes:
        raise TokenError("cannot build a phoneme sequence from no phonemes")
    ids = np.array([lexicon.symbol_to_id.get(p, UNK_ID) for p in phonemes],
                   dtype=np.int64)
    return PhonemeSequence(ids)


def ids_to_phonemes(ids: PhonemeSequence | np.ndarray, lexicon: Lexicon) -> list[str]:
    if isinstance(ids, PhonemeSequence):
        ids = ids.ids
    out = []
    for i in np.asarray(ids):
        sym = lexicon.id_to_symbol.get(int(i))
        if sym is None:
            raise TokenError(f"id {int(i)} is not in the symbol table")
        out.append(sym)
    return out


def text_to_ids(text: str, lexicon: Lexicon) -> PhonemeSequence:
    return phonemes_to_ids(text_to_phonemes(text, lexicon), lexicon)
