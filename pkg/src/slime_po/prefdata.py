"""Preference-pair data model, JSONL ingestion, synthetic corpora and splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataValidationError(ValueError):
    """A record violates the pair invariants (range, emptiness, ties)."""


class DataParseError(ValueError):
    """A JSONL line could not be decoded into a pair record."""


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if len(self.tokens) == 0:
            raise DataValidationError("token sequence must not be empty")
        if min(self.tokens) < 0:
            raise DataValidationError("token ids must be non-negative")

    @property
    def length(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def check_vocab(self, vocab_size: int):
        if max(self.tokens) >= vocab_size:
            raise DataValidationError(
                f"token id {max(self.tokens)} out of range for vocab_size={vocab_size}"
            )


@dataclass(frozen=True)
class PreferencePair:
    prompt: TokenSequence
    chosen: TokenSequence
    rejected: TokenSequence
    pair_id: str

    def __post_init__(self):
        if self.chosen.tokens == self.rejected.tokens:
            raise DataValidationError(f"pair {self.pair_id}: chosen equals rejected")

    @classmethod
    def from_lists(cls, prompt, chosen, rejected, pair_id) -> "PreferencePair":
        return cls(TokenSequence(prompt), TokenSequence(chosen), TokenSequence(rejected), str(pair_id))

    def check_vocab(self, vocab_size: int):
        for seq in (self.prompt, self.chosen, self.rejected):
            seq.check_vocab(vocab_size)

    def to_record(self) -> dict:
        return {
            "prompt": list(self.prompt.tokens),
            "chosen": list(self.chosen.tokens),
            "rejected": list(self.rejected.tokens),
            "pair_id": self.pair_id,
        }


@dataclass(frozen=True)
class CorpusSplit:
    sft_fraction: float
    seed: int
    sft_indices: tuple[int, ...]
    pref_indices: tuple[int, ...]


def _token_list(record, key, lineno):
    if key not in record:
        raise DataParseError(f"line {lineno}: missing field {key!r}")
    value = record[key]
    if not isinstance(value, list) or not all(
        isinstance(t, int) and not isinstance(t, bool) for t in value
    ):
        raise DataParseError(f"line {lineno}: field {key!r} must be an array of integers")
    return value


def load_jsonl(path, vocab_size: int) -> list[PreferencePair]:
    """Read pairs from a JSONL file, one ``{prompt, chosen, rejected}`` object per line.

    Blank lines are skipped. ``pair_id`` is optional; missing ids default to
    the 1-based line number.
    """
    path = Path(path)
    pairs = []
    seen = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataParseError(f"line {lineno}: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise DataParseError(f"line {lineno}: expected a JSON object")
            fields = [_token_list(record, k, lineno) for k in ("prompt", "chosen", "rejected")]
            pair_id = str(record.get("pair_id", lineno))
            if pair_id in seen:
                raise DataValidationError(f"line {lineno}: duplicate pair_id {pair_id!r}")
            seen.add(pair_id)
            try:
                pair = PreferencePair.from_lists(*fields, pair_id=pair_id)
                pair.check_vocab(vocab_size)
            except DataValidationError as exc:
                raise DataValidationError(f"line {lineno}: {exc}") from exc
            pairs.append(pair)
    return pairs


def save_jsonl(pairs, path):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_record()) + "\n")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_corpus(n: int, sft_fraction: float, seed: int) -> CorpusSplit:
    """Seeded disjoint split of ``range(n)`` into an SFT part and a preference part."""
    if n < 2:
        raise ValueError(f"need at least 2 examples to split, got {n}")
    if not 0.0 < sft_fraction < 1.0:
        raise ValueError(f"sft_fraction must lie in (0, 1), got {sft_fraction}")
    n_sft = min(max(_round_half_up(sft_fraction * n), 1), n - 1)
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    sft = tuple(sorted(int(i) for i in perm[:n_sft]))
    pref = tuple(sorted(int(i) for i in perm[n_sft:]))
    return CorpusSplit(sft_fraction, seed, sft, pref)


@dataclass(frozen=True)
class SyntheticStyle:
    """Token-group layout of the planted-gap generator.

    The vocabulary is cut into three contiguous groups: shared "format"
    tokens, preferred-style tokens and dispreferred-style tokens. Rates are
    per-mille so sampling stays on the integer path.
    """

    vocab_size: int
    chosen_style_permille: int = 700
    rejected_style_permille: int = 500

    @property
    def format_ids(self):
        return range(0, self.vocab_size // 3)

    @property
    def preferred_ids(self):
        return range(self.vocab_size // 3, 2 * self.vocab_size // 3)

    @property
    def dispreferred_ids(self):
        return range(2 * self.vocab_size // 3, self.vocab_size)

    @property
    def planted_gap(self) -> float:
        """Expected share of preferred-style tokens in chosen minus rejected responses."""
        return self.chosen_style_permille / 1000.0


def _draw_response(rng, length, style_ids, fmt_ids, style_permille):
    coins = rng.integers(0, 1000, size=length)
    style = rng.integers(style_ids.start, style_ids.stop, size=length)
    fmt = rng.integers(fmt_ids.start, fmt_ids.stop, size=length)
    return [int(s) if c < style_permille else int(f) for c, s, f in zip(coins, style, fmt)]


def generate_synthetic(
    n_pairs: int,
    vocab_size: int,
    max_len: int,
    seed: int,
    chosen_style_permille: int = 700,
    rejected_style_permille: int = 500,
) -> list[PreferencePair]:
    """Planted-gap corpus: chosen responses mix format and preferred-style tokens,
    rejected responses mix format and dispreferred-style tokens.

    Rejected responses carry more shared format tokens than chosen ones, so a
    pure margin objective can raise its margin by suppressing format tokens.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if vocab_size < 4:
        raise ValueError("vocab_size must be >= 4")
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    for rate in (chosen_style_permille, rejected_style_permille):
        if not 0 <= rate <= 1000:
            raise ValueError("style rates are per-mille values in [0, 1000]")

    style = SyntheticStyle(vocab_size, chosen_style_permille, rejected_style_permille)
    rng = np.random.Generator(np.random.PCG64(seed))
    min_len = max(1, max_len // 2)
    pairs = []
    for i in range(n_pairs):
        prompt = [int(t) for t in rng.integers(0, vocab_size, size=int(rng.integers(1, max_len + 1)))]
        n_c = int(rng.integers(min_len, max_len + 1))
        chosen = _draw_response(rng, n_c, style.preferred_ids, style.format_ids, chosen_style_permille)
        while True:
            n_r = int(rng.integers(min_len, max_len + 1))
            rejected = _draw_response(
                rng, n_r, style.dispreferred_ids, style.format_ids, rejected_style_permille
            )
            if rejected != chosen:
                break
        pairs.append(PreferencePair.from_lists(prompt, chosen, rejected, f"syn-{i:06d}"))
    return pairs
