"""Model data types and log-domain score arithmetic.

Probabilities are carried as *scores*, negative natural logarithms, so
products of probabilities become sums of scores and probability sums become
log-sum-exp combinations.  A score of +infinity encodes probability zero and
behaves as the identity element of :func:`score_add`.

All model objects (acoustic scores, topology, lexicon, language models) are
immutable after construction and safe to share across concurrent decodes.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

#: Explicit sentence-end event, included in every LM normalization.
SENTENCE_END = "</s>"

ZERO_PROB_SCORE = math.inf


class DataError(Exception):
    """Malformed input file, invalid configuration, or inconsistent models."""


def prob_to_score(p: float) -> float:
    """Convert a probability to a score (-ln p); p = 0 maps to +inf."""
    if p < 0.0:
        raise ValueError(f"probability must be non-negative, got {p}")
    return -math.log(p) if p > 0.0 else ZERO_PROB_SCORE


def score_to_prob(score: float) -> float:
    return 0.0 if score == ZERO_PROB_SCORE else math.exp(-score)


def score_add(a: float, b: float) -> float:
    """Combine two scores as probabilities: -ln(e^-a + e^-b).

    Evaluated with max-shifting so no intermediate overflows; +inf acts as
    the identity and the result is never NaN.
    """
    if a == ZERO_PROB_SCORE:
        return b
    if b == ZERO_PROB_SCORE:
        return a
    if a > b:
        a, b = b, a
    return a - math.log1p(math.exp(a - b))


def score_sum(scores: Iterable[float]) -> float:
    """Fold :func:`score_add` over an iterable; empty input is +inf."""
    total = ZERO_PROB_SCORE
    for s in scores:
        total = score_add(total, s)
    return total


@dataclass(frozen=True)
class ScaleConfig:
    """Acoustic and LM score scales.

    The acoustic scale multiplies emission, transition, and pronunciation
    scores; the LM scale multiplies word and sentence-end scores.  Scaling
    both by a common factor therefore scales every score in the search.
    """

    acoustic: float = 1.0
    lm: float = 1.0

    def __post_init__(self) -> None:
        if not (self.acoustic > 0.0 and self.lm > 0.0):
            raise ValueError(f"scales must be positive, got {self}")


class AcousticScores:
    """Per-frame state posteriors p(s|x_t) plus state priors p(s).

    Emission scores are scaled likelihoods -ln(p(s|x_t)/p(s)); they may be
    negative because the posterior/prior ratio can exceed one.
    """

    def __init__(self, posteriors: np.ndarray, priors: np.ndarray) -> None:
        post = np.array(posteriors, dtype=np.float64)
        prior = np.array(priors, dtype=np.float64)
        if post.ndim != 2 or post.shape[0] < 1 or post.shape[1] < 1:
            raise DataError(f"posteriors must be a (T, S) matrix, got shape {post.shape}")
        if prior.shape != (post.shape[1],):
            raise DataError(
                f"priors must have shape ({post.shape[1]},), got {prior.shape}"
            )
        if np.any(post < 0.0):
            raise DataError("posteriors must be non-negative")
        row_err = np.abs(post.sum(axis=1) - 1.0)
        if row_err.max() > 1e-9:
            raise DataError(f"posterior rows must sum to 1 (max error {row_err.max():g})")
        if np.any(prior <= 0.0):
            raise DataError("every state prior must be positive")
        if abs(prior.sum() - 1.0) > 1e-9:
            raise DataError(f"priors must sum to 1 (error {abs(prior.sum() - 1.0):g})")
        post.setflags(write=False)
        prior.setflags(write=False)
        self._posteriors = post
        self._priors = prior
        self._log_priors = np.log(prior)
        self._log_priors.setflags(write=False)

    @property
    def num_frames(self) -> int:
        return self._posteriors.shape[0]

    @property
    def num_states(self) -> int:
        return self._posteriors.shape[1]

    @property
    def posteriors(self) -> np.ndarray:
        return self._posteriors

    @property
    def priors(self) -> np.ndarray:
        return self._priors

    def emission_score(self, t: int, s: int, acoustic_scale: float = 1.0) -> float:
        """Scaled likelihood score for state s at frame t; zero posterior gives +inf."""
        p = self._posteriors[t, s]
        if p <= 0.0:
            return ZERO_PROB_SCORE
        return acoustic_scale * (-math.log(p) + self._log_priors[s])

    def emission_row(self, t: int, acoustic_scale: float = 1.0) -> np.ndarray:
        """Vector of emission scores for frame t (zero posteriors become +inf)."""
        with np.errstate(divide="ignore"):
            return acoustic_scale * (-np.log(self._posteriors[t]) + self._log_priors)

    def save(self, path: str | Path) -> None:
        """Write `T S` header, T posterior rows, then the prior row."""
        lines = [f"{self.num_frames} {self.num_states}"]
        for t in range(self.num_frames):
            lines.append(" ".join(f"{x:.17g}" for x in self._posteriors[t]))
        lines.append(" ".join(f"{x:.17g}" for x in self._priors))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "AcousticScores":
        path = Path(path)
        rows = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
        if not rows:
            raise DataError(f"{path}: empty acoustic scores file")
        try:
            t, s = (int(x) for x in rows[0])
        except ValueError as exc:
            raise DataError(f"{path}: bad header {rows[0]!r}") from exc
        if len(rows) != t + 2:
            raise DataError(f"{path}: expected {t + 2} lines, got {len(rows)}")
        try:
            mat = np.array([[float(x) for x in row] for row in rows[1:]], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric value") from exc
        if mat.shape[1] != s:
            raise DataError(f"{path}: expected {s} columns, got {mat.shape[1]}")
        try:
            return cls(mat[:t], mat[t])
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class PhonemeHmm:
    """Linear state chain for one phoneme; loop[i] + forward[i] must sum to 1."""

    loop: tuple[float, ...]
    forward: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.loop) != len(self.forward) or not self.loop:
            raise DataError("loop and forward must be equal-length, non-empty")
        for lo, fw in zip(self.loop, self.forward):
            if lo < 0.0 or fw < 0.0:
                raise DataError("transition probabilities must be non-negative")
            if abs(lo + fw - 1.0) > 1e-9:
                raise DataError(f"outgoing probabilities must sum to 1, got {lo + fw}")

    @property
    def num_states(self) -> int:
        return len(self.loop)


class HmmTopology:
    """Per-phoneme HMM chains with a global acoustic state numbering.

    Phonemes are ordered by name; phoneme p's local state j maps to global
    state ``state_offset(p) + j``.  Skip transitions are not modeled.
    """

    def __init__(self, phonemes: Mapping[str, PhonemeHmm]) -> None:
        if not phonemes:
            raise DataError("topology needs at least one phoneme")
        self._phonemes = {name: phonemes[name] for name in sorted(phonemes)}
        self._offsets: dict[str, int] = {}
        total = 0
        for name, hmm in self._phonemes.items():
            self._offsets[name] = total
            total += hmm.num_states
        self._num_states = total

    @classmethod
    def uniform(
        cls,
        phonemes: Iterable[str],
        states_per_phoneme: int = 2,
        loop_prob: float = 0.5,
    ) -> "HmmTopology":
        """Same linear chain for every phoneme."""
        if states_per_phoneme < 1:
            raise DataError("states_per_phoneme must be >= 1")
        if not 0.0 <= loop_prob < 1.0:
            raise DataError("loop_prob must be in [0, 1)")
        hmm = PhonemeHmm(
            loop=(loop_prob,) * states_per_phoneme,
            forward=(1.0 - loop_prob,) * states_per_phoneme,
        )
        return cls({name: hmm for name in phonemes})

    @property
    def phonemes(self) -> Mapping[str, PhonemeHmm]:
        return self._phonemes

    @property
    def num_states(self) -> int:
        return self._num_states

    def __contains__(self, phoneme: str) -> bool:
        return phoneme in self._phonemes

    def hmm(self, phoneme: str) -> PhonemeHmm:
        return self._phonemes[phoneme]

    def state_offset(self, phoneme: str) -> int:
        return self._offsets[phoneme]


@dataclass(frozen=True)
class Pronunciation:
    phonemes: tuple[str, ...]
    weight: float


class Lexicon:
    """Vocabulary with weighted pronunciation variants.

    Variant weights are normalized per word on construction; the file format
    is one variant per line: ``word TAB weight TAB phoneme phoneme ...``.
    """

    def __init__(self, entries: Mapping[str, Sequence[tuple[Sequence[str], float]]]) -> None:
        if not entries:
            raise DataError("lexicon needs at least one word")
        words: dict[str, tuple[Pronunciation, ...]] = {}
        for word in sorted(entries):
            if not word or any(c.isspace() for c in word) or word == SENTENCE_END:
                raise DataError(f"invalid word identifier: {word!r}")
            variants = entries[word]
            if not variants:
                raise DataError(f"word {word!r} has no pronunciation variants")
            total = 0.0
            for phones, weight in variants:
                if weight <= 0.0:
                    raise DataError(f"word {word!r}: variant weight must be positive")
                if not phones:
                    raise DataError(f"word {word!r}: empty phoneme sequence")
                total += weight
            words[word] = tuple(
                Pronunciation(tuple(phones), weight / total) for phones, weight in variants
            )
        self._words = words
        self._vocabulary = tuple(words)

    @property
    def vocabulary(self) -> tuple[str, ...]:
        """Words in lexicographic order."""
        return self._vocabulary

    @property
    def words(self) -> Mapping[str, tuple[Pronunciation, ...]]:
        return self._words

    def variants(self, word: str) -> tuple[Pronunciation, ...]:
        return self._words[word]

    def referenced_phonemes(self) -> tuple[str, ...]:
        seen = {ph for prons in self._words.values() for p in prons for ph in p.phonemes}
        return tuple(sorted(seen))

    def save(self, path: str | Path) -> None:
        lines = []
        for word, prons in self._words.items():
            for p in prons:
                lines.append(f"{word}\t{p.weight:.17g}\t{' '.join(p.phonemes)}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Lexicon":
        path = Path(path)
        entries: dict[str, list[tuple[list[str], float]]] = {}
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 'word<TAB>weight<TAB>phonemes'")
            word, weight_s, phones_s = parts
            try:
                weight = float(weight_s)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad weight {weight_s!r}") from exc
            entries.setdefault(word, []).append((phones_s.split(), weight))
        try:
            return cls(entries)
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from exc


class LanguageModel(ABC):
    """Interface for sentence-prefix conditioned word scoring.

    For any history, exp(-score) over vocabulary + sentence end sums to one.
    ``context_signature`` returns the identity under which two histories are
    interchangeable for scoring; search never merges hypotheses whose
    signatures differ.
    """

    @property
    @abstractmethod
    def vocabulary(self) -> tuple[str, ...]:
        """Words the model can score (sentence end excluded)."""

    @abstractmethod
    def score(self, history: Sequence[str], word: str) -> float:
        """Score of `word` (or SENTENCE_END) after the full history."""

    @abstractmethod
    def context_signature(self, history: Sequence[str]) -> tuple[str, ...]:
        ...


class UniformLm(LanguageModel):
    """Uniform distribution over vocabulary + sentence end; order-0 context."""

    def __init__(self, vocabulary: Iterable[str]) -> None:
        self._vocab = tuple(sorted(set(vocabulary)))
        if not self._vocab:
            raise DataError("uniform LM needs a non-empty vocabulary")
        self._score = math.log(len(self._vocab) + 1)

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return self._vocab

    def score(self, history: Sequence[str], word: str) -> float:
        if word != SENTENCE_END and word not in self._vocab:
            raise ValueError(f"word not in LM vocabulary: {word!r}")
        return self._score

    def context_signature(self, history: Sequence[str]) -> tuple[str, ...]:
        return ()


class FullHistoryLm(LanguageModel):
    """Count LM conditioned on the entire sentence prefix.

    Top-order counts are anchored at sentence starts, and additive smoothing
    interpolates them with progressively shorter suffix contexts down to a
    uniform base, so the distribution for every history is exactly
    normalized over vocabulary + sentence end.  Two histories that share a
    suffix but differ earlier generally receive different scores, which is
    what makes context-truncating recombination unsound for this model:
    ``context_signature`` is the full history itself.
    """

    def __init__(
        self,
        sentences: Sequence[Sequence[str]],
        vocabulary: Iterable[str],
        smoothing: float = 0.2,
    ) -> None:
        if smoothing <= 0.0:
            raise ValueError("smoothing must be positive")
        if not sentences:
            raise DataError("LM corpus is empty")
        vocab = tuple(sorted(set(vocabulary)))
        oov = sorted({w for sent in sentences for w in sent} - set(vocab))
        if oov:
            raise DataError(f"LM corpus words not in vocabulary: {' '.join(oov)}")
        self._vocab = vocab
        self._vocab_set = set(vocab)
        self._delta = float(smoothing)
        self._num_events = len(vocab) + 1
        anchored: dict[tuple[str, ...], dict[str, int]] = {}
        suffix: dict[tuple[str, ...], dict[str, int]] = {}
        for sent in sentences:
            words = tuple(sent) + (SENTENCE_END,)
            for i, w in enumerate(words):
                ctx = words[:i]
                table = anchored.setdefault(ctx, {})
                table[w] = table.get(w, 0) + 1
                for k in range(len(ctx) + 1):
                    table = suffix.setdefault(ctx[len(ctx) - k:], {})
                    table[w] = table.get(w, 0) + 1
        self._anchored = anchored
        self._anchored_totals = {h: sum(t.values()) for h, t in anchored.items()}
        self._suffix = suffix
        self._suffix_totals = {h: sum(t.values()) for h, t in suffix.items()}

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return self._vocab

    def probability(self, history: Sequence[str], word: str) -> float:
        h = tuple(history)
        delta = self._delta
        # Build the backoff chain bottom-up: uniform base, then suffix
        # contexts of increasing length, then the sentence-anchored prefix.
        p = 1.0 / self._num_events
        for k in range(len(h)):
            ctx = h[len(h) - k:]
            table = self._suffix.get(ctx)
            count = table.get(word, 0) if table else 0
            total = self._suffix_totals.get(ctx, 0)
            p = (count + delta * p) / (total + delta)
        table = self._anchored.get(h)
        count = table.get(word, 0) if table else 0
        total = self._anchored_totals.get(h, 0)
        return (count + delta * p) / (total + delta)

    def score(self, history: Sequence[str], word: str) -> float:
        if word != SENTENCE_END and word not in self._vocab_set:
            raise ValueError(f"word not in LM vocabulary: {word!r}")
        return -math.log(self.probability(history, word))

    def context_signature(self, history: Sequence[str]) -> tuple[str, ...]:
        return tuple(history)


def read_lm_corpus(path: str | Path) -> list[tuple[str, ...]]:
    """One sentence per line, whitespace-tokenized; blank lines skipped."""
    sentences = []
    for line in Path(path).read_text().splitlines():
        words = tuple(line.split())
        if words:
            sentences.append(words)
    if not sentences:
        raise DataError(f"{path}: no sentences")
    return sentences


@dataclass(frozen=True)
class StateChain:
    """One pronunciation variant expanded into its acoustic state chain.

    ``forward[-1]`` is the word-exit transition score consumed when the
    chain is left, so every position's loop/forward pair covers a full
    outgoing distribution.  All scores are unscaled (-ln probability).
    """

    chain_id: int
    word: str
    variant: int
    emit: tuple[int, ...]
    loop: tuple[float, ...]
    forward: tuple[float, ...]
    weight_score: float

    @property
    def num_states(self) -> int:
        return len(self.emit)


def build_chains(lexicon: Lexicon, topology: HmmTopology) -> tuple[StateChain, ...]:
    """Expand every pronunciation variant, ordered by (word, variant index)."""
    chains: list[StateChain] = []
    for word in lexicon.vocabulary:
        for vi, pron in enumerate(lexicon.variants(word)):
            emit: list[int] = []
            loop: list[float] = []
            forward: list[float] = []
            for phoneme in pron.phonemes:
                if phoneme not in topology:
                    raise DataError(f"word {word!r} uses unknown phoneme {phoneme!r}")
                hmm = topology.hmm(phoneme)
                base = topology.state_offset(phoneme)
                for j in range(hmm.num_states):
                    emit.append(base + j)
                    loop.append(prob_to_score(hmm.loop[j]))
                    forward.append(prob_to_score(hmm.forward[j]))
            chains.append(
                StateChain(
                    chain_id=len(chains),
                    word=word,
                    variant=vi,
                    emit=tuple(emit),
                    loop=tuple(loop),
                    forward=tuple(forward),
                    weight_score=prob_to_score(pron.weight),
                )
            )
    return tuple(chains)


class ModelSet:
    """Lexicon + topology + language model, with compiled state chains."""

    def __init__(self, lexicon: Lexicon, topology: HmmTopology, lm: LanguageModel) -> None:
        missing = sorted(set(lexicon.vocabulary) - set(lm.vocabulary))
        if missing:
            raise DataError(f"LM does not cover lexicon words: {' '.join(missing)}")
        self.lexicon = lexicon
        self.topology = topology
        self.lm = lm
        self.chains = build_chains(lexicon, topology)

    @property
    def num_states(self) -> int:
        return self.topology.num_states

    def min_sequence_frames(self, num_words: int = 1) -> int:
        """Fewest frames any sequence of `num_words` words can occupy."""
        shortest = min(ch.num_states for ch in self.chains)
        return shortest * num_words
