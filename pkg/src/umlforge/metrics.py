"""BLEU over UML source tokens and SSIM over raster images."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .render import RasterImage

_TOKEN_RE = re.compile(r"-->|->|[:;()]|(?:(?!-->|->)[^\s:;()])+")

MAX_N = 4
SMOOTHING_EPS = 1e-9


class EmptyReference(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


class DegenerateImage(ValueError):
    pass


def tokenize(src: str) -> list[str]:
    """Split source on whitespace; ``: ; ( )`` and the arrows are tokens of their own."""
    return _TOKEN_RE.findall(src)


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BleuStats:
    """Clipped n-gram matches and totals for orders 1..MAX_N plus lengths."""

    matches: tuple[int, ...]
    totals: tuple[int, ...]
    ref_totals: tuple[int, ...]
    cand_len: int
    ref_len: int

    def __add__(self, other: BleuStats) -> BleuStats:
        add = lambda a, b: tuple(x + y for x, y in zip(a, b))  # noqa: E731
        return BleuStats(
            add(self.matches, other.matches),
            add(self.totals, other.totals),
            add(self.ref_totals, other.ref_totals),
            self.cand_len + other.cand_len,
            self.ref_len + other.ref_len,
        )


@dataclass(frozen=True)
class BleuScore:
    """BLEU value with its parts.

    ``precisions[n-1]`` is None for an order where neither side has any
    n-grams; such orders are left out of the geometric mean.
    ``mean_sentence`` is only set by :func:`corpus_bleu`.
    """

    value: float
    precisions: tuple[float | None, ...]
    brevity_penalty: float
    mean_sentence: float | None = None


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(candidate: Sequence[str], reference: Sequence[str], max_n: int = MAX_N) -> BleuStats:
    matches, totals, ref_totals = [], [], []
    for n in range(1, max_n + 1):
        cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
        matches.append(sum(min(count, ref[gram]) for gram, count in cand.items()))
        totals.append(max(len(candidate) - n + 1, 0))
        ref_totals.append(max(len(reference) - n + 1, 0))
    return BleuStats(tuple(matches), tuple(totals), tuple(ref_totals), len(candidate), len(reference))


def _score(stats: BleuStats, smooth: bool = False) -> BleuScore:
    c, r = stats.cand_len, stats.ref_len
    if c == 0:
        bp = 0.0
    elif c < r:
        bp = math.exp(1.0 - r / c)
    else:
        bp = 1.0
    precisions: list[float | None] = []
    logs: list[float] = []
    zero = False
    for m, total, ref_total in zip(stats.matches, stats.totals, stats.ref_totals):
        if total == 0 and ref_total == 0:
            precisions.append(None)
            continue
        p = m / total if total else 0.0
        precisions.append(p)
        if p == 0.0:
            if not smooth:
                zero = True
                continue
            p = SMOOTHING_EPS
        logs.append(math.log(p))
    if zero or not logs or bp == 0.0:
        value = 0.0
    else:
        value = bp * math.exp(sum(logs) / len(logs))
    return BleuScore(value, tuple(precisions), bp)


def bleu(candidate: Sequence[str], reference: Sequence[str], max_n: int = MAX_N, smooth: bool = False) -> BleuScore:
    """Sentence BLEU with clipped n-gram precision and a brevity penalty.

    Uniform weights over orders 1..max_n. Unsmoothed by default, so any zero
    precision makes the score 0; ``smooth=True`` replaces zero match counts
    with a tiny epsilon instead.
    """
    if not reference:
        raise EmptyReference("reference token sequence is empty")
    return _score(bleu_stats(candidate, reference, max_n), smooth)


def corpus_bleu(pairs: Sequence[tuple[Sequence[str], Sequence[str]]], max_n: int = MAX_N) -> BleuScore:
    """Corpus BLEU from pooled counts, with the smoothed mean sentence BLEU attached."""
    if not pairs:
        raise EmptyCorpus("no candidate/reference pairs")
    pooled = None
    sentence_total = 0.0
    for candidate, reference in pairs:
        if not reference:
            raise EmptyReference("reference token sequence is empty")
        stats = bleu_stats(candidate, reference, max_n)
        pooled = stats if pooled is None else pooled + stats
        sentence_total += _score(stats, smooth=True).value
    score = _score(pooled)
    return BleuScore(score.value, score.precisions, score.brevity_penalty, sentence_total / len(pairs))


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

CANVAS = 512
WINDOW = 11
SIGMA = 1.5
DATA_RANGE = 255.0
C1 = (0.01 * DATA_RANGE) ** 2
C2 = (0.03 * DATA_RANGE) ** 2


def _gaussian_1d(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


_KERNEL = _gaussian_1d()


def canonicalize(image: RasterImage, size: int = CANVAS) -> np.ndarray:
    """Scale the longest side to ``size`` (nearest neighbour) and white-pad to a square.

    The image is anchored at the top-left corner.
    """
    h, w = image.height, image.width
    longest = max(h, w)
    new_h = max(h * size // longest, 1)
    new_w = max(w * size // longest, 1)
    rows = np.arange(new_h) * h // new_h
    cols = np.arange(new_w) * w // new_w
    out = np.full((size, size), 255.0)
    out[:new_h, :new_w] = image.pixels[rows[:, None], cols[None, :]]
    return out


def _filter(a: np.ndarray) -> np.ndarray:
    """Valid-mode separable Gaussian filter."""
    rows = sliding_window_view(a, WINDOW, axis=0) @ _KERNEL
    return sliding_window_view(rows, WINDOW, axis=1) @ _KERNEL


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Local SSIM values for two equally sized float arrays."""
    if x.shape != y.shape:
        raise ValueError("images must have the same shape")
    if min(x.shape) < WINDOW:
        raise DegenerateImage(f"image smaller than the {WINDOW}x{WINDOW} window")
    mu_x, mu_y = _filter(x), _filter(y)
    xx = _filter(x * x) - mu_x * mu_x
    yy = _filter(y * y) - mu_y * mu_y
    xy = _filter(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + C1) * (2.0 * xy + C2)
    den = (mu_x * mu_x + mu_y * mu_y + C1) * (xx + yy + C2)
    return num / den


def ssim(x: RasterImage, y: RasterImage) -> float:
    """Mean SSIM of two images after canonicalizing both to 512x512.

    Gaussian window 11x11 with sigma 1.5, stride 1, constants
    ``C1 = (0.01*255)**2`` and ``C2 = (0.03*255)**2``.
    """
    if x.pixels.size == 0 or y.pixels.size == 0:
        raise DegenerateImage("empty image")
    value = float(ssim_map(canonicalize(x), canonicalize(y)).mean())
    return min(max(value, -1.0), 1.0)
