"""Brute-force reference computations used as test oracles.

Nothing here imports the package: counts are redone with plain loops and
exact fractions so the checks stay independent of the code under test.
"""

from __future__ import annotations

import math
from fractions import Fraction


class BigramOracle:
    def __init__(self, corpus: str, smoothing: int | Fraction = 1):
        data = corpus.encode("utf-8")
        self.s = Fraction(smoothing)
        self.uni = [0] * 256
        self.bi = [[0] * 256 for _ in range(256)]
        self._orderings: dict = {}
        for b in data:
            self.uni[b] += 1
        for a, b in zip(data, data[1:]):
            self.bi[a][b] += 1

    def row(self, context: list[int]) -> list[int]:
        if not context or sum(self.bi[context[-1]]) == 0:
            return self.uni
        return self.bi[context[-1]]

    def prob(self, context: list[int], token: int) -> Fraction:
        row = self.row(context)
        return (row[token] + self.s) / (sum(row) + 256 * self.s)

    def ordering(self, context: list[int]) -> list[int]:
        key = context[-1] if context else None
        if key not in self._orderings:
            self._orderings[key] = sorted(range(256), key=lambda b: (-self.prob(context, b), b))
        return self._orderings[key]

    def rank(self, context: list[int], token: int) -> int:
        return self.ordering(context).index(token) + 1

    def ranks(self, message: list[int], context: list[int]) -> list[int]:
        ctx = list(context)
        out = []
        for t in message:
            out.append(self.rank(ctx, t))
            ctx.append(t)
        return out

    def log_prob(self, tokens: list[int], context: list[int]) -> float:
        ctx = list(context)
        total = Fraction(1)
        for t in tokens:
            total *= self.prob(ctx, t)
            ctx.append(t)
        # exact product, then one log: independent of per-token float sums
        return math.log(total.numerator) - math.log(total.denominator)

    def greedy(self, context: list[int], n: int) -> list[int]:
        ctx = list(context)
        out = []
        for _ in range(n):
            row = self.row(ctx)
            best = max(range(256), key=lambda b: (row[b], -b))
            out.append(best)
            ctx.append(best)
        return out


def percentile_linear(values: list[float], q: float) -> float:
    """Linear-interpolation percentile computed by hand."""
    xs = sorted(values)
    pos = (len(xs) - 1) * q / 100
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


def interval_of(ranks: list[int], counts: list[int], eos: bool, scale: int = 1) -> tuple[Fraction, Fraction]:
    """Exact [low, high) interval of a rank stream under a frequency table."""
    freqs = [c * scale for c in counts] + ([1] if eos else [])
    total = sum(freqs)
    cum = [0]
    for f in freqs:
        cum.append(cum[-1] + f)
    low, width = Fraction(0), Fraction(1)
    symbols = [r - 1 for r in ranks] + ([len(counts)] if eos else [])
    for s in symbols:
        low += width * Fraction(cum[s], total)
        width *= Fraction(freqs[s], total)
    return low, low + width
