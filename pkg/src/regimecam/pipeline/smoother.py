"""Majority-vote smoothing, predictive entropy and recent regime mix."""
from __future__ import annotations

from collections import deque

import numpy as np

from ..errors import InvalidDistribution
from ..regimes import N_CLASSES, FlowRegime

DEFAULT_WINDOW = 150


class SmootherState:
    """Ring buffer of the last ``window`` raw labels with per-class counts."""

    def __init__(self, window: int = DEFAULT_WINDOW, classes: int = N_CLASSES):
        if window < 1:
            raise ValueError("smoother window must be >= 1")
        self.window = int(window)
        self.buffer: deque[int] = deque()
        self.counts = np.zeros(classes, dtype=np.int64)
        # push index of the latest occurrence per class, -1 if never seen
        self.last_seen = np.full(classes, -1, dtype=np.int64)
        self.pushes = 0

    def __len__(self) -> int:
        return len(self.buffer)

    def majority(self) -> FlowRegime | None:
        if not self.buffer:
            return None
        top = self.counts.max()
        tied = np.flatnonzero(self.counts == top)
        if len(tied) == 1:
            return FlowRegime(int(tied[0]))
        # the latest push among tied classes wins; argmax keeps the lowest code on equal recency
        return FlowRegime(int(tied[np.argmax(self.last_seen[tied])]))

    def vote_fraction(self, label) -> float:
        if not self.buffer:
            return 0.0
        return float(self.counts[int(label)]) / len(self.buffer)


def smoother_push(state: SmootherState, raw_label) -> FlowRegime:
    """Record one raw prediction and return the smoothed label."""
    code = int(FlowRegime.parse(raw_label))
    if len(state.buffer) == state.window:
        state.counts[state.buffer.popleft()] -= 1
    state.buffer.append(code)
    state.counts[code] += 1
    state.last_seen[code] = state.pushes
    state.pushes += 1
    return state.majority()


def predictive_entropy(probs, tol: float = 1e-6) -> float:
    """Shannon entropy in nats, with 0 ln 0 taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or not np.isfinite(p).all():
        raise InvalidDistribution("probabilities must be a finite 1-D vector")
    if (p < 0).any() or abs(p.sum() - 1.0) > tol:
        raise InvalidDistribution(f"not a distribution (sum {p.sum():.9g}, min {p.min():.3g})")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum()) + 0.0


def regime_proportions(state: SmootherState) -> dict[FlowRegime, float]:
    n = len(state.buffer)
    if n == 0:
        return {}
    return {FlowRegime(c): float(state.counts[c]) / n for c in np.flatnonzero(state.counts)}
