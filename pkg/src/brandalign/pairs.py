"""Skip-gram pair construction with market-restricted negative sampling."""

from dataclasses import dataclass

import numpy as np

from .data import ClickSession, HotelCatalog, SessionSet
from .rng import substream


@dataclass(frozen=True)
class TrainingPair:
    target: str
    context: str
    negatives: tuple[str, ...]


class PairSkipped(Exception):
    """No eligible negatives exist for this (target, context) pair."""


def make_pairs(session: ClickSession, window: int) -> list[tuple[str, str]]:
    """Positive pairs within a fixed window, position-major, offset-minor.

    Repeated clicks of the same hotel never produce (h, h) self-pairs.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    clicks = session.clicks
    out = []
    for i, target in enumerate(clicks):
        lo = max(0, i - window)
        hi = min(len(clicks), i + window + 1)
        for j in range(lo, hi):
            if j == i or clicks[j] == target:
                continue
            out.append((target, clicks[j]))
    return out


def sample_negatives(catalog: HotelCatalog, target: str, context: str,
                     n_neg: int, rng: np.random.Generator) -> list[str]:
    """Draw n_neg hotels uniformly with replacement from the target's market,
    excluding the target and context themselves.

    Raises PairSkipped when the eligible set is empty; the caller drops the pair.
    """
    market = catalog.market_of(target)
    members = catalog.market_list(market)
    excluded = {target, context}
    n_eligible = len(members) - sum(1 for e in excluded if e in catalog.market_members(market))
    if n_eligible <= 0:
        raise PairSkipped(f"market {market!r} has no eligible negatives")
    # rejection sampling stays uniform over the eligible set
    out = []
    while len(out) < n_neg:
        for i in rng.integers(0, len(members), size=n_neg - len(out)):
            candidate = members[i]
            if candidate not in excluded:
                out.append(candidate)
    return out


def build_epoch_stream(sessions: SessionSet, catalog: HotelCatalog,
                       window: int, n_neg: int, seed: int, epoch_index: int,
                       skip_counter: list | None = None):
    """Yield TrainingPairs for one epoch.

    Sessions are shuffled deterministically by (seed, epoch_index); pairs that
    cannot receive negatives are skipped and counted into skip_counter[0].
    """
    order = substream(seed, "shuffle", epoch_index).permutation(len(sessions))
    neg_rng = substream(seed, "negatives", epoch_index)
    for si in order:
        session = sessions.sessions[si]
        for target, context in make_pairs(session, window):
            try:
                negs = sample_negatives(catalog, target, context, n_neg, neg_rng)
            except PairSkipped:
                if skip_counter is not None:
                    skip_counter[0] += 1
                continue
            yield TrainingPair(target, context, tuple(negs))
