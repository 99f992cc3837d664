"""Domain types and file loaders: catalogs, sessions, brand mappings, splits.

File formats (all UTF-8):
  catalog:  one JSON object per line with keys hotel_id, market_id,
            amenities (list of numbers in [0,1]), geo (list in [-1,1])
  sessions: one JSON object per line with keys session_id, brand,
            market_id, clicks (list of hotel-id strings)
  mapping:  tab-separated `source_hotel_id<TAB>target_hotel_id`, no header
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .rng import substream


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class HotelRecord:
    hotel_id: str
    market_id: str
    amenities: np.ndarray  # entries in [0, 1]
    geo: np.ndarray        # entries in [-1, 1]


class HotelCatalog:
    """Immutable-after-construction hotel universe with market grouping."""

    def __init__(self, hotels: list[HotelRecord]):
        if not hotels:
            raise DataError("empty catalog")
        self.hotels = list(hotels)
        self._by_id: dict[str, HotelRecord] = {}
        self.markets: dict[str, set[str]] = {}
        a_len = len(self.hotels[0].amenities)
        g_len = len(self.hotels[0].geo)
        for h in self.hotels:
            if h.hotel_id in self._by_id:
                raise DataError(f"duplicate hotel_id {h.hotel_id!r}")
            if len(h.amenities) != a_len:
                raise DataError(
                    f"hotel {h.hotel_id!r}: amenity length {len(h.amenities)} != {a_len}")
            if len(h.geo) != g_len:
                raise DataError(
                    f"hotel {h.hotel_id!r}: geo length {len(h.geo)} != {g_len}")
            if np.any(h.amenities < 0) or np.any(h.amenities > 1):
                raise DataError(f"hotel {h.hotel_id!r}: amenity entries outside [0,1]")
            if np.any(h.geo < -1) or np.any(h.geo > 1):
                raise DataError(f"hotel {h.hotel_id!r}: geo entries outside [-1,1]")
            self._by_id[h.hotel_id] = h
            self.markets.setdefault(h.market_id, set()).add(h.hotel_id)
        self.amenity_dim = a_len
        self.geo_dim = g_len
        # stable id order for vectorized consumers
        self.hotel_ids = [h.hotel_id for h in self.hotels]
        self.index = {hid: i for i, hid in enumerate(self.hotel_ids)}

    def __len__(self) -> int:
        return len(self.hotels)

    def __contains__(self, hotel_id: str) -> bool:
        return hotel_id in self._by_id

    def record(self, hotel_id: str) -> HotelRecord:
        try:
            return self._by_id[hotel_id]
        except KeyError:
            raise DataError(f"unknown hotel_id {hotel_id!r}") from None

    def market_of(self, hotel_id: str) -> str:
        return self.record(hotel_id).market_id

    def market_members(self, market_id: str) -> set[str]:
        return self.markets[market_id]

    def market_list(self, market_id: str) -> tuple[str, ...]:
        """Members of a market in ascending id order (cached)."""
        try:
            return self._market_lists[market_id]
        except AttributeError:
            self._market_lists = {}
        except KeyError:
            pass
        result = tuple(sorted(self.markets[market_id]))
        self._market_lists[market_id] = result
        return result

    def amenity_matrix(self) -> np.ndarray:
        return np.stack([h.amenities for h in self.hotels])

    def geo_matrix(self) -> np.ndarray:
        return np.stack([h.geo for h in self.hotels])


@dataclass(frozen=True)
class ClickSession:
    session_id: str
    brand: str
    market_id: str
    clicks: tuple[str, ...]


@dataclass
class SessionSet:
    brand: str
    sessions: list[ClickSession] = field(default_factory=list)

    def __post_init__(self):
        for s in self.sessions:
            if s.brand != self.brand:
                raise DataError(
                    f"session {s.session_id!r} has brand {s.brand!r}, expected {self.brand!r}")

    def __len__(self) -> int:
        return len(self.sessions)


class BrandMapping:
    """One-to-one hotel correspondence from a source brand to a target brand."""

    def __init__(self, pairs: dict[str, str]):
        self.pairs = dict(pairs)
        seen_targets = set()
        for src, tgt in self.pairs.items():
            if tgt in seen_targets:
                raise DataError(f"mapping not injective: target {tgt!r} repeated")
            seen_targets.add(tgt)
        self._inverse = {tgt: src for src, tgt in self.pairs.items()}

    def __len__(self) -> int:
        return len(self.pairs)

    def to_source(self, target_id: str) -> str | None:
        return self._inverse.get(target_id)

    def to_target(self, source_id: str) -> str | None:
        return self.pairs.get(source_id)


def _parse_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc


def load_catalog(path) -> HotelCatalog:
    hotels = []
    for lineno, obj in _parse_lines(path):
        try:
            hotels.append(HotelRecord(
                hotel_id=str(obj["hotel_id"]),
                market_id=str(obj["market_id"]),
                amenities=np.asarray(obj["amenities"], dtype=float),
                geo=np.asarray(obj["geo"], dtype=float),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: bad catalog record: {exc}") from exc
    return HotelCatalog(hotels)


def load_sessions(path, catalog: HotelCatalog, brand: str) -> SessionSet:
    sessions = []
    for lineno, obj in _parse_lines(path):
        try:
            session = ClickSession(
                session_id=str(obj["session_id"]),
                brand=str(obj["brand"]),
                market_id=str(obj["market_id"]),
                clicks=tuple(str(c) for c in obj["clicks"]),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: bad session record: {exc}") from exc
        if not session.clicks:
            raise DataError(f"{path}:{lineno}: session {session.session_id!r} has no clicks")
        for c in session.clicks:
            if c not in catalog:
                raise DataError(
                    f"{path}:{lineno}: session {session.session_id!r} references "
                    f"unknown hotel {c!r}")
            if catalog.market_of(c) != session.market_id:
                warnings.warn(
                    f"{path}:{lineno}: session {session.session_id!r} click {c!r} "
                    f"is outside market {session.market_id!r}")
        if session.brand != brand:
            raise DataError(
                f"{path}:{lineno}: session {session.session_id!r} has brand "
                f"{session.brand!r}, expected {brand!r}")
        sessions.append(session)
    return SessionSet(brand=brand, sessions=sessions)


def load_mapping(path, source_catalog: HotelCatalog | None = None,
                 target_catalog: HotelCatalog | None = None) -> BrandMapping:
    pairs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 tab-separated columns")
            src, tgt = cols
            if src in pairs:
                raise DataError(f"{path}:{lineno}: duplicate source id {src!r}")
            if source_catalog is not None and src not in source_catalog:
                raise DataError(f"{path}:{lineno}: unknown source hotel {src!r}")
            if target_catalog is not None and tgt not in target_catalog:
                raise DataError(f"{path}:{lineno}: unknown target hotel {tgt!r}")
            pairs[src] = tgt
    return BrandMapping(pairs)


def split_sizes(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Allocate n sessions to (train, val, test) by normalized ratio.

    Each part gets the floor of its exact share; leftover sessions are handed
    out one at a time cycling val, test, train, so small eval sets stay
    non-empty at desk scale. Depends only on (n, ratios), never on the seed.
    """
    total = sum(ratios)
    if any(r < 0 for r in ratios) or total <= 0:
        raise ValueError("ratios must be nonnegative and sum to a positive value")
    exact = [n * r / total for r in ratios]
    sizes = [int(np.floor(e)) for e in exact]
    leftover = n - sum(sizes)
    order = [p for p in (1, 2, 0) if ratios[p] > 0]  # val, test, train
    i = 0
    while leftover > 0:
        sizes[order[i % len(order)]] += 1
        leftover -= 1
        i += 1
    return tuple(sizes)


def split_sessions(session_set: SessionSet, ratios: tuple[float, float, float],
                   seed: int) -> tuple[SessionSet, SessionSet, SessionSet]:
    """Deterministic train/val/test partition: shuffle by seed, then slice."""
    n_train, n_val, n_test = split_sizes(len(session_set), ratios)
    order = substream(seed, "split", session_set.brand).permutation(len(session_set))
    shuffled = [session_set.sessions[i] for i in order]
    brand = session_set.brand
    return (
        SessionSet(brand, shuffled[:n_train]),
        SessionSet(brand, shuffled[n_train:n_train + n_val]),
        SessionSet(brand, shuffled[n_train + n_val:]),
    )
