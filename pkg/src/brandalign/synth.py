"""Deterministic two-brand synthetic world generator.

A world is a shared hotel catalog with latent unit vectors driving both the
hotel features and the click dynamics. The two brands see the same hotels but
with different popularity reweightings, which is what the alignment machinery
has to bridge.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import BrandMapping, ClickSession, HotelCatalog, HotelRecord, SessionSet
from .rng import substream

# spread of latent vectors around their market's mean direction
LATENT_SPREAD = 0.6
# sharpness of the similarity term in the click-transition kernel; at 1.0 the
# popularity noise swamps the latent structure and nothing is learnable at
# desk scale
KERNEL_SHARPNESS = 4.0


@dataclass(frozen=True)
class WorldConfig:
    n_markets: int = 5
    hotels_per_market: int = 200
    latent_dim: int = 8
    d_a_in: int = 8
    d_g_in: int = 2
    n_sessions_per_brand: int = 50_000
    session_length: tuple[int, int] = (2, 5)
    brand_bias_strength: float = 1.0
    overlap_fraction: float = 0.8
    seed: int = 42
    brands: tuple[str, str] = ("A", "B")

    def validate(self):
        if min(self.n_markets, self.hotels_per_market, self.latent_dim,
               self.d_a_in, self.d_g_in, self.n_sessions_per_brand) < 1:
            raise ValueError("all size fields must be positive")
        lo, hi = self.session_length
        if lo < 2 or hi < lo:
            raise ValueError("session_length must satisfy 2 <= min <= max")
        if self.brand_bias_strength < 0:
            raise ValueError("brand_bias_strength must be >= 0")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError("overlap_fraction must be in [0,1]")
        if int(self.overlap_fraction * self.n_markets * self.hotels_per_market) < 1:
            raise ValueError("overlap_fraction too small: no hotel would be mapped")


@dataclass
class World:
    config: WorldConfig
    catalog: HotelCatalog
    latent: dict[str, np.ndarray]
    brand_popularity: dict[tuple[str, str], float]
    mapping: BrandMapping
    market_ids: list[str] = field(default_factory=list)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate_world(cfg: WorldConfig) -> World:
    cfg.validate()
    rng = substream(cfg.seed, "world")
    n_total = cfg.n_markets * cfg.hotels_per_market
    market_ids = [f"m{m:03d}" for m in range(cfg.n_markets)]

    # latent vectors: unit sphere, clustered around a per-market mean direction
    latent: dict[str, np.ndarray] = {}
    hotels = []
    amenity_proj = substream(cfg.seed, "amenity-proj").normal(
        0.0, 0.5 / np.sqrt(cfg.latent_dim), size=(cfg.latent_dim, cfg.d_a_in))
    for m, market_id in enumerate(market_ids):
        mean_dir = _unit(rng.normal(size=cfg.latent_dim))
        center = rng.uniform(-0.8, 0.8, size=cfg.d_g_in)
        for j in range(cfg.hotels_per_market):
            hid = f"h{m * cfg.hotels_per_market + j:05d}"
            vec = _unit(mean_dir + LATENT_SPREAD * rng.normal(size=cfg.latent_dim))
            latent[hid] = vec
            amenities = np.clip(0.5 + vec @ amenity_proj, 0.0, 1.0)
            geo = np.clip(center + rng.uniform(-0.05, 0.05, size=cfg.d_g_in), -1.0, 1.0)
            hotels.append(HotelRecord(hid, market_id, amenities, geo))
    catalog = HotelCatalog(hotels)

    # log-normal popularity with a base component shared by both brands;
    # brand_bias_strength scales only the brand-specific deviation, so at 0
    # the brands agree exactly and at large values they decorrelate
    pop_rng = substream(cfg.seed, "popularity")
    base = pop_rng.normal(size=n_total)
    brand_popularity = {}
    for brand in cfg.brands:
        draws = np.exp(base + cfg.brand_bias_strength * pop_rng.normal(size=n_total))
        for hid, w in zip(catalog.hotel_ids, draws):
            brand_popularity[(brand, hid)] = float(w)

    n_mapped = int(cfg.overlap_fraction * n_total)
    mapping = BrandMapping({hid: hid for hid in catalog.hotel_ids[:n_mapped]})
    return World(cfg, catalog, latent, brand_popularity, mapping, market_ids)


def generate_sessions(world: World, brand: str, cfg: WorldConfig) -> SessionSet:
    """Popularity-and-similarity driven random walks within single markets."""
    if brand not in cfg.brands:
        raise ValueError(f"unknown brand {brand!r}")
    rng = substream(cfg.seed, "sessions", brand)
    catalog = world.catalog

    # per-market tables: member ids, transition kernel, brand popularity
    tables = {}
    for market_id in world.market_ids:
        members = catalog.market_list(market_id)
        L = np.stack([world.latent[h] for h in members])
        kernel = np.exp(KERNEL_SHARPNESS * (L @ L.T))
        pop = np.array([world.brand_popularity[(brand, h)] for h in members])
        start_cdf = np.cumsum(pop / pop.sum())
        tables[market_id] = (members, kernel * pop[None, :], start_cdf)

    lo, hi = cfg.session_length
    sessions = []
    for i in range(cfg.n_sessions_per_brand):
        market_id = world.market_ids[rng.integers(len(world.market_ids))]
        members, weighted_kernel, start_cdf = tables[market_id]
        length = int(rng.integers(lo, hi + 1))
        cur = int(np.searchsorted(start_cdf, rng.random(), side="right"))
        clicks = [members[cur]]
        for _ in range(length - 1):
            w = weighted_kernel[cur]
            cdf = np.cumsum(w)
            cur = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            cur = min(cur, len(members) - 1)
            clicks.append(members[cur])
        sessions.append(ClickSession(
            session_id=f"{brand}-s{i:07d}", brand=brand,
            market_id=market_id, clicks=tuple(clicks)))
    return SessionSet(brand=brand, sessions=sessions)


# ---------------------------------------------------------------------------
# file emission (formats owned by the data module)

def write_catalog(catalog: HotelCatalog, path):
    with open(path, "w", encoding="utf-8") as fh:
        for h in catalog.hotels:
            fh.write(json.dumps({
                "hotel_id": h.hotel_id,
                "market_id": h.market_id,
                "amenities": [float(x) for x in h.amenities],
                "geo": [float(x) for x in h.geo],
            }) + "\n")


def write_sessions(session_set: SessionSet, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in session_set.sessions:
            fh.write(json.dumps({
                "session_id": s.session_id,
                "brand": s.brand,
                "market_id": s.market_id,
                "clicks": list(s.clicks),
            }) + "\n")


def write_mapping(mapping: BrandMapping, path):
    with open(path, "w", encoding="utf-8") as fh:
        for src in sorted(mapping.pairs):
            fh.write(f"{src}\t{mapping.pairs[src]}\n")


def write_world_meta(cfg: WorldConfig, path):
    meta = asdict(cfg)
    meta["session_length"] = list(cfg.session_length)
    meta["brands"] = list(cfg.brands)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
