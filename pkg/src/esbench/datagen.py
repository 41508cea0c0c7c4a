"""Seed-driven synthetic e-commerce data: products, users, query logs, tiers.

Every generator is a pure function of its configuration and seed. Random
streams are split with :class:`numpy.random.SeedSequence` so that, e.g.,
changing ``user_count`` never perturbs the catalog.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigurationError, PreconditionError
from .hashing import bucket

# Size of the attribute-weight vector shared by users, rank features and the
# preference network output.
PREFERENCE_DIM = 10
HASHED_SLOTS = 4
NAMED_FIELDS = ("product_id", "title", "category_id", "brand", "color", "price")

COLORS = (
    "red", "blue", "green", "black", "white", "gray", "pink", "orange",
    "purple", "brown", "yellow", "navy", "beige", "teal", "silver", "gold",
)
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]

# Stream ids for SeedSequence spawning.
_CATALOG_STREAM = 0
_USER_STREAM = 1

TIER_HIGH = "High"
TIER_MEDIUM = "Medium"
TIER_LOW = "Low"
HIGH_FRACTION = 0.15
MEDIUM_FRACTION = 0.50


def word(i: int) -> str:
    """Pronounceable token for integer ``i``; distinct integers give distinct words."""
    base = len(_SYLLABLES)
    parts = []
    while True:
        i, r = divmod(i, base)
        parts.append(_SYLLABLES[r])
        if i == 0 and len(parts) >= 2:
            break
    return "".join(reversed(parts))


@dataclass(frozen=True)
class CatalogConfig:
    product_count: int = 10_000
    attribute_field_count: int = 32
    user_count: int = 100
    category_count: int = 50
    vocabulary_size: int = 5_000
    zipf_exponent: float = 1.0
    seed: int = 0
    brand_count: int = 64
    title_min_tokens: int = 3
    title_max_tokens: int = 8

    def validate(self) -> "CatalogConfig":
        def positive(name):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(name, f"must be a positive integer, got {value!r}")

        for name in ("product_count", "attribute_field_count", "category_count",
                     "vocabulary_size", "brand_count", "title_min_tokens"):
            positive(name)
        if not isinstance(self.user_count, (int, np.integer)) or self.user_count < 0:
            raise ConfigurationError("user_count", f"must be a non-negative integer, got {self.user_count!r}")
        if self.attribute_field_count < len(NAMED_FIELDS):
            raise ConfigurationError(
                "attribute_field_count",
                f"must be >= {len(NAMED_FIELDS)} to hold {', '.join(NAMED_FIELDS)}",
            )
        if self.category_count > self.product_count:
            raise ConfigurationError("category_count", "must not exceed product_count")
        if self.vocabulary_size < self.category_count:
            raise ConfigurationError("vocabulary_size", "must be >= category_count")
        if not (self.zipf_exponent > 0 and math.isfinite(self.zipf_exponent)):
            raise ConfigurationError("zipf_exponent", "must be a finite real > 0")
        if not (0 <= self.seed < 2**64):
            raise ConfigurationError("seed", "must be an unsigned 64-bit integer")
        if self.title_max_tokens < self.title_min_tokens:
            raise ConfigurationError("title_max_tokens", "must be >= title_min_tokens")
        return self

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, stream]))


@dataclass
class ProductRecord:
    product_id: int
    title: list[str]
    category_id: int
    brand: str
    color: str
    price: float
    popularity: float
    extra_fields: list[tuple[str, str]] = field(default_factory=list)

    @property
    def field_count(self) -> int:
        return len(NAMED_FIELDS) + len(self.extra_fields)

    def tokens(self) -> list[str]:
        """Searchable tokens: title, brand and color, lowercased."""
        return " ".join([*self.title, self.brand, self.color]).lower().split()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extra_fields"] = [list(kv) for kv in self.extra_fields]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProductRecord":
        return cls(
            product_id=int(d["product_id"]),
            title=list(d["title"]),
            category_id=int(d["category_id"]),
            brand=d["brand"],
            color=d["color"],
            price=float(d["price"]),
            popularity=float(d["popularity"]),
            extra_fields=[(k, v) for k, v in d["extra_fields"]],
        )


@dataclass
class UserRecord:
    user_id: int
    profile_fields: list[tuple[str, str]]
    latent_preference: list[float]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["profile_fields"] = [list(kv) for kv in self.profile_fields]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UserRecord":
        return cls(
            user_id=int(d["user_id"]),
            profile_fields=[(k, v) for k, v in d["profile_fields"]],
            latent_preference=[float(x) for x in d["latent_preference"]],
        )


@dataclass
class QueryLogEntry:
    user_id: int
    query_text: list[str]
    clicked_product_id: int
    clicked_category_id: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QueryLogEntry":
        return cls(
            user_id=int(d["user_id"]),
            query_text=list(d["query_text"]),
            clicked_product_id=int(d["clicked_product_id"]),
            clicked_category_id=int(d["clicked_category_id"]),
        )


@dataclass(frozen=True)
class TierAssignment:
    """Popularity tiers. ``medium`` and ``low`` partition the catalog; ``high`` is a subset of ``medium``."""

    high: frozenset[int]
    medium: frozenset[int]
    low: frozenset[int]

    def label(self, product_id: int) -> str:
        if product_id in self.high:
            return TIER_HIGH
        if product_id in self.medium:
            return TIER_MEDIUM
        if product_id in self.low:
            return TIER_LOW
        raise KeyError(product_id)

    def members(self, tier: str) -> frozenset[int]:
        return {TIER_HIGH: self.high, TIER_MEDIUM: self.medium, TIER_LOW: self.low}[tier]

    def __len__(self) -> int:
        return len(self.medium) + len(self.low)


def category_vocabulary(category_id: int, config: CatalogConfig) -> range:
    """Contiguous, disjoint block of vocabulary indices owned by a category."""
    per = config.vocabulary_size // config.category_count
    start = category_id * per
    stop = config.vocabulary_size if category_id == config.category_count - 1 else start + per
    return range(start, stop)


def brand_name(i: int, config: CatalogConfig) -> str:
    # Offset past the vocabulary so brand tokens never collide with title words.
    return word(config.vocabulary_size + i)


def zipf_popularity(n: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    """Popularity by a random Zipf rank: rank r gets r**-exponent, so rank 1 is exactly 1.0."""
    ranks = rng.permutation(n) + 1
    return ranks.astype(np.float64) ** (-exponent)


def generate_catalog(config: CatalogConfig) -> list[ProductRecord]:
    config.validate()
    rng = config.rng(_CATALOG_STREAM)
    n = config.product_count
    categories = rng.integers(0, config.category_count, size=n)
    # Every category owns at least one product.
    categories[rng.permutation(n)[: config.category_count]] = np.arange(config.category_count)
    brands = rng.integers(0, config.brand_count, size=n)
    colors = rng.integers(0, len(COLORS), size=n)
    prices = np.round(rng.lognormal(mean=3.5, sigma=1.0, size=n), 2)
    popularity = zipf_popularity(n, config.zipf_exponent, rng)
    title_lengths = rng.integers(config.title_min_tokens, config.title_max_tokens + 1, size=n)
    n_extra = config.attribute_field_count - len(NAMED_FIELDS)

    catalog = []
    for pid in range(n):
        cat = int(categories[pid])
        vocab = category_vocabulary(cat, config)
        picks = rng.integers(vocab.start, vocab.stop, size=int(title_lengths[pid]))
        extra_values = rng.integers(0, 1000, size=n_extra)
        catalog.append(
            ProductRecord(
                product_id=pid,
                title=[word(int(t)) for t in picks],
                category_id=cat,
                brand=brand_name(int(brands[pid]), config),
                color=COLORS[int(colors[pid])],
                price=float(prices[pid]),
                popularity=float(popularity[pid]),
                extra_fields=[(f"attr_{k:02d}", f"v{int(v)}") for k, v in enumerate(extra_values)],
            )
        )
    return catalog


# Observed user profile -> numeric vector. Layout: age band, 2-way gender
# one-hot, membership level, then the observed affinities.
USER_FEATURE_DIM = 4 + PREFERENCE_DIM
_AGE_BANDS = 6
_LEVELS = 5
_REGIONS = ("north", "south", "east", "west", "central")
AFFINITY_NOISE = 0.1


def generate_users(config: CatalogConfig) -> list[UserRecord]:
    """Users with latent attribute preferences in [0, 1].

    Profiles carry a noisy observation of the latent vector (``affinity_k``
    fields), which is what makes the preference network learnable.
    """
    config.validate()
    rng = config.rng(_USER_STREAM)
    users = []
    for uid in range(config.user_count):
        latent = rng.uniform(0.0, 1.0, size=PREFERENCE_DIM)
        observed = np.clip(latent + rng.normal(0.0, AFFINITY_NOISE, size=PREFERENCE_DIM), 0.0, 1.0)
        profile = [
            ("age_band", str(int(rng.integers(0, _AGE_BANDS)))),
            ("gender", "f" if rng.random() < 0.5 else "m"),
            ("region", _REGIONS[int(rng.integers(0, len(_REGIONS)))]),
            ("level", str(int(rng.integers(0, _LEVELS)))),
        ]
        profile += [(f"affinity_{k}", f"{v:.3f}") for k, v in enumerate(observed)]
        users.append(UserRecord(uid, profile, [float(x) for x in latent]))
    return users


def user_features(profile_fields: Sequence[tuple[str, str]]) -> np.ndarray:
    fields = dict(profile_fields)
    vec = np.zeros(USER_FEATURE_DIM)
    vec[0] = int(fields["age_band"]) / (_AGE_BANDS - 1)
    vec[1 if fields["gender"] == "f" else 2] = 1.0
    vec[3] = int(fields["level"]) / (_LEVELS - 1)
    for k in range(PREFERENCE_DIM):
        vec[4 + k] = float(fields[f"affinity_{k}"])
    return vec


def generate_query_logs(
    catalog: Sequence[ProductRecord],
    users: Sequence[UserRecord],
    n: int,
    seed: int,
    noise_rate: float = 0.1,
) -> list[QueryLogEntry]:
    """Click logs; clicked products are drawn proportionally to popularity.

    Each query is an in-order subset of the clicked title's tokens, with a
    random vocabulary word inserted after each kept token with probability
    ``noise_rate``.
    """
    if not catalog:
        raise PreconditionError("catalog must be non-empty")
    if not users:
        raise PreconditionError("users must be non-empty")
    if n < 0:
        raise PreconditionError("n must be >= 0")
    if not 0.0 <= noise_rate <= 1.0:
        raise ConfigurationError("noise_rate", "must lie in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    weights = np.array([p.popularity for p in catalog])
    clicked = rng.choice(len(catalog), size=n, p=weights / weights.sum())
    who = rng.integers(0, len(users), size=n)
    # Noise words come from the union of title vocabularies.
    vocab = sorted({t for p in catalog for t in p.title})

    logs = []
    for i in range(n):
        product = catalog[int(clicked[i])]
        title = product.title
        k = int(rng.integers(min(2, len(title)), len(title) + 1))
        keep = np.sort(rng.choice(len(title), size=k, replace=False))
        query = []
        for pos in keep:
            query.append(title[int(pos)])
            if noise_rate > 0 and rng.random() < noise_rate:
                query.append(vocab[int(rng.integers(0, len(vocab)))])
        logs.append(QueryLogEntry(users[int(who[i])].user_id, query, product.product_id, product.category_id))
    return logs


def popularity_order(catalog: Iterable[ProductRecord]) -> list[int]:
    """Product ids by descending popularity, ties broken by ascending id."""
    return [p.product_id for p in sorted(catalog, key=lambda p: (-p.popularity, p.product_id))]


def assign_tiers(catalog: Sequence[ProductRecord]) -> TierAssignment:
    order = popularity_order(catalog)
    n = len(order)
    n_high = math.floor(HIGH_FRACTION * n)
    n_medium = math.floor(MEDIUM_FRACTION * n)
    return TierAssignment(
        high=frozenset(order[:n_high]),
        medium=frozenset(order[:n_medium]),
        low=frozenset(order[n_medium:]),
    )


def emit_rank_features(catalog: Sequence[ProductRecord]) -> np.ndarray:
    """Rank feature matrix (rows in catalog order) as emitted at generation time.

    Columns: price / max price, popularity, hashed brand one-hot (4),
    hashed color one-hot (4).
    """
    n = len(catalog)
    out = np.zeros((n, PREFERENCE_DIM))
    if n == 0:
        return out
    prices = np.array([p.price for p in catalog])
    max_price = prices.max()
    out[:, 0] = prices / max_price if max_price > 0 else 0.0
    out[:, 1] = [p.popularity for p in catalog]
    for row, p in enumerate(catalog):
        out[row, 2 + bucket(p.brand, HASHED_SLOTS)] = 1.0
        out[row, 2 + HASHED_SLOTS + bucket(p.color, HASHED_SLOTS)] = 1.0
    return out


# -- files -------------------------------------------------------------------

def write_ndjson(path: str | Path, records: Iterable) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), separators=(",", ":")))
            f.write("\n")


def read_ndjson(path: str | Path, cls) -> list:
    with open(path, encoding="utf-8") as f:
        return [cls.from_dict(json.loads(line)) for line in f if line.strip()]


def write_tiers(path: str | Path, tiers: TierAssignment) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["product_id", "tier", "in_high"])
        for pid in sorted(tiers.medium | tiers.low):
            w.writerow([pid, tiers.label(pid), int(pid in tiers.high)])


def read_tiers(path: str | Path) -> TierAssignment:
    high, medium, low = set(), set(), set()
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            pid = int(row["product_id"])
            if row["tier"] == TIER_LOW:
                low.add(pid)
            else:
                medium.add(pid)
            if row["in_high"] in ("1", "true", "True"):
                high.add(pid)
    return TierAssignment(frozenset(high), frozenset(medium), frozenset(low))
