"""Interaction logs: loading, validation, splitting, and synthetic generation.

The canonical interchange format is a CSV with header
``user_id,item_id,timestamp,duration,watch_time,like,comment,follow[,feat_*]``.
Watch time may exceed duration (rewatches) and is kept as-is on load.
"""
from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "N_EXPLICIT",
    "EXPLICIT_NAMES",
    "InteractionRecord",
    "DatasetSplit",
    "SyntheticConfig",
    "SchemaError",
    "ParseError",
    "ValidationError",
    "SplitConfigError",
    "load_interactions",
    "save_interactions",
    "chronological_split",
    "group_by_user",
    "kcore_filter",
    "generate_synthetic",
]

N_EXPLICIT = 3
EXPLICIT_NAMES = ("like", "comment", "follow")
SECONDS_PER_DAY = 86400

# duration sampling range used by the synthetic generator (seconds); the
# completion-bias curve g() is anchored to the same range
_DUR_MIN = 5.0
_DUR_MAX = 180.0


class SchemaError(ValueError):
    """A required column is missing from the input file."""


class ParseError(ValueError):
    """A cell could not be parsed; message carries the row number."""


class ValidationError(ValueError):
    """A row violates a record invariant; message carries the row number."""


class SplitConfigError(ValueError):
    """A requested split is empty or otherwise unusable."""


@dataclass(frozen=True)
class InteractionRecord:
    """One user-video event: identifiers, timing, and raw feedback."""

    user_id: str
    item_id: str
    timestamp: float
    duration: float
    watch_time: float
    explicit: tuple[int, ...]
    features: tuple[float, ...] = ()

    def validate(self) -> None:
        if not self.duration > 0:
            raise ValidationError(f"duration must be > 0, got {self.duration}")
        if self.watch_time < 0:
            raise ValidationError(f"watch_time must be >= 0, got {self.watch_time}")
        if len(self.explicit) != N_EXPLICIT:
            raise ValidationError(f"expected {N_EXPLICIT} explicit flags, got {len(self.explicit)}")
        if any(flag not in (0, 1) for flag in self.explicit):
            raise ValidationError(f"explicit flags must be 0/1, got {self.explicit}")

    @property
    def has_positive_feedback(self) -> bool:
        return any(self.explicit)


@dataclass
class DatasetSplit:
    """Chronologically disjoint train/validation/test record lists."""

    train: list[InteractionRecord]
    validation: list[InteractionRecord]
    test: list[InteractionRecord]
    day_origin: float = 0.0

    def parts(self) -> dict[str, list[InteractionRecord]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


@dataclass(frozen=True)
class SyntheticConfig:
    """Controls for the synthetic log generator (deterministic under seed)."""

    n_users: int = 200
    n_items: int = 100
    n_days: int = 14
    latent_dim: int = 8
    duration_bias_strength: float = 0.5
    explicit_rate: float = 0.15
    seed: int = 0
    events_per_user_per_day: int = 5
    noise_std: float = 0.1
    # mean shift of the user latents along the first axis; gives preference a
    # shared item-popularity component that small models can actually learn
    popularity_pull: float = 1.5
    # per-item tag features (noisy item-latent coordinates) emitted as feat_*
    n_tag_features: int = 2
    tag_noise: float = 0.3

    def validate(self) -> None:
        for name in ("n_users", "n_items", "n_days", "latent_dim", "events_per_user_per_day"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.duration_bias_strength < 0:
            raise ValueError("duration_bias_strength must be nonnegative")
        if not 0.0 <= self.explicit_rate <= 1.0:
            raise ValueError("explicit_rate must be in [0, 1]")


_BASE_COLUMNS = ("user_id", "item_id", "timestamp", "duration", "watch_time") + EXPLICIT_NAMES


def load_interactions(path, schema: dict[str, str] | None = None) -> list[InteractionRecord]:
    """Load and validate records from CSV.

    ``schema`` maps canonical column names (user_id, item_id, timestamp,
    duration, watch_time, like, comment, follow) to the file's column names;
    unmapped canonical names default to themselves. Extra ``feat_*`` columns
    become numeric features in header order.
    """
    schema = dict(schema or {})
    colmap = {name: schema.get(name, name) for name in _BASE_COLUMNS}

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [colmap[name] for name in _BASE_COLUMNS if colmap[name] not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        feat_cols = [c for c in header if c.startswith("feat_")]

        records: list[InteractionRecord] = []
        seen: set[tuple[str, str, float]] = set()
        for rownum, row in enumerate(reader, start=2):  # header is line 1
            try:
                timestamp = float(row[colmap["timestamp"]])
                duration = float(row[colmap["duration"]])
                watch_time = float(row[colmap["watch_time"]])
                explicit = tuple(int(float(row[colmap[name]])) for name in EXPLICIT_NAMES)
                features = tuple(float(row[c]) for c in feat_cols)
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{rownum}: {exc}") from None
            record = InteractionRecord(
                user_id=row[colmap["user_id"]],
                item_id=row[colmap["item_id"]],
                timestamp=timestamp,
                duration=duration,
                watch_time=watch_time,
                explicit=explicit,
                features=features,
            )
            try:
                record.validate()
            except ValidationError as exc:
                raise ValidationError(f"{path}:{rownum}: {exc}") from None
            key = (record.user_id, record.item_id, record.timestamp)
            if key in seen:
                raise ValidationError(f"{path}:{rownum}: duplicate (user, item, timestamp) {key}")
            seen.add(key)
            records.append(record)
    return records


def save_interactions(path, records: list[InteractionRecord]) -> None:
    """Write records in the canonical CSV format (see load_interactions)."""
    n_feats = len(records[0].features) if records else 0
    feat_cols = [f"feat_{i}" for i in range(n_feats)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(_BASE_COLUMNS) + feat_cols)
        for r in records:
            writer.writerow(
                [r.user_id, r.item_id, _fmt(r.timestamp), _fmt(r.duration), _fmt(r.watch_time)]
                + list(r.explicit)
                + [_fmt(v) for v in r.features]
            )


def _fmt(x: float) -> str:
    return repr(float(x))


def chronological_split(
    records: list[InteractionRecord],
    train_days: int,
    val_days: int,
    test_days: int,
    allow_empty: bool = False,
) -> DatasetSplit:
    """Assign records to train/validation/test by day index from the earliest timestamp.

    Records falling past ``train_days + val_days + test_days`` are outside the
    experiment window and dropped. Raises SplitConfigError for an empty split
    unless ``allow_empty`` is set.
    """
    if not records:
        raise SplitConfigError("cannot split an empty record set")
    if min(train_days, val_days, test_days) < 0:
        raise SplitConfigError("split day counts must be nonnegative")
    origin = min(r.timestamp for r in records)
    train, validation, test = [], [], []
    t_end = train_days
    v_end = train_days + val_days
    w_end = train_days + val_days + test_days
    for r in records:
        day = math.floor((r.timestamp - origin) / SECONDS_PER_DAY)
        if day < t_end:
            train.append(r)
        elif day < v_end:
            validation.append(r)
        elif day < w_end:
            test.append(r)
    if not allow_empty:
        for name, part in (("train", train), ("validation", validation), ("test", test)):
            if not part:
                raise SplitConfigError(f"{name} split is empty for days ({train_days},{val_days},{test_days})")
    return DatasetSplit(train=train, validation=validation, test=test, day_origin=origin)


def group_by_user(records: list[InteractionRecord]) -> dict[str, list[InteractionRecord]]:
    """Partition records per user; each group ordered by timestamp (stable)."""
    groups: dict[str, list[InteractionRecord]] = defaultdict(list)
    for r in records:
        groups[r.user_id].append(r)
    return {u: sorted(rs, key=lambda r: r.timestamp) for u, rs in groups.items()}


def kcore_filter(
    records: list[InteractionRecord], k_user: int, k_item: int
) -> list[InteractionRecord]:
    """Iteratively drop users with < k_user and items with < k_item records until stable."""
    if k_user < 1 or k_item < 1:
        raise ValueError("core thresholds must be >= 1")
    current = list(records)
    while True:
        user_counts = Counter(r.user_id for r in current)
        item_counts = Counter(r.item_id for r in current)
        kept = [
            r for r in current if user_counts[r.user_id] >= k_user and item_counts[r.item_id] >= k_item
        ]
        if len(kept) == len(current):
            return kept
        current = kept


def _completion_bias(duration: np.ndarray) -> np.ndarray:
    """Fixed increasing curve of duration, 0 at the shortest clip, 1 at the longest."""
    scaled = (np.log(duration) - math.log(_DUR_MIN)) / (math.log(_DUR_MAX) - math.log(_DUR_MIN))
    return np.clip(scaled, 0.0, 1.0)


def generate_synthetic(cfg: SyntheticConfig) -> list[InteractionRecord]:
    """Draw a synthetic interaction log with a controllable duration bias.

    True preference is p = sigmoid of a latent dot product. The watch ratio is
    clamp(p + bias * g(duration) + noise, 0, 1), so positive bias inflates the
    watch time of long videos beyond preference; explicit flags are drawn
    Bernoulli(explicit_rate * p) per flag and carry no duration bias.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)

    user_latent = rng.normal(size=(cfg.n_users, cfg.latent_dim))
    user_latent[:, 0] += cfg.popularity_pull
    item_latent = rng.normal(size=(cfg.n_items, cfg.latent_dim))
    durations = np.round(
        np.exp(rng.uniform(math.log(_DUR_MIN), math.log(_DUR_MAX), size=cfg.n_items))
    ).clip(_DUR_MIN, _DUR_MAX)

    affinity = (user_latent @ item_latent.T) / math.sqrt(cfg.latent_dim)
    preference = 1.0 / (1.0 + np.exp(-2.0 * affinity))  # spread over (0, 1)
    bias_curve = _completion_bias(durations)
    n_tags = min(cfg.n_tag_features, cfg.latent_dim)
    tags = np.round(
        item_latent[:, :n_tags] + rng.normal(0.0, cfg.tag_noise, size=(cfg.n_items, n_tags)), 4
    )

    per_day = cfg.events_per_user_per_day
    records: list[InteractionRecord] = []
    for day in range(cfg.n_days):
        for u in range(cfg.n_users):
            items = rng.choice(cfg.n_items, size=min(per_day, cfg.n_items), replace=False)
            offsets = np.sort(rng.integers(0, SECONDS_PER_DAY, size=items.size))
            p = preference[u, items]
            ratio = np.clip(
                p
                + cfg.duration_bias_strength * bias_curve[items]
                + rng.normal(0.0, cfg.noise_std, size=items.size),
                0.0,
                1.0,
            )
            watch = durations[items] * ratio
            flags = rng.random(size=(items.size, N_EXPLICIT)) < (cfg.explicit_rate * p)[:, None]
            for j, item in enumerate(items):
                records.append(
                    InteractionRecord(
                        user_id=f"u{u}",
                        item_id=f"v{item}",
                        timestamp=float(day * SECONDS_PER_DAY + offsets[j]),
                        duration=float(durations[item]),
                        watch_time=float(np.round(watch[j], 3)),
                        explicit=tuple(int(b) for b in flags[j]),
                        features=tuple(tags[item]),
                    )
                )
    return records
