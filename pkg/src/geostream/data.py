"""Tweet records, NDJSON wire format, dataset construction, synthetic corpora.

Wire format: one JSON object per line with fields ``id``, ``text``,
``created_at``, ``user.location`` (optional), ``user.created_at``, and an
optional ``coordinates: [lon, lat]`` geotag. Note the coordinate order swap:
the wire carries [lon, lat], records hold (lat, lon). Timestamps are
``YYYY-MM-DDTHH:MM:SSZ`` (UTC, second resolution).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .embeddings import tokenize
from .gazetteer import Gazetteer, label_of, place_within

TIMESTAMP_FMT = "%Y-%m-%dT%H:%M:%SZ"


class TweetParseError(ValueError):
    """An NDJSON tweet line is malformed; the message names the field."""


def parse_timestamp(value, fieldname: str) -> datetime:
    if not isinstance(value, str):
        raise TweetParseError(f"{fieldname}: expected a timestamp string, got {value!r}")
    try:
        return datetime.strptime(value, TIMESTAMP_FMT).replace(tzinfo=timezone.utc)
    except ValueError:
        raise TweetParseError(f"{fieldname}: not a {TIMESTAMP_FMT!r} timestamp: {value!r}") from None


def format_timestamp(dt: datetime) -> str:
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc)
    return dt.strftime(TIMESTAMP_FMT)


@dataclass
class TweetRecord:
    id: str
    text: str
    created_at: datetime
    user_location: str | None
    user_created_at: datetime
    geotag: tuple[float, float] | None = None


@dataclass
class Prediction:
    """A located tweet: exact geotag or model estimate placed in a city box."""

    tweet_id: str
    label_id: int | None
    distribution: np.ndarray | None
    point: tuple[float, float]
    provenance: str  # "geotagged" | "predicted"


@dataclass
class LabeledExample:
    tweet: TweetRecord
    label: int


def parse_tweet(line: str) -> TweetRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TweetParseError(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise TweetParseError("line is not a JSON object")
    for required in ("id", "text", "created_at"):
        if required not in obj:
            raise TweetParseError(f"missing field: {required}")
    tweet_id = str(obj["id"])
    if not tweet_id:
        raise TweetParseError("id: must be nonempty")
    user = obj.get("user")
    if not isinstance(user, dict) or "created_at" not in user:
        raise TweetParseError("missing field: user.created_at")
    location = user.get("location")
    if location is not None and not isinstance(location, str):
        raise TweetParseError(f"user.location: expected a string, got {location!r}")
    geotag = None
    if obj.get("coordinates") is not None:
        coords = obj["coordinates"]
        if not (isinstance(coords, (list, tuple)) and len(coords) == 2
                and all(isinstance(c, (int, float)) for c in coords)):
            raise TweetParseError(f"coordinates: expected [lon, lat], got {coords!r}")
        lon, lat = float(coords[0]), float(coords[1])
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise TweetParseError(f"coordinates: out of range [lon={lon}, lat={lat}]")
        geotag = (lat, lon)
    return TweetRecord(
        id=tweet_id,
        text=str(obj["text"]),
        created_at=parse_timestamp(obj["created_at"], "created_at"),
        user_location=location,
        user_created_at=parse_timestamp(user["created_at"], "user.created_at"),
        geotag=geotag,
    )


def tweet_to_obj(rec: TweetRecord) -> dict:
    user: dict = {}
    if rec.user_location is not None:
        user["location"] = rec.user_location
    user["created_at"] = format_timestamp(rec.user_created_at)
    obj = {
        "id": rec.id,
        "text": rec.text,
        "created_at": format_timestamp(rec.created_at),
        "user": user,
    }
    if rec.geotag is not None:
        obj["coordinates"] = [rec.geotag[1], rec.geotag[0]]  # wire order is [lon, lat]
    return obj


def serialize_tweet(rec: TweetRecord) -> str:
    return json.dumps(tweet_to_obj(rec), ensure_ascii=False)


def serialize_prediction(pred: Prediction, city_name: str | None) -> str:
    top_prob = None
    if pred.distribution is not None:
        top_prob = float(pred.distribution.max())
    return json.dumps({
        "id": pred.tweet_id,
        "label_id": pred.label_id,
        "city_name": city_name,
        "lat": pred.point[0],
        "lon": pred.point[1],
        "provenance": pred.provenance,
        "top_prob": top_prob,
    }, ensure_ascii=False)


def is_predictable(rec: TweetRecord) -> bool:
    """True when the tweet has a nonblank profile location and no geotag."""
    return rec.geotag is None and bool(rec.user_location and rec.user_location.strip())


@dataclass
class DatasetStats:
    lines: int = 0
    examples: int = 0
    parse_errors: int = 0
    non_geotagged: int = 0
    outside_cities: int = 0

    def consistent(self) -> bool:
        return self.lines == self.examples + self.parse_errors + self.non_geotagged + self.outside_cities


def build_dataset(path, g: Gazetteer) -> tuple[list[LabeledExample], DatasetStats]:
    """Label geotagged tweets by bounding-box containment.

    Tweets without a geotag or outside every city are counted and skipped;
    malformed lines are counted, never fatal.
    """
    examples: list[LabeledExample] = []
    stats = DatasetStats()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            stats.lines += 1
            try:
                rec = parse_tweet(line)
            except TweetParseError:
                stats.parse_errors += 1
                continue
            if rec.geotag is None:
                stats.non_geotagged += 1
                continue
            label = label_of(g, rec.geotag)
            if label is None:
                stats.outside_cities += 1
                continue
            examples.append(LabeledExample(rec, label))
            stats.examples += 1
    return examples, stats


# -- synthetic corpus ---------------------------------------------------------

FILLER_TOKENS = (
    "the", "a", "is", "in", "on", "at", "to", "and", "of", "for",
    "today", "now", "just", "really", "with", "this", "that",
    "weather", "news", "traffic", "morning", "tonight",
)

_CORPUS_EPOCH = datetime(2019, 9, 1, tzinfo=timezone.utc)
_ACCOUNT_EPOCH = datetime(2006, 3, 21, tzinfo=timezone.utc)


def city_vocabulary(name: str, label_id: int, n_keywords: int = 8) -> list[str]:
    """City name tokens plus a deterministic per-city keyword list."""
    name_tokens = [t for t in tokenize(name) if t.isalnum()] or [f"city{label_id}"]
    keywords = [f"{name_tokens[0]}{label_id}k{j}" for j in range(n_keywords)]
    return name_tokens + keywords


def gen_synthetic(g: Gazetteer, n_per_city: int, noise: float, seed: int) -> list[LabeledExample]:
    """Deterministic labeled corpus: n tweets per city, seeded end to end.

    Each tweet's text mixes city-specific tokens with shared filler at the
    noise rate; the profile location names the true city with probability
    1 - noise (otherwise a random other city); the geotag falls inside the
    city's box. noise=0 yields a corpus a bag-of-words classifier separates
    perfectly.
    """
    if n_per_city < 1:
        raise ValueError(f"n_per_city must be >= 1, got {n_per_city}")
    if not 0.0 <= noise <= 1.0:
        raise ValueError(f"noise must be in [0, 1], got {noise}")
    rng = random.Random(seed)
    vocabularies = [city_vocabulary(e.name, e.label_id) for e in g]
    names = [e.name for e in g]
    examples: list[LabeledExample] = []
    for entry in g:
        vocab = vocabularies[entry.label_id]
        for i in range(n_per_city):
            n_tokens = rng.randint(6, 12)
            words = []
            for _ in range(n_tokens):
                if noise > 0.0 and rng.random() < noise:
                    words.append(rng.choice(FILLER_TOKENS))
                else:
                    words.append(rng.choice(vocab))
            if noise > 0.0 and rng.random() < noise:
                others = [n for n in names if n != entry.name]
                location = rng.choice(others) if others else entry.name
            else:
                location = entry.name
            created = _CORPUS_EPOCH + timedelta(seconds=rng.randrange(30 * 24 * 3600))
            account = _ACCOUNT_EPOCH + timedelta(seconds=rng.randrange(13 * 365 * 24 * 3600))
            geotag = place_within(g, entry.label_id, rng)
            examples.append(LabeledExample(
                tweet=TweetRecord(
                    id=f"synth-{entry.label_id}-{i}",
                    text=" ".join(words),
                    created_at=created,
                    user_location=location,
                    user_created_at=account,
                    geotag=geotag,
                ),
                label=entry.label_id,
            ))
    return examples
