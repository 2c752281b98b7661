"""City label space: ids, names, bounding boxes, containment, placement.

Coordinates are WGS84 decimal degrees, boxes are closed on all edges. The
gazetteer file is CSV with header ``label_id,name,min_lat,max_lat,min_lon,
max_lon``; label ids must be exactly 0..C-1.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass


class GazetteerError(ValueError):
    """Invalid gazetteer file or label."""


BBox = tuple[float, float, float, float]  # (min_lat, max_lat, min_lon, max_lon)


def contains(bbox: BBox, point: tuple[float, float]) -> bool:
    """Closed-box containment: edge points count as inside."""
    min_lat, max_lat, min_lon, max_lon = bbox
    lat, lon = point
    return min_lat <= lat <= max_lat and min_lon <= lon <= max_lon


@dataclass(frozen=True)
class CityEntry:
    label_id: int
    name: str
    bbox: BBox

    @property
    def centroid(self) -> tuple[float, float]:
        min_lat, max_lat, min_lon, max_lon = self.bbox
        return ((min_lat + max_lat) / 2.0, (min_lon + max_lon) / 2.0)

    def validate(self) -> None:
        min_lat, max_lat, min_lon, max_lon = self.bbox
        if self.label_id < 0:
            raise GazetteerError(f"label_id must be >= 0, got {self.label_id}")
        if not (min_lat < max_lat and min_lon < max_lon):
            raise GazetteerError(f"label {self.label_id}: inverted bounding box {self.bbox}")
        if not (-90.0 <= min_lat and max_lat <= 90.0 and -180.0 <= min_lon and max_lon <= 180.0):
            raise GazetteerError(f"label {self.label_id}: coordinates out of range {self.bbox}")


class Gazetteer:
    """City entries indexed by dense label ids 0..C-1."""

    def __init__(self, entries: list[CityEntry]):
        seen: dict[int, CityEntry] = {}
        for e in entries:
            e.validate()
            if e.label_id in seen:
                raise GazetteerError(f"duplicate label {e.label_id}")
            seen[e.label_id] = e
        for want in range(len(seen)):
            if want not in seen:
                raise GazetteerError(f"missing label {want}")
        self.entries = [seen[i] for i in range(len(seen))]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, label_id: int) -> CityEntry:
        if not 0 <= label_id < len(self.entries):
            raise GazetteerError(f"unknown label {label_id}")
        return self.entries[label_id]

    def __iter__(self):
        return iter(self.entries)


REQUIRED_COLUMNS = ("label_id", "name", "min_lat", "max_lat", "min_lon", "max_lon")


def load_gazetteer(path) -> Gazetteer:
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise GazetteerError(f"{path}: header is missing columns {missing}")
        for row in reader:
            try:
                entries.append(CityEntry(
                    label_id=int(row["label_id"]),
                    name=row["name"],
                    bbox=(float(row["min_lat"]), float(row["max_lat"]),
                          float(row["min_lon"]), float(row["max_lon"])),
                ))
            except (TypeError, ValueError) as exc:
                raise GazetteerError(f"{path} line {reader.line_num}: {exc}") from None
    return Gazetteer(entries)


def save_gazetteer(g: Gazetteer, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REQUIRED_COLUMNS)
        for e in g:
            writer.writerow([e.label_id, e.name, *e.bbox])


def label_of(g: Gazetteer, point: tuple[float, float]) -> int | None:
    """Label of the box containing the point; nearest centroid breaks overlaps.

    Distance is Euclidean in degrees; equidistant centroids resolve to the
    smallest label id. Returns None when no box contains the point.
    """
    best: int | None = None
    best_d = math.inf
    for e in g:
        if contains(e.bbox, point):
            clat, clon = e.centroid
            d = (point[0] - clat) ** 2 + (point[1] - clon) ** 2
            if d < best_d:
                best, best_d = e.label_id, d
    return best


def place_within(g: Gazetteer, label_id: int, rng: int | random.Random) -> tuple[float, float]:
    """Uniform random point inside the city's bounding box."""
    entry = g[label_id]
    if isinstance(rng, int):
        rng = random.Random(rng)
    min_lat, max_lat, min_lon, max_lon = entry.bbox
    return (rng.uniform(min_lat, max_lat), rng.uniform(min_lon, max_lon))
