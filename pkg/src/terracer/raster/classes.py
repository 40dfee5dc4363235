"""Class tables mapping GlobCover codes to contiguous training ids."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

NO_DATA = 65535

# GlobCover 2009 legend; code 230 is GlobCover's own "no data" class and is
# kept as a regular class so the table has 23 entries.
GLOBCOVER_LEGEND = (
    (11, "Post-flooding or irrigated croplands"),
    (14, "Rainfed croplands"),
    (20, "Mosaic cropland / vegetation"),
    (30, "Mosaic vegetation / cropland"),
    (40, "Closed to open broadleaved evergreen or semi-deciduous forest"),
    (50, "Closed broadleaved deciduous forest"),
    (60, "Open broadleaved deciduous forest/woodland"),
    (70, "Closed needleleaved evergreen forest"),
    (90, "Open needleleaved deciduous or evergreen forest"),
    (100, "Closed to open mixed broadleaved and needleleaved forest"),
    (110, "Mosaic forest or shrubland / grassland"),
    (120, "Mosaic grassland / forest or shrubland"),
    (130, "Closed to open shrubland"),
    (140, "Closed to open herbaceous vegetation"),
    (150, "Sparse vegetation"),
    (160, "Closed to open broadleaved forest regularly flooded"),
    (170, "Closed broadleaved forest permanently flooded"),
    (180, "Closed to open grassland or woody vegetation on regularly flooded soil"),
    (190, "Artificial surfaces and associated areas"),
    (200, "Bare areas"),
    (210, "Water bodies"),
    (220, "Permanent snow and ice"),
    (230, "No data (GlobCover)"),
)
CLOUD_CODE = 250


class ClassTableError(ValueError):
    pass


@dataclass(frozen=True)
class ClassEntry:
    code: int
    id: int
    name: str


@dataclass(frozen=True)
class ClassTable:
    entries: tuple
    cloud_class: Optional[int] = None
    _by_code: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        ids = [e.id for e in entries]
        if ids != list(range(len(entries))):
            raise ClassTableError("class ids must be contiguous 0..C-1 in table order")
        codes = [e.code for e in entries]
        if len(set(codes)) != len(codes):
            raise ClassTableError("duplicate class codes")
        if NO_DATA in codes:
            raise ClassTableError(f"code {NO_DATA} is reserved for NO_DATA")
        if self.cloud_class is not None and not 0 <= self.cloud_class < len(entries):
            raise ClassTableError("cloud_class is not a valid id")
        object.__setattr__(self, "_by_code", {c: i for i, c in enumerate(codes)})

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list:
        return [e.name for e in self.entries]

    @property
    def codes(self) -> list:
        return [e.code for e in self.entries]

    def code_to_id(self, codes: np.ndarray) -> np.ndarray:
        """Map a raster of codes to ids; NO_DATA passes through, unknown codes raise."""
        codes = np.asarray(codes)
        lut = np.full(max(max(self._by_code), NO_DATA) + 1, -1, dtype=np.int64)
        for code, idx in self._by_code.items():
            lut[code] = idx
        lut[NO_DATA] = NO_DATA
        if codes.size and (codes.min() < 0 or codes.max() >= lut.size):
            raise ClassTableError("label code outside the class table")
        ids = lut[codes]
        if (ids < 0).any():
            bad = sorted(set(np.unique(codes[ids < 0]).tolist()))
            raise ClassTableError(f"label codes {bad[:5]} not in the class table")
        return ids.astype(np.uint16)

    def id_to_code(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        lut = np.array(self.codes + [NO_DATA], dtype=np.int64)
        safe = np.where(ids == NO_DATA, len(self.entries), ids)
        if safe.size and (safe.min() < 0 or safe.max() > len(self.entries)):
            raise ClassTableError("class id outside the table")
        return lut[safe].astype(np.uint16)

    def to_dict(self) -> dict:
        return {
            "classes": [{"code": e.code, "id": e.id, "name": e.name} for e in self.entries],
            "cloud_class": self.cloud_class,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassTable":
        entries = [ClassEntry(int(c["code"]), int(c["id"]), str(c["name"])) for c in doc["classes"]]
        entries.sort(key=lambda e: e.id)
        return cls(tuple(entries), doc.get("cloud_class"))


def _with_cloud(entries: list, clouds: bool, cloud_code: int) -> ClassTable:
    cloud = None
    if clouds:
        cloud = len(entries)
        entries.append(ClassEntry(cloud_code, cloud, "Clouds"))
    return ClassTable(tuple(entries), cloud)


def generic_table(num_classes: int = 23, clouds: bool = False) -> ClassTable:
    """``num_classes`` anonymous classes whose code equals their id (+ optional cloud)."""
    entries = [ClassEntry(i, i, f"class_{i:02d}") for i in range(num_classes)]
    return _with_cloud(entries, clouds, num_classes)


def globcover_table(clouds: bool = False) -> ClassTable:
    entries = [ClassEntry(code, i, name) for i, (code, name) in enumerate(GLOBCOVER_LEGEND)]
    return _with_cloud(entries, clouds, CLOUD_CODE)
