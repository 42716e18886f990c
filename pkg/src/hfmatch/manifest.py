"""Dataset manifests: which image plays which role.

A manifest is a line-oriented CSV with the fixed header
``subject_id,modality,path,role``. Roles split the dataset into the
dictionary images (representation), the projection-training images
(train), the evaluation pairs (test-probe / test-gallery) and optional
gallery padding (gallery-distractor).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .container import atomic_write_text

ROLES = (
    "representation",
    "train",
    "test-probe",
    "test-gallery",
    "gallery-distractor",
)

HEADER = "subject_id,modality,path,role"

__all__ = ["ROLES", "HEADER", "ManifestEntry", "Manifest", "read_manifest", "write_manifest"]


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    modality: str
    path: str
    role: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        for field in (self.subject_id, self.modality, self.path):
            if "," in field or "\n" in field:
                raise ValueError(f"manifest fields may not contain commas: {field!r}")
        if not self.path:
            raise ValueError("empty path in manifest entry")
        if not self.modality:
            raise ValueError("empty modality in manifest entry")


@dataclass(frozen=True)
class Manifest:
    """Validated collection of manifest entries.

    Representation, train and test subject id sets must be pairwise
    disjoint, and every test-probe subject needs exactly one
    test-gallery mate. Distractors are exempt from the disjointness
    rule so externally sourced padding can reuse arbitrary labels.
    """

    entries: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValueError("manifest has no entries")
        rep = self.subjects("representation")
        train = self.subjects("train")
        test = self.subjects("test-probe") | self.subjects("test-gallery")
        for a, b, names in (
            (rep, train, "representation/train"),
            (rep, test, "representation/test"),
            (train, test, "train/test"),
        ):
            if a & b:
                raise ValueError(
                    f"{names} subject sets overlap: {sorted(a & b)[:5]}"
                )
        gallery_counts = Counter(
            e.subject_id for e in self.entries if e.role == "test-gallery"
        )
        for sid in sorted(self.subjects("test-probe")):
            if gallery_counts.get(sid, 0) != 1:
                raise ValueError(
                    f"test-probe subject {sid!r} needs exactly one "
                    f"test-gallery mate, found {gallery_counts.get(sid, 0)}"
                )

    def subjects(self, role: str) -> set:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        return {e.subject_id for e in self.entries if e.role == role}

    def select(self, *roles: str) -> tuple:
        for role in roles:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        return tuple(e for e in self.entries if e.role in roles)

    def merged_with(self, other: "Manifest") -> "Manifest":
        return Manifest(entries=self.entries + tuple(other.entries))


def write_manifest(path, manifest: Manifest) -> None:
    lines = [HEADER]
    for e in manifest.entries:
        lines.append(f"{e.subject_id},{e.modality},{e.path},{e.role}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_manifest(path) -> Manifest:
    """Parse a manifest CSV; relative image paths are resolved against
    the manifest's own directory."""
    path = Path(path)
    text = path.read_text()
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines or lines[0] != HEADER:
        raise ValueError(f"{path}: expected manifest header {HEADER!r}")
    entries = []
    for number, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 4:
            raise ValueError(f"{path}:{number}: expected 4 fields, got {len(cells)}")
        sid, modality, img, role = (c.strip() for c in cells)
        if not Path(img).is_absolute():
            img = str(path.parent / img)
        entries.append(
            ManifestEntry(subject_id=sid, modality=modality, path=img, role=role)
        )
    return Manifest(entries=tuple(entries))
