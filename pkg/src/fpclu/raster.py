"""Raster I/O: PGM images, class labels and dataset manifests.

Gray images are plain ``uint8`` numpy arrays of shape ``(height, width)``;
binary images use the same layout with values in ``{0, 1}``.
"""
from __future__ import annotations

import csv
import enum
import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import IoFailure, MalformedHeader, ManifestError, TruncatedData, UnsupportedMaxval


class ClassLabel(enum.Enum):
    ARCH = "arch"
    TENTED_ARCH = "tented_arch"
    LEFT_LOOP = "left_loop"
    RIGHT_LOOP = "right_loop"
    WHORL = "whorl"

    @property
    def index(self) -> int:
        return _LABEL_ORDER.index(self)

    @classmethod
    def parse(cls, text: str) -> Optional["ClassLabel"]:
        text = text.strip()
        if not text:
            return None
        try:
            return cls(text.lower())
        except ValueError:
            raise ManifestError(f"unknown class label {text!r}") from None


_LABEL_ORDER = list(ClassLabel)


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file in the same directory and rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# PGM


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Pull ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset just past the last token.
    """
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise MalformedHeader("header ended early")
        if data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def parse_pgm(data: bytes) -> np.ndarray:
    if data[:2] not in (b"P2", b"P5"):
        raise MalformedHeader(f"bad magic {data[:2]!r}")
    magic = data[:2]
    tokens, pos = _header_tokens(data[2:], 3)
    pos += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MalformedHeader(f"non-numeric header fields {tokens!r}") from None
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width}x{height}")
    if maxval < 1 or maxval > 255:
        raise UnsupportedMaxval(f"maxval {maxval} not in 1..255")
    count = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        pos += 1
        raster = data[pos : pos + count]
        if len(raster) < count:
            raise TruncatedData(f"expected {count} bytes, got {len(raster)}")
        pixels = np.frombuffer(raster, dtype=np.uint8).copy()
    else:
        body = data[pos:]
        values = []
        for line in body.splitlines():
            line = line.split(b"#", 1)[0]
            values.extend(line.split())
        if len(values) < count:
            raise TruncatedData(f"expected {count} samples, got {len(values)}")
        try:
            pixels = np.array([int(v) for v in values[:count]], dtype=np.int64)
        except ValueError:
            raise TruncatedData("non-numeric sample in ASCII raster") from None
        if pixels.min() < 0 or pixels.max() > maxval:
            raise TruncatedData("sample outside 0..maxval")
        pixels = pixels.astype(np.uint8)
    if pixels.max(initial=0) > maxval:
        raise TruncatedData("sample exceeds maxval")
    return pixels.reshape(height, width)


def load_gray_image(path: str | os.PathLike) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return parse_pgm(data)


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty 2-D image")
    if img.min() < 0 or img.max() > 255:
        raise ValueError("pixel values must lie in 0..255")
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.astype(np.uint8).tobytes()


def save_gray_image(img: np.ndarray, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, encode_pgm(img))


def save_binary_image(bits: np.ndarray, path: str | os.PathLike) -> None:
    """Persist a 0/1 image as a 0/255 PGM for inspection."""
    save_gray_image(np.where(np.asarray(bits) > 0, 255, 0).astype(np.uint8), path)


# ---------------------------------------------------------------------------
# Manifest

MANIFEST_HEADER = ["image_id", "path", "label"]


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: Path
    label: Optional[ClassLabel] = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen = set()
        for e in self.entries:
            if e.image_id in seen:
                raise ManifestError(f"duplicate image_id {e.image_id!r}")
            seen.add(e.image_id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def labels(self) -> dict[str, ClassLabel]:
        return {e.image_id: e.label for e in self.entries if e.label is not None}


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Read a manifest CSV; relative image paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
        raise ManifestError(f"manifest header must be {','.join(MANIFEST_HEADER)}")
    entries = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ManifestError(f"line {lineno}: expected 3 fields, got {len(row)}")
        image_id, img_path, label = (c.strip() for c in row)
        if not image_id:
            raise ManifestError(f"line {lineno}: empty image_id")
        p = Path(img_path)
        if not p.is_absolute():
            p = path.parent / p
        entries.append(ManifestEntry(image_id, p, ClassLabel.parse(label)))
    return DatasetManifest(entries)


def format_manifest(manifest: DatasetManifest, relative_to: str | os.PathLike | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for e in manifest:
        p = e.path
        if relative_to is not None:
            try:
                p = Path(os.path.relpath(p, relative_to))
            except ValueError:
                pass
        writer.writerow([e.image_id, p.as_posix(), e.label.value if e.label else ""])
    return buf.getvalue()


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    path = Path(path)
    atomic_write_text(path, format_manifest(manifest, relative_to=path.parent))
