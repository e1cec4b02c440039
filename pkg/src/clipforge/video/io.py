"""On-disk formats: raw CLPV videos, PGM/PPM import, corpus manifests.

CLPV layout (integers u32 little-endian)::

    b"CLPV" | version | frame count | H | W | C
    frame-count label bytes (0, 1, or 255 = unlabeled)
    float32 LE pixels, frame-major, each frame as C planes of H x W
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .data import UNLABELED, Frame, VideoSample

MAGIC = b"CLPV"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
_NO_LABEL = 255


class VideoFormatError(ValueError):
    pass


class TruncatedFileError(VideoFormatError):
    pass


def encode_video(sample: VideoSample) -> bytes:
    t, c, h, w = sample.pixels.shape
    labels = np.where(sample.frame_labels == UNLABELED, _NO_LABEL, sample.frame_labels).astype(np.uint8)
    return b"".join(
        [
            _HEADER.pack(MAGIC, VERSION, t, h, w, c),
            labels.tobytes(),
            np.ascontiguousarray(sample.pixels, dtype="<f4").tobytes(),
        ]
    )


def decode_video(buf: bytes, source_id: str = "", label: int | None = None) -> VideoSample:
    if len(buf) < _HEADER.size:
        raise TruncatedFileError(f"truncated header: {len(buf)} of {_HEADER.size} bytes")
    magic, version, t, h, w, c = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise VideoFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VideoFormatError(f"unsupported CLPV version {version}")
    expected = _HEADER.size + t + 4 * t * c * h * w
    if len(buf) < expected:
        raise TruncatedFileError(f"truncated payload: {len(buf)} of {expected} bytes")
    if len(buf) > expected:
        raise VideoFormatError(f"{len(buf) - expected} trailing bytes after payload")
    raw_labels = np.frombuffer(buf, dtype=np.uint8, count=t, offset=_HEADER.size)
    labels = np.where(raw_labels == _NO_LABEL, UNLABELED, raw_labels).astype(np.int8)
    pixels = np.frombuffer(buf, dtype="<f4", count=t * c * h * w, offset=_HEADER.size + t)
    pixels = pixels.reshape(t, c, h, w).astype(np.float32)
    if label is None:
        label = int(np.any(labels == 1))
    return VideoSample(pixels, label, source_id, labels)


def _read_netpbm(path: Path) -> Frame:
    buf = path.read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise VideoFormatError(f"{path}: malformed header")
        tokens.append(buf[start:pos])
    pos += 1  # single whitespace byte before the raster
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise VideoFormatError(f"{path}: unsupported netpbm magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as err:
        raise VideoFormatError(f"{path}: malformed header") from err
    if not (0 < maxval < 65536) or width < 1 or height < 1:
        raise VideoFormatError(f"{path}: malformed header")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * channels
    if len(buf) - pos < count * dtype.itemsize:
        raise TruncatedFileError(f"{path}: truncated raster ({len(buf) - pos} of {count * dtype.itemsize} bytes)")
    raster = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(height, width, channels)
    pixels = (raster.astype(np.float64) / maxval).transpose(2, 0, 1).astype(np.float32)
    return Frame(pixels)


def load_frames(path, label: int | None = None, source_id: str | None = None) -> VideoSample:
    """Load a CLPV file, a single PGM/PPM image, or a directory of PGM/PPM frames."""
    path = Path(path)
    sid = path.stem if source_id is None else source_id
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".pgm", ".ppm", ".pnm"))
        if not files:
            raise VideoFormatError(f"{path}: no PGM/PPM frames found")
        return VideoSample.from_frames([_read_netpbm(p) for p in files], label or 0, sid)
    if path.suffix.lower() in (".pgm", ".ppm", ".pnm"):
        return VideoSample.from_frames([_read_netpbm(path)], label or 0, sid)
    return decode_video(path.read_bytes(), sid, label)


def store_frames(sample: VideoSample, path) -> None:
    Path(path).write_bytes(encode_video(sample))


def write_manifest(rows: list[tuple[str, str, int]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["video_id", "path", "label"])
        writer.writerows(rows)


def read_manifest(path) -> list[tuple[str, str, int]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["video_id", "path", "label"]:
            raise VideoFormatError(f"{path}: expected header video_id,path,label")
        return [(r["video_id"], r["path"], int(r["label"])) for r in reader]


def load_corpus(manifest_path) -> list[VideoSample]:
    """Videos listed in a manifest; relative paths resolve against the manifest's folder."""
    manifest_path = Path(manifest_path)
    out = []
    for vid, rel, label in read_manifest(manifest_path):
        p = Path(rel)
        if not p.is_absolute():
            p = manifest_path.parent / p
        out.append(load_frames(p, label=label, source_id=vid))
    return out


def save_corpus(videos: list[VideoSample], directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in videos:
        name = f"{v.source_id}.clpv"
        store_frames(v, directory / name)
        rows.append((v.source_id, name, v.label))
    manifest = directory / "manifest.csv"
    write_manifest(rows, manifest)
    return manifest
