"""File formats: descriptor stores, local features, submissions, label tables.

Binary formats are little-endian and deterministic: saving the same value
twice produces byte-identical files. Format errors carry the byte offset
(binary) or line number (CSV) where parsing failed.

Descriptor store ("GLDS"):
    magic "GLDS" | u32 version=1 | u32 dim | u64 count
    count x (u16 id byte length | UTF-8 id)
    count x dim x f32, row-major, in id order

Local features ("GLLF"), one file per image, named "<image id>.lf":
    magic "GLLF" | u32 version=1 | u32 desc_dim | u32 n
    n x (f32 x | f32 y | f32 scale | desc_dim x f32)

Submissions are CSV with header "id,landmarks"; a row is either
"id,<label> <confidence>" or "id," for an empty guess. Confidences are
serialized with at most 9 significant digits. Label tables are CSV with
header "id,landmark_id".
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .data import DescriptorStore, LocalFeatureSet, Prediction, Submission

GLDS_MAGIC = b"GLDS"
GLLF_MAGIC = b"GLLF"
FORMAT_VERSION = 1

SUBMISSION_HEADER = "id,landmarks"
LABELS_HEADER = "id,landmark_id"


class FormatError(Exception):
    """Binary format violation at a specific byte offset."""

    def __init__(self, path: str, offset: int, message: str):
        self.path = path
        self.offset = offset
        super().__init__(f"{path}: byte {offset}: {message}")


class ParseError(Exception):
    """Text format violation at a specific line number (1-based)."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


def format_confidence(value: float) -> str:
    """Decimal text for a confidence, capped at 9 significant digits."""
    return format(float(value), ".9g")


class _Reader:
    """Sequential binary reader that reports truncation offsets."""

    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        chunk = self.data[self.pos : self.pos + n]
        if len(chunk) < n:
            # Offset of the truncation point: where the data actually ends.
            raise FormatError(self.path, len(self.data), f"truncated while reading {what}")
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def save_descriptor_store(store: DescriptorStore, path: str) -> None:
    parts = [GLDS_MAGIC, struct.pack("<IIQ", FORMAT_VERSION, store.dim, len(store))]
    for image_id in store.ids:
        raw = image_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"image id too long: {image_id!r}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(store.matrix, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_descriptor_store(path: str) -> DescriptorStore:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    magic = r.take(4, "magic")
    if magic != GLDS_MAGIC:
        raise FormatError(path, 0, f"bad magic {magic!r}, expected {GLDS_MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise FormatError(path, 4, f"unsupported version {version}")
    dim, count = r.unpack("<IQ", "header")
    ids = []
    for i in range(count):
        (id_len,) = r.unpack("<H", f"id length of entry {i}")
        raw = r.take(id_len, f"id of entry {i}")
        ids.append(raw.decode("utf-8"))
    matrix_bytes = count * dim * 4
    start = r.pos
    payload = r.take(matrix_bytes, "descriptor matrix")
    if r.pos != len(data):
        raise FormatError(path, r.pos, f"{len(data) - r.pos} trailing bytes after matrix")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    try:
        return DescriptorStore(ids, matrix)
    except ValueError as exc:
        raise FormatError(path, start, str(exc)) from exc


def save_local_features(features: LocalFeatureSet, path: str) -> None:
    n = len(features)
    header = GLLF_MAGIC + struct.pack("<III", FORMAT_VERSION, features.desc_dim, n)
    body = np.empty((n, 3 + features.desc_dim), dtype="<f4")
    body[:, 0:2] = features.xy
    body[:, 2] = features.scale
    body[:, 3:] = features.descriptors
    with open(path, "wb") as fh:
        fh.write(header + body.tobytes())


def load_local_features(path: str, image_id: str | None = None) -> LocalFeatureSet:
    """Read a GLLF file; the image id defaults to the file name stem."""
    if image_id is None:
        image_id = os.path.basename(path)
        if image_id.endswith(".lf"):
            image_id = image_id[:-3]
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    magic = r.take(4, "magic")
    if magic != GLLF_MAGIC:
        raise FormatError(path, 0, f"bad magic {magic!r}, expected {GLLF_MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise FormatError(path, 4, f"unsupported version {version}")
    desc_dim, n = r.unpack("<II", "header")
    payload = r.take(n * (3 + desc_dim) * 4, "feature records")
    if r.pos != len(data):
        raise FormatError(path, r.pos, f"{len(data) - r.pos} trailing bytes after records")
    body = np.frombuffer(payload, dtype="<f4").reshape(n, 3 + desc_dim)
    return LocalFeatureSet(
        image=image_id,
        xy=body[:, 0:2].astype(np.float64),
        scale=body[:, 2].astype(np.float64),
        descriptors=body[:, 3:].copy(),
    )


def _read_csv_lines(path: str, header: str):
    """Yield (line_number, line) for data rows after validating the header."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(path, 1, "empty file, expected header row")
    if lines[0] != header:
        raise ParseError(path, 1, f"bad header {lines[0]!r}, expected {header!r}")
    for i, line in enumerate(lines[1:], start=2):
        yield i, line


def _parse_label(token: str, path: str, line: int) -> int:
    if not token.isdigit():
        raise ParseError(path, line, f"label {token!r} is not a non-negative integer")
    return int(token)


def save_submission(submission: Submission, path: str) -> None:
    lines = [SUBMISSION_HEADER]
    for p in submission.rows:
        if p.has_guess:
            lines.append(f"{p.image},{p.label} {format_confidence(p.confidence)}")
        else:
            lines.append(f"{p.image},")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def load_submission(path: str) -> Submission:
    rows = []
    seen = set()
    for line_no, line in _read_csv_lines(path, SUBMISSION_HEADER):
        fields = line.split(",")
        if len(fields) != 2:
            raise ParseError(path, line_no, f"expected 2 fields, got {len(fields)}")
        image_id, guess = fields
        if image_id in seen:
            raise ParseError(path, line_no, f"duplicate image id {image_id!r}")
        seen.add(image_id)
        try:
            if guess == "":
                rows.append(Prediction(image_id))
            else:
                tokens = guess.split()
                if len(tokens) != 2:
                    raise ParseError(
                        path, line_no, f"guess {guess!r} is not '<label> <confidence>'"
                    )
                label = _parse_label(tokens[0], path, line_no)
                try:
                    confidence = float(tokens[1])
                except ValueError:
                    raise ParseError(
                        path, line_no, f"confidence {tokens[1]!r} is not a number"
                    ) from None
                rows.append(Prediction(image_id, label, confidence))
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from exc
    return Submission(rows)


def save_label_table(labels: dict[str, int], path: str) -> None:
    lines = [LABELS_HEADER]
    lines.extend(f"{image_id},{label}" for image_id, label in labels.items())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def load_label_table(path: str) -> dict[str, int]:
    table: dict[str, int] = {}
    for line_no, line in _read_csv_lines(path, LABELS_HEADER):
        fields = line.split(",")
        if len(fields) != 2:
            raise ParseError(path, line_no, f"expected 2 fields, got {len(fields)}")
        image_id, token = fields
        if image_id in table:
            raise ParseError(path, line_no, f"duplicate image id {image_id!r}")
        table[image_id] = _parse_label(token, path, line_no)
    return table
