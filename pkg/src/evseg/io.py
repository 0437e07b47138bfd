"""File formats: event streams, feature grids, flow fields, masks, labels.

All binary formats are little-endian with short magic-tagged headers:

  EVS1  events: header <4s H(width) H(height) Q(reserved)>, then 16-byte
        records <Q t, H x, H y, B p, 3 pad> with p in {0, 1} on disk.
  FTG1  patch features: header <4s H(H_p) H(W_p) I(D) H(patch)>, then
        row-major float32 values.
  FLW1  flow: header <4s H(height) H(width)>, then (H, W, 2) float32.
  EVL1  labeled events: EVS1-shaped header whose reserved field is the
        record count, 24-byte records <Q t, H x, H y, B p, 1 pad, H label,
        f vx, f vy>, then a trailing motion table <H count> of entries
        <H label, f vx, f vy, f hz, f phi>.

Masks travel as binary PGM (P5, maxval 255, 0/255 payload).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .bcmax import SegmentedEvents
from .cmax import MotionParams
from .events import EVENT_DTYPE, EventStream, make_events
from .features import FlowField, PatchFeatureGrid

EVS_MAGIC = b"EVS1"
FTG_MAGIC = b"FTG1"
FLW_MAGIC = b"FLW1"
EVL_MAGIC = b"EVL1"

_EVS_HEADER = struct.Struct("<4sHHQ")
_FTG_HEADER = struct.Struct("<4sHHIH")
_FLW_HEADER = struct.Struct("<4sHH")
_EVL_TABLE_COUNT = struct.Struct("<H")
_EVL_TABLE_ENTRY = struct.Struct("<Hffff")

_EVS_RECORD = np.dtype(
    {
        "names": ["t", "x", "y", "p"],
        "formats": ["<u8", "<u2", "<u2", "u1"],
        "offsets": [0, 8, 10, 12],
        "itemsize": 16,
    }
)

_EVL_RECORD = np.dtype(
    {
        "names": ["t", "x", "y", "p", "label", "vx", "vy"],
        "formats": ["<u8", "<u2", "<u2", "u1", "<u2", "<f4", "<f4"],
        "offsets": [0, 8, 10, 12, 14, 16, 20],
        "itemsize": 24,
    }
)


class FileFormatError(ValueError):
    """Base class for structured-file failures."""


class BadMagicError(FileFormatError):
    def __init__(self, expected: bytes, found: bytes):
        self.expected = expected
        self.found = found
        super().__init__(f"expected magic {expected!r}, found {found!r}")


class TruncatedPayloadError(FileFormatError):
    def __init__(self, expected: int, found: int):
        self.expected = expected
        self.found = found
        super().__init__(f"payload truncated: expected {expected} bytes, found {found}")


class DimensionError(FileFormatError):
    """Declared dimensions are zero, inconsistent, or overflow the payload."""


def _read_header(data: bytes, header: struct.Struct, magic: bytes):
    if len(data) < header.size:
        raise TruncatedPayloadError(header.size, len(data))
    fields = header.unpack_from(data)
    if fields[0] != magic:
        raise BadMagicError(magic, fields[0])
    return fields[1:], data[header.size :]


# -- events (EVS1 / CSV) ----------------------------------------------------


def save_events(stream: EventStream, path: str | Path) -> None:
    records = np.zeros(len(stream), dtype=_EVS_RECORD)
    records["t"] = stream.events["t"]
    records["x"] = stream.events["x"]
    records["y"] = stream.events["y"]
    records["p"] = (stream.events["p"] > 0).astype(np.uint8)
    with open(path, "wb") as handle:
        handle.write(_EVS_HEADER.pack(EVS_MAGIC, stream.width, stream.height, 0))
        handle.write(records.tobytes())


def load_events(path: str | Path) -> EventStream:
    data = Path(path).read_bytes()
    (width, height, _reserved), body = _read_header(data, _EVS_HEADER, EVS_MAGIC)
    if width == 0 or height == 0:
        raise DimensionError("sensor dimensions must be nonzero")
    if len(body) % _EVS_RECORD.itemsize:
        raise TruncatedPayloadError(
            len(body) + _EVS_RECORD.itemsize - len(body) % _EVS_RECORD.itemsize,
            len(body),
        )
    records = np.frombuffer(body, dtype=_EVS_RECORD)
    if records.size and records["p"].max() > 1:
        raise FileFormatError("polarity bytes must be 0 or 1")
    events = np.empty(records.shape[0], dtype=EVENT_DTYPE)
    events["t"] = records["t"]
    events["x"] = records["x"]
    events["y"] = records["y"]
    events["p"] = np.where(records["p"] > 0, 1, -1).astype(np.int8)
    return EventStream(events=events, width=width, height=height)


def save_events_csv(stream: EventStream, path: str | Path) -> None:
    with open(path, "w") as handle:
        handle.write("t,x,y,p\n")
        for ev in stream.events:
            p = 1 if ev["p"] > 0 else 0
            handle.write(f"{ev['t']},{ev['x']},{ev['y']},{p}\n")


def load_events_csv(
    path: str | Path, width: int | None = None, height: int | None = None
) -> EventStream:
    """CSV columns t,x,y,p with p in {0, 1}; a header row is optional.

    Sensor size defaults to the tightest bound around the coordinates.
    """
    rows = []
    with open(path) as handle:
        for lineno, line in enumerate(handle):
            line = line.strip()
            if not line:
                continue
            if lineno == 0 and line.lower().replace(" ", "") == "t,x,y,p":
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise FileFormatError(f"line {lineno + 1}: expected 4 columns")
            rows.append([int(part) for part in parts])
    if rows:
        arr = np.asarray(rows, dtype=np.int64)
        if np.any((arr[:, 3] != 0) & (arr[:, 3] != 1)):
            raise FileFormatError("CSV polarity must be 0 or 1")
    else:
        arr = np.zeros((0, 4), dtype=np.int64)
    events = make_events(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    if width is None:
        width = int(arr[:, 1].max()) + 1 if len(arr) else 1
    if height is None:
        height = int(arr[:, 2].max()) + 1 if len(arr) else 1
    return EventStream(events=events, width=width, height=height)


# -- feature grids (FTG1) ----------------------------------------------------


def save_feature_grid(grid: PatchFeatureGrid, path: str | Path) -> None:
    h_p, w_p, depth = grid.grid.shape
    with open(path, "wb") as handle:
        handle.write(_FTG_HEADER.pack(FTG_MAGIC, h_p, w_p, depth, grid.patch_size))
        handle.write(np.ascontiguousarray(grid.grid, dtype="<f4").tobytes())


def load_feature_grid(path: str | Path) -> PatchFeatureGrid:
    data = Path(path).read_bytes()
    (h_p, w_p, depth, patch), body = _read_header(data, _FTG_HEADER, FTG_MAGIC)
    if h_p == 0 or w_p == 0 or depth == 0 or patch == 0:
        raise DimensionError("feature grid dimensions must be nonzero")
    expected = h_p * w_p * depth * 4
    if len(body) < expected:
        raise TruncatedPayloadError(expected, len(body))
    if len(body) > expected:
        raise DimensionError(
            f"payload of {len(body)} bytes exceeds declared {expected}"
        )
    values = np.frombuffer(body, dtype="<f4").reshape(h_p, w_p, depth)
    return PatchFeatureGrid(grid=values.copy(), patch_size=patch, source="external")


# -- flow fields (FLW1) -------------------------------------------------------


def save_flow(flow: FlowField, path: str | Path) -> None:
    height, width = flow.uv.shape[:2]
    with open(path, "wb") as handle:
        handle.write(_FLW_HEADER.pack(FLW_MAGIC, height, width))
        handle.write(np.ascontiguousarray(flow.uv, dtype="<f4").tobytes())


def load_flow(path: str | Path) -> FlowField:
    data = Path(path).read_bytes()
    (height, width), body = _read_header(data, _FLW_HEADER, FLW_MAGIC)
    if height == 0 or width == 0:
        raise DimensionError("flow dimensions must be nonzero")
    expected = height * width * 2 * 4
    if len(body) < expected:
        raise TruncatedPayloadError(expected, len(body))
    if len(body) > expected:
        raise DimensionError(
            f"payload of {len(body)} bytes exceeds declared {expected}"
        )
    uv = np.frombuffer(body, dtype="<f4").reshape(height, width, 2)
    return FlowField(uv=uv.copy())


# -- masks (PGM) --------------------------------------------------------------


def save_mask_pgm(mask: np.ndarray, path: str | Path) -> None:
    mask = np.asarray(mask, dtype=bool)
    header = f"P5\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + (mask.astype(np.uint8) * 255).tobytes())


def load_mask_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise BadMagicError(b"P5", data[:2])
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FileFormatError("malformed PGM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise FileFormatError("only maxval 255 PGM masks are supported")
    body = data[pos:]
    if len(body) < width * height:
        raise TruncatedPayloadError(width * height, len(body))
    pixels = np.frombuffer(body[: width * height], dtype=np.uint8)
    return pixels.reshape(height, width) >= 128


# -- labeled events (EVL1) ----------------------------------------------------


def save_labeled_events(seg: SegmentedEvents, path: str | Path) -> None:
    n = len(seg)
    records = np.zeros(n, dtype=_EVL_RECORD)
    records["t"] = seg.events["t"]
    records["x"] = seg.events["x"]
    records["y"] = seg.events["y"]
    records["p"] = (seg.events["p"] > 0).astype(np.uint8)
    records["label"] = seg.labels
    table = sorted(seg.motions.items())
    lut_size = (max(seg.motions) if seg.motions else 0) + 1
    vx_lut = np.zeros(lut_size, dtype=np.float32)
    vy_lut = np.zeros(lut_size, dtype=np.float32)
    for label, motion in table:
        vx_lut[label] = motion.vx
        vy_lut[label] = motion.vy
    records["vx"] = vx_lut[seg.labels]
    records["vy"] = vy_lut[seg.labels]
    with open(path, "wb") as handle:
        handle.write(_EVS_HEADER.pack(EVL_MAGIC, seg.width, seg.height, n))
        handle.write(records.tobytes())
        handle.write(_EVL_TABLE_COUNT.pack(len(table)))
        for label, motion in table:
            handle.write(
                _EVL_TABLE_ENTRY.pack(label, motion.vx, motion.vy, motion.hz, motion.phi)
            )


def load_labeled_events(path: str | Path) -> SegmentedEvents:
    """Read back a labeled-event file.

    Run diagnostics (iteration count, notes) are not stored in the format;
    they come back zeroed.
    """
    data = Path(path).read_bytes()
    (width, height, count), body = _read_header(data, _EVS_HEADER, EVL_MAGIC)
    expected = count * _EVL_RECORD.itemsize
    if len(body) < expected + _EVL_TABLE_COUNT.size:
        raise TruncatedPayloadError(expected + _EVL_TABLE_COUNT.size, len(body))
    records = np.frombuffer(body[:expected], dtype=_EVL_RECORD)
    offset = expected
    (n_table,) = _EVL_TABLE_COUNT.unpack_from(body, offset)
    offset += _EVL_TABLE_COUNT.size
    table_bytes = n_table * _EVL_TABLE_ENTRY.size
    if len(body) < offset + table_bytes:
        raise TruncatedPayloadError(offset + table_bytes, len(body))
    motions: dict[int, MotionParams] = {}
    for i in range(n_table):
        label, vx, vy, hz, phi = _EVL_TABLE_ENTRY.unpack_from(
            body, offset + i * _EVL_TABLE_ENTRY.size
        )
        motions[label] = MotionParams(vx=vx, vy=vy, hz=hz, phi=phi)
    events = np.empty(records.shape[0], dtype=EVENT_DTYPE)
    events["t"] = records["t"]
    events["x"] = records["x"]
    events["y"] = records["y"]
    events["p"] = np.where(records["p"] > 0, 1, -1).astype(np.int8)
    return SegmentedEvents(
        events=events,
        labels=records["label"].astype(np.uint16).copy(),
        motions=motions,
        width=width,
        height=height,
    )
