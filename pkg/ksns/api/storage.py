"""
Snapshot and table storage

Snapshot layout (all little-endian)::

    b"KSNS"  u32 version  u32 dim  u32 cells[dim]  f64 lengths[dim]
    u8 boundary (0 no_flux_no_slip, 1 periodic)  f64 time
    f64 n[cells]  f64 c[cells]  f64 u_i[face_shape(i)] for each i  f64 p[cells]

Arrays are row-major; velocity components use the MAC face layout of
ksns.core.mesh.
"""

import csv
import logging
import struct
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ksns.core.dynamics import State
from ksns.core.errors import CorruptSnapshot, IoFailure, KsnsError
from ksns.core.mesh import Boundary, ScalarField, VectorField, make_grid
from ksns.services.diagnostics import DiagnosticsRecord

logger = logging.getLogger(__name__)

MAGIC = b"KSNS"
FORMAT_VERSION = 1
SNAPSHOT_SUFFIX = ".ksns"
BOUNDARY_CODES = {Boundary.NO_FLUX_NO_SLIP: 0, Boundary.PERIODIC: 1}
F8 = np.dtype("<f8")


# ============================================================================
# SNAPSHOTS
# ============================================================================

def encode_snapshot(state: State) -> bytes:
    grid = state.grid
    parts = [
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, grid.dim),
        struct.pack(f"<{grid.dim}I", *grid.cells),
        struct.pack(f"<{grid.dim}d", *grid.lengths),
        struct.pack("<Bd", BOUNDARY_CODES[grid.boundary], float(state.t)),
    ]
    arrays = [state.n.values, state.c.values, *state.u.components, state.p.values]
    parts.extend(np.ascontiguousarray(a, dtype=F8).tobytes(order="C") for a in arrays)
    return b"".join(parts)


def decode_snapshot(data: bytes) -> State:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CorruptSnapshot("bad magic bytes")
    version, dim = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CorruptSnapshot(f"unsupported format version {version}")
    if dim not in (2, 3):
        raise CorruptSnapshot(f"bad dimension {dim}")
    header_size = 12 + 4 * dim + 8 * dim + 1 + 8
    if len(data) < header_size:
        raise CorruptSnapshot("truncated header")
    offset = 12
    cells = struct.unpack_from(f"<{dim}I", data, offset)
    offset += 4 * dim
    lengths = struct.unpack_from(f"<{dim}d", data, offset)
    offset += 8 * dim
    code, t = struct.unpack_from("<Bd", data, offset)
    offset += 9
    boundaries = {v: k for k, v in BOUNDARY_CODES.items()}
    if code not in boundaries:
        raise CorruptSnapshot(f"bad boundary code {code}")
    try:
        grid = make_grid(dim, cells, lengths, boundaries[code])
    except KsnsError as exc:
        raise CorruptSnapshot(f"bad grid header: {exc}") from None

    shapes = [grid.shape, grid.shape] + [grid.face_shape(a) for a in range(dim)] + [grid.shape]
    expected = header_size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != expected:
        raise CorruptSnapshot(f"size {len(data)} bytes, expected {expected}")
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype=F8, count=count, offset=offset).reshape(shape).astype(float))
        offset += 8 * count
    n, c, *u, p = arrays
    return State(ScalarField(grid, n), ScalarField(grid, c), VectorField(grid, tuple(u)), ScalarField(grid, p), t)


def write_snapshot(state: State, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_snapshot(state))
    except OSError as exc:
        raise IoFailure(f"cannot write snapshot {path}: {exc}") from None


def read_snapshot(path) -> State:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read snapshot {path}: {exc}") from None
    return decode_snapshot(data)


def snapshot_name(index: int) -> str:
    return f"snap_{index:05d}{SNAPSHOT_SUFFIX}"


def read_snapshot_dir(directory) -> List[State]:
    """All snapshots of a directory in time order"""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoFailure(f"snapshot directory {directory} does not exist")
    states = [read_snapshot(p) for p in sorted(directory.glob(f"*{SNAPSHOT_SUFFIX}"))]
    return sorted(states, key=lambda s: s.t)


# ============================================================================
# TABLES
# ============================================================================

def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_table(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None


def write_diagnostics(records: Sequence[DiagnosticsRecord], path) -> None:
    names = DiagnosticsRecord.field_names()
    write_table(path, names, [[float(getattr(r, name)) for name in names] for r in records])


def read_diagnostics(path) -> List[DiagnosticsRecord]:
    path = Path(path)
    names = DiagnosticsRecord.field_names()
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header != names:
                raise IoFailure(f"{path}: unexpected diagnostics header")
            rows = []
            for row in reader:
                if len(row) != len(names):
                    raise IoFailure(f"{path}:{reader.line_num}: expected {len(names)} fields, got {len(row)}")
                try:
                    rows.append(DiagnosticsRecord(**{k: float(v) for k, v in zip(names, row)}))
                except (TypeError, ValueError) as exc:
                    raise IoFailure(f"{path}:{reader.line_num}: {exc}") from None
            return rows
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
