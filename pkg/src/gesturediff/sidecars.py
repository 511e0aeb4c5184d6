"""Little-endian binary sidecar formats shared across the pipeline.

GDF1  feature matrix: magic "GDF1", u32 rows, u32 cols, float32 row-major.
GDS1  standardizer:   magic "GDS1", u32 dim, float32 mean[dim], float32 std[dim].
GDP1  checkpoint:     magic "GDP1", u32 tensor count, then per tensor
      u32 name length, UTF-8 name, u32 rank, u32 dims[rank], float32 data.

The noise schedule reuses the GDS1 layout with dim = t_max and the two
float arrays holding beta[1..t_max] and alpha_bar[1..t_max].
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

GDF1_MAGIC = b"GDF1"
GDS1_MAGIC = b"GDS1"
GDP1_MAGIC = b"GDP1"


class SidecarFormatError(ValueError):
    pass


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise SidecarFormatError(f"truncated sidecar while reading {what}")
    return data


def write_gdf1(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError(f"GDF1 stores 2-D matrices, got shape {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(GDF1_MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes())


def read_gdf1(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != GDF1_MAGIC:
            raise SidecarFormatError(f"{path}: not a GDF1 file")
        rows, cols = struct.unpack("<II", _read_exact(fh, 8, "header"))
        data = _read_exact(fh, rows * cols * 4, "matrix data")
    return np.frombuffer(data, dtype="<f4").reshape(rows, cols).astype(np.float64)


def write_gds1(path: str | Path, first: np.ndarray, second: np.ndarray) -> None:
    first = np.asarray(first, dtype=np.float32)
    second = np.asarray(second, dtype=np.float32)
    if first.ndim != 1 or first.shape != second.shape:
        raise ValueError("GDS1 stores two 1-D vectors of equal length")
    with open(path, "wb") as fh:
        fh.write(GDS1_MAGIC)
        fh.write(struct.pack("<I", first.shape[0]))
        fh.write(first.tobytes())
        fh.write(second.tobytes())


def read_gds1(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != GDS1_MAGIC:
            raise SidecarFormatError(f"{path}: not a GDS1 file")
        (dim,) = struct.unpack("<I", _read_exact(fh, 4, "dim"))
        first = np.frombuffer(_read_exact(fh, dim * 4, "first array"), dtype="<f4")
        second = np.frombuffer(_read_exact(fh, dim * 4, "second array"), dtype="<f4")
    return first.astype(np.float64), second.astype(np.float64)


def write_gdp1(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(GDP1_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, tensor in tensors.items():
            arr = np.ascontiguousarray(tensor, dtype=np.float32)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_gdp1(path: str | Path) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != GDP1_MAGIC:
            raise SidecarFormatError(f"{path}: not a GDP1 file")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, rank * 4, "dims"))
            n_values = int(np.prod(dims)) if rank else 1
            data = _read_exact(fh, n_values * 4, f"tensor {name}")
            tensors[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()
    return tensors
