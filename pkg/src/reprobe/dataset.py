"""Dataset directories: 8-bit PGM/PPM samples plus a labels manifest.

The manifest is `labels.txt` inside the dataset directory, one sample per
line: `<filename> <ground truth...>`. The ground-truth tail is kept as a
string; task decoders interpret it (a bare integer for classification).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["Sample", "load_dataset", "read_pnm", "write_pnm", "DatasetError"]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    name: str
    image: np.ndarray  # uint8, [h, w] or [h, w, 3]
    truth: str


def read_pnm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) or PPM (P6) file."""
    data = Path(path).read_bytes()
    if data[:2] not in (b"P5", b"P6"):
        raise DatasetError(f"{path}: not a binary PGM/PPM file")
    color = data[:2] == b"P6"
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DatasetError(f"{path}: only 8-bit samples supported (maxval {maxval})")
    n = w * h * (3 if color else 1)
    pixels = np.frombuffer(data[pos:pos + n], dtype=np.uint8)
    if pixels.size != n:
        raise DatasetError(f"{path}: truncated pixel payload")
    return pixels.reshape((h, w, 3) if color else (h, w)).copy()


def write_pnm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise DatasetError("samples must be uint8")
    if image.ndim == 2:
        header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n"
    elif image.ndim == 3 and image.shape[2] == 3:
        header = f"P6\n{image.shape[1]} {image.shape[0]}\n255\n"
    else:
        raise DatasetError(f"unsupported sample shape {image.shape}")
    Path(path).write_bytes(header.encode("ascii") + image.tobytes())


def load_dataset(directory) -> list[Sample]:
    root = Path(directory)
    manifest = root / "labels.txt"
    if not manifest.exists():
        raise DatasetError(f"{root}: missing labels.txt manifest")
    samples = []
    for line_no, raw in enumerate(manifest.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 1)
        name = parts[0]
        truth = parts[1] if len(parts) > 1 else ""
        samples.append(Sample(name, read_pnm(root / name), truth))
    if not samples:
        raise DatasetError(f"{root}: manifest lists no samples")
    return samples
