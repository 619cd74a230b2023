"""File formats: PFM depth maps, PPM colour images, grasp JSON lines."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .geometry import Grasp


def write_pfm(path, data: np.ndarray) -> None:
    """Write a 2-D (grayscale) or HxWx3 (colour) float map, little-endian, scale -1."""
    data = np.asarray(data)
    if data.ndim == 2:
        tag = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    else:
        raise ConfigurationError(f"PFM needs HxW or HxWx3 data, got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(np.ascontiguousarray(np.flipud(data), dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"Pf", b"PF"):
            raise ConfigurationError(f"{path}: not a PFM file")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        chans = 3 if tag == b"PF" else 1
        raw = np.frombuffer(f.read(), dtype=dtype)
    if raw.size != w * h * chans:
        raise ConfigurationError(f"{path}: truncated PFM payload")
    shape = (h, w, 3) if chans == 3 else (h, w)
    return np.flipud(raw.reshape(shape)).astype(np.float64)


def write_pfm_stack(path, planes) -> None:
    """Stack equally sized 2-D planes vertically into one grayscale PFM."""
    write_pfm(path, np.concatenate([np.asarray(p, dtype=np.float64) for p in planes], axis=0))


def read_pfm_stack(path, n_planes: int) -> np.ndarray:
    data = read_pfm(path)
    if data.shape[0] % n_planes:
        raise ConfigurationError(f"{path}: height {data.shape[0]} not divisible by {n_planes}")
    return data.reshape(n_planes, data.shape[0] // n_planes, data.shape[1])


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6 from an HxWx3 array of reals in [0, 1]."""
    rgb = np.asarray(rgb)
    h, w = rgb.shape[:2]
    img = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ConfigurationError(f"{path}: not a binary PPM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    img = np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return img.astype(np.float64) / maxval


def dumps(obj) -> str:
    """Deterministic JSON encoding used for every artifact."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_grasps(path, grasps) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for g in grasps:
            f.write(dumps(g.to_dict()) + "\n")


def read_grasps(path) -> list[Grasp]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            out.append(Grasp.from_dict(json.loads(line)))
    return out
