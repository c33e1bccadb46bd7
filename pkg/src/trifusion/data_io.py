"""Synthetic multimodal scenes, dataset splitting and tensor file I/O.

Scenes come from a deterministic box-world renderer: a handful of axis
aligned boxes on a ground plane, observed by a panoramic range scanner and
a ring of pinhole cameras, plus a pseudo text embedding hashed from the
layout.  All three modalities share the same geometry, so fusion has real
signal to exploit.

The TNSR container stores named f32 tensors bit-exactly:

    magic  "TNSR"
    version u32 = 1 (little endian)
    entry*  name_len u32 | name utf-8 | ndim u32 | dims u32*ndim
            | payload f32 * prod(dims), row-major little endian
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import FormatError, InputError

LIDAR_ORIGIN = np.array([0.0, 0.0, 1.0])
LIDAR_ELEVATION_SPAN = 0.35  # radians above/below horizon
MAX_RANGE = 14.0
GROUND_INTENSITY = 60.0
SKY_COLOR = np.array([0.55, 0.65, 0.80], dtype=np.float32)


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    hx: float
    hy: float
    z0: float
    z1: float
    intensity: float
    color: tuple


@dataclass
class SceneLayout:
    boxes: list


@dataclass
class SceneSample:
    lidar: np.ndarray  # (C, H, W) in [-255, 255]
    views: list  # n_views arrays (3, H_img, W_img) in [0, 1]
    text_emb: np.ndarray  # (512,) in [-1, 1]


# ---------------------------------------------------------------------------
# layout and rendering


def sample_layout(stream: rng.Stream) -> SceneLayout:
    """2-5 boxes, sized and placed to span several range-image cells each."""
    n = 2 + int(stream.integers(1, 0, 3)[0])
    u = stream.uniform01(9 * n)
    boxes = []
    for i in range(n):
        az, rad, hx, hy, hz, inten, r, g, b = u[9 * i : 9 * i + 9]
        half_x = 1.2 + 1.6 * hx
        half_y = 1.2 + 1.6 * hy
        dist = 1.2 + max(half_x, half_y) + 3.0 * rad  # keep the sensor outside
        boxes.append(
            Box(
                cx=dist * math.cos(2 * math.pi * az),
                cy=dist * math.sin(2 * math.pi * az),
                hx=half_x,
                hy=half_y,
                z0=0.0,
                z1=1.2 + 1.8 * hz,
                intensity=0.2 + 0.8 * inten,
                color=(0.1 + 0.9 * r, 0.1 + 0.9 * g, 0.1 + 0.9 * b),
            )
        )
    return SceneLayout(boxes)


def _raycast(origin: np.ndarray, dirs: np.ndarray, layout: SceneLayout):
    """Nearest box hit per ray (slab test). Returns (t, box index or -1)."""
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -1, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        for i, b in enumerate(layout.boxes):
            lo = np.array([b.cx - b.hx, b.cy - b.hy, b.z0])
            hi = np.array([b.cx + b.hx, b.cy + b.hy, b.z1])
            t1 = (lo - origin) / dirs
            t2 = (hi - origin) / dirs
            tmin = np.minimum(t1, t2).max(axis=1)
            tmax = np.maximum(t1, t2).min(axis=1)
            hit = (tmax >= tmin) & (tmin > 1e-6) & (tmin < best_t)
            best_t[hit] = tmin[hit]
            best_i[hit] = i
    return best_t, best_i


def _ground_t(origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origin[2] / dz
    t = np.where((dz < 0) & (t > 1e-6), t, np.inf)
    return t


SUPERSAMPLE = 2  # anti-aliasing factor for both renderers


def _downsample(img: np.ndarray, factor: int) -> np.ndarray:
    c, h, w = img.shape
    return img.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def render_lidar(layout: SceneLayout, dims) -> np.ndarray:
    """(C, H, W) range image: depth, intensity, height, occupancy channels.

    Rendered at SUPERSAMPLE x resolution and box-filtered down, so object
    silhouettes have soft (sub-cell) edges.
    """
    h, w = dims.lidar_h * SUPERSAMPLE, dims.lidar_w * SUPERSAMPLE
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    az = -math.pi + (jj.reshape(-1) + 0.5) * 2 * math.pi / w
    el = LIDAR_ELEVATION_SPAN - (ii.reshape(-1) + 0.5) * 2 * LIDAR_ELEVATION_SPAN / h
    dirs = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)

    t_box, idx = _raycast(LIDAR_ORIGIN, dirs, layout)
    t_gnd = _ground_t(LIDAR_ORIGIN, dirs)
    t = np.minimum(t_box, t_gnd)
    hit = t < MAX_RANGE
    box_hit = hit & (t_box <= t_gnd)
    gnd_hit = hit & ~box_hit

    depth = np.where(hit, (1.0 - t / MAX_RANGE) * 255.0, 0.0)
    inten = np.zeros_like(depth)
    if layout.boxes:
        per_box = np.array([b.intensity for b in layout.boxes])
        inten[box_hit] = per_box[idx[box_hit]] * 255.0
    inten[gnd_hit] = GROUND_INTENSITY
    z_hit = LIDAR_ORIGIN[2] + t * dirs[:, 2]
    height = np.where(hit, (z_hit - 1.0) * 127.5, 0.0)
    occ = np.zeros_like(depth)
    occ[box_hit] = 255.0
    occ[gnd_hit] = -255.0

    img = np.stack([depth, inten, height, occ]).reshape(4, h, w)
    img = _downsample(img, SUPERSAMPLE)
    return np.clip(img, -255.0, 255.0).astype(np.float32)


def render_view(layout: SceneLayout, view_index: int, dims) -> np.ndarray:
    """(3, H, W) RGB render from one of n_views camera headings."""
    h, w = dims.view_h * SUPERSAMPLE, dims.view_w * SUPERSAMPLE
    yaw = 2 * math.pi * view_index / dims.n_views
    fwd = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    up = np.array([0.0, 0.0, 1.0])
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    u = (jj.reshape(-1) + 0.5) / w * 2.0 - 1.0
    v = 1.0 - (ii.reshape(-1) + 0.5) / h * 2.0
    dirs = fwd[None, :] + u[:, None] * right[None, :] + v[:, None] * up[None, :]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    t_box, idx = _raycast(LIDAR_ORIGIN, dirs, layout)
    t_gnd = _ground_t(LIDAR_ORIGIN, dirs)
    t = np.minimum(t_box, t_gnd)
    hit = t < MAX_RANGE
    box_hit = hit & (t_box <= t_gnd)
    gnd_hit = hit & ~box_hit

    img = np.tile(SKY_COLOR[:, None], (1, dirs.shape[0])).astype(np.float64)
    shade = np.clip(1.0 - t / MAX_RANGE, 0.25, 1.0)
    if layout.boxes:
        colors = np.array([b.color for b in layout.boxes])
        img[:, box_hit] = colors[idx[box_hit]].T * shade[box_hit]
    img[:, gnd_hit] = 0.25 * shade[gnd_hit]
    img = _downsample(img.reshape(3, h, w), SUPERSAMPLE)
    return img.astype(np.float32)


def text_embedding_for(layout: SceneLayout) -> np.ndarray:
    """512-d pseudo-embedding: layout parameters hashed into a seed stream."""
    packed = np.array(
        [[b.cx, b.cy, b.hx, b.hy, b.z0, b.z1, b.intensity, *b.color] for b in layout.boxes],
        dtype=np.float32,
    )
    digest = hashlib.sha256(packed.tobytes()).digest()
    seed = int.from_bytes(digest[:8], "little")
    return rng.Stream(seed).uniform(512, -1.0, 1.0)


def make_sample(layout: SceneLayout, dims) -> SceneSample:
    views = [render_view(layout, i, dims) for i in range(dims.n_views)]
    return SceneSample(
        lidar=render_lidar(layout, dims),
        views=views,
        text_emb=text_embedding_for(layout),
    )


def synth_scenes(count: int, seed: int, dims) -> list:
    """Deterministic list of SceneSamples, sharded by sample index."""
    if count < 1:
        raise InputError(f"scene count must be >= 1, got {count}")
    samples = []
    for k in range(count):
        layout = sample_layout(rng.stream(seed, "scene", k))
        samples.append(make_sample(layout, dims))
    return samples


def split_dataset(samples, train_frac: float, seed: int):
    """Seeded shuffle then prefix split; |train| = round(train_frac * n)."""
    samples = list(samples)
    if not samples:
        raise InputError("cannot split an empty dataset")
    if not 0.0 < train_frac < 1.0:
        raise InputError(f"train_frac must be in (0, 1), got {train_frac}")
    order = rng.stream(seed, "split").shuffled_indices(len(samples))
    n_train = int(math.floor(train_frac * len(samples) + 0.5))
    train = [samples[int(i)] for i in order[:n_train]]
    test = [samples[int(i)] for i in order[n_train:]]
    return train, test


# ---------------------------------------------------------------------------
# TNSR container

_MAGIC = b"TNSR"
_VERSION = 1


def write_tensors(path, named) -> None:
    """Write named f32 tensors; rejects duplicate names and non-finite data."""
    items = list(named.items()) if isinstance(named, dict) else list(named)
    seen = set()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        for name, arr in items:
            if name in seen:
                raise FormatError(f"duplicate tensor name {name!r}", offset=fh.tell())
            seen.add(name)
            arr = np.ascontiguousarray(arr, dtype="<f4")
            if not np.all(np.isfinite(arr)):
                raise FormatError(f"tensor {name!r} contains non-finite values", offset=fh.tell())
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def read_tensors(path) -> dict:
    """Read a TNSR file back into {name: f32 array}, validating the layout."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, n, what):
        if offset + n > len(blob):
            raise FormatError(f"truncated while reading {what}", offset=offset)
        return blob[offset : offset + n]

    if need(0, 4, "magic") != _MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {_MAGIC!r}", offset=0)
    (version,) = struct.unpack("<I", need(4, 4, "version"))
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)

    out: dict = {}
    pos = 8
    while pos < len(blob):
        (name_len,) = struct.unpack("<I", need(pos, 4, "name length"))
        pos += 4
        try:
            name = need(pos, name_len, "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"tensor name is not valid UTF-8: {e}", offset=pos)
        pos += name_len
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", offset=pos)
        (ndim,) = struct.unpack("<I", need(pos, 4, "ndim"))
        pos += 4
        if ndim > 32:
            raise FormatError(f"implausible ndim {ndim}", offset=pos - 4)
        dims = []
        for k in range(ndim):
            (d,) = struct.unpack("<I", need(pos, 4, f"dim {k}"))
            if d < 1:
                raise FormatError(f"non-positive dimension {d}", offset=pos)
            dims.append(d)
            pos += 4
        n_elems = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = need(pos, 4 * n_elems, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
        pos += 4 * n_elems
    return out


# ---------------------------------------------------------------------------
# scene persistence (used by the CLI)


def save_scene(path, sample: SceneSample) -> None:
    entries = {"lidar": sample.lidar, "text_emb": sample.text_emb}
    for i, v in enumerate(sample.views):
        entries[f"view.{i}"] = v
    write_tensors(path, entries)


def load_scene(path) -> SceneSample:
    entries = read_tensors(path)
    views = []
    i = 0
    while f"view.{i}" in entries:
        views.append(entries[f"view.{i}"])
        i += 1
    if "lidar" not in entries or "text_emb" not in entries or not views:
        raise FormatError(f"{path} is not a scene file (lidar/views/text_emb missing)")
    return SceneSample(lidar=entries["lidar"], views=views, text_emb=entries["text_emb"])


def write_manifest(path, records: list, meta: dict) -> None:
    doc = {"meta": meta, "samples": records}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
