"""Dataset export and loading: binary PPM images plus a line manifest.

Manifest format, one tab-separated record per line:
    <image path relative to the manifest>\t<caption string>\t<scene JSON>\t<split>
Splits are train/val/test and are disjoint by scene: every record's scene
appears in exactly one split.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from ..errors import SceneError, TulipError
from ..util import rng_from
from .captions import caption
from .grammar import ObjectGroup, SceneSpec, sample_scene
from .render import render

MANIFEST_NAME = "manifest.tsv"


def write_ppm(path, img):
    """8-bit binary PPM (P6). img: (H, W, 3) float in [0, 1]."""
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_ppm(path):
    """Read a P6 PPM back to (H, W, 3) uint8."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise TulipError(f"{path}: not a binary PPM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise TulipError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=pos, count=w * h * 3)
    return pixels.reshape(h, w, 3).copy()


def scene_to_json(scene):
    return json.dumps({
        "groups": [{"shape": g.shape, "color": g.color,
                    "count": g.count, "cell": g.cell} for g in scene.groups],
        "relation": list(scene.relation) if scene.relation else None,
        "background": scene.background,
    }, separators=(",", ":"))


def scene_from_json(text):
    d = json.loads(text)
    groups = tuple(ObjectGroup(g["shape"], g["color"], g["count"], g["cell"])
                   for g in d["groups"])
    rel = tuple(d["relation"]) if d["relation"] else None
    return SceneSpec(groups=groups, relation=rel, background=d["background"])


@dataclass
class Record:
    path: str
    words: list
    scene: SceneSpec
    split: str


def generate_dataset(out_dir, n_scenes, size, seed, val_frac=0.1, test_frac=0.1):
    """Sample n_scenes distinct scenes, render, caption, and export.

    Returns the manifest path. Deterministic in (n_scenes, size, seed).
    """
    if n_scenes < 3:
        raise TulipError("need at least 3 scenes to populate all splits")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    scenes = []
    seen = set()
    probe = 0
    while len(scenes) < n_scenes:
        s = sample_scene((seed, probe))
        probe += 1
        if s not in seen:
            seen.add(s)
            scenes.append(s)
        if probe > 100 * n_scenes + 10000:
            raise SceneError("scene space exhausted before reaching n_scenes")

    rng = rng_from(seed, "split")
    order = rng.permutation(n_scenes)
    n_test = max(1, int(round(test_frac * n_scenes)))
    n_val = max(1, int(round(val_frac * n_scenes)))
    split_of = {}
    for rank, idx in enumerate(order):
        if rank < n_test:
            split_of[idx] = "test"
        elif rank < n_test + n_val:
            split_of[idx] = "val"
        else:
            split_of[idx] = "train"

    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    with open(manifest_path, "w", encoding="ascii") as mf:
        for i, scene in enumerate(scenes):
            img = render(scene, size, seed=(seed, "render", i))
            rel = os.path.join("images", f"{i:06d}.ppm")
            write_ppm(os.path.join(out_dir, rel), img)
            words = caption(scene, template_seed=(seed, "caption", i))
            mf.write("\t".join([rel, " ".join(words), scene_to_json(scene),
                                split_of[i]]) + "\n")
    return manifest_path


def load_manifest(data_dir):
    """Parse the manifest into Records (images are loaded lazily)."""
    manifest_path = os.path.join(data_dir, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise TulipError(f"no manifest at {manifest_path}")
    records = []
    with open(manifest_path, "r", encoding="ascii") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            path, cap, scene_json, split = line.split("\t")
            records.append(Record(path=path, words=cap.split(),
                                  scene=scene_from_json(scene_json), split=split))
    return records


class SceneDataset:
    """In-memory dataset: uint8 images plus scenes/captions, by split."""

    def __init__(self, data_dir):
        self.data_dir = data_dir
        self.records = load_manifest(data_dir)
        self.images = np.stack([
            read_ppm(os.path.join(data_dir, r.path)) for r in self.records])
        self.size = self.images.shape[1]
        self._splits = {}
        for split in ("train", "val", "test"):
            self._splits[split] = np.array(
                [i for i, r in enumerate(self.records) if r.split == split],
                dtype=np.int64)

    def indices(self, split):
        return self._splits[split]

    def image_f32(self, idx):
        return self.images[idx].astype(np.float32) / np.float32(255.0)

    def __len__(self):
        return len(self.records)
