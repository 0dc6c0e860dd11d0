"""Build the bundled desk-scale corpus from scikit-image's sample images.

Writes 128x128 RGB tiles to ``src/scet/data/desk/``:

    train/    24 tiles from 13 source images
    heldout/  5 tiles, one each from 5 further source images
    mini/     the first 8 training tiles (quick smoke runs)

Training and held-out tiles never share a source image. Output is
deterministic, so re-running reproduces the committed files.
"""
import argparse
import os
import shutil

import numpy as np
import skimage.data as skd
from PIL import Image

TILE = 128

TRAIN_SOURCES = {
    # name: number of tiles
    "astronaut": 2, "coffee": 2, "rocket": 2, "immunohistochemistry": 2,
    "hubble_deep_field": 2, "camera": 2, "stereo_motorcycle": 2,
    "brick": 2, "grass": 2, "moon": 2, "cell": 2, "retina": 1, "clock": 1,
}
HELDOUT_SOURCES = ["chelsea", "text", "coins", "gravel", "page"]


def _load(name):
    img = getattr(skd, name)()
    if isinstance(img, tuple):
        img = img[0]
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return np.ascontiguousarray(img[:, :, :3]).astype(np.uint8)


def _tiles(img, count):
    """``count`` tiles spread along the image diagonal, avoiding the outer border."""
    h, w = img.shape[:2]
    out = []
    for k in range(count):
        frac = (k + 1) / (count + 1)
        y = int(round(frac * (h - TILE)))
        x = int(round(frac * (w - TILE)))
        out.append(img[y:y + TILE, x:x + TILE])
    return out


def build(root):
    train, held = os.path.join(root, "train"), os.path.join(root, "heldout")
    mini = os.path.join(root, "mini")
    for d in (train, held, mini):
        shutil.rmtree(d, ignore_errors=True)
        os.makedirs(d)
    names = []
    for src, count in TRAIN_SOURCES.items():
        for i, tile in enumerate(_tiles(_load(src), count)):
            name = f"{src}_{i}.png"
            Image.fromarray(tile, "RGB").save(os.path.join(train, name))
            names.append(name)
    for src in HELDOUT_SOURCES:
        (tile,) = _tiles(_load(src), 1)
        Image.fromarray(tile, "RGB").save(os.path.join(held, f"{src}.png"))
    for name in sorted(names)[:8]:
        shutil.copy(os.path.join(train, name), os.path.join(mini, name))
    return len(names), len(HELDOUT_SOURCES)


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    default = os.path.join(here, "..", "src", "scet", "data", "desk")
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=default)
    args = ap.parse_args()
    n_train, n_held = build(os.path.normpath(args.out))
    print(f"wrote {n_train} training and {n_held} held-out tiles to {os.path.normpath(args.out)}")


if __name__ == "__main__":
    main()
