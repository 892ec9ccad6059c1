"""Shared data helpers for the demo scripts.

The demos avoid any network access. Where a digit benchmark is wanted they
fall back to scikit-learn's bundled 8x8 handwritten digits, upscaled to the
28x28 layout and written through the package's own IDX serializer, unless a
real MNIST directory is supplied via TASKCOND_DATA_DIR.
"""

import os
from pathlib import Path

import numpy as np

from taskcond.mnist import STANDARD_FILES, write_idx_images, write_idx_labels


def mnist_or_digits_dir(workdir="demo_data"):
    env = os.environ.get("TASKCOND_DATA_DIR")
    if env and all(
        (Path(env) / n).exists() or (Path(env) / (n + ".gz")).exists()
        for n in STANDARD_FILES
    ):
        print(f"using MNIST from {env}")
        return Path(env), "mnist"
    out = Path(workdir)
    if not all((out / n).exists() for n in STANDARD_FILES):
        print("MNIST not found; writing the bundled-digits stand-in to", out)
        build_digits_idx(out)
    return out, "digits"


def build_digits_idx(out_dir):
    from sklearn.datasets import load_digits

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    X, y = load_digits(return_X_y=True)
    imgs = np.empty((X.shape[0], 784))
    for i, row in enumerate(X):
        img24 = np.kron(row.reshape(8, 8) / 16.0, np.ones((3, 3)))
        imgs[i] = np.pad(img24, 2).reshape(-1)
    imgs = np.clip(imgs, 0.0, 1.0)
    test = (np.arange(len(y)) % 5) == 4
    (out / "train-images-idx3-ubyte").write_bytes(write_idx_images(imgs[~test]))
    (out / "train-labels-idx1-ubyte").write_bytes(write_idx_labels(y[~test]))
    (out / "t10k-images-idx3-ubyte").write_bytes(write_idx_images(imgs[test]))
    (out / "t10k-labels-idx1-ubyte").write_bytes(write_idx_labels(y[test]))
    return out


def two_blob_task(rng, n_per_class=60, centers=((-1.5, 0.0), (1.5, 0.0)), spread=0.4):
    from taskcond.mnist import make_sampleset

    xs, ys = [], []
    for c, mu in enumerate(centers):
        xs.append(rng.normal(loc=mu, scale=spread, size=(n_per_class, len(mu))))
        ys.append(np.full(n_per_class, c))
    return make_sampleset(np.concatenate(xs), np.concatenate(ys))
