import os
from pathlib import Path

import numpy as np
import pytest

from taskcond.mnist import (
    STANDARD_FILES,
    build_split_mnist,
    load_mnist,
    make_sampleset,
    write_idx_images,
    write_idx_labels,
)

MNIST_ENV = "TASKCOND_DATA_DIR"
MNIST_DEFAULT = Path(__file__).resolve().parent.parent / "data" / "mnist"


def mnist_dir_or_none():
    """Directory holding the four standard MNIST files, if the user supplied one."""
    candidate = Path(os.environ.get(MNIST_ENV, MNIST_DEFAULT))
    for name in STANDARD_FILES:
        if not ((candidate / name).exists() or (candidate / (name + ".gz")).exists()):
            return None
    return candidate


def require_mnist():
    d = mnist_dir_or_none()
    if d is None:
        pytest.skip(
            "real MNIST data not present: place the four standard IDX files "
            f"({', '.join(STANDARD_FILES)}, raw or .gz) in {MNIST_DEFAULT} or point "
            f"${MNIST_ENV} at a directory holding them"
        )
    return d


@pytest.fixture(scope="session")
def mnist_dir():
    return require_mnist()


def _upscale_digits():
    """Real 8x8 handwritten digits upscaled to the 28x28 input layout.

    Kron to 24x24 then pad 2 pixels of margin; values 0..16 map onto the
    byte range. Every fifth sample becomes the held-out test split.
    """
    from sklearn.datasets import load_digits

    X, y = load_digits(return_X_y=True)
    imgs = np.empty((X.shape[0], 784))
    for i, row in enumerate(X):
        img24 = np.kron(row.reshape(8, 8) / 16.0, np.ones((3, 3)))
        imgs[i] = np.pad(img24, 2).reshape(-1)
    imgs = np.clip(imgs, 0.0, 1.0)
    test_mask = (np.arange(len(y)) % 5) == 4
    return imgs[~test_mask], y[~test_mask], imgs[test_mask], y[test_mask]


@pytest.fixture(scope="session")
def digits_idx_dir(tmp_path_factory):
    """Small real-digit dataset written through the package's own IDX writers."""
    out = tmp_path_factory.mktemp("digits_idx")
    train_x, train_y, test_x, test_y = _upscale_digits()
    (out / "train-images-idx3-ubyte").write_bytes(write_idx_images(train_x))
    (out / "train-labels-idx1-ubyte").write_bytes(write_idx_labels(train_y))
    (out / "t10k-images-idx3-ubyte").write_bytes(write_idx_images(test_x))
    (out / "t10k-labels-idx1-ubyte").write_bytes(write_idx_labels(test_y))
    return out


@pytest.fixture(scope="session")
def digits_tasks(digits_idx_dir):
    return build_split_mnist(*load_mnist(digits_idx_dir))


def gaussian_task(rng, n_per_class=40, dim=2, spread=0.3, centers=((-1.5, 0.0), (1.5, 0.0))):
    """Toy two-class task: one Gaussian blob per class."""
    xs, ys = [], []
    for c, mu in enumerate(centers):
        xs.append(rng.normal(loc=mu, scale=spread, size=(n_per_class, dim)))
        ys.append(np.full(n_per_class, c))
    return make_sampleset(np.concatenate(xs), np.concatenate(ys))
