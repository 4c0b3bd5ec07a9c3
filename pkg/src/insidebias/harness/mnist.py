"""MNIST download and loading."""
from __future__ import annotations

import gzip
import io
import logging
import tarfile
import urllib.request
from pathlib import Path

from ..data import GroupedDataset, load_idx
from ..errors import InputError
from ..zoo.weights import atomic_write

log = logging.getLogger(__name__)

FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)
MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
)
# the npm package ships the same four files uncompressed
NPM_TARBALL = "https://registry.npmjs.org/mnist-data/-/mnist-data-1.2.6.tgz"


def _find(directory: Path, name: str) -> Path | None:
    for candidate in (directory / name, directory / f"{name}.gz"):
        if candidate.is_file():
            return candidate
    return None


def have_mnist(directory) -> bool:
    return all(_find(Path(directory), f) for f in FILES)


def _get(url: str, timeout: float) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read()


def fetch_mnist(directory, timeout: float = 60.0) -> list[Path]:
    """Download the four MNIST IDX files into ``directory`` (skips present ones)."""
    directory = Path(directory)
    missing = [f for f in FILES if not _find(directory, f)]
    for name in list(missing):
        for mirror in MIRRORS:
            try:
                raw = gzip.decompress(_get(f"{mirror}{name}.gz", timeout))
            except Exception as exc:  # noqa: BLE001 - try the next mirror
                log.info("%s%s.gz failed: %s", mirror, name, exc)
                continue
            atomic_write(directory / name, raw)
            missing.remove(name)
            break
    if missing:
        log.info("falling back to %s", NPM_TARBALL)
        try:
            blob = _get(NPM_TARBALL, timeout)
        except Exception as exc:  # noqa: BLE001
            raise InputError(f"could not download MNIST: {exc}") from None
        with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
            for member in tar.getmembers():
                name = Path(member.name).name
                if name in missing:
                    atomic_write(directory / name, tar.extractfile(member).read())
                    missing.remove(name)
    if missing:
        raise InputError(f"MNIST files still missing after download: {missing}")
    return [_find(directory, f) for f in FILES]


def load_mnist(directory) -> tuple[GroupedDataset, GroupedDataset]:
    """(train, test) grayscale datasets from the IDX files in ``directory``."""
    directory = Path(directory)
    paths = [_find(directory, f) for f in FILES]
    if not all(paths):
        raise InputError(f"MNIST files not found in {directory}; run `insidebias fetch-mnist` first")
    return load_idx(paths[0], paths[1], "train"), load_idx(paths[2], paths[3], "test")
