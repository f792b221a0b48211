"""Populate the dataset cache from npm-registry copies of MNIST / Fashion-MNIST.

Useful on machines that can reach an npm registry but not the dataset hosts.

* ``mnist-data`` ships the official IDX files; they are copied verbatim.
* ``fashion-mnist`` ships 7,000 images per class as JSON in an order that does
  not preserve the official train/test split. The first 6,000 images of each
  class become the train split and the last 1,000 the test split, which keeps
  the official split sizes but not its membership.

    python scripts/import_npm_mirror.py --cache-dir ~/.cache/alterfactual
"""
import argparse
import io
import json
import logging
import tarfile
import urllib.request
from pathlib import Path

import numpy as np

from alterfactual.data import DEFAULT_CACHE_DIR, read_idx, write_idx

REGISTRY = "https://registry.npmjs.org"
PACKAGES = {"mnist": ("mnist-data", "1.2.6"), "fashion_mnist": ("fashion-mnist", "1.1.0")}
TRAIN_PER_CLASS = 6000

log = logging.getLogger("import_npm_mirror")


def fetch_tarball(name, version, registry=REGISTRY):
    url = f"{registry}/{name}/-/{name}-{version}.tgz"
    log.info("fetching %s", url)
    with urllib.request.urlopen(url, timeout=120) as resp:
        return tarfile.open(fileobj=io.BytesIO(resp.read()), mode="r:gz")


def import_mnist(tar, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for member in tar.getmembers():
        if member.name.startswith("package/data/") and member.name.endswith("ubyte"):
            target = out / Path(member.name).name
            target.write_bytes(tar.extractfile(member).read())
            log.info("wrote %s %s", target, read_idx(target).shape)


def import_fashion(tar, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    splits = {"train": ([], []), "test": ([], [])}
    for label in range(10):
        member = tar.getmember(f"package/src/clothes/{label}.json")
        rows = [r for r in json.load(tar.extractfile(member))["data"] if len(r) == 28 * 28]
        data = np.asarray(rows, dtype=np.uint8).reshape(-1, 28, 28)
        for split, block in (("train", data[:TRAIN_PER_CLASS]), ("test", data[TRAIN_PER_CLASS:])):
            splits[split][0].append(block)
            splits[split][1].append(np.full(len(block), label, dtype=np.uint8))
    prefix = {"train": "train", "test": "t10k"}
    for split, (imgs, labels) in splits.items():
        write_idx(out / f"{prefix[split]}-images-idx3-ubyte", np.concatenate(imgs))
        write_idx(out / f"{prefix[split]}-labels-idx1-ubyte", np.concatenate(labels))
        log.info("wrote %s split: %d images", split, sum(len(i) for i in imgs))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cache-dir", type=Path, default=DEFAULT_CACHE_DIR)
    parser.add_argument("--datasets", nargs="+", default=list(PACKAGES), choices=list(PACKAGES))
    parser.add_argument("--registry", default=REGISTRY)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    for dataset in args.datasets:
        tar = fetch_tarball(*PACKAGES[dataset], registry=args.registry)
        (import_mnist if dataset == "mnist" else import_fashion)(tar, args.cache_dir / dataset)


if __name__ == "__main__":
    main()
