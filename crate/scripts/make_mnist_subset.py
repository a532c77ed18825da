"""Split the 5000-image MNIST sample shipped inside the `mlxtend` wheel into
disjoint IDX train (4000) and test (1000) files, with matching label files.

Each class contributes its first 400 images to the train file and its last
100 to the test file. Within a file the classes are interleaved
(0, 1, ..., 9, 0, 1, ...) so that any prefix is class-balanced.

Usage: python3 scripts/make_mnist_subset.py path/to/mlxtend-*.whl data/
The wheel can be fetched with `pip download --no-deps mlxtend`.
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

TRAIN_PER_CLASS = 400


def write_idx(out: Path, name: str, samples) -> None:
    with open(out / f"mnist-{name}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            assert len(pixels) == 784
            f.write(bytes(pixels))
    with open(out / f"mnist-{name}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))


def interleave(groups):
    out = []
    for i in range(max(len(g) for g in groups)):
        out.extend(g[i] for g in groups if i < len(g))
    return out


def main(wheel: str, out_dir: str) -> None:
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = [line.split(",") for line in raw.splitlines() if line.strip()]
    by_class = {}
    for r in rows:
        label = int(float(r[-1]))
        by_class.setdefault(label, []).append(([int(float(v)) for v in r[:-1]], label))
    classes = [by_class[c] for c in sorted(by_class)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out, "train", interleave([g[:TRAIN_PER_CLASS] for g in classes]))
    write_idx(out, "test", interleave([g[TRAIN_PER_CLASS:] for g in classes]))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
