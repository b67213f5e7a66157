# Copyright 2026 The kktrecon Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


"""Converts the 5000-digit MNIST sample bundled with mlxtend into IDX files.

Usage:
    pip download mlxtend --no-deps -d /tmp/wheels
    python3 tools/mnist5k_to_idx.py /tmp/wheels/mlxtend-*.whl data/mnist5k

The input may be the wheel itself or the extracted mnist_5k.csv.gz. Rows
are split 4000/1000 into train/test with a fixed permutation (seed 0).
"""

import argparse
import gzip
import io
import pathlib
import struct
import zipfile

import numpy as np

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(source: pathlib.Path) -> np.ndarray:
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as wheel:
            raw = wheel.read(CSV_MEMBER)
    else:
        raw = source.read_bytes()
    text = gzip.decompress(raw).decode("ascii")
    return np.loadtxt(io.StringIO(text), delimiter=",", dtype=np.int64)


def write_images(path: pathlib.Path, images: np.ndarray) -> None:
    with path.open("wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, images.shape[0], 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path: pathlib.Path, labels: np.ndarray) -> None:
    with path.open("wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", type=pathlib.Path)
    parser.add_argument("out_dir", type=pathlib.Path)
    args = parser.parse_args()

    rows = read_rows(args.source)
    pixels, labels = rows[:, :-1], rows[:, -1]
    assert pixels.shape[1] == 784 and pixels.min() >= 0 and pixels.max() <= 255

    order = np.random.default_rng(0).permutation(len(rows))
    train, test = order[:4000], order[4000:]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_images(args.out_dir / "train-images-idx3-ubyte", pixels[train])
    write_labels(args.out_dir / "train-labels-idx1-ubyte", labels[train])
    write_images(args.out_dir / "test-images-idx3-ubyte", pixels[test])
    write_labels(args.out_dir / "test-labels-idx1-ubyte", labels[test])


if __name__ == "__main__":
    main()
