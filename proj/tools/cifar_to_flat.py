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


"""Converts CIFAR-10 python batches into the flat float-32 image format.

Usage:
    python3 tools/cifar_to_flat.py /path/to/cifar-10-batches-py data/cifar10

Writes train.json/train.json.f32 (data_batch_1..5) and test.json/test.json.f32
(test_batch). Pixels are stored HWC in [0, 1]; labels are the CIFAR-10 class
indices. --limit keeps the first N images of each split.
"""

import argparse
import json
import pathlib
import pickle

import numpy as np


def load_batches(root: pathlib.Path, names):
    images, labels = [], []
    for name in names:
        with open(root / name, "rb") as fh:
            batch = pickle.load(fh, encoding="bytes")
        images.append(np.asarray(batch[b"data"], dtype=np.uint8))
        labels.extend(int(v) for v in batch[b"labels"])
    data = np.concatenate(images).reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return data, labels


def write_split(out: pathlib.Path, stem: str, data: np.ndarray, labels) -> None:
    blob = out / f"{stem}.json.f32"
    (data.astype("<f4") / np.float32(255.0)).astype("<f4").tofile(blob)
    manifest = {
        "format": "f32-matrix",
        "version": 1,
        "rows": int(data.shape[0]),
        "height": 32,
        "width": 32,
        "channels": 3,
        "data": blob.name,
        "labels": list(labels),
    }
    (out / f"{stem}.json").write_text(json.dumps(manifest))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", type=pathlib.Path)
    parser.add_argument("out", type=pathlib.Path)
    parser.add_argument("--limit", type=int, default=0)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    splits = {
        "train": [f"data_batch_{k}" for k in range(1, 6)],
        "test": ["test_batch"],
    }
    for stem, names in splits.items():
        data, labels = load_batches(args.source, names)
        if args.limit > 0:
            data, labels = data[: args.limit], labels[: args.limit]
        write_split(args.out, stem, data, labels)
        print(f"{stem}: {data.shape[0]} images")


if __name__ == "__main__":
    main()
