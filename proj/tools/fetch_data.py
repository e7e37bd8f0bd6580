#!/usr/bin/env python3
"""Fetch the public datasets used by the toolkit into ./data.

Sources are package mirrors reachable without general internet access:
  * MNIST: the 10,000-digit subset bundled in the npm package `mnist`,
    written out as IDX files (images 0x00000803, labels 0x00000801).
  * Vehicle (Statlog vehicle silhouettes): the KEEL copy bundled in the
    PyPI wheel `keel-ds`, written out as CSV with a header row.

Credit is not fetched. Drop the UCI "default of credit card clients" data
at data/credit.csv (23 feature columns followed by a 0/1 label column named
`default`) to use it; otherwise the toolkit generates its surrogate.
"""

import argparse
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile
import zipfile

VEHICLE_COLUMNS = [
    "compactness", "circularity", "distance_circularity", "radius_ratio",
    "pr_axis_aspect_ratio", "max_length_aspect_ratio", "scatter_ratio",
    "elongatedness", "pr_axis_rectangularity", "max_length_rectangularity",
    "scaled_variance_major", "scaled_variance_minor", "scaled_radius_of_gyration",
    "skewness_about_major", "skewness_about_minor", "kurtosis_about_major",
    "kurtosis_about_minor", "hollows_ratio",
]


def fetch_mnist(out_dir, work):
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=work, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = os.path.join(work, "mnist-1.1.0.tgz")
    images, labels = [], []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            values = json.load(member)["data"]
            count = len(values) // 784
            for i in range(count):
                pixels = values[i * 784:(i + 1) * 784]
                images.append(bytes(int(round(v * 255)) for v in pixels))
                labels.append(digit)
    # Interleave digits deterministically so file order is not sorted by class.
    order = sorted(range(len(labels)), key=lambda i: (i * 7919) % len(labels))
    os.makedirs(os.path.join(out_dir, "mnist"), exist_ok=True)
    with open(os.path.join(out_dir, "mnist", "images.idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(order), 28, 28))
        for i in order:
            f.write(images[i])
    with open(os.path.join(out_dir, "mnist", "labels.idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(order)))
        f.write(bytes(labels[i] for i in order))
    print(f"mnist: {len(order)} images")


def fetch_vehicle(out_dir, work):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary", ":all:",
                    "--timeout", "200", "-q", "-d", work, "keel-ds==0.2.5"], check=True)
    wheel = os.path.join(work, "keel_ds-0.2.5-py3-none-any.whl")
    raw = zipfile.ZipFile(wheel).read("keel_ds/data/balanced/raw/vehicle.dat").decode()
    rows = [line.split(",") for line in raw.splitlines() if line.strip() and not line.startswith("@")]
    with open(os.path.join(out_dir, "vehicle.csv"), "w") as f:
        f.write(",".join(VEHICLE_COLUMNS + ["class"]) + "\n")
        for row in rows:
            cells = [c.strip() for c in row]
            f.write(",".join(cells) + "\n")
    print(f"vehicle: {len(rows)} rows")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    with tempfile.TemporaryDirectory() as work:
        fetch_mnist(args.out, work)
        fetch_vehicle(args.out, work)


if __name__ == "__main__":
    main()
