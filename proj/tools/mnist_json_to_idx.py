#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm `mnist` package into IDX files.

The package stores each digit class as {"data": [...]} with pixels already
scaled to [0, 1] and rounded to three decimals, so round(v * 255) recovers
the original byte exactly.

usage: mnist_json_to_idx.py <package/src/digits> <out_dir>
"""
import json
import struct
import sys
from pathlib import Path

PIXELS = 28 * 28


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    images = bytearray()
    labels = bytearray()
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        if len(data) % PIXELS:
            raise SystemExit(f"{digit}.json: {len(data)} values is not a multiple of {PIXELS}")
        for v in data:
            b = round(v * 255)
            if not 0 <= b <= 255 or abs(v * 255 - b) > 0.5:
                raise SystemExit(f"{digit}.json: pixel {v} out of range")
            images.append(b)
        labels.extend([digit] * (len(data) // PIXELS))

    n = len(labels)
    (out / "mnist-10k-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, n, 28, 28) + images)
    (out / "mnist-10k-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, n) + labels)
    print(f"wrote {n} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
