"""Format adapter: pretrained-model patch features and COCO instance masks
exported into the patch-benchmark on-disk formats (.pbft, .pgm, JSONL).

This package performs zero analysis; it only produces files that the
benchmarking package consumes.
"""

__version__ = "0.1.0"
