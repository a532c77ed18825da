"""Writes the tiny IDX image file used by the data-loading tests."""
import struct
import sys
from pathlib import Path

out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/tiny-images-idx3-ubyte")
count, rows, cols = 3, 2, 3
pixels = bytes((17 * i + 5) % 256 for i in range(count * rows * cols))
out.write_bytes(struct.pack(">IIII", 0x803, count, rows, cols) + pixels)
print(out, len(pixels), "pixels")
