#!/usr/bin/env python3
"""Independent scalar implementation of the token-selection hash.

Writes the golden test-vector files consumed by the Rust test suite:

  prf_vectors.txt     "token message prev key -> bit"  (green fraction 0.5)
  selection_hash.txt  "token message prev key -> hash" (full 64-bit value)

Keys are 128-bit hex. Vectors are drawn from a fixed Python RNG seed plus a
few hand-picked edge cases.
"""

import random
import sys

M64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
SEED_IV = 0x6A09E667F3BCC908
SENTINEL_TAG = 0xBB67AE8584CAA73B


def mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def absorb(s, x):
    return mix64(((s ^ x) + GOLDEN) & M64)


def selection_hash(token, message, prev, key):
    lo, hi = key & M64, key >> 64
    s = absorb(lo ^ SEED_IV, token)
    s = absorb(s, message)
    return absorb(s, prev ^ hi)


def sentinel(key):
    lo, hi = key & M64, key >> 64
    return (1 << 32) | (absorb(lo ^ SEED_IV, hi ^ SENTINEL_TAG) >> 32)


def main(outdir):
    rng = random.Random(20240101)
    cases = [
        (0, 0, 0, 0),
        (1, 0, 0, 0),
        (0, 1, 0, 0),
        (0, 0, 1, 0),
        (0, 0, 0, 1),
        (0, 0, 0, 1 << 64),
        (1023, (1 << 20) - 1, 1023, (1 << 128) - 1),
        (5, 2024, sentinel(0xC0DE), 0xC0DE),
        (42, 718084, sentinel(0), 0),
    ]
    while len(cases) < 32:
        key = rng.getrandbits(128)
        prev = rng.randrange(50000) if rng.random() < 0.8 else sentinel(key)
        cases.append((rng.randrange(50000), rng.randrange(1 << 20), prev, key))
    thr = int(0.5 * 2**64)
    with open(f"{outdir}/prf_vectors.txt", "w") as f:
        f.write("# token message prev key(hex128) -> bit ; green fraction 0.5\n")
        for t, m, p, k in cases:
            bit = 1 if selection_hash(t, m, p, k) < thr else 0
            f.write(f"{t} {m} {p} {k:032x} -> {bit}\n")
    with open(f"{outdir}/selection_hash.txt", "w") as f:
        f.write("# token message prev key(hex128) -> hash(hex64)\n")
        for t, m, p, k in cases:
            f.write(f"{t} {m} {p} {k:032x} -> {selection_hash(t, m, p, k):016x}\n")
        f.write("# sentinel key(hex128) -> prev\n")
        for k in (0, 0xC0DE, (1 << 128) - 1):
            f.write(f"sentinel {k:032x} -> {sentinel(k)}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ".")
