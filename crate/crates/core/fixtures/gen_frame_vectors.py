#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Regenerates frame_vectors.json from a standalone implementation of the
payload mixing function. Run from this directory."""

import hashlib
import json
import struct

M = (1 << 64) - 1


def mix64(seq, index):
    z = ((seq * 0x9E3779B97F4A7C15) & M) ^ ((index * 0xC2B2AE3D27D4EB4F) & M)
    z ^= z >> 33
    z = (z * 0xFF51AFD7ED558CCD) & M
    z ^= z >> 33
    z = (z * 0xC4CEB9FE1A85EC53) & M
    z ^= z >> 33
    return z


def pointcloud(seq, count):
    out = bytearray()
    for i in range(count):
        z = (mix64(seq, i) >> 40) / float(1 << 24)
        out += struct.pack("<fffI", float(seq), float(i), z, 0)
    return bytes(out)


def image(seq, w, h, c, stride, depth):
    row_bytes = w * c * depth
    out = bytearray()
    for r in range(h):
        for b in range(row_bytes):
            m = mix64(seq, r * row_bytes + b)
            m ^= m >> 32
            m ^= m >> 16
            m ^= m >> 8
            out.append(m & 0xFF)
        out += bytes(stride - row_bytes)
    return bytes(out)


CASES = [
    {"seq": 1, "point_cloud": {"count": 3}},
    {"seq": 5, "point_cloud": {"count": 0}},
    {"seq": 7, "point_cloud": {"count": 2160}},
    {"seq": 42, "point_cloud": {"count": 1}},
    {"seq": 18446744073709551615, "point_cloud": {"count": 17}},
    {"seq": 1, "image": {"width": 4, "height": 2, "channels": 1, "stride": 4, "depth": 1}},
    {"seq": 3, "image": {"width": 3, "height": 4, "channels": 2, "stride": 8, "depth": 1}},
    {"seq": 9, "image": {"width": 5, "height": 3, "channels": 3, "stride": 32, "depth": 2}},
    {"seq": 100, "image": {"width": 64, "height": 48, "channels": 3, "stride": 192, "depth": 1}},
    {"seq": 3, "image": {"width": 640, "height": 480, "channels": 3, "stride": 1920, "depth": 1}},
]

vectors = []
for case in CASES:
    if "point_cloud" in case:
        data = pointcloud(case["seq"], case["point_cloud"]["count"])
    else:
        m = case["image"]
        data = image(case["seq"], m["width"], m["height"], m["channels"], m["stride"], m["depth"])
    vectors.append(dict(case, bytes=len(data), sha256=hashlib.sha256(data).hexdigest()))

with open("frame_vectors.json", "w") as f:
    json.dump(vectors, f, indent=2)
    f.write("\n")
