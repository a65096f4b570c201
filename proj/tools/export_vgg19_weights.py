#!/usr/bin/env python3
"""Export the ImageNet-pretrained VGG19 convolutions conv1_1..conv3_1 from
torchvision into the little-endian blob read by VggExtractor::from_file.

Layout: 8-byte magic "SADVVGG1", u32 version (1), u32 count (5), then per
convolution: u32 name length + name, weight tensor, bias tensor. A tensor is
u32 rank, rank x i64 dims, then float32 data in row-major order.
"""

import argparse
import os
import struct
import sys

NAMES = ["conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1"]
# Indices of those convolutions inside torchvision's vgg19().features.
INDICES = [0, 2, 5, 7, 10]


def tensor_bytes(t):
    t = t.detach().cpu().contiguous().float()
    out = struct.pack("<I", t.dim())
    out += b"".join(struct.pack("<q", d) for d in t.shape)
    return out + t.numpy().astype("<f4").tobytes()


def main():
    default_cache = os.environ.get("STYLEADV_CACHE") or os.path.join(
        os.path.expanduser("~"), ".cache", "styleadv")
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=os.path.join(default_cache, "vgg19_relu3_1.bin"))
    args = parser.parse_args()

    import torchvision

    model = torchvision.models.vgg19(weights=torchvision.models.VGG19_Weights.IMAGENET1K_V1)
    features = model.features
    blob = b"SADVVGG1" + struct.pack("<II", 1, len(NAMES))
    for name, idx in zip(NAMES, INDICES):
        conv = features[idx]
        encoded = name.encode()
        blob += struct.pack("<I", len(encoded)) + encoded
        blob += tensor_bytes(conv.weight) + tensor_bytes(conv.bias)

    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    tmp = args.out + ".partial"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, args.out)
    print(f"wrote {args.out} ({len(blob)} bytes)")


if __name__ == "__main__":
    sys.exit(main())
