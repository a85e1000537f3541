#!/usr/bin/env python3
"""Converts torchvision VGG-19 convolution weights to the eyeref weight format."""

import argparse
import struct
import sys

import torch
import torchvision

BLOCK_LAYERS = (2, 2, 4, 4, 4)


def layer_names():
    for block, count in enumerate(BLOCK_LAYERS, start=1):
        for k in range(1, count + 1):
            yield f"conv{block}_{k}"


def write_record(out, name, tensor):
    data = tensor.detach().to(torch.float32).contiguous().cpu()
    encoded = name.encode("utf-8")
    out.write(struct.pack("<I", len(encoded)))
    out.write(encoded)
    out.write(struct.pack("<I", data.dim()))
    out.write(struct.pack(f"<{data.dim()}I", *data.shape))
    out.write(data.numpy().astype("<f4").tobytes())


def convert(model, path):
    convs = [m for m in model.features if isinstance(m, torch.nn.Conv2d)]
    names = list(layer_names())
    if len(convs) != len(names):
        raise SystemExit(f"expected {len(names)} conv layers, found {len(convs)}")
    with open(path, "wb") as out:
        for name, conv in zip(names, convs):
            write_record(out, name + ".weight", conv.weight)
            write_record(out, name + ".bias", conv.bias)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("output", help="destination weight file")
    parser.add_argument("--random", action="store_true", help="use a randomly initialised model (no download)")
    parser.add_argument("--seed", type=int, default=0, help="seed for --random")
    args = parser.parse_args(argv)
    if args.random:
        torch.manual_seed(args.seed)
        model = torchvision.models.vgg19(weights=None)
    else:
        model = torchvision.models.vgg19(weights=torchvision.models.VGG19_Weights.IMAGENET1K_V1)
    convert(model.eval(), args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
