#!/usr/bin/env python3
"""Convert PyTorch AdaIN weights to the styleaug .styw format.

Reads the VGG encoder (vgg_normalised.pth) and decoder (decoder.pth) state
dicts used by the common PyTorch AdaIN implementation and writes a
vgg_relu4_1 weight file. Encoder convolutions past relu4_1 are dropped.

    python3 tools/convert_adain_weights.py --vgg vgg_normalised.pth \
        --decoder decoder.pth --out stylizer.styw
"""

import argparse
import re
import struct
import sys

import numpy as np

MAGIC = b"STYAUGW\0"
VERSION = 1
ARCH = "vgg_relu4_1"

# (in, out, kernel) per convolution, in network order.
ENCODER_CONVS = [(3, 3, 1), (3, 64, 3), (64, 64, 3), (64, 128, 3), (128, 128, 3), (128, 256, 3),
                 (256, 256, 3), (256, 256, 3), (256, 256, 3), (256, 512, 3)]
DECODER_CONVS = [(512, 256, 3), (256, 256, 3), (256, 256, 3), (256, 256, 3), (256, 128, 3),
                 (128, 128, 3), (128, 64, 3), (64, 64, 3), (64, 3, 3)]

# Layer sequence of the C++ networks: "c" conv + ReLU, "l" conv alone,
# "p" max-pool, "u" nearest upsample.
ENCODER_LAYOUT = "l c c p c c p c c c c p c"
DECODER_LAYOUT = "c u c c c c u c c u c l"


def conv_descriptor(cin, cout, k):
    pad = k // 2
    mode = "reflect" if k == 3 else "zero"
    return f"conv{k}x{k} {cin}->{cout} stride1 pad{pad} {mode} bias"


def build(layout, convs):
    """Returns (descriptors, [(layer index, conv spec)])."""
    descriptors, slots = [], []
    convs = iter(convs)
    for tok in layout.split():
        if tok in ("c", "l"):
            spec = next(convs)
            slots.append((len(descriptors), spec))
            descriptors.append(conv_descriptor(*spec))
            if tok == "c":
                descriptors.append("relu")
        elif tok == "p":
            descriptors.append("maxpool2x2 stride2 pad0 ceil")
        elif tok == "u":
            descriptors.append("upsample_nearest2x")
    return descriptors, slots


def conv_tensors(state):
    """Conv (weight, bias) pairs of a state dict ordered by module index."""
    pairs = {}
    for key, value in state.items():
        m = re.fullmatch(r"(?:.*\.)?(\d+)\.(weight|bias)", key)
        if not m:
            continue
        arr = value.detach().cpu().numpy() if hasattr(value, "detach") else np.asarray(value)
        if m.group(2) == "weight" and arr.ndim != 4:
            continue
        pairs.setdefault(int(m.group(1)), {})[m.group(2)] = arr.astype(np.float32)
    out = []
    for idx in sorted(pairs):
        p = pairs[idx]
        if "weight" in p:
            if "bias" not in p:
                raise ValueError(f"convolution {idx} has no bias")
            out.append((p["weight"], p["bias"]))
    return out


def take(convs, expected, what):
    if len(convs) < len(expected):
        raise ValueError(f"{what}: found {len(convs)} convolutions, need {len(expected)}")
    for i, ((w, b), (cin, cout, k)) in enumerate(zip(convs, expected)):
        if w.shape != (cout, cin, k, k) or b.shape != (cout,):
            raise ValueError(f"{what} convolution {i}: shape {w.shape}/{b.shape}, expected ({cout}, {cin}, {k}, {k})")
    return convs[:len(expected)]


def write_str(f, s):
    b = s.encode()
    f.write(struct.pack("<Q", len(b)))
    f.write(b)


def write_tensor(f, arr):
    f.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<Q", d))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def convert(vgg_state, decoder_state, out_path):
    enc = take(conv_tensors(vgg_state), ENCODER_CONVS, "encoder")
    dec = conv_tensors(decoder_state)
    if len(dec) != len(DECODER_CONVS):
        raise ValueError(f"decoder: found {len(dec)} convolutions, expected {len(DECODER_CONVS)}")
    dec = take(dec, DECODER_CONVS, "decoder")
    enc_desc, enc_slots = build(ENCODER_LAYOUT, ENCODER_CONVS)
    dec_desc, dec_slots = build(DECODER_LAYOUT, DECODER_CONVS)

    params = []
    for prefix, slots, tensors in (("encoder", enc_slots, enc), ("decoder", dec_slots, dec)):
        for (layer, _), (w, b) in zip(slots, tensors):
            params.append((f"{prefix}.{layer}.weight", w))
            params.append((f"{prefix}.{layer}.bias", b))

    with open(out_path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        write_str(f, ARCH)
        for desc in (enc_desc, dec_desc):
            f.write(struct.pack("<Q", len(desc)))
            for d in desc:
                write_str(f, d)
        f.write(struct.pack("<Q", len(params)))
        for name, arr in params:
            write_str(f, name)
            write_tensor(f, arr)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vgg", required=True, help="encoder state dict (.pth)")
    ap.add_argument("--decoder", required=True, help="decoder state dict (.pth)")
    ap.add_argument("--out", required=True, help="output .styw file")
    args = ap.parse_args(argv)
    import torch

    try:
        vgg = torch.load(args.vgg, map_location="cpu")
        dec = torch.load(args.decoder, map_location="cpu")
        convert(vgg, dec, args.out)
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
