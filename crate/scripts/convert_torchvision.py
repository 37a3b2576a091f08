#!/usr/bin/env python3
"""Convert torchvision ResNet-50 / DenseNet-121 weights into a cxrfuse weight archive.

The archive is a directory holding ``index.json`` (name -> shape, dtype,
byte offset, byte length) and ``weights.bin`` (little-endian float32,
row-major, concatenated in sorted name order).

Tensor names are torchvision's ``state_dict`` keys, minus
``num_batches_tracked`` buffers and (unless ``--keep-classifier``) the
1000-way ImageNet head. Legacy DenseNet checkpoints with ``norm.1``-style
keys are renamed the way torchvision's own loader does. The expected names
and shapes are listed in ``crates/core/data/<arch>.names.tsv``; conversion
fails if the checkpoint does not cover them exactly.

Examples::

    # ImageNet weights (downloads through torchvision's cache)
    scripts/convert_torchvision.py resnet50 weights/resnet50 --imagenet
    # a local state_dict
    scripts/convert_torchvision.py densenet121 weights/densenet121 --checkpoint densenet121.pth
    # random weights plus reference activations, for cross-checking the Rust forward pass
    scripts/convert_torchvision.py resnet50 /tmp/r50 --random 7 --keep-classifier --reference /tmp/r50-ref
"""

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np
import torch
import torchvision

FORMAT_VERSION = 1
HEADS = ("fc.", "classifier.")
LEGACY_DENSE = re.compile(r"^(.*denselayer\d+\.(?:norm|relu|conv))\.((?:[12])\.(?:weight|bias|running_mean|running_var))$")
NAME_LISTS = Path(__file__).resolve().parent.parent / "crates" / "core" / "data"


def build(arch, weights=None):
    ctor = {"resnet50": torchvision.models.resnet50, "densenet121": torchvision.models.densenet121}[arch]
    return ctor(weights=weights)


def canonical(state):
    out = {}
    for key, value in state.items():
        m = LEGACY_DENSE.match(key)
        if m:
            key = m.group(1) + m.group(2)
        if key.endswith("num_batches_tracked"):
            continue
        out[key] = value.detach().to(torch.float32).cpu().numpy()
    return out


def expected_names(arch):
    rows = {}
    for line in (NAME_LISTS / f"{arch}.names.tsv").read_text().splitlines():
        name, shape = line.split("\t")
        rows[name] = tuple(int(s) for s in shape.split(","))
    return rows


def check(arch, tensors, keep_classifier):
    expected = expected_names(arch)
    body = {k: v for k, v in tensors.items() if not k.startswith(HEADS)}
    missing = sorted(set(expected) - set(body))
    extra = sorted(set(body) - set(expected))
    wrong = sorted(k for k in expected if k in body and tuple(body[k].shape) != expected[k])
    if missing or extra or wrong:
        for label, names in (("missing", missing), ("unexpected", extra), ("wrong shape", wrong)):
            for n in names:
                print(f"{label}: {n}", file=sys.stderr)
        sys.exit(f"checkpoint does not match the {arch} layout")
    return tensors if keep_classifier else body


def write_archive(tensors, out, source):
    out.mkdir(parents=True, exist_ok=True)
    index, offset = {}, 0
    with open(out / "weights.bin", "wb") as blob:
        for name in sorted(tensors):
            data = np.ascontiguousarray(tensors[name], dtype="<f4")
            blob.write(data.tobytes())
            index[name] = {"shape": list(data.shape), "dtype": "float32", "offset": offset, "length": data.nbytes}
            offset += data.nbytes
    doc = {"format_version": FORMAT_VERSION, "source": source, "tensors": index}
    (out / "index.json").write_text(json.dumps(doc, indent=2) + "\n")


def randomize(model, seed):
    """Random weights with non-trivial batch-norm statistics."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.weight.copy_(0.5 + torch.rand(m.weight.shape, generator=g))
                m.bias.copy_(0.2 * torch.randn(m.bias.shape, generator=g))
                m.running_mean.copy_(0.1 * torch.randn(m.running_mean.shape, generator=g))
                m.running_var.copy_(0.5 + torch.rand(m.running_var.shape, generator=g))


def taps(arch, model, x):
    if arch == "resnet50":
        h = model.maxpool(model.relu(model.bn1(model.conv1(x))))
        out = []
        for layer in (model.layer1, model.layer2, model.layer3, model.layer4):
            h = layer(h)
            out.append(h)
        return out
    f = model.features
    h = f.pool0(f.relu0(f.norm0(f.conv0(x))))
    out = []
    for b in range(1, 5):
        h = getattr(f, f"denseblock{b}")(h)
        if b < 4:
            out.append(h)
            h = getattr(f, f"transition{b}")(h)
    out.append(torch.relu(f.norm5(h)))
    return out


def write_reference(arch, model, out, seed):
    """Stores an input batch, the four stage taps and the class probabilities."""
    model.eval()
    g = torch.Generator().manual_seed(seed + 1)
    x = torch.randn((2, 3, 224, 224), generator=g)
    with torch.no_grad():
        tensors = {"input": x.numpy()}
        for i, t in enumerate(taps(arch, model, x), start=1):
            tensors[f"tap{i}"] = t.numpy()
        tensors["probs"] = torch.softmax(model(x), dim=1).numpy()
    write_archive(tensors, out, f"reference:{arch}")


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("arch", choices=["resnet50", "densenet121"])
    p.add_argument("out", type=Path, help="archive directory to create")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--imagenet", action="store_true", help="torchvision's ImageNet weights")
    src.add_argument("--checkpoint", type=Path, help="a saved state_dict")
    src.add_argument("--random", type=int, metavar="SEED", help="random weights (for testing)")
    p.add_argument("--keep-classifier", action="store_true", help="also export the ImageNet head")
    p.add_argument("--reference", type=Path, metavar="DIR", help="write reference activations as an archive")
    args = p.parse_args()

    if args.imagenet:
        model = build(args.arch, weights="IMAGENET1K_V1")
        source = "imagenet"
    elif args.checkpoint:
        model = build(args.arch)
        state = torch.load(args.checkpoint, map_location="cpu", weights_only=True)
        model.load_state_dict({LEGACY_DENSE.sub(r"\1\2", k): v for k, v in state.items()})
        source = f"checkpoint:{args.checkpoint.name}"
    else:
        torch.manual_seed(args.random)
        model = build(args.arch)
        randomize(model, args.random)
        source = f"random:{args.random}"

    tensors = check(args.arch, canonical(model.state_dict()), args.keep_classifier)
    write_archive(tensors, args.out, source)
    print(f"{args.arch}: wrote {len(tensors)} tensors to {args.out}")
    if args.reference:
        write_reference(args.arch, model, args.reference, args.random or 0)


if __name__ == "__main__":
    main()
