#!/usr/bin/env python3
"""Export ImageNet-pretrained torchvision backbones as ONNX feature extractors.

Each model maps a (1, 3, H, W) ImageNet-normalized tensor to a pooled feature
vector (mobilenetv2: 1280, resnet50: 2048, vgg16: 512). Needs torch,
torchvision and onnx. A `<name>.onnx.sha256` sidecar is written next to every
model; the Rust loader refuses files whose digest does not match.

    python scripts/export_backbones.py --out weights mobilenetv2 resnet50 vgg16
    export WOUNDAUG_WEIGHTS_DIR=$PWD/weights
"""

import argparse
import hashlib
import pathlib

import torch
import torchvision.models as tvm


class Pooled(torch.nn.Module):
    def __init__(self, features):
        super().__init__()
        self.features = features

    def forward(self, x):
        x = self.features(x)
        return torch.flatten(torch.nn.functional.adaptive_avg_pool2d(x, 1), 1)


def build(name):
    if name == "mobilenetv2":
        m = tvm.mobilenet_v2(weights=tvm.MobileNet_V2_Weights.IMAGENET1K_V1)
        return Pooled(m.features)
    if name == "resnet50":
        m = tvm.resnet50(weights=tvm.ResNet50_Weights.IMAGENET1K_V1)
        return Pooled(torch.nn.Sequential(*list(m.children())[:-2]))
    if name == "vgg16":
        m = tvm.vgg16(weights=tvm.VGG16_Weights.IMAGENET1K_V1)
        return Pooled(m.features)
    raise SystemExit(f"unknown backbone {name!r}; choose mobilenetv2, resnet50 or vgg16")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=pathlib.Path, required=True)
    ap.add_argument("--size", type=int, default=224, help="input height and width")
    ap.add_argument("names", nargs="+")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.names:
        model = build(name).eval()
        path = args.out / f"{name}.onnx"
        dummy = torch.zeros(1, 3, args.size, args.size)
        torch.onnx.export(model, dummy, str(path), input_names=["image"], output_names=["features"], opset_version=13, dynamo=False)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        (args.out / f"{name}.onnx.sha256").write_text(f"{digest}  {path.name}\n")
        print(f"{path}  {digest}")


if __name__ == "__main__":
    main()
