#!/usr/bin/env python3
"""Serve a TorchXRayVision DenseNet-121 to the `real` adapter.

Usage: xrv_bridge.py --weights PATH

PATH is a checkpoint saved with torch.save (a full model or a state dict)
for the 18-output "all" DenseNet. Requests and replies are JSON lines; see
the ProcessAdapter docs. Logits are pre-sigmoid and reordered to the
adapter's alphabetical label order. Mid-layer features are the 1024
globally pooled activations feeding the classifier.
"""
import argparse
import hashlib
import json
import sys

import numpy as np
import torch
import torch.nn.functional as F
import torchxrayvision as xrv

LABELS = [
    "Atelectasis", "Cardiomegaly", "Consolidation", "Edema", "Effusion",
    "Emphysema", "Enlarged Cardiomediastinum", "Fibrosis", "Fracture",
    "Hernia", "Infiltration", "Lung Lesion", "Lung Opacity", "Mass",
    "Nodule", "Pleural Thickening", "Pneumonia", "Pneumothorax",
]
SIZE = 224


def load_model(path):
    obj = torch.load(path, map_location="cpu", weights_only=False)
    state = obj.state_dict() if hasattr(obj, "state_dict") else obj
    model = xrv.models.DenseNet(num_classes=18, in_channels=1)
    model.load_state_dict(state, strict=False)
    model.eval()
    names = [p.replace("_", " ") for p in xrv.datasets.default_pathologies]
    order = [names.index(label) for label in LABELS]
    return model, order


def to_tensor(req):
    w, h = req["width"], req["height"]
    if (w, h) != (SIZE, SIZE):
        raise ValueError(f"expected {SIZE}x{SIZE}, got {w}x{h}")
    x = np.asarray(req["pixels"], dtype=np.float32).reshape(1, 1, h, w)
    return torch.from_numpy((x * 2.0 - 1.0) * 1024.0)


def pooled(model, x):
    f = F.relu(model.features(x))
    return F.adaptive_avg_pool2d(f, 1).flatten(1)


def handle(model, order, fingerprint, req):
    op = req.get("op")
    if op == "info":
        return {"input_size": [SIZE, SIZE], "capabilities": ["mid", "last", "gradients"],
                "fingerprint": fingerprint}
    x = to_tensor(req)
    if op == "mid":
        with torch.no_grad():
            return {"values": pooled(model, x)[0].tolist()}
    if op == "last":
        with torch.no_grad():
            logits = model.classifier(pooled(model, x))[0]
        return {"values": [float(logits[i]) for i in order]}
    if op == "gradient":
        x.requires_grad_(True)
        logit = model.classifier(pooled(model, x))[0, order[req["node"]]]
        logit.backward()
        # d logit / d pixel in [0, 1] units
        return {"values": (x.grad[0, 0] * 2048.0).flatten().tolist()}
    raise ValueError(f"unknown op {op!r}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--weights", required=True)
    args = ap.parse_args()
    with open(args.weights, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()[:16]
    model, order = load_model(args.weights)
    fingerprint = f"xrv-densenet121:{digest}"
    for line in sys.stdin:
        try:
            reply = handle(model, order, fingerprint, json.loads(line))
        except Exception as e:  # reported to the caller, bridge stays up
            reply = {"error": str(e)}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
