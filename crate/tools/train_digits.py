"""Train the bundled 64-144-10 digits MLP and export 4-bit integer tensors.

Weights are signed 4-bit (-8..7), no biases; inputs are the 8x8 digit images
clamped to 0..15. Hidden activations are requantized to 4 bits with a
power-of-two shift, mirroring the Rust integer reference.

    python3 tools/train_digits.py crates/core/data/digits
"""
import json
import sys
from pathlib import Path

import numpy as np
import torch
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split

SEED = 0
HIDDEN = 144
CALIB = 200


def fake_quant_weight(w):
    scale = w.detach().abs().max() / 7.5
    q = torch.clamp(torch.round(w / scale), -8, 7)
    return w + (q * scale - w).detach(), scale


class Mlp(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.fc1 = torch.nn.Linear(64, HIDDEN, bias=False)
        self.fc2 = torch.nn.Linear(HIDDEN, 10, bias=False)
        self.quant = False
        self.act_scale = 1.0

    def forward(self, x):
        w1, w2 = self.fc1.weight, self.fc2.weight
        if self.quant:
            w1, _ = fake_quant_weight(w1)
            w2, _ = fake_quant_weight(w2)
        h = torch.relu(x @ w1.T)
        if self.quant:
            s = self.act_scale
            hq = torch.clamp(torch.round(h / s), 0, 15) * s
            h = h + (hq - h).detach()
        return h @ w2.T


def quantize(w):
    scale = np.abs(w).max() / 7.5
    return np.clip(np.round(w / scale), -8, 7).astype(np.int64)


def shift_for(z):
    p = np.percentile(np.maximum(z, 0), 99.9)
    s = 0
    while (int(p) + ((1 << s) >> 1)) >> s > 15:
        s += 1
    return s


def requant(z, s):
    z = np.maximum(z, 0)
    if s > 0:
        z = (z + (1 << (s - 1))) >> s
    return np.clip(z, 0, 15)


def write_tensor(path, a):
    a = np.asarray(a)
    shape = ",".join(str(d) for d in a.shape)
    rows = a.reshape(1, -1) if a.ndim == 1 else a.reshape(-1, a.shape[-1])
    with open(path, "w") as f:
        f.write(f"# shape={shape}\n")
        for r in rows:
            f.write(",".join(str(int(v)) for v in r) + "\n")


def main(out):
    torch.manual_seed(SEED)
    d = load_digits()
    x = np.clip(d.data, 0, 15).astype(np.int64)
    y = d.target.astype(np.int64)
    xtr, xte, ytr, yte = train_test_split(x, y, test_size=360, random_state=SEED, stratify=y)
    xt = torch.tensor(xtr / 15.0, dtype=torch.float32)
    yt = torch.tensor(ytr)
    model = Mlp()
    opt = torch.optim.Adam(model.parameters(), lr=3e-3)
    for epoch in range(400):
        if epoch == 250:
            model.quant = True
            with torch.no_grad():
                h = torch.relu(xt @ model.fc1.weight.T)
                model.act_scale = float(torch.quantile(h.flatten(), 0.999)) / 15
        opt.zero_grad()
        loss = torch.nn.functional.cross_entropy(model(xt), yt)
        loss.backward()
        opt.step()

    w1 = quantize(model.fc1.weight.detach().numpy())
    w2 = quantize(model.fc2.weight.detach().numpy())
    calib = xtr[:CALIB]
    s = shift_for(calib @ w1.T)
    a = requant(xte @ w1.T, s)
    acc = float(((a @ w2.T).argmax(1) == yte).mean())
    print(f"integer test accuracy {acc:.4f} (hidden shift {s})")

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "fc1.csv", w1)
    write_tensor(out / "fc2.csv", w2)
    write_tensor(out / "test_x.csv", xte)
    write_tensor(out / "test_y.csv", yte)
    write_tensor(out / "calib_x.csv", calib)
    model_json = {
        "name": "digits-mlp",
        "input_shape": [64],
        "calibration": "calib_x.csv",
        "layers": [
            {"kind": "dense", "weights": "fc1.csv", "relu": True},
            {"kind": "dense", "weights": "fc2.csv", "relu": False},
        ],
    }
    (out / "model.json").write_text(json.dumps(model_json, indent=2) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/data/digits")
