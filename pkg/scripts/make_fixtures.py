#!/usr/bin/env python3
"""Regenerate the shipped toy classifier and its evaluation set.

Training is a one-off offline step: the repository ships the frozen
weights and the evaluation split, and nothing at runtime depends on
this script.  Rerunning it with the default seed reproduces the same
fixture bytes.

The task is a 10-class Gaussian-cluster problem in 32 dimensions with
moderate class overlap.  Weights are clipped to a fixed band during
training (so every layer carries substantial mass at its magnitude
peak) and afterwards each layer is rescaled to a small maximum
magnitude, with biases scaled by the running product so the network
function is unchanged up to a positive factor.  Small per-layer weight
scales match what pretrained networks look like in practice and give
the storage experiments a realistic dynamic range.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from flipguard.network import Dataset, Layer, Model, save_dataset, save_model

INPUT_DIM = 32
HIDDEN = (96, 96, 96, 96, 96)
CLASSES = 10
CLIP = 0.20
TARGET_MAX = 0.05
MEAN_SCALE = 1.9
HARD_FRACTION = 0.5
HARD_MARGIN = 0.25


def make_task(seed: int, n_train: int, n_eval: int):
    """Gaussian clusters plus a dense near-boundary population.

    Half of each split sits close to midpoints between class pairs with
    a small but consistent margin toward the true class; this keeps the
    margin distribution dense near zero so accuracy responds smoothly
    to weight perturbations."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    means = rng.normal(0.0, 1.0, size=(CLASSES, INPUT_DIM))
    means *= MEAN_SCALE / np.linalg.norm(means, axis=1, keepdims=True) * np.sqrt(INPUT_DIM) / 3
    scales = rng.uniform(0.8, 1.2, size=(CLASSES, INPUT_DIM))

    def sample(n_total):
        n_hard = int(n_total * HARD_FRACTION)
        n_easy = n_total - n_hard
        xs, ys = [], []
        npc = n_easy // CLASSES
        for c in range(CLASSES):
            xs.append(means[c] + rng.normal(0.0, 1.0, size=(npc, INPUT_DIM)) * scales[c])
            ys.append(np.full(npc, c))
        pair_i = rng.integers(0, CLASSES, n_hard)
        pair_j = (pair_i + 1 + rng.integers(0, CLASSES - 1, n_hard)) % CLASSES
        side = rng.integers(0, 2, n_hard)
        true = np.where(side == 1, pair_i, pair_j)
        mid = (means[pair_i] + means[pair_j]) / 2
        d = means[pair_i] - means[pair_j]
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        sign = np.where(side == 1, 1.0, -1.0)[:, None]
        offset = rng.uniform(HARD_MARGIN, 3 * HARD_MARGIN, (n_hard, 1))
        perp = rng.normal(0.0, 0.6, (n_hard, INPUT_DIM))
        perp -= (perp * d).sum(axis=1, keepdims=True) * d
        xs.append(mid + sign * offset * d + perp)
        ys.append(true)
        x = np.concatenate(xs).astype(np.float32)
        y = np.concatenate(ys)
        order = rng.permutation(len(y))
        return x[order], y[order]

    return sample(n_train), sample(n_eval)


def init_model(rng) -> list[dict]:
    dims = [INPUT_DIM, *HIDDEN, CLASSES]
    params = []
    for d_in, d_out in zip(dims, dims[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in))
        params.append({"w": w, "b": np.zeros(d_out)})
    return params


def forward_train(params, x):
    acts = [x]
    h = x
    for i, p in enumerate(params):
        z = h @ p["w"].T + p["b"]
        h = np.maximum(z, 0.0) if i < len(params) - 1 else z
        acts.append(h)
    return acts


def train(params, x, y, rng, epochs=120, batch=128, lr=2e-3):
    n = len(y)
    m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
    v = [{k: np.zeros_like(vv) for k, vv in p.items()} for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    onehot = np.eye(CLASSES)[y]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            xb, yb = x[idx], onehot[idx]
            acts = forward_train(params, xb)
            logits = acts[-1]
            logits = logits - logits.max(axis=1, keepdims=True)
            p_hat = np.exp(logits)
            p_hat /= p_hat.sum(axis=1, keepdims=True)
            grad = (p_hat - yb) / len(idx)
            step += 1
            for i in reversed(range(len(params))):
                h_in = acts[i]
                gw = grad.T @ h_in
                gb = grad.sum(axis=0)
                if i > 0:
                    grad = grad @ params[i]["w"]
                    grad[acts[i] <= 0.0] = 0.0
                for key, g in (("w", gw), ("b", gb)):
                    m[i][key] = beta1 * m[i][key] + (1 - beta1) * g
                    v[i][key] = beta2 * v[i][key] + (1 - beta2) * g * g
                    mhat = m[i][key] / (1 - beta1**step)
                    vhat = v[i][key] / (1 - beta2**step)
                    params[i][key] -= lr * mhat / (np.sqrt(vhat) + eps)
                params[i]["w"] = np.clip(params[i]["w"], -CLIP, CLIP)
    return params


def rescale(params, target_max: float):
    """Shrink each layer to max |w| = target_max; positive homogeneity of
    ReLU keeps the classifier's decisions identical."""
    cum = 1.0
    for p in params:
        alpha = target_max / np.max(np.abs(p["w"]))
        cum *= alpha
        p["w"] *= alpha
        p["b"] *= cum
    return params


def accuracy(params, x, y) -> float:
    logits = forward_train(params, x)[-1]
    return float(np.mean(np.argmax(logits, axis=1) == y) * 100)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=20240)
    parser.add_argument("--n-train", type=int, default=6000)
    parser.add_argument("--n-eval", type=int, default=4000)
    parser.add_argument("--epochs", type=int, default=150)
    parser.add_argument(
        "--out-dir",
        type=Path,
        default=Path(__file__).resolve().parents[1] / "src" / "flipguard" / "assets",
    )
    args = parser.parse_args()

    (x_train, y_train), (x_eval, y_eval) = make_task(args.seed, args.n_train, args.n_eval)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(args.seed + 1)))
    params = init_model(rng)
    params = train(params, x_train.astype(np.float64), y_train, rng, epochs=args.epochs)
    params = rescale(params, TARGET_MAX)

    train_acc = accuracy(params, x_train, y_train)
    eval_acc = accuracy(params, x_eval, y_eval)
    peaks = [np.max(np.abs(p["w"])) for p in params]
    at_peak = [float(np.mean(np.abs(p["w"]) >= 0.995 * TARGET_MAX)) for p in params]
    print(f"train acc {train_acc:.2f}  eval acc {eval_acc:.2f}")
    print(f"per-layer max|W| {['%.4f' % p for p in peaks]}")
    print(f"fraction at peak {['%.3f' % f for f in at_peak]}")

    layers = []
    for i, p in enumerate(params):
        act = "relu" if i < len(params) - 1 else "none"
        layers.append(Layer(p["w"].astype(np.float32), p["b"].astype(np.float32), act))
    model = Model(layers)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_model(model, args.out_dir / "toy_mlp.json")
    save_dataset(Dataset(x_eval, y_eval), args.out_dir / "toy_task.ds")
    print(f"wrote fixtures to {args.out_dir}")


if __name__ == "__main__":
    main()
