"""Reference-free sentence-level WER prediction.

A small MLP consumes the concatenation of a speech and a text sequence
embedding.  Each hidden block is BatchNorm -> Linear -> ReLU -> Dropout
(so the first batch-norm standardizes the raw concatenated input); the
output layer is a plain affine map followed by a bounded sigmoid with a
learnable temperature:

    pred = 0.01 + 0.98 * sigmoid(z / temperature)

which keeps every prediction inside [0.01, 0.99] and is differentiable
everywhere.  The temperature is stored as its log so positivity is
structural.

Training: mean-squared error, AdamW (decoupled weight decay on linear
weights only), cosine-annealed learning rate, Xavier-uniform init,
dropout 0.3, early stopping on held-out MSE inside a 70-epoch cap.
Everything is seeded and deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EmbeddingMatrix, _iter_jsonl, _dump_line, _require
from .errors import DataFormatError, NumericError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
OUT_LO = 0.01
OUT_SPAN = 0.98


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


@dataclass
class _Block:
    """One hidden block: batch-norm stats/params plus an affine layer."""

    bn_gain: np.ndarray
    bn_bias: np.ndarray
    bn_mean: np.ndarray  # running, not trained by gradient
    bn_var: np.ndarray
    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray

    def copy(self) -> "_Block":
        return _Block(*(a.copy() for a in (
            self.bn_gain, self.bn_bias, self.bn_mean, self.bn_var, self.weight, self.bias
        )))


class PredictorNet:
    """MLP with sizes like (2048, 600, 32, 1): every consecutive pair is a
    linear layer; all but the last sit inside hidden blocks."""

    def __init__(self, blocks: list[_Block], out_weight, out_bias, log_temp, dropout: float):
        self.blocks = blocks
        self.out_weight = np.asarray(out_weight, dtype=np.float64).reshape(-1)
        self.out_bias = np.asarray(out_bias, dtype=np.float64).reshape(1)
        self.log_temp = np.asarray(log_temp, dtype=np.float64).reshape(1)
        self.dropout = float(dropout)

    @property
    def sizes(self) -> tuple[int, ...]:
        dims = [b.weight.shape[0] for b in self.blocks]
        dims.append(self.blocks[-1].weight.shape[1])
        dims.append(1)
        return tuple(dims)

    @property
    def input_dim(self) -> int:
        return self.blocks[0].weight.shape[0]

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temp[0]))

    @classmethod
    def initialize(
        cls,
        sizes: Sequence[int] = (2048, 600, 32, 1),
        dropout: float = 0.3,
        rng: np.random.Generator | None = None,
    ) -> "PredictorNet":
        if len(sizes) < 2 or sizes[-1] != 1:
            raise DataFormatError("net sizes must end in 1, got %r" % (sizes,))
        rng = rng if rng is not None else np.random.default_rng(0)

        def xavier(d_in, d_out):
            bound = math.sqrt(6.0 / (d_in + d_out))
            return rng.uniform(-bound, bound, size=(d_in, d_out))

        blocks = []
        for d_in, d_out in zip(sizes[:-2], sizes[1:-1]):
            blocks.append(
                _Block(
                    bn_gain=np.ones(d_in),
                    bn_bias=np.zeros(d_in),
                    bn_mean=np.zeros(d_in),
                    bn_var=np.ones(d_in),
                    weight=xavier(d_in, d_out),
                    bias=np.zeros(d_out),
                )
            )
        out_weight = xavier(sizes[-2], 1).reshape(-1)
        return cls(blocks, out_weight, np.zeros(1), np.zeros(1), dropout)

    def copy(self) -> "PredictorNet":
        return PredictorNet(
            [b.copy() for b in self.blocks],
            self.out_weight.copy(),
            self.out_bias.copy(),
            self.log_temp.copy(),
            self.dropout,
        )

    # -- parameter traversal (name, array, weight-decayed?) ---------------
    def param_arrays(self):
        for i, b in enumerate(self.blocks):
            yield "block%d.bn_gain" % i, b.bn_gain, False
            yield "block%d.bn_bias" % i, b.bn_bias, False
            yield "block%d.weight" % i, b.weight, True
            yield "block%d.bias" % i, b.bias, False
        yield "out.weight", self.out_weight, True
        yield "out.bias", self.out_bias, False
        yield "log_temp", self.log_temp, False

    def check_finite(self) -> None:
        for name, arr, _ in self.param_arrays():
            if not np.isfinite(arr).all():
                raise NumericError("non-finite parameter %s" % (name,))


def forward_batch(
    net: PredictorNet,
    x: np.ndarray,
    mode: str = "eval",
    dropout_rng: np.random.Generator | None = None,
    update_stats: bool = False,
    want_cache: bool = False,
):
    """Batched forward pass.

    mode 'eval': running batch-norm stats, no dropout (a pure function of
    weights and input).  mode 'train': batch statistics; dropout only when
    dropout_rng is given.  update_stats folds batch statistics into the
    running estimates (training only).
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DataFormatError(
            "input of shape %r does not match net input dim %d" % (x.shape, net.input_dim)
        )
    if not np.isfinite(x).all():
        raise DataFormatError("non-finite value in predictor input")
    train = mode == "train"
    cache = {"x": x, "blocks": []} if want_cache else None

    h = x
    for b in net.blocks:
        if train:
            mu = h.mean(axis=0)
            var = h.var(axis=0)
            if update_stats:
                m = h.shape[0]
                unbiased = var * (m / (m - 1)) if m > 1 else var
                b.bn_mean *= 1.0 - BN_MOMENTUM
                b.bn_mean += BN_MOMENTUM * mu
                b.bn_var *= 1.0 - BN_MOMENTUM
                b.bn_var += BN_MOMENTUM * unbiased
        else:
            mu, var = b.bn_mean, b.bn_var
        istd = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (h - mu) * istd
        y = xhat * b.bn_gain + b.bn_bias
        z = y @ b.weight + b.bias
        a = np.maximum(z, 0.0)
        if train and dropout_rng is not None and net.dropout > 0.0:
            keep = dropout_rng.random(a.shape) >= net.dropout
            a = a * keep / (1.0 - net.dropout)
        else:
            keep = None
        if want_cache:
            cache["blocks"].append(
                {"xhat": xhat, "istd": istd, "y": y, "z": z, "keep": keep}
            )
        h = a

    z_out = h @ net.out_weight + net.out_bias[0]
    inv_temp = float(np.exp(-net.log_temp[0]))
    u = z_out * inv_temp
    s = _sigmoid(u)
    pred = OUT_LO + OUT_SPAN * s
    if want_cache:
        cache.update({"h_last": h, "z_out": z_out, "u": u, "s": s, "inv_temp": inv_temp})
        return pred, cache
    return pred


def forward(
    net: PredictorNet,
    speech_emb: Sequence[float],
    text_emb: Sequence[float],
    mode: str = "eval",
    dropout_rng: np.random.Generator | None = None,
) -> float:
    """Prediction in [0.01, 0.99] for one (speech, text) embedding pair."""
    sp = np.asarray(speech_emb, dtype=np.float64).reshape(-1)
    tx = np.asarray(text_emb, dtype=np.float64).reshape(-1)
    if sp.size * 2 != net.input_dim or tx.size * 2 != net.input_dim:
        raise DataFormatError(
            "embedding dims (%d, %d) do not concatenate to net input dim %d"
            % (sp.size, tx.size, net.input_dim)
        )
    x = np.concatenate([sp, tx])[None, :]
    return float(forward_batch(net, x, mode=mode, dropout_rng=dropout_rng)[0])


def loss_and_grads(
    net: PredictorNet,
    x: np.ndarray,
    targets: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
    update_stats: bool = False,
):
    """Batch MSE and exact gradients for every parameter (train mode,
    batch statistics).  Pass dropout_rng=None to disable dropout, e.g. for
    gradient checking."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    m = x.shape[0]
    if m < 2:
        raise DataFormatError("batch statistics need batch size >= 2, got %d" % (m,))
    if targets.shape[0] != m:
        raise DataFormatError("targets length %d != batch size %d" % (targets.shape[0], m))

    pred, cache = forward_batch(
        net, x, mode="train", dropout_rng=dropout_rng, update_stats=update_stats,
        want_cache=True,
    )
    diff = pred - targets
    loss = float((diff * diff).mean())

    grads: dict[str, np.ndarray] = {}
    dpred = 2.0 * diff / m
    s, u, inv_temp = cache["s"], cache["u"], cache["inv_temp"]
    ds = dpred * OUT_SPAN * s * (1.0 - s)
    dz_out = ds * inv_temp
    grads["log_temp"] = np.array([float((ds * (-u)).sum())])
    grads["out.weight"] = cache["h_last"].T @ dz_out
    grads["out.bias"] = np.array([float(dz_out.sum())])
    dh = dz_out[:, None] * net.out_weight[None, :]

    for i in range(len(net.blocks) - 1, -1, -1):
        b = net.blocks[i]
        c = cache["blocks"][i]
        da = dh
        if c["keep"] is not None:
            da = da * c["keep"] / (1.0 - net.dropout)
        dz = da * (c["z"] > 0)
        grads["block%d.weight" % i] = c["y"].T @ dz
        grads["block%d.bias" % i] = dz.sum(axis=0)
        dy = dz @ b.weight.T
        grads["block%d.bn_gain" % i] = (dy * c["xhat"]).sum(axis=0)
        grads["block%d.bn_bias" % i] = dy.sum(axis=0)
        dxhat = dy * b.bn_gain
        # Backprop through batch standardization (biased variance).
        dh = (c["istd"] / m) * (
            m * dxhat - dxhat.sum(axis=0) - c["xhat"] * (dxhat * c["xhat"]).sum(axis=0)
        )
    return loss, grads


class AdamW:
    """Adam with decoupled weight decay; decay applies only to arrays
    flagged as weights in net.param_arrays()."""

    def __init__(self, net: PredictorNet, weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr, _ in net.param_arrays()}
        self.v = {name: np.zeros_like(arr) for name, arr, _ in net.param_arrays()}

    def step(self, net: PredictorNet, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, arr, decayed in net.param_arrays():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if decayed and self.weight_decay:
                update = update + self.weight_decay * arr
            arr -= lr * update


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (600, 32)
    lr: float = 1e-3
    lr_min: float = 0.0
    batch_size: int = 64
    max_epochs: int = 70
    patience: int = 10
    weight_decay: float = 0.01
    dropout: float = 0.3
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.max_epochs < 1:
            raise DataFormatError("max_epochs must be >= 1")
        if self.patience < 1:
            raise DataFormatError("patience must be >= 1")
        return self


@dataclass
class LabeledPair:
    speech_emb: np.ndarray
    text_emb: np.ndarray
    target_wer: float  # clamped to [0, 1] on construction

    def __post_init__(self):
        self.speech_emb = np.asarray(self.speech_emb, dtype=np.float64).reshape(-1)
        self.text_emb = np.asarray(self.text_emb, dtype=np.float64).reshape(-1)
        if not (np.isfinite(self.speech_emb).all() and np.isfinite(self.text_emb).all()):
            raise DataFormatError("non-finite embedding in labeled pair")
        self.target_wer = float(min(1.0, max(0.0, self.target_wer)))


def _stack_pairs(pairs: Sequence[LabeledPair]):
    x = np.stack([np.concatenate([p.speech_emb, p.text_emb]) for p in pairs])
    t = np.array([p.target_wer for p in pairs])
    return x, t


def train(
    pairs: Sequence[LabeledPair],
    dev: Sequence[LabeledPair],
    cfg: TrainConfig = TrainConfig(),
) -> tuple[PredictorNet, list[dict]]:
    """Train a predictor; returns the best-dev-MSE checkpoint and a
    per-epoch history (epoch 0 is the untrained evaluation)."""
    cfg.validate()
    if not pairs or not dev:
        raise DataFormatError("train and dev sets must be nonempty")
    x_train, t_train = _stack_pairs(pairs)
    x_dev, t_dev = _stack_pairs(dev)
    in_dim = x_train.shape[1]

    rng = np.random.default_rng(cfg.seed)
    net = PredictorNet.initialize((in_dim, *cfg.hidden, 1), cfg.dropout, rng)

    def eval_mse(x, t):
        pred = forward_batch(net, x, mode="eval")
        d = pred - t
        return float((d * d).mean())

    history = [
        {"epoch": 0, "train_mse": eval_mse(x_train, t_train),
         "dev_mse": eval_mse(x_dev, t_dev), "lr": None}
    ]
    best_net = net.copy()
    best_dev = history[0]["dev_mse"]
    strikes = 0
    opt = AdamW(net, weight_decay=cfg.weight_decay)
    n = x_train.shape[0]

    for epoch in range(1, cfg.max_epochs + 1):
        lr = cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (
            1.0 + math.cos(math.pi * (epoch - 1) / cfg.max_epochs)
        )
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            if batch.size < 2:
                continue  # batch statistics need >= 2 samples
            # lr == 0 must be a complete no-op, running stats included.
            loss, grads = loss_and_grads(
                net, x_train[batch], t_train[batch], dropout_rng=rng,
                update_stats=(lr != 0.0),
            )
            if not math.isfinite(loss):
                raise NumericError(
                    "non-finite training loss at epoch %d (lr=%g)" % (epoch, lr)
                )
            opt.step(net, grads, lr)
        net.check_finite()
        train_mse = eval_mse(x_train, t_train)
        dev_mse = eval_mse(x_dev, t_dev)
        history.append({"epoch": epoch, "train_mse": train_mse, "dev_mse": dev_mse, "lr": lr})
        if dev_mse < best_dev:
            best_dev = dev_mse
            best_net = net.copy()
            strikes = 0
        else:
            strikes += 1
            if strikes >= cfg.patience:
                break
    return best_net, history


# ---------------------------------------------------------------------------
# Weights file (JSON, 64-bit decimal arrays; bit-exact round trip)
# ---------------------------------------------------------------------------


def save_weights(net: PredictorNet, path: str | Path) -> None:
    doc = {
        "sizes": list(net.sizes),
        "dropout": net.dropout,
        "blocks": [
            {
                "bn_gain": b.bn_gain.tolist(),
                "bn_bias": b.bn_bias.tolist(),
                "bn_mean": b.bn_mean.tolist(),
                "bn_var": b.bn_var.tolist(),
                "weight": b.weight.tolist(),
                "bias": b.bias.tolist(),
            }
            for b in net.blocks
        ],
        "out_weight": net.out_weight.tolist(),
        "out_bias": net.out_bias.tolist(),
        "log_temp": net.log_temp.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_weights(path: str | Path) -> PredictorNet:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError("%s: malformed weights JSON: %s" % (path, exc)) from None
    for key in ("sizes", "blocks", "out_weight", "out_bias", "log_temp"):
        if key not in doc:
            raise DataFormatError("%s: missing parameter %r" % (path, key))
    sizes = [int(s) for s in doc["sizes"]]
    if len(doc["blocks"]) != len(sizes) - 2:
        raise DataFormatError(
            "%s: %d blocks inconsistent with sizes %r" % (path, len(doc["blocks"]), sizes)
        )
    blocks = []
    for i, (bdoc, d_in, d_out) in enumerate(zip(doc["blocks"], sizes[:-2], sizes[1:-1])):
        arrs = {}
        for key, shape in (
            ("bn_gain", (d_in,)), ("bn_bias", (d_in,)), ("bn_mean", (d_in,)),
            ("bn_var", (d_in,)), ("weight", (d_in, d_out)), ("bias", (d_out,)),
        ):
            if key not in bdoc:
                raise DataFormatError("%s: block %d missing parameter %r" % (path, i, key))
            arr = np.asarray(bdoc[key], dtype=np.float64)
            if arr.shape != shape:
                raise DataFormatError(
                    "%s: block %d %s has shape %r, expected %r"
                    % (path, i, key, arr.shape, shape)
                )
            arrs[key] = arr
        if (arrs["bn_var"] < 0).any():
            raise DataFormatError("%s: block %d negative running variance" % (path, i))
        blocks.append(_Block(**arrs))
    out_weight = np.asarray(doc["out_weight"], dtype=np.float64)
    if out_weight.shape != (sizes[-2],):
        raise DataFormatError(
            "%s: out_weight shape %r mismatches declared width %d"
            % (path, out_weight.shape, sizes[-2])
        )
    net = PredictorNet(
        blocks, out_weight, doc["out_bias"], doc["log_temp"], float(doc.get("dropout", 0.3))
    )
    net.check_finite()
    return net


# ---------------------------------------------------------------------------
# Labeled-pair files: two id-aligned EMB1 files plus a target JSONL
# ---------------------------------------------------------------------------


def read_labeled_pairs(
    speech: EmbeddingMatrix, text: EmbeddingMatrix, targets_path: str | Path
) -> list[LabeledPair]:
    pairs = []
    for lineno, obj in _iter_jsonl(targets_path):
        rid = str(_require(obj, "id", targets_path, lineno))
        target = float(_require(obj, "target_wer", targets_path, lineno))
        pairs.append(LabeledPair(speech.vector(rid), text.vector(rid), target))
    return pairs


def write_targets(rows: Sequence[tuple[str, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rid, target in rows:
            fh.write(_dump_line({"id": rid, "target_wer": target}))


# ---------------------------------------------------------------------------
# Prediction-quality report
# ---------------------------------------------------------------------------


def _rank_average(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float((da * da).sum()) * float((db * db).sum()))
    if denom == 0.0:
        return None
    return float((da * db).sum()) / denom


def predictor_report(preds: Sequence[float], refs: Sequence[float]) -> dict:
    """Pearson/Spearman correlations plus MAE and RMSE.

    Correlations are None (undefined, distinct from 0) when either side
    has zero variance.
    """
    p = np.asarray(preds, dtype=np.float64)
    r = np.asarray(refs, dtype=np.float64)
    if p.shape != r.shape or p.ndim != 1 or p.size < 2:
        raise DataFormatError("need two equal-length vectors of length >= 2")
    err = p - r
    return {
        "pearson": _pearson(p, r),
        "spearman": _pearson(_rank_average(p), _rank_average(r)),
        "mae": float(np.abs(err).mean()),
        "rmse": float(np.sqrt((err * err).mean())),
    }
