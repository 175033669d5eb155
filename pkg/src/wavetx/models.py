"""Classifier definitions, training and inference.

Two architectures are provided: the four-layer CNN used throughout the
experiments (conv 5x5 -> batchnorm -> pool -> relu -> conv 5x5 -> channel
dropout -> pool -> relu -> linear) and a small residual network. Both are
plain compositions of the autodiff ops; a model owns its parameter tensors
and the batchnorm running buffers.

Every stochastic choice (init, shuffling, dropout) flows from explicit
seeds so a training run is reproducible bit for bit on one machine.
"""

import math

import numpy as np

from . import autodiff as A
from .autodiff import Tensor, no_grad
from .errors import InvalidArgumentError, InvalidShapeError, NumericError
from .optim import Adam


class Conv2d:
    def __init__(self, in_ch, out_ch, kernel, stride, rng):
        fan_in = in_ch * kernel * kernel
        scale = math.sqrt(2.0 / fan_in)
        w = rng.standard_normal((out_ch, in_ch, kernel, kernel)) * scale
        self.w = Tensor(w.astype(np.float32), requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)
        self.stride = stride

    def forward(self, x, ctx):
        return A.conv2d(x, self.w, self.b, self.stride)

    def named_params(self, prefix):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]

    def named_buffers(self, prefix):
        return []


class BatchNorm2d:
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, ctx):
        return A.batchnorm2d(
            x, self.running_mean, self.running_var, ctx.training, self.momentum, self.eps
        )

    def named_params(self, prefix):
        return []

    def named_buffers(self, prefix):
        return [
            (f"{prefix}.running_mean", self.running_mean),
            (f"{prefix}.running_var", self.running_var),
        ]


class MaxPool2d:
    def __init__(self, k):
        self.k = k

    def forward(self, x, ctx):
        return A.maxpool2d(x, self.k)

    def named_params(self, prefix):
        return []

    def named_buffers(self, prefix):
        return []


class ReLU:
    def forward(self, x, ctx):
        return A.relu(x)

    def named_params(self, prefix):
        return []

    def named_buffers(self, prefix):
        return []


class Dropout2d:
    def __init__(self, p):
        self.p = p

    def forward(self, x, ctx):
        return A.dropout2d(x, self.p, ctx.training, ctx.rng)

    def named_params(self, prefix):
        return []

    def named_buffers(self, prefix):
        return []


class Flatten:
    def forward(self, x, ctx):
        return A.flatten(x)

    def named_params(self, prefix):
        return []

    def named_buffers(self, prefix):
        return []


class Linear:
    def __init__(self, in_features, out_features, rng):
        scale = math.sqrt(2.0 / in_features)
        w = rng.standard_normal((out_features, in_features)) * scale
        self.w = Tensor(w.astype(np.float32), requires_grad=True)
        self.b = Tensor(np.zeros(out_features, dtype=np.float32), requires_grad=True)

    def forward(self, x, ctx):
        return A.linear(x, self.w, self.b)

    def named_params(self, prefix):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]

    def named_buffers(self, prefix):
        return []


class SpatialMean:
    """Global average pooling over the two spatial axes."""

    def forward(self, x, ctx):
        if x.data.ndim != 4:
            raise InvalidShapeError("spatial mean expects an NCHW tensor")
        n, c, h, w = x.data.shape
        out = Tensor(x.data.mean(axis=(2, 3)))

        def backward(g):
            g2 = (g / (h * w))[:, :, None, None]
            return (np.broadcast_to(g2, (n, c, h, w)).astype(g.dtype, copy=True),)

        return A._record(out, (x,), backward)

    def named_params(self, prefix):
        return []

    def named_buffers(self, prefix):
        return []


class Sequential:
    def __init__(self, named_modules):
        self.modules = list(named_modules)

    def forward(self, x, ctx):
        for _, module in self.modules:
            x = module.forward(x, ctx)
        return x

    def named_params(self, prefix):
        out = []
        for name, module in self.modules:
            out.extend(module.named_params(f"{prefix}.{name}" if prefix else name))
        return out

    def named_buffers(self, prefix):
        out = []
        for name, module in self.modules:
            out.extend(module.named_buffers(f"{prefix}.{name}" if prefix else name))
        return out


class ResidualBlock:
    """Two padded 3x3 convolutions with identity (or 1x1 projected) skip."""

    def __init__(self, in_ch, out_ch, stride, bn_momentum, bn_eps, rng):
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride, rng)
        self.bn1 = BatchNorm2d(out_ch, bn_momentum, bn_eps)
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, rng)
        self.bn2 = BatchNorm2d(out_ch, bn_momentum, bn_eps)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = Conv2d(in_ch, out_ch, 1, stride, rng)
        else:
            self.shortcut = None

    def forward(self, x, ctx):
        h = self.conv1.forward(A.pad2d(x, 1), ctx)
        h = A.relu(self.bn1.forward(h, ctx))
        h = self.conv2.forward(A.pad2d(h, 1), ctx)
        h = self.bn2.forward(h, ctx)
        skip = x if self.shortcut is None else self.shortcut.forward(x, ctx)
        return A.relu(h + skip)

    def _children(self):
        named = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.shortcut is not None:
            named.append(("shortcut", self.shortcut))
        return named

    def named_params(self, prefix):
        out = []
        for name, module in self._children():
            out.extend(module.named_params(f"{prefix}.{name}"))
        return out

    def named_buffers(self, prefix):
        out = []
        for name, module in self._children():
            out.extend(module.named_buffers(f"{prefix}.{name}"))
        return out


class Classifier:
    """A model plus its execution context (train/eval mode, dropout RNG)."""

    def __init__(self, spec, root):
        self.spec = dict(spec)
        self.root = root
        self.training = False
        self.rng = np.random.default_rng(spec.get("seed", 0))

    def forward(self, x):
        if not isinstance(x, Tensor):
            raise InvalidArgumentError("forward expects a Tensor; use predict for arrays")
        return self.root.forward(x, self)

    def train_mode(self):
        self.training = True
        return self

    def eval_mode(self):
        self.training = False
        return self

    def named_params(self):
        return self.root.named_params("")

    def named_buffers(self):
        return self.root.named_buffers("")

    def parameters(self):
        return [t for _, t in self.named_params()]

    def param_count(self):
        return sum(t.data.size for t in self.parameters())

    @property
    def input_shape(self):
        return tuple(self.spec["input_shape"])

    @property
    def classes(self):
        return int(self.spec["classes"])


def build_table1_cnn(input_shape=(1, 28, 28), classes=10, dropout=0.5, bn_momentum=0.1,
                     bn_eps=1e-5, seed=0):
    """The experiment CNN: two valid 5x5 conv blocks with 10 and 20 filters,
    each followed by 2x2 max pooling, then a single linear readout."""
    c, h, w = input_shape
    rng = np.random.default_rng(seed)
    h1, w1 = (h - 4) // 2, (w - 4) // 2
    h2, w2 = (h1 - 4) // 2, (w1 - 4) // 2
    if h2 < 1 or w2 < 1:
        raise InvalidShapeError(f"input {input_shape} is too small for the architecture")
    flat = 20 * h2 * w2
    modules = [
        ("conv1", Conv2d(c, 10, 5, 1, rng)),
        ("bn1", BatchNorm2d(10, bn_momentum, bn_eps)),
        ("pool1", MaxPool2d(2)),
        ("relu1", ReLU()),
        ("conv2", Conv2d(10, 20, 5, 1, rng)),
        ("drop", Dropout2d(dropout)),
        ("pool2", MaxPool2d(2)),
        ("relu2", ReLU()),
        ("flatten", Flatten()),
        ("fc", Linear(flat, classes, rng)),
    ]
    spec = {
        "arch": "table1_cnn",
        "input_shape": list(input_shape),
        "classes": classes,
        "dropout": dropout,
        "bn_momentum": bn_momentum,
        "bn_eps": bn_eps,
        "seed": seed,
    }
    return Classifier(spec, Sequential(modules))


def build_small_resnet(input_shape=(3, 32, 32), classes=10, widths=(16, 32, 64),
                       blocks_per_stage=3, bn_momentum=0.1, bn_eps=1e-5, seed=0):
    """A compact residual network: 3x3 stem, three stages of residual
    blocks with stride-2 transitions, global average pooling, linear head."""
    c = input_shape[0]
    rng = np.random.default_rng(seed)
    modules = [
        ("stem_pad", _Pad(1)),
        ("stem", Conv2d(c, widths[0], 3, 1, rng)),
        ("stem_bn", BatchNorm2d(widths[0], bn_momentum, bn_eps)),
        ("stem_relu", ReLU()),
    ]
    in_ch = widths[0]
    for stage, width in enumerate(widths):
        for block in range(blocks_per_stage):
            stride = 2 if stage > 0 and block == 0 else 1
            modules.append(
                (f"s{stage}b{block}", ResidualBlock(in_ch, width, stride, bn_momentum, bn_eps, rng))
            )
            in_ch = width
    modules.extend([("gap", SpatialMean()), ("fc", Linear(in_ch, classes, rng))])
    spec = {
        "arch": "small_resnet",
        "input_shape": list(input_shape),
        "classes": classes,
        "widths": list(widths),
        "blocks_per_stage": blocks_per_stage,
        "bn_momentum": bn_momentum,
        "bn_eps": bn_eps,
        "seed": seed,
    }
    return Classifier(spec, Sequential(modules))


class _Pad:
    def __init__(self, pad):
        self.pad = pad

    def forward(self, x, ctx):
        return A.pad2d(x, self.pad)

    def named_params(self, prefix):
        return []

    def named_buffers(self, prefix):
        return []


_BUILDERS = {
    "table1_cnn": build_table1_cnn,
    "small_resnet": build_small_resnet,
}


def build_model(spec):
    """Rebuild a classifier from its spec dict (used when loading)."""
    kind = spec.get("arch")
    if kind not in _BUILDERS:
        raise InvalidArgumentError(f"unknown architecture: {kind!r}")
    kwargs = {k: v for k, v in spec.items() if k != "arch"}
    kwargs["input_shape"] = tuple(kwargs["input_shape"])
    if "widths" in kwargs:
        kwargs["widths"] = tuple(kwargs["widths"])
    return _BUILDERS[kind](**kwargs)


def predict(model, images, batch_size=512):
    """Eval-mode class predictions for an (N, C, H, W) array. Ties pick the
    lowest class index."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4:
        raise InvalidShapeError("predict expects an (N, C, H, W) array")
    was_training = model.training
    model.eval_mode()
    out = np.empty(images.shape[0], dtype=np.int64)
    try:
        with no_grad():
            for start in range(0, images.shape[0], batch_size):
                chunk = images[start : start + batch_size]
                logits = model.forward(Tensor(chunk))
                out[start : start + chunk.shape[0]] = np.argmax(logits.data, axis=1)
    finally:
        if was_training:
            model.train_mode()
    return out


def evaluate_accuracy(model, images, labels, batch_size=512):
    preds = predict(model, images, batch_size)
    return float(np.mean(preds == np.asarray(labels)))


def train(model, images, labels, *, epochs, lr, batch_size, seed,
          val_images=None, val_labels=None, log=None):
    """Train with Adam on mean cross-entropy. Returns a history dict with
    per-epoch mean training loss and, when a validation split is given,
    validation accuracy."""
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    if images.ndim != 4 or images.shape[0] != labels.shape[0]:
        raise InvalidShapeError("training data must be (N, C, H, W) images with N labels")
    if epochs < 1 or batch_size < 1:
        raise InvalidArgumentError("epochs and batch_size must be positive")

    shuffle_rng, dropout_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)
    )
    model.rng = dropout_rng
    opt = Adam(model.parameters(), lr)
    history = {"train_loss": [], "val_accuracy": []}
    n = images.shape[0]
    for epoch in range(epochs):
        model.train_mode()
        order = shuffle_rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            if idx.shape[0] < 2:
                continue  # batchnorm needs more than one sample
            logits = model.forward(Tensor(images[idx]))
            loss = A.cross_entropy(logits, labels[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"training loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value
            batches += 1
        history["train_loss"].append(total / max(batches, 1))
        if val_images is not None:
            acc = evaluate_accuracy(model, val_images, val_labels)
            history["val_accuracy"].append(acc)
        if log is not None:
            msg = f"epoch {epoch + 1}/{epochs} loss {history['train_loss'][-1]:.4f}"
            if val_images is not None:
                msg += f" val_acc {history['val_accuracy'][-1]:.4f}"
            log(msg)
    model.eval_mode()
    return history
