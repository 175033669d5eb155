"""Adversarial attacks: subband updating plus FGSM and PGD baselines.

The subband attack perturbs an image in wavelet coefficient space. Each
step decomposes the current iterate, reconstructs it differentiably,
takes the cross-entropy gradient with respect to the coefficients, and
applies a signed step only to the selected subbands before inverting and
projecting back to the intersection of the epsilon ball and [0, 1].

All three attacks share one restart engine. Restarts are evaluated as a
batch (one lane per restart) for throughput; lanes freeze at their first
success, and the reported result is the lane with the smallest index that
succeeded, which reproduces the sequential restart-loop semantics. The
success check runs after projection, never before the first step.
"""

import dataclasses

import numpy as np

from . import autodiff as A
from .autodiff import Tensor, no_grad
from .errors import InvalidArgumentError, InvalidShapeError
from .wavelet import SUBBAND_NAMES, dwt2, filter_bank, idwt2, idwt2_tensor

FEASIBILITY_SLACK = 1e-6


@dataclasses.dataclass(frozen=True)
class SubbandSelector:
    """Which subbands the attack may update."""

    ll: bool = True
    lh: bool = True
    hl: bool = True
    hh: bool = True

    @staticmethod
    def parse(name):
        key = str(name).lower()
        if key == "all":
            return SubbandSelector(True, True, True, True)
        if key == "high":
            return SubbandSelector(False, True, True, True)
        if key in SUBBAND_NAMES:
            return SubbandSelector(**{n: n == key for n in SUBBAND_NAMES})
        raise InvalidArgumentError(
            f"unknown subband selector {name!r}; expected ll, lh, hl, hh, high or all"
        )

    def names(self):
        return tuple(n for n in SUBBAND_NAMES if getattr(self, n))

    def any(self):
        return self.ll or self.lh or self.hl or self.hh

    def label(self):
        picked = self.names()
        if len(picked) == 4:
            return "all"
        if picked == ("lh", "hl", "hh"):
            return "high"
        return "+".join(picked) if picked else "none"


@dataclasses.dataclass
class AttackResult:
    adversarial: np.ndarray  # (C, H, W) float32 inside the epsilon ball
    success: bool
    clean_label: int
    adversarial_label: int
    iterations: int
    restarts_used: int
    linf: float


def project_ball(x, reference, epsilon):
    """Project onto the intersection of the epsilon-infinity ball around
    ``reference`` and the unit pixel box."""
    lo = np.maximum(reference - epsilon, 0.0)
    hi = np.minimum(reference + epsilon, 1.0)
    return np.clip(x, lo, hi)


def _check_attack_inputs(model, image, label, epsilon):
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3:
        raise InvalidShapeError("attacks expect a single (C, H, W) image")
    if tuple(image.shape) != model.input_shape:
        raise InvalidShapeError(
            f"image shape {tuple(image.shape)} does not match model input {model.input_shape}"
        )
    if image.min() < 0.0 or image.max() > 1.0:
        raise InvalidArgumentError("image pixels must lie in [0, 1]")
    if not 0 <= int(label) < model.classes:
        raise InvalidArgumentError(f"label {label} outside [0, {model.classes})")
    if epsilon <= 0:
        raise InvalidArgumentError("epsilon must be positive")
    return image


class _FrozenEval:
    """Put the model in eval mode with parameter gradients disabled, so
    attack backward passes only propagate to the input."""

    def __init__(self, model):
        self.model = model

    def __enter__(self):
        self.was_training = self.model.training
        self.flags = [(p, p.requires_grad) for p in self.model.parameters()]
        self.model.eval_mode()
        for p, _ in self.flags:
            p.requires_grad = False
        return self.model

    def __exit__(self, *exc):
        for p, flag in self.flags:
            p.requires_grad = flag
        if self.was_training:
            self.model.train_mode()
        return False


def _predict_batch(model, batch):
    with no_grad():
        logits = model.forward(Tensor(batch))
    return np.argmax(logits.data, axis=1)


def _finish(image, adv, model, label, epsilon, success, iterations, restarts_used):
    adv = adv.astype(np.float32)
    linf = float(np.abs(adv - image).max())
    adv_label = int(_predict_batch(model, adv[None])[0])
    result = AttackResult(
        adversarial=adv,
        success=bool(success),
        clean_label=int(label),
        adversarial_label=adv_label,
        iterations=int(iterations),
        restarts_used=int(restarts_used),
        linf=linf,
    )
    # Feasibility is an unconditional postcondition of every attack.
    assert result.adversarial.min() >= 0.0 and result.adversarial.max() <= 1.0
    assert result.linf <= epsilon + FEASIBILITY_SLACK
    return result


def _restart_engine(model, image, label, *, epsilon, steps, restarts, seed, step_fn,
                    targeted, target_label, random_init=True):
    """Shared multi-restart loop. ``step_fn(batch, labels) -> batch`` applies
    one unprojected update to the active lanes."""
    if steps < 1 or restarts < 1:
        raise InvalidArgumentError("steps and restarts must be positive")
    if targeted:
        if target_label is None:
            raise InvalidArgumentError("targeted attacks need a target label")
        if not 0 <= int(target_label) < model.classes:
            raise InvalidArgumentError("target label outside the class range")
        if int(target_label) == int(label):
            raise InvalidArgumentError("target label equals the true label")

    rng = np.random.default_rng(seed)
    lanes = restarts
    if random_init:
        noise = rng.uniform(-epsilon, epsilon, size=(lanes,) + image.shape)
        x = np.clip(image[None] + noise, 0.0, 1.0).astype(np.float32)
    else:
        x = np.broadcast_to(image[None], (lanes,) + image.shape).copy()
    lo = np.maximum(image - epsilon, 0.0)
    hi = np.minimum(image + epsilon, 1.0)

    loss_labels = np.full(lanes, int(target_label if targeted else label), dtype=np.int64)
    active = np.ones(lanes, dtype=bool)
    success_step = np.full(lanes, -1, dtype=np.int64)

    with _FrozenEval(model):
        for step in range(steps):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            batch = step_fn(x[idx], loss_labels[idx])
            batch = np.clip(batch, lo, hi).astype(np.float32)
            x[idx] = batch
            preds = _predict_batch(model, batch)
            done = (preds == target_label) if targeted else (preds != label)
            if done.any():
                winners = idx[done]
                success_step[winners] = step + 1
                active[winners] = False

        succeeded = np.flatnonzero(success_step > 0)
        if succeeded.size:
            lane = int(succeeded.min())
            return _finish(image, x[lane], model, label, epsilon, True, success_step[lane], lane + 1)
        return _finish(image, x[lanes - 1], model, label, epsilon, False, steps, restarts)


def subband_attack(model, image, label, *, epsilon=8 / 255, gamma=0.05, steps=20,
                   restarts=20, selector=SubbandSelector(), filter_name="haar",
                   seed=0, targeted=False, target_label=None, random_init=True):
    """Craft an adversarial example by signed gradient steps on the selected
    wavelet subbands of the iterate. ``random_init=False`` starts every
    restart from the clean image instead of a uniform draw in the ball."""
    image = _check_attack_inputs(model, image, label, epsilon)
    if gamma <= 0:
        raise InvalidArgumentError("gamma must be positive")
    if not selector.any():
        raise InvalidArgumentError("the selector must enable at least one subband")
    filt = filter_bank(filter_name)
    direction = -1.0 if targeted else 1.0
    spatial = image.shape[-2:]

    def step_fn(batch, labels):
        coeffs = dwt2(batch, filt)
        leaves = {
            name: Tensor(coeffs[name], requires_grad=True) for name in SUBBAND_NAMES
        }
        recon = idwt2_tensor(leaves["ll"], leaves["lh"], leaves["hl"], leaves["hh"],
                             filt, spatial)
        loss = A.cross_entropy(model.forward(recon), labels)
        loss.backward()
        for name in selector.names():
            coeffs[name] += gamma * direction * np.sign(leaves[name].grad)
        return idwt2(coeffs, filt)

    return _restart_engine(model, image, label, epsilon=epsilon, steps=steps,
                           restarts=restarts, seed=seed, step_fn=step_fn,
                           targeted=targeted, target_label=target_label,
                           random_init=random_init)


def fgsm(model, image, label, *, epsilon=8 / 255, targeted=False, target_label=None):
    """Single signed-gradient step in pixel space from the clean image."""
    image = _check_attack_inputs(model, image, label, epsilon)
    if targeted and target_label is None:
        raise InvalidArgumentError("targeted attacks need a target label")
    loss_label = int(target_label if targeted else label)
    direction = -1.0 if targeted else 1.0

    with _FrozenEval(model):
        leaf = Tensor(image[None], requires_grad=True)
        loss = A.cross_entropy(model.forward(leaf), np.array([loss_label], dtype=np.int64))
        loss.backward()
        adv = image + direction * epsilon * np.sign(leaf.grad[0])
        adv = project_ball(adv, image, epsilon)
        pred = int(_predict_batch(model, adv[None].astype(np.float32))[0])
        success = (pred == target_label) if targeted else (pred != label)
        return _finish(image, adv, model, label, epsilon, success, 1, 1)


def pgd(model, image, label, *, epsilon=8 / 255, step=None, steps=20, restarts=20,
        seed=0, targeted=False, target_label=None, random_init=True):
    """Iterated signed-gradient attack in pixel space with random restarts;
    the step size defaults to epsilon / 4."""
    image = _check_attack_inputs(model, image, label, epsilon)
    if step is None:
        step = epsilon / 4.0
    if step <= 0:
        raise InvalidArgumentError("step must be positive")
    direction = -1.0 if targeted else 1.0

    def step_fn(batch, labels):
        leaf = Tensor(batch, requires_grad=True)
        loss = A.cross_entropy(model.forward(leaf), labels)
        loss.backward()
        return batch + direction * step * np.sign(leaf.grad)

    return _restart_engine(model, image, label, epsilon=epsilon, steps=steps,
                           restarts=restarts, seed=seed, step_fn=step_fn,
                           targeted=targeted, target_label=target_label,
                           random_init=random_init)


def attack_many(model, images, labels, method, **kwargs):
    """Run one attack per image and stack the results. ``method`` is the
    attack callable; per-image seeds are derived as seed + index."""
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    if images.ndim != 4 or images.shape[0] != labels.shape[0]:
        raise InvalidShapeError("attack_many expects (N, C, H, W) images with N labels")
    base_seed = kwargs.pop("seed", 0)
    takes_seed = method is not fgsm
    results = []
    for i in range(images.shape[0]):
        per_image = dict(kwargs)
        if takes_seed:
            per_image["seed"] = base_seed + i
        results.append(method(model, images[i], int(labels[i]), **per_image))
    return results
