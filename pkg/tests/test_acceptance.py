"""Acceptance gate: one test per numbered criterion, each printing a
single ACCEPTANCE PASS/FAIL line (visible with ``pytest -v -s`` or in the
captured output of a failure).

Criteria 4, 5, 6, 8, the UIQI bound of criterion 10, and criterion 11
need the real Fashion-MNIST IDX files. They skip loudly when the files
are absent (this sandbox cannot download them); place the four files
under ./data or point WAVETX_DATA_ROOT at them to activate the full
gate. Criterion 4 trains on a 10k subset by default; set
WAVETX_FULL_TRAIN=1 for the full 30-epoch run and the 85% bound.

Everything else runs unconditionally on synthetic data or pure math.
"""

import contextlib
import os
import time

import numpy as np
import pytest

from conftest import fmnist_root
from wavetx import autodiff as A
from wavetx.attacks import SubbandSelector, attack_many, fgsm, pgd, subband_attack
from wavetx.autodiff import Tensor, no_grad
from wavetx.container import load_bundle
from wavetx.data import Dataset, load_fmnist
from wavetx.harness import ExperimentConfig, run_attack, run_table2
from wavetx.metrics import accuracy, uiqi
from wavetx.models import (
    BatchNorm2d,
    Classifier,
    Flatten,
    Linear,
    Sequential,
    build_table1_cnn,
    evaluate_accuracy,
    predict,
    train,
)
from wavetx.wavelet import (
    FILTER_NAMES,
    SubbandSet,
    dwt2,
    dwt2_adjoint,
    filter_bank,
    idwt2,
    idwt2_adjoint,
)

EPS_PAPER = 8.0 / 255.0
SKIP_REASON = (
    "Fashion-MNIST IDX files not found; place train-images-idx3-ubyte, "
    "train-labels-idx1-ubyte, t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte "
    "(optionally .gz) under ./data or set WAVETX_DATA_ROOT. This environment "
    "has no network access, so the files cannot be downloaded automatically."
)

requires_fmnist = pytest.mark.skipif(fmnist_root() is None, reason=SKIP_REASON)


@contextlib.contextmanager
def criterion(number, description):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE FAIL: criterion {number:02d} - {description}")
        raise
    print(f"ACCEPTANCE PASS: criterion {number:02d} - {description}")


# -- shared state for the dataset-gated criteria ----------------------------

@pytest.fixture(scope="session")
def fmnist_sets():
    root = fmnist_root()
    if root is None:
        pytest.skip(SKIP_REASON)
    return load_fmnist(root, "train"), load_fmnist(root, "test")


@pytest.fixture(scope="session")
def subset_run(fmnist_sets):
    """Model, wall time and test accuracy for the 10k-subset training leg;
    shared by criteria 4, 5, 6, 8, 10 and 11."""
    train_ds, test_ds = fmnist_sets
    model = build_table1_cnn(seed=0)
    start = time.perf_counter()
    train(model, train_ds.images[:10_000], train_ds.labels[:10_000],
          epochs=8, lr=1e-3, batch_size=128, seed=1)
    elapsed = time.perf_counter() - start
    return model, elapsed, evaluate_accuracy(model, test_ds.images, test_ds.labels)


@pytest.fixture(scope="session")
def paper_cfg():
    return ExperimentConfig(dataset="fmnist", data_root="unused", limit=500,
                            method="subband", subbands="all", filter_name="haar",
                            epsilon=EPS_PAPER, gamma=0.05, steps=20, restarts=20,
                            seed=0)


@pytest.fixture(scope="session")
def table2_500(subset_run, fmnist_sets, paper_cfg, tmp_path_factory):
    """The 500-image subband table shared by criteria 5, 6, 7, 10 and 11."""
    model, _, _ = subset_run
    _, test_ds = fmnist_sets
    outdir = tmp_path_factory.mktemp("accept-table2")
    rows = run_table2(model, test_ds, paper_cfg, str(outdir))
    return {r["row"]: r for r in rows}, outdir


# -- criteria ----------------------------------------------------------------

def test_criterion_01_wavelet_round_trip():
    rng = np.random.default_rng(10)
    start = time.perf_counter()
    worst = 0.0
    for size in (28, 32):
        images = rng.random((100, size, size)).astype(np.float32)
        for family in FILTER_NAMES:
            filt = filter_bank(family)
            back = idwt2(dwt2(images, filt), filt)
            worst = max(worst, float(np.abs(back - images).max()))
    elapsed = time.perf_counter() - start
    with criterion(1, "32-bit round-trip below 1e-6 on 100 images per size, under 10 s"):
        assert worst < 1e-6, f"max round-trip error {worst:.3e}"
        assert elapsed < 10.0, f"round-trip sweep took {elapsed:.2f} s"


def test_criterion_02_adjoint_identities():
    rng = np.random.default_rng(20)

    def dot_bands(a, b):
        return sum(float(np.sum(a[n] * b[n])) for n in ("ll", "lh", "hl", "hh"))

    def rel(lhs, rhs):
        return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)

    worst = 0.0
    for family in FILTER_NAMES:
        filt = filter_bank(family)
        for _ in range(50):
            h = int(rng.integers(8, 33))
            w = int(rng.integers(8, 33))
            x = rng.standard_normal((h, w))
            template = dwt2(x, filt)
            y = SubbandSet(*(rng.standard_normal(template[n].shape)
                             for n in ("ll", "lh", "hl", "hh")), (h, w))
            worst = max(worst, rel(dot_bands(dwt2(x, filt), y),
                                   float(np.sum(x * dwt2_adjoint(y, filt)))))
            s = SubbandSet(*(rng.standard_normal(template[n].shape)
                             for n in ("ll", "lh", "hl", "hh")), (h, w))
            z = rng.standard_normal((h, w))
            worst = max(worst, rel(float(np.sum(idwt2(s, filt) * z)),
                                   dot_bands(s, idwt2_adjoint(z, filt))))
    with criterion(2, "dwt2/idwt2 adjoint dot products agree to 1e-10 over 50 trials per family"):
        assert worst < 1e-10, f"worst relative adjoint error {worst:.3e}"


def _cast_model_float64(model):
    for _, tensor in model.named_params():
        tensor.data = tensor.data.astype(np.float64)
    for _, module in model.root.modules:
        if isinstance(module, BatchNorm2d):
            module.running_mean = module.running_mean.astype(np.float64)
            module.running_var = module.running_var.astype(np.float64)


def test_criterion_03_end_to_end_gradient():
    model = build_table1_cnn(seed=5)
    _cast_model_float64(model)
    model.eval_mode()
    rng = np.random.default_rng(30)
    x = rng.random((1, 1, 28, 28))
    label = np.array([3], dtype=np.int64)

    leaf = Tensor(x, requires_grad=True)
    loss = A.cross_entropy(model.forward(leaf), label)
    loss.backward()
    grad = leaf.grad

    def loss_at(arr):
        with no_grad():
            return float(A.cross_entropy(model.forward(Tensor(arr)), label).data)

    h = 1e-6
    pixels = rng.choice(x.size, size=20, replace=False)
    worst = 0.0
    for p in pixels:
        bump = np.zeros_like(x)
        bump.flat[p] = h
        fd = (loss_at(x + bump) - loss_at(x - bump)) / (2.0 * h)
        ad = grad.flat[p]
        worst = max(worst, abs(ad - fd) / max(abs(ad), abs(fd), 1e-12))
    with criterion(3, "network input gradient matches central differences to 1e-4 at 20 pixels"):
        assert worst < 1e-4, f"worst relative gradient error {worst:.3e}"


@requires_fmnist
def test_criterion_04_clean_training(fmnist_sets, subset_run):
    train_ds, test_ds = fmnist_sets
    if os.environ.get("WAVETX_FULL_TRAIN") == "1":
        model = build_table1_cnn(seed=0)
        train(model, train_ds.images, train_ds.labels,
              epochs=30, lr=1e-4, batch_size=128, seed=1)
        acc = evaluate_accuracy(model, test_ds.images, test_ds.labels)
        with criterion(4, "full 30-epoch training reaches 85% test accuracy"):
            assert acc >= 0.85, f"full-training accuracy {100 * acc:.2f}%"
    else:
        _, elapsed, acc = subset_run
        with criterion(4, "10k-subset training reaches 80% test accuracy within 20 minutes"):
            assert acc >= 0.80, f"subset accuracy {100 * acc:.2f}%"
            assert elapsed <= 1200.0, f"subset training took {elapsed:.0f} s"


@requires_fmnist
def test_criterion_05_attack_efficacy(table2_500):
    rows, _ = table2_500
    clean = rows["original"]["accuracy_pct"]
    attacked = rows["all"]["accuracy_pct"]
    with criterion(5, "all-subbands Haar attack drops accuracy by 20+ points on 500 images"):
        assert clean - attacked >= 20.0, (
            f"clean {clean:.2f}% -> attacked {attacked:.2f}% "
            f"(drop {clean - attacked:.2f})")


@requires_fmnist
def test_criterion_06_subband_ordering(table2_500):
    rows, _ = table2_500
    acc_all = rows["all"]["accuracy_pct"]
    acc_ll = rows["ll"]["accuracy_pct"]
    acc_hh = rows["hh"]["accuracy_pct"]
    with criterion(6, "attacked accuracy orders All <= LL < HH with a 2-point margin"):
        assert acc_all <= acc_ll, f"All {acc_all:.2f}% > LL {acc_ll:.2f}%"
        assert acc_hh - acc_ll >= 2.0, f"LL {acc_ll:.2f}% vs HH {acc_hh:.2f}%"


def test_criterion_07_feasibility(blob_model, blob_data, tmp_path):
    images, labels = blob_data
    results = []
    results += attack_many(blob_model, images[:6], labels[:6], subband_attack,
                           epsilon=EPS_PAPER, steps=3, restarts=3, seed=0)
    results += attack_many(blob_model, images[:6], labels[:6], fgsm, epsilon=EPS_PAPER)
    results += attack_many(blob_model, images[:6], labels[:6], pgd,
                           epsilon=EPS_PAPER, steps=3, restarts=3, seed=0)
    violations = 0
    for res, clean in zip(results, np.concatenate([images[:6]] * 3)):
        if res.adversarial.min() < 0.0 or res.adversarial.max() > 1.0:
            violations += 1
        if float(np.abs(res.adversarial - clean).max()) > EPS_PAPER + 1e-6:
            violations += 1
    with criterion(7, "every adversarial image stays in [0,1] within 8/255 + 1e-6"):
        assert violations == 0, f"{violations} feasibility violations"


@requires_fmnist
def test_criterion_07_feasibility_on_table2_bundles(table2_500):
    _, outdir = table2_500
    violations = 0
    for row in ("ll", "lh", "hl", "hh", "high", "all"):
        _, _, arrays = load_bundle(os.path.join(str(outdir), f"advs-{row}.wvtx"))
        advs = arrays["adversarial"]
        if advs.min() < 0.0 or advs.max() > 1.0:
            violations += 1
        if float(np.abs(advs - arrays["clean"]).max()) > EPS_PAPER + 1e-6:
            violations += 1
    with criterion(7, "all 3000 bundled adversarial images satisfy the feasibility bound"):
        assert violations == 0, f"{violations} feasibility violations in bundles"


@requires_fmnist
def test_criterion_08_baseline_ordering(subset_run, fmnist_sets, paper_cfg):
    model, _, _ = subset_run
    _, test_ds = fmnist_sets
    fgsm_row = run_attack(model, test_ds, paper_cfg.merged({"method": "fgsm"}), None)
    pgd_row = run_attack(model, test_ds, paper_cfg.merged({"method": "pgd"}), None)
    with criterion(8, "PGD attacked accuracy is at most FGSM attacked accuracy"):
        assert pgd_row["accuracy_pct"] <= fgsm_row["accuracy_pct"], (
            f"PGD {pgd_row['accuracy_pct']:.2f}% > FGSM {fgsm_row['accuracy_pct']:.2f}%")


def _linear_probe(shape, v, bias):
    rng = np.random.default_rng(0)
    d = int(np.prod(shape))
    root = Sequential([("flatten", Flatten()), ("fc", Linear(d, 2, rng))])
    model = Classifier({"arch": "linear_probe", "input_shape": list(shape),
                        "classes": 2, "seed": 0}, root)
    params = dict(model.named_params())
    params["fc.w"].data = np.stack([v, np.zeros_like(v)]).astype(np.float32)
    params["fc.b"].data = np.array([bias, 0.0], dtype=np.float32)
    return model


def test_criterion_09_linear_model_oracle():
    shape = (1, 8, 8)
    epsilon = 0.2
    rng = np.random.default_rng(90)
    v = (rng.uniform(0.15, 0.35, 64) * rng.choice([-1.0, 1.0], 64)).astype(np.float32)
    bias = -float(v.sum()) * 0.5  # zero score at the mid-gray image
    model = _linear_probe(shape, v, bias)

    # Samples sit close to the decision boundary: score magnitude at most
    # 0.06 against a flip budget of epsilon * |v|_1 around 3.2.
    budget = epsilon * float(np.abs(v).sum())
    images = []
    for i in range(25):
        x = rng.uniform(0.35, 0.65, 64)
        target = rng.uniform(0.005, 0.06) * (-1.0 if i % 2 else 1.0)
        score = float(v @ x) + bias
        x = x + (target - score) * v / float(v @ v)
        images.append(x.reshape(shape).astype(np.float32))
    images = np.stack(images)
    assert images.min() >= 0.0 and images.max() <= 1.0

    preds = predict(model, images)
    margins = np.abs(images.reshape(25, -1) @ v.astype(np.float64) + bias)
    assert np.all(margins < budget), "construction must satisfy the margin premise"

    outcomes = {}
    outcomes["fgsm"] = attack_many(model, images, preds, fgsm, epsilon=epsilon)
    outcomes["pgd"] = attack_many(model, images, preds, pgd, epsilon=epsilon,
                                  steps=20, restarts=20, seed=1)
    outcomes["subband"] = attack_many(model, images, preds, subband_attack,
                                      epsilon=epsilon, gamma=0.05, steps=20,
                                      restarts=20, seed=2,
                                      selector=SubbandSelector.parse("all"))
    with criterion(9, "fgsm, pgd and subband attacks all reach fooling ratio 1.0 "
                      "on the near-boundary linear model"):
        for name, results in outcomes.items():
            fooled = float(np.mean([r.success for r in results]))
            assert fooled == 1.0, f"{name} fooling ratio {fooled:.3f}"


def _uiqi_window_oracle(x, y, window=8):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    values = []
    for c in range(x.shape[0]):
        for i in range(x.shape[1] - window + 1):
            for j in range(x.shape[2] - window + 1):
                a = x[c, i : i + window, j : j + window].ravel()
                b = y[c, i : i + window, j : j + window].ravel()
                if np.array_equal(a, b):
                    values.append(1.0)
                    continue
                ma, mb = a.mean(), b.mean()
                den = (a.var() + b.var()) * (ma * ma + mb * mb)
                if den == 0.0:
                    continue
                cov = np.mean(a * b) - ma * mb
                values.append(4.0 * cov * ma * mb / den)
    return float(np.mean(values))


def test_criterion_10_uiqi_identity_and_oracle():
    rng = np.random.default_rng(100)
    x = rng.random((1, 14, 14))
    y = np.clip(x + rng.normal(0, 0.08, x.shape), 0, 1)
    with criterion(10, "uiqi(x, x) is exactly 1 and windows match the brute-force oracle"):
        assert uiqi(x, x.copy()) == 1.0
        flat = np.full((1, 9, 9), 0.3)
        assert uiqi(flat, flat.copy()) == 1.0
        np.testing.assert_allclose(uiqi(x, y), _uiqi_window_oracle(x, y), rtol=1e-10)


@requires_fmnist
def test_criterion_10_uiqi_of_attack_set(table2_500):
    rows, _ = table2_500
    value = rows["all"]["mean_uiqi"]
    with criterion(10, "mean UIQI of the criterion-5 adversarial set is at least 0.90"):
        assert value >= 0.90, f"mean UIQI {value:.4f}"


@requires_fmnist
def test_criterion_11_transferability(fmnist_sets, table2_500):
    train_ds, _ = fmnist_sets
    _, outdir = table2_500
    target = build_table1_cnn(seed=99)
    train(target, train_ds.images[:10_000], train_ds.labels[:10_000],
          epochs=8, lr=1e-3, batch_size=128, seed=77)
    _, _, arrays = load_bundle(os.path.join(str(outdir), "advs-all.wvtx"))
    labels = arrays["labels"]
    clean_acc = 100.0 * accuracy(predict(target, arrays["clean"]), labels)
    adv_acc = 100.0 * accuracy(predict(target, arrays["adversarial"]), labels)
    with criterion(11, "transferred adversarial images drop a differently-seeded "
                       "model's accuracy by 5+ points"):
        assert clean_acc - adv_acc >= 5.0, (
            f"target clean {clean_acc:.2f}% -> transferred {adv_acc:.2f}%")


def test_criterion_12_deterministic_reports(blob_model, blob_data, tmp_path):
    images, labels = blob_data
    dataset = Dataset("synthetic", images, labels, 2)
    cfg = ExperimentConfig(dataset="fmnist", data_root="unused", limit=8,
                           method="subband", subbands="all", filter_name="haar",
                           epsilon=EPS_PAPER, gamma=0.05, steps=2, restarts=2, seed=0)
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        run_table2(blob_model, dataset, cfg, str(d))
        run_attack(blob_model, dataset, cfg, str(d / "single.wvtx"))
    with criterion(12, "re-running an experiment yields byte-identical reports"):
        for name in ("table2.csv", "table2.json", "advs-all.wvtx", "single.wvtx"):
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name
