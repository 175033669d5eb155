"""Compare the compiled and numpy kernel backends.

Runs each kernel benchmark in a subprocess per backend (backend choice is
fixed at import time via WAVETX_BACKEND) and prints a timing table. The
attack-step benchmark exercises the full hot path of the subband attack:
decompose, differentiable reconstruction, forward, backward, update,
reconstruct.

Typical result: compiled wins the forward kernels, the pooling pair and
the end-to-end attack step, while numpy wins the convolution backward
contractions (einsum dispatches to BLAS), which makes training faster on
the numpy backend even though attacks are faster compiled.

Usage:
    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _bench_suite(repeats):
    from wavetx import autodiff as A
    from wavetx._kernels import (
        BACKEND,
        conv2d_backward_input,
        conv2d_backward_params,
        conv2d_forward,
        maxpool2d_backward,
        maxpool2d_forward,
    )
    from wavetx.attacks import SubbandSelector
    from wavetx.autodiff import Tensor
    from wavetx.models import build_table1_cnn
    from wavetx.wavelet import SUBBAND_NAMES, dwt2, filter_bank, idwt2, idwt2_tensor

    rng = np.random.default_rng(0)
    results = {"backend": BACKEND}

    x1 = rng.random((64, 1, 28, 28)).astype(np.float32)
    w1 = rng.random((10, 1, 5, 5)).astype(np.float32)
    b1 = np.zeros(10, dtype=np.float32)
    x2 = rng.random((64, 10, 12, 12)).astype(np.float32)
    w2 = rng.random((20, 10, 5, 5)).astype(np.float32)
    b2 = np.zeros(20, dtype=np.float32)
    y2 = conv2d_forward(x2, w2, b2, 1)
    gy2 = rng.random(y2.shape).astype(np.float32)

    results["conv2d_forward"] = _best_of(lambda: conv2d_forward(x1, w1, b1, 1), repeats)
    results["conv2d_backward_input"] = _best_of(
        lambda: conv2d_backward_input(gy2, w2, 1, x2.shape[2], x2.shape[3]), repeats)
    results["conv2d_backward_params"] = _best_of(
        lambda: conv2d_backward_params(gy2, x2, 5, 5, 1), repeats)

    xp = rng.random((64, 20, 24, 24)).astype(np.float32)
    pooled, idx = maxpool2d_forward(xp, 2)
    gp = rng.random(pooled.shape).astype(np.float32)
    results["maxpool2d_forward"] = _best_of(lambda: maxpool2d_forward(xp, 2), repeats)
    results["maxpool2d_backward"] = _best_of(
        lambda: maxpool2d_backward(gp, idx, 2, xp.shape[2], xp.shape[3]), repeats)

    # Full subband attack step on an 8-lane batch, without the early-exit
    # success check so every run costs the same.
    model = build_table1_cnn(input_shape=(1, 16, 16), classes=2, seed=0)
    model.eval_mode()
    for p in model.parameters():
        p.requires_grad = False
    filt = filter_bank("haar")
    selector = SubbandSelector.parse("all")
    batch = rng.random((8, 1, 16, 16)).astype(np.float32)
    labels = np.zeros(8, dtype=np.int64)

    def attack_step():
        coeffs = dwt2(batch, filt)
        leaves = {name: Tensor(coeffs[name], requires_grad=True) for name in SUBBAND_NAMES}
        recon = idwt2_tensor(leaves["ll"], leaves["lh"], leaves["hl"], leaves["hh"],
                             filt, (16, 16))
        loss = A.cross_entropy(model.forward(recon), labels)
        loss.backward()
        for name in selector.names():
            coeffs[name] += 0.05 * np.sign(leaves[name].grad)
        return idwt2(coeffs, filt)

    results["subband_attack_step"] = _best_of(attack_step, repeats)
    return results


def _run_child(backend, repeats):
    env = dict(os.environ, WAVETX_BACKEND=backend)
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--child", "--repeats", str(repeats)],
        env=env, capture_output=True, text=True,
    )
    if proc.returncode != 0:
        sys.stderr.write(proc.stderr)
        return None
    return json.loads(proc.stdout)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="best-of repeats per benchmark (default 7)")
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.child:
        print(json.dumps(_bench_suite(args.repeats)))
        return 0

    reports = {}
    for backend in ("numpy", "compiled"):
        report = _run_child(backend, args.repeats)
        if report is None:
            print(f"{backend}: unavailable (see stderr)")
            continue
        reports[backend] = report

    if not reports:
        return 1
    names = [k for k in next(iter(reports.values())) if k != "backend"]
    width = max(len(n) for n in names)
    header = f"{'benchmark'.ljust(width)}  " + "".join(f"{b:>12}" for b in reports)
    if len(reports) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name in names:
        line = name.ljust(width) + "  "
        for backend in reports:
            line += f"{reports[backend][name] * 1e3:>10.3f}ms"
        if len(reports) == 2:
            ratio = reports["numpy"][name] / reports["compiled"][name]
            line += f"{ratio:>9.2f}x"
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
