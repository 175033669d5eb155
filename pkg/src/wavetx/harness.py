"""Experiment harness: subband tables, filter sweeps, transfer runs and
image export, all with deterministic on-disk outputs.

Every run writes a CSV whose bytes depend only on the inputs: row order
is fixed, floats use one format, and each row carries the configuration
hash, model fingerprint and toolkit version that produced it. Running the
same configuration twice must produce identical files.
"""

import dataclasses
import hashlib
import json
import os

import numpy as np

from . import __version__
from .attacks import SubbandSelector, attack_many, fgsm, pgd, subband_attack
from .container import load_bundle, model_fingerprint, save_bundle
from .errors import ConfigError, FormatError
from .metrics import accuracy, fooling_ratio, mean_uiqi
from .models import predict
from .wavelet import FILTER_NAMES

VERSION_STRING = f"wavetx-{__version__}"

TABLE2_ROWS = ("ll", "lh", "hl", "hh", "high", "all")

CSV_COLUMNS = (
    "row",
    "n_images",
    "accuracy_pct",
    "accuracy_frac",
    "fooling_ratio",
    "mean_uiqi",
    "mean_linf",
    "max_linf",
    "mean_iterations",
    "mean_restarts",
    "config_hash",
    "model_hash",
    "version",
)


@dataclasses.dataclass
class ExperimentConfig:
    dataset: str = "fmnist"
    data_root: str = "data"
    limit: int = 500
    method: str = "subband"
    subbands: str = "all"
    filter_name: str = "haar"
    epsilon: float = 8 / 255
    gamma: float = 0.05
    steps: int = 20
    restarts: int = 20
    pgd_step: float = None
    seed: int = 0

    @staticmethod
    def from_file(path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: config is not valid JSON: {exc}") from exc
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        return ExperimentConfig(**raw)

    def merged(self, overrides):
        """Return a copy with non-None override values applied."""
        values = dataclasses.asdict(self)
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in values:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value
        return ExperimentConfig(**values)

    def validate(self):
        if self.dataset not in ("fmnist", "cifar10"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.method not in ("subband", "fgsm", "pgd"):
            raise ConfigError(f"unknown attack method {self.method!r}")
        if self.filter_name not in FILTER_NAMES and self.filter_name != "bior2.2":
            raise ConfigError(f"unknown wavelet filter {self.filter_name!r}")
        try:
            SubbandSelector.parse(self.subbands)
        except Exception as exc:
            raise ConfigError(str(exc)) from exc
        if self.limit < 1:
            raise ConfigError("limit must be at least 1")
        if not 0 < self.epsilon <= 1:
            raise ConfigError("epsilon must lie in (0, 1]")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.steps < 1 or self.restarts < 1:
            raise ConfigError("steps and restarts must be positive")
        if self.pgd_step is not None and self.pgd_step <= 0:
            raise ConfigError("pgd_step must be positive when given")
        return self

    def hash(self):
        canonical = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _fmt(value):
    if value is None or value == "":
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6f}"


def render_csv(rows):
    """Serialise row dicts to CSV text with a fixed column order and \n
    line endings; missing keys render as empty cells."""
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(col)) for col in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def _attack_row(model, images, labels, clean_preds, row, cfg, method_name=None,
                selector=None):
    """Attack every image and summarise one result row."""
    method_name = method_name or cfg.method
    if method_name == "subband":
        results = attack_many(
            model, images, labels, subband_attack,
            epsilon=cfg.epsilon, gamma=cfg.gamma, steps=cfg.steps, restarts=cfg.restarts,
            selector=selector if selector is not None else SubbandSelector.parse(cfg.subbands),
            filter_name=cfg.filter_name, seed=cfg.seed,
        )
    elif method_name == "fgsm":
        results = attack_many(model, images, labels, fgsm, epsilon=cfg.epsilon)
    elif method_name == "pgd":
        results = attack_many(
            model, images, labels, pgd,
            epsilon=cfg.epsilon, step=cfg.pgd_step, steps=cfg.steps,
            restarts=cfg.restarts, seed=cfg.seed,
        )
    else:
        raise ConfigError(f"unknown attack method {method_name!r}")

    advs = np.stack([r.adversarial for r in results])
    adv_preds = np.array([r.adversarial_label for r in results], dtype=np.int64)
    report = {
        "row": row,
        "n_images": len(results),
        "accuracy_pct": 100.0 * accuracy(adv_preds, labels),
        "accuracy_frac": accuracy(adv_preds, labels),
        "fooling_ratio": fooling_ratio(clean_preds, adv_preds),
        "mean_uiqi": mean_uiqi(images, advs),
        "mean_linf": float(np.mean([r.linf for r in results])),
        "max_linf": float(np.max([r.linf for r in results])),
        "mean_iterations": float(np.mean([r.iterations for r in results])),
        "mean_restarts": float(np.mean([r.restarts_used for r in results])),
    }
    return advs, adv_preds, results, report


def _stamp(rows, cfg, model):
    fingerprint = model_fingerprint(model)
    for row in rows:
        row["config_hash"] = cfg.hash()
        row["model_hash"] = fingerprint
        row["version"] = VERSION_STRING
    return rows


def _clean_row(labels, clean_preds):
    acc = accuracy(clean_preds, labels)
    return {
        "row": "original",
        "n_images": labels.shape[0],
        "accuracy_pct": 100.0 * acc,
        "accuracy_frac": acc,
    }


def _save_advs(path, cfg, row, images, labels, advs, results):
    meta = {
        "config": dataclasses.asdict(cfg),
        "row": row,
        "config_hash": cfg.hash(),
        "version": VERSION_STRING,
    }
    arrays = [
        ("clean", images.astype(np.float32)),
        ("adversarial", advs.astype(np.float32)),
        ("labels", labels.astype(np.int64)),
        ("adv_labels", np.array([r.adversarial_label for r in results], dtype=np.int64)),
        ("success", np.array([r.success for r in results], dtype=np.uint8)),
        ("iterations", np.array([r.iterations for r in results], dtype=np.int64)),
        ("restarts_used", np.array([r.restarts_used for r in results], dtype=np.int64)),
        ("linf", np.array([r.linf for r in results], dtype=np.float64)),
    ]
    save_bundle(path, "attack_run", meta, arrays)


def run_attack(model, dataset, cfg, out_path, log=None):
    """Attack the first ``cfg.limit`` test images with one method and save
    an attack_run bundle. Returns the result row."""
    cfg.validate()
    images = dataset.images[: cfg.limit]
    labels = dataset.labels[: cfg.limit]
    clean_preds = predict(model, images)
    row_name = cfg.method if cfg.method != "subband" else SubbandSelector.parse(cfg.subbands).label()
    advs, _, results, report = _attack_row(model, images, labels, clean_preds, row_name, cfg)
    _stamp([report], cfg, model)
    if out_path:
        _save_advs(out_path, cfg, row_name, images, labels, advs, results)
    if log:
        log(
            f"{row_name}: attacked accuracy {report['accuracy_pct']:.2f}% "
            f"fooling {report['fooling_ratio']:.4f} mean UIQI {report['mean_uiqi']:.4f}"
        )
    return report


def run_table2(model, dataset, cfg, outdir, log=None):
    """One row per subband selection (ll, lh, hl, hh, high, all) plus the
    clean-accuracy row, written to table2.csv and table2.json."""
    cfg.validate()
    os.makedirs(outdir, exist_ok=True)
    images = dataset.images[: cfg.limit]
    labels = dataset.labels[: cfg.limit]
    clean_preds = predict(model, images)
    rows = [_clean_row(labels, clean_preds)]
    for row in TABLE2_ROWS:
        advs, _, results, report = _attack_row(
            model, images, labels, clean_preds, row, cfg, method_name="subband",
            selector=SubbandSelector.parse(row),
        )
        _save_advs(os.path.join(outdir, f"advs-{row}.wvtx"), cfg, row, images, labels,
                   advs, results)
        rows.append(report)
        if log:
            log(f"{row}: attacked accuracy {report['accuracy_pct']:.2f}%")
    _stamp(rows, cfg, model)
    _write_text(os.path.join(outdir, "table2.csv"), render_csv(rows))
    _write_text(os.path.join(outdir, "table2.json"),
                json.dumps({"rows": rows, "config": dataclasses.asdict(cfg)},
                           sort_keys=True, indent=2) + "\n")
    return rows


def run_filter_sweep(model, dataset, cfg, outdir, log=None):
    """Attack with each wavelet family under the configured selector."""
    cfg.validate()
    os.makedirs(outdir, exist_ok=True)
    images = dataset.images[: cfg.limit]
    labels = dataset.labels[: cfg.limit]
    clean_preds = predict(model, images)
    rows = [_clean_row(labels, clean_preds)]
    for family in FILTER_NAMES:
        sweep_cfg = cfg.merged({"filter_name": family})
        advs, _, results, report = _attack_row(
            model, images, labels, clean_preds, family, sweep_cfg, method_name="subband"
        )
        _save_advs(os.path.join(outdir, f"advs-{family}.wvtx"), sweep_cfg, family,
                   images, labels, advs, results)
        rows.append(report)
        if log:
            log(f"{family}: attacked accuracy {report['accuracy_pct']:.2f}%")
    _stamp(rows, cfg, model)
    _write_text(os.path.join(outdir, "filters.csv"), render_csv(rows))
    _write_text(os.path.join(outdir, "filters.json"),
                json.dumps({"rows": rows, "config": dataclasses.asdict(cfg)},
                           sort_keys=True, indent=2) + "\n")
    return rows


def run_transfer(source_model, target_model, dataset, cfg, outdir, log=None):
    """Craft adversarial images against the source model and measure how
    far they drop the target model's accuracy."""
    cfg.validate()
    if model_fingerprint(source_model) == model_fingerprint(target_model):
        raise ConfigError("transfer needs two distinct models")
    os.makedirs(outdir, exist_ok=True)
    images = dataset.images[: cfg.limit]
    labels = dataset.labels[: cfg.limit]
    source_clean = predict(source_model, images)
    target_clean = predict(target_model, images)
    advs, source_adv_preds, results, _ = _attack_row(
        model=source_model, images=images, labels=labels, clean_preds=source_clean,
        row="source", cfg=cfg,
    )
    target_adv_preds = predict(target_model, advs)

    def pct(preds):
        return 100.0 * accuracy(preds, labels)

    rows = [
        {
            "row": "source_clean",
            "n_images": labels.shape[0],
            "accuracy_pct": pct(source_clean),
            "accuracy_frac": accuracy(source_clean, labels),
        },
        {
            "row": "source_attacked",
            "n_images": labels.shape[0],
            "accuracy_pct": pct(source_adv_preds),
            "accuracy_frac": accuracy(source_adv_preds, labels),
            "fooling_ratio": fooling_ratio(source_clean, source_adv_preds),
            "mean_uiqi": mean_uiqi(images, advs),
        },
        {
            "row": "target_clean",
            "n_images": labels.shape[0],
            "accuracy_pct": pct(target_clean),
            "accuracy_frac": accuracy(target_clean, labels),
        },
        {
            "row": "target_attacked",
            "n_images": labels.shape[0],
            "accuracy_pct": pct(target_adv_preds),
            "accuracy_frac": accuracy(target_adv_preds, labels),
            "fooling_ratio": fooling_ratio(target_clean, target_adv_preds),
            "mean_uiqi": mean_uiqi(images, advs),
        },
    ]
    _stamp(rows, cfg, source_model)
    for row in rows:
        if row["row"].startswith("target"):
            row["model_hash"] = model_fingerprint(target_model)
    _save_advs(os.path.join(outdir, "advs-transfer.wvtx"), cfg, "transfer", images,
               labels, advs, results)
    _write_text(os.path.join(outdir, "transfer.csv"), render_csv(rows))
    if log:
        log(
            f"target accuracy {pct(target_clean):.2f}% -> {pct(target_adv_preds):.2f}% "
            f"under transferred attack"
        )
    return rows


def write_pnm(path, image):
    """Write one (C, H, W) float image in [0, 1] as binary PGM (C=1) or
    PPM (C=3)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise FormatError("PNM export needs a (1|3, H, W) image")
    arr = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    _, h, w = arr.shape
    if arr.shape[0] == 1:
        header = f"P5\n{w} {h}\n255\n"
        payload = arr[0].tobytes()
    else:
        header = f"P6\n{w} {h}\n255\n"
        payload = arr.transpose(1, 2, 0).tobytes()
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(payload)


def read_pnm(path):
    """Read a binary PGM/PPM written by write_pnm back to (C, H, W) float32."""
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file")
    try:
        w, h = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PNM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported")
    channels = 1 if parts[0] == b"P5" else 3
    if len(parts[3]) < w * h * channels:
        raise FormatError(f"{path}: truncated PNM payload")
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=w * h * channels)
    if channels == 1:
        out = pixels.reshape(1, h, w)
    else:
        out = pixels.reshape(h, w, 3).transpose(2, 0, 1)
    return out.astype(np.float32) / 255.0


def normalise_noise(noise):
    """Min-max scale a perturbation for viewing; an all-zero perturbation
    maps to mid-gray."""
    lo = float(noise.min())
    hi = float(noise.max())
    if hi == lo:
        return np.full_like(noise, 0.5)
    return (noise - lo) / (hi - lo)


def export_images(bundle_path, outdir, count=None):
    """Expand an attack_run bundle into clean / adversarial / noise image
    triplets. Returns the list of files written."""
    kind, _, arrays = load_bundle(bundle_path)
    if kind != "attack_run":
        raise FormatError(f"expected an attack_run bundle, found kind {kind!r}")
    clean = arrays["clean"]
    advs = arrays["adversarial"]
    os.makedirs(outdir, exist_ok=True)
    n = clean.shape[0] if count is None else min(count, clean.shape[0])
    suffix = "pgm" if clean.shape[1] == 1 else "ppm"
    written = []
    for i in range(n):
        noise = normalise_noise(advs[i] - clean[i])
        for tag, image in (("clean", clean[i]), ("adv", advs[i]), ("noise", noise)):
            path = os.path.join(outdir, f"{i:04d}-{tag}.{suffix}")
            write_pnm(path, image)
            written.append(path)
    return written
