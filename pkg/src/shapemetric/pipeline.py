"""Dataset manifest, pipeline configuration, cached stages.

The pipeline runs over a CSV manifest (``path,label,id``) and a flat
``key = value`` config file. Per-shape features are cached under a
content fingerprint so re-runs skip unchanged work; all artifacts are
written atomically (temp file or directory, then rename) and contain no
timestamps, so identical inputs produce byte-identical outputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import coding, descriptors, spectral
from .coding import Codebook, Standardization, ViewFeatures, assemble_view, bow_encode
from .evaluation import DistanceMatrix, EvalReport, evaluate, rank_all
from .mesh import load_off
from .mfamml import MetricModel, TrainConfig, fused_distance_matrix, load_model, save_model, train_alternating

logger = logging.getLogger(__name__)

SIGNATURE_KINDS = ("hks", "sihks", "wks")
VIEW_NAMES = ("shapedna", "hks", "sihks", "wks")
PROTOCOLS = ("heldout", "full")


class ConfigError(ValueError):
    """Invalid pipeline configuration (bad key, value, or combination)."""


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    shape_id: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    root: str

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.shape_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate shape ids in manifest: {dupes}")
        labels = [e.label for e in self.entries]
        for lab in sorted(set(labels)):
            if labels.count(lab) < 2:
                raise ValueError(f"class {lab!r} has fewer than 2 entries")
        missing = [e.path for e in self.entries if not os.path.exists(self.mesh_path(e))]
        if missing:
            raise ValueError(f"manifest references missing files: {missing[:5]}")

    def mesh_path(self, entry: ManifestEntry) -> str:
        return os.path.join(self.root, entry.path)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries])

    @property
    def shape_ids(self):
        return [e.shape_id for e in self.entries]


def load_manifest(path) -> DatasetManifest:
    """Read a ``path,label,id`` CSV; paths resolve relative to the file."""
    path = os.fspath(path)
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        return DatasetManifest(entries=(), root=root)
    start = 1 if [c.strip().lower() for c in rows[0]] == ["path", "label", "id"] else 0
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if len(row) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
        entries.append(ManifestEntry(path=row[0].strip(), label=row[1].strip(),
                                     shape_id=row[2].strip()))
    return DatasetManifest(entries=tuple(entries), root=root)


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the pipeline, with the stock defaults."""

    spectral_k: int = 100
    shapedna_m: int = 35
    hks_times: int = 50
    sihks_freqs: int = 50
    sihks_alpha: float = 2.0
    sihks_tau_min: float = 1.0
    sihks_tau_max: float = 25.0
    sihks_tau_step: float = 1.0 / 16.0
    wks_energies: int = 100
    wks_sigma_scale: float = 7.0
    codebook_size: int = 64
    codebook_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    split_fraction: float = 0.5
    split_seed: int = 0
    protocol: str = "heldout"
    pr_points: int = 101
    workers: int = 1

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("eval.split must lie strictly between 0 and 1")
        for name in ("spectral_k", "shapedna_m", "hks_times", "sihks_freqs",
                     "wks_energies", "codebook_size", "pr_points", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.spectral_k < self.shapedna_m + 1:
            raise ConfigError(
                f"spectral.k = {self.spectral_k} cannot supply shapedna.m = "
                f"{self.shapedna_m} nonzero eigenvalues (need k >= m + 1)"
            )

    def feature_params(self) -> dict:
        """The subset of parameters that determine cached features."""
        return {
            "spectral_k": self.spectral_k,
            "shapedna_m": self.shapedna_m,
            "hks_times": self.hks_times,
            "sihks_freqs": self.sihks_freqs,
            "sihks_alpha": self.sihks_alpha,
            "sihks_tau_min": self.sihks_tau_min,
            "sihks_tau_max": self.sihks_tau_max,
            "sihks_tau_step": self.sihks_tau_step,
            "wks_energies": self.wks_energies,
            "wks_sigma_scale": self.wks_sigma_scale,
        }

    def config_hash(self) -> str:
        doc = asdict(self)
        return hashlib.sha256(
            json.dumps(doc, sort_keys=True).encode("utf-8")
        ).hexdigest()[:16]


# Mapping of config-file keys to PipelineConfig / TrainConfig fields.
_CONFIG_KEYS = {
    "spectral.k": "spectral_k",
    "shapedna.m": "shapedna_m",
    "hks.n_times": "hks_times",
    "sihks.n_freq": "sihks_freqs",
    "sihks.alpha": "sihks_alpha",
    "sihks.tau_min": "sihks_tau_min",
    "sihks.tau_max": "sihks_tau_max",
    "sihks.tau_step": "sihks_tau_step",
    "wks.n_energies": "wks_energies",
    "wks.sigma_scale": "wks_sigma_scale",
    "codebook.size": "codebook_size",
    "codebook.seed": "codebook_seed",
    "eval.split": "split_fraction",
    "eval.seed": "split_seed",
    "eval.protocol": "protocol",
    "eval.pr_points": "pr_points",
    "workers": "workers",
}
_TRAIN_KEYS = {
    "train.d": "d",
    "train.lambda": "lam",
    "train.k1": "k1",
    "train.k2": "k2",
    "train.max_iters": "max_iters",
    "train.tol": "tol",
    "train.ridge": "ridge",
}


def _parse_value(raw: str):
    raw = raw.strip().strip('"').strip("'")
    for caster in (int, float):
        try:
            return caster(raw)
        except ValueError:
            continue
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    return raw


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read a flat ``key = value`` config file and apply CLI overrides.

    Unknown keys are an error so typos cannot silently change a run.
    """
    values = {}
    if path is not None:
        with open(os.fspath(path), "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = line.split("=", 1)
                values[key.strip()] = _parse_value(raw)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    plain = {}
    train = {}
    for key, value in values.items():
        if key in _CONFIG_KEYS:
            plain[_CONFIG_KEYS[key]] = value
        elif key in _TRAIN_KEYS:
            train[_TRAIN_KEYS[key]] = value
        else:
            known = sorted(list(_CONFIG_KEYS) + list(_TRAIN_KEYS))
            raise ConfigError(f"unknown config key {key!r}; known keys: {known}")
    try:
        return PipelineConfig(train=TrainConfig(**train), **plain)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def stratified_split(labels, fraction: float, seed: int) -> np.ndarray:
    """Boolean train mask with ``round(fraction * n)`` per class (>= 1 and
    <= n-1 so neither side loses a class), seeded and deterministic."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    mask = np.zeros(labels.shape[0], dtype=bool)
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        n_train = int(round(fraction * idx.size))
        n_train = min(max(n_train, 1), idx.size - 1)
        chosen = rng.permutation(idx.size)[:n_train]
        mask[idx[chosen]] = True
    return mask


# --- atomic writes -------------------------------------------------------------


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _atomic_write_json(path: str, doc) -> None:
    _atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _atomic_replace_dir(tmp_dir: str, final_dir: str) -> None:
    if os.path.exists(final_dir):
        shutil.rmtree(final_dir)
    os.replace(tmp_dir, final_dir)


# --- feature extraction ----------------------------------------------------------


def shape_cache_dir(cache_root, shape_id: str) -> str:
    return os.path.join(os.fspath(cache_root), "shapes", shape_id)


def _feature_fingerprint(mesh_bytes: bytes, config: PipelineConfig) -> str:
    digest = hashlib.sha256()
    digest.update(mesh_bytes)
    digest.update(json.dumps(config.feature_params(), sort_keys=True).encode("utf-8"))
    return digest.hexdigest()


def _cached_fingerprint(shape_dir: str) -> str | None:
    try:
        with open(os.path.join(shape_dir, "fingerprint.json"), "r", encoding="utf-8") as fh:
            return json.load(fh).get("fingerprint")
    except (OSError, json.JSONDecodeError):
        return None


def extract_shape_features(manifest: DatasetManifest, entry: ManifestEntry,
                           config: PipelineConfig, cache_root) -> str:
    """Compute (or reuse) one shape's spectrum and descriptors.

    Returns ``"cached"`` when the existing cache entry matches the content
    fingerprint, otherwise ``"computed"``.
    """
    mesh_path = manifest.mesh_path(entry)
    with open(mesh_path, "rb") as fh:
        fingerprint = _feature_fingerprint(fh.read(), config)

    final_dir = shape_cache_dir(cache_root, entry.shape_id)
    if _cached_fingerprint(final_dir) == fingerprint:
        return "cached"

    mesh = load_off(mesh_path)
    spec = spectral.spectrum_for_mesh(mesh, config.spectral_k)

    parent = os.path.dirname(final_dir)
    os.makedirs(parent, exist_ok=True)
    tmp_dir = tempfile.mkdtemp(dir=parent, prefix=f".{entry.shape_id}-")
    try:
        spectral.save_spectrum(spec, os.path.join(tmp_dir, "spectrum"))
        descriptors.save_shape_dna(descriptors.shape_dna(spec, config.shapedna_m), tmp_dir)
        descriptors.save_signatures(descriptors.hks(spec, config.hks_times), tmp_dir)
        descriptors.save_signatures(
            descriptors.sihks(spec, config.sihks_freqs, alpha=config.sihks_alpha,
                              tau_min=config.sihks_tau_min, tau_max=config.sihks_tau_max,
                              tau_step=config.sihks_tau_step),
            tmp_dir,
        )
        descriptors.save_signatures(
            descriptors.wks(spec, config.wks_energies, sigma_scale=config.wks_sigma_scale),
            tmp_dir,
        )
        with open(os.path.join(tmp_dir, "fingerprint.json"), "w", encoding="utf-8") as fh:
            json.dump({"fingerprint": fingerprint}, fh)
        _atomic_replace_dir(tmp_dir, final_dir)
    finally:
        if os.path.exists(tmp_dir):
            shutil.rmtree(tmp_dir)
    return "computed"


@dataclass
class FeatureSummary:
    computed: list = field(default_factory=list)
    cached: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (shape_id, message)

    @property
    def ok(self) -> bool:
        return not self.failures


def extract_features(manifest: DatasetManifest, config: PipelineConfig,
                     cache_root) -> FeatureSummary:
    """Feature extraction over the whole manifest; per-shape failures are
    collected rather than fatal."""
    summary = FeatureSummary()
    if not manifest.entries:
        logger.warning("manifest is empty; nothing to extract")
        return summary

    def run(entry):
        return extract_shape_features(manifest, entry, config, cache_root)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda e: _guard(run, e), manifest.entries))
    else:
        results = [_guard(run, e) for e in manifest.entries]

    for entry, outcome in zip(manifest.entries, results):
        if isinstance(outcome, Exception):
            summary.failures.append((entry.shape_id, str(outcome)))
            logger.error("feature extraction failed for %s: %s", entry.shape_id, outcome)
        elif outcome == "cached":
            summary.cached.append(entry.shape_id)
        else:
            summary.computed.append(entry.shape_id)
    return summary


def _guard(fn, arg):
    try:
        return fn(arg)
    except Exception as exc:  # collected per shape, reported in summary
        return exc


# --- codebooks and views -----------------------------------------------------------


def _require_features(manifest: DatasetManifest, cache_root, shape_ids) -> None:
    missing = [
        sid for sid in shape_ids
        if _cached_fingerprint(shape_cache_dir(cache_root, sid)) is None
    ]
    if missing:
        raise FileNotFoundError(
            f"features not cached for {len(missing)} shapes (run the features "
            f"stage first): {missing[:5]}"
        )


def fit_codebooks(manifest: DatasetManifest, config: PipelineConfig, cache_root) -> dict:
    """Fit one codebook per signature kind on the training split only."""
    labels = manifest.labels
    train_mask = stratified_split(labels, config.split_fraction, config.split_seed)
    train_entries = [e for e, m in zip(manifest.entries, train_mask) if m]
    _require_features(manifest, cache_root, [e.shape_id for e in train_entries])

    books = {}
    for kind in SIGNATURE_KINDS:
        pooled = [
            descriptors.load_signatures(
                shape_cache_dir(cache_root, e.shape_id), kind
            ).signatures
            for e in train_entries
        ]
        rows = np.concatenate(pooled, axis=0)
        books[kind] = coding.kmeans_fit(rows, config.codebook_size,
                                        seed=config.codebook_seed, kind=kind)
        coding.save_codebook(books[kind], cache_root)
        logger.info("fitted %s codebook on %d rows from %d training shapes",
                    kind, rows.shape[0], len(train_entries))
    return books


def encode_views(manifest: DatasetManifest, config: PipelineConfig, cache_root) -> dict:
    """Build the four standardized views over every shape in the manifest.

    Standardization statistics come from the training split, and are
    recorded in each view's sidecar for test-time reuse.
    """
    labels = manifest.labels
    _require_features(manifest, cache_root, manifest.shape_ids)
    train_mask = stratified_split(labels, config.split_fraction, config.split_seed)

    codebooks = {kind: coding.load_codebook(cache_root, kind) for kind in SIGNATURE_KINDS}
    feature_vectors = {name: [] for name in VIEW_NAMES}
    for entry in manifest.entries:
        shape_dir = shape_cache_dir(cache_root, entry.shape_id)
        feature_vectors["shapedna"].append(descriptors.load_shape_dna(shape_dir).values)
        for kind in SIGNATURE_KINDS:
            fieldmat = descriptors.load_signatures(shape_dir, kind)
            feature_vectors[kind].append(bow_encode(fieldmat, codebooks[kind]))

    views = {}
    for name in VIEW_NAMES:
        stacked = np.stack(feature_vectors[name], axis=1)
        std = Standardization.fit(stacked[:, train_mask])
        views[name] = assemble_view(feature_vectors[name], labels, name=name,
                                    standardization=std)
        coding.save_view(views[name], cache_root)
    return views


def load_views(cache_root) -> dict:
    views = {}
    for name in VIEW_NAMES:
        views[name] = coding.load_view(os.fspath(cache_root), name)
    return views


def _subset_view(view: ViewFeatures, mask: np.ndarray) -> ViewFeatures:
    return ViewFeatures(
        matrix=view.matrix[:, mask],
        view_name=view.view_name,
        labels=view.labels[mask],
        standardization=view.standardization,
    )


def train_model(manifest: DatasetManifest, config: PipelineConfig, cache_root,
                model_dir) -> MetricModel:
    """Train the multi-view metric on the training split and persist it."""
    views = load_views(cache_root)
    labels = manifest.labels
    train_mask = stratified_split(labels, config.split_fraction, config.split_seed)
    train_views = [_subset_view(views[name], train_mask) for name in VIEW_NAMES]
    model = train_alternating(train_views, config.train)
    save_model(model, model_dir)
    logger.info("trained model on %d shapes; %d sweeps, converged=%s",
                int(train_mask.sum()), len(model.history), model.converged)
    return model


def _protocol_mask(config: PipelineConfig, labels) -> np.ndarray:
    if config.protocol == "full":
        return np.ones(len(labels), dtype=bool)
    return ~stratified_split(labels, config.split_fraction, config.split_seed)


def compute_distances(manifest: DatasetManifest, config: PipelineConfig,
                      cache_root, model_dir) -> DistanceMatrix:
    """Fused distance matrix for the configured protocol.

    ``heldout``: queries and gallery are the test split. ``full``: every
    shape is both query and gallery (self pairs are excluded at ranking).
    """
    model = load_model(model_dir)
    views = load_views(cache_root)
    mask = _protocol_mask(config, manifest.labels)
    ids = [sid for sid, m in zip(manifest.shape_ids, mask) if m]
    mats = [views[name].matrix[:, mask] for name in VIEW_NAMES]
    values = fused_distance_matrix(model, mats, mats)
    return DistanceMatrix(values=values, query_ids=ids, gallery_ids=ids)


def save_distances(dist: DistanceMatrix, path) -> None:
    lines = ["query_id," + ",".join(dist.gallery_ids)]
    for qi, qid in enumerate(dist.query_ids):
        lines.append(qid + "," + ",".join(f"{v:.17g}" for v in dist.values[qi]))
    _atomic_write_text(os.fspath(path), "\n".join(lines) + "\n")


def evaluate_model(manifest: DatasetManifest, config: PipelineConfig, cache_root,
                   model_dir) -> EvalReport:
    dist = compute_distances(manifest, config, cache_root, model_dir)
    mask = _protocol_mask(config, manifest.labels)
    labels = manifest.labels[mask]
    rankings = rank_all(dist)
    return evaluate(rankings, labels, labels, n_pr_points=config.pr_points)


def write_report(report: EvalReport, config: PipelineConfig, out_dir,
                 name: str = "report") -> str:
    """Write ``<name>.json`` (scores x100, split seed, config hash) and the
    matching ``pr_curve`` CSV. Returns the report path."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "scores": report.scaled(),
        "split_seed": config.split_seed,
        "split_fraction": config.split_fraction,
        "protocol": config.protocol,
        "config_hash": config.config_hash(),
    }
    report_path = os.path.join(out_dir, f"{name}.json")
    _atomic_write_json(report_path, doc)
    curve_name = "pr_curve.csv" if name == "report" else f"pr_curve_{name}.csv"
    curve_lines = ["recall,precision"] + [
        f"{r:.17g},{p:.17g}" for r, p in report.pr_curve
    ]
    _atomic_write_text(os.path.join(out_dir, curve_name), "\n".join(curve_lines) + "\n")
    return report_path


def render_pr_curve(curve_csv, out_path) -> None:
    """Render a PR-curve CSV to an SVG (matplotlib, headless)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = np.loadtxt(os.fspath(curve_csv), delimiter=",", skiprows=1, ndmin=2)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(data[:, 0], data[:, 1], marker="", lw=1.8)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(os.fspath(out_path), format="svg")
    plt.close(fig)
