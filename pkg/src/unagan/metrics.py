"""Diversity evaluation: bin the training data with k-means, then test how
generated samples occupy those bins.

Per bin, a two-sided two-proportion z-test with pooled standard error flags
bins whose occupancy differs significantly between the training and
generated sets; the number of flagged bins plus the Jensen-Shannon
divergence (base 2) between the two bin histograms summarize diversity.
Lower is better for both.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import tensorio
from .errors import FormatError, InvalidInput

BINMODEL_MAGIC = b"BINM"
BINMODEL_VERSION = 1
KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-6


def patchify(mels: list[np.ndarray], patch_frames: int = 16, stride: int = 16) -> np.ndarray:
    """Flatten sliding (bands x patch_frames) windows into row vectors.

    Clips shorter than patch_frames are skipped with a warning. Returns an
    (n_patches, bands * patch_frames) array.
    """
    if patch_frames < 1 or stride < 1:
        raise InvalidInput("patch_frames and stride must be >= 1")
    rows = []
    for i, mel in enumerate(mels):
        mel = np.asarray(mel)
        if mel.ndim != 2:
            raise InvalidInput(f"mel {i} is not 2-D")
        n_frames = mel.shape[1]
        if n_frames < patch_frames:
            warnings.warn(f"skipping clip {i}: {n_frames} frames < patch {patch_frames}")
            continue
        for off in range(0, n_frames - patch_frames + 1, stride):
            rows.append(mel[:, off : off + patch_frames].reshape(-1))
    if not rows:
        raise InvalidInput("no clip was long enough to yield a patch")
    return np.asarray(rows, dtype=np.float64)


@dataclass
class BinModel:
    centers: np.ndarray  # (n_bins, d), float32
    train_proportions: np.ndarray  # (n_bins,), sums to 1
    n_train: int
    seed: int

    @property
    def n_bins(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


@dataclass
class BinReport:
    ndb: int
    per_bin: list[dict]  # train_prop, gen_prop, z_score, significant
    jsd: float
    alpha: float
    n_train: int
    n_gen: int


def _nearest(vectors: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # Argmin over squared Euclidean distance; ties resolve to the lowest index.
    v2 = (vectors**2).sum(axis=1)[:, None]
    c2 = (centers**2).sum(axis=1)[None, :]
    d2 = v2 + c2 - 2.0 * vectors @ centers.T
    return d2.argmin(axis=1)


def _kmeans_pp_init(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = vectors.shape[0]
    centers = np.empty((k, vectors.shape[1]))
    centers[0] = vectors[rng.integers(n)]
    d2 = ((vectors - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = vectors[rng.integers(n)]
        else:
            centers[i] = vectors[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((vectors - centers[i]) ** 2).sum(axis=1))
    return centers


def fit_bins(train_vectors: np.ndarray, n_bins: int, seed: int = 0) -> BinModel:
    """k-means over training vectors: k-means++ init, Lloyd iterations until
    the largest center movement is below tolerance. Empty clusters are
    re-seeded from the point farthest from its current center."""
    vectors = np.asarray(train_vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise InvalidInput("training vectors must be a 2-D array")
    n = vectors.shape[0]
    if n < n_bins:
        raise InvalidInput(f"{n} training vectors cannot fill {n_bins} bins")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(vectors, n_bins, rng)
    assign = _nearest(vectors, centers)
    for _ in range(KMEANS_MAX_ITER):
        new_centers = centers.copy()
        for k in range(n_bins):
            members = vectors[assign == k]
            if len(members):
                new_centers[k] = members.mean(axis=0)
            else:
                dist = ((vectors - centers[assign]) ** 2).sum(axis=1)
                new_centers[k] = vectors[dist.argmax()]
        movement = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        assign = _nearest(vectors, centers)
        if movement <= KMEANS_TOL:
            break
    counts = np.bincount(assign, minlength=n_bins).astype(np.float64)
    return BinModel(
        centers=centers.astype(np.float32),
        train_proportions=counts / n,
        n_train=n,
        seed=seed,
    )


def two_proportion_z(count_a: int, n_a: int, count_b: int, n_b: int) -> float:
    """Pooled-SE z statistic for the difference between two proportions."""
    pool = (count_a + count_b) / (n_a + n_b)
    se = np.sqrt(pool * (1.0 - pool) * (1.0 / n_a + 1.0 / n_b))
    if se == 0.0:
        return 0.0
    return (count_a / n_a - count_b / n_b) / se


def jsd(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence in bits: 0.5*KL(p||m) + 0.5*KL(q||m) with
    m = (p+q)/2. Zero-count bins contribute nothing (0*log 0 = 0)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise InvalidInput("p and q must be 1-D vectors of equal length")
    for name, vec in (("p", p), ("q", q)):
        if np.any(vec < 0) or abs(vec.sum() - 1.0) > 1e-6:
            raise InvalidInput(f"{name} is not a probability vector")
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float((a[mask] * np.log2(a[mask] / b[mask])).sum())

    return float(min(1.0, max(0.0, 0.5 * kl(p, m) + 0.5 * kl(q, m))))


def assign_and_test(gen_vectors: np.ndarray, model: BinModel, alpha: float = 0.05) -> BinReport:
    """Assign generated vectors to nearest bins and flag statistically
    different occupancies."""
    gen = np.asarray(gen_vectors, dtype=np.float64)
    if gen.ndim != 2 or gen.shape[1] != model.dim:
        raise InvalidInput(
            f"generated vectors have dimension {gen.shape[-1]}, model expects {model.dim}"
        )
    if gen.shape[0] < 1:
        raise InvalidInput("need at least one generated vector")
    if not (0 < alpha < 1):
        raise InvalidInput(f"alpha must be in (0, 1), got {alpha}")
    assign = _nearest(gen, model.centers.astype(np.float64))
    n_gen = gen.shape[0]
    gen_counts = np.bincount(assign, minlength=model.n_bins).astype(np.float64)
    gen_props = gen_counts / n_gen
    train_counts = np.round(model.train_proportions * model.n_train)
    z_crit = float(norm.ppf(1.0 - alpha / 2.0))

    per_bin = []
    ndb = 0
    for k in range(model.n_bins):
        z = two_proportion_z(
            int(train_counts[k]), model.n_train, int(gen_counts[k]), n_gen
        )
        significant = bool(abs(z) > z_crit)
        ndb += int(significant)
        per_bin.append(
            {
                "train_prop": float(model.train_proportions[k]),
                "gen_prop": float(gen_props[k]),
                "z_score": float(z),
                "significant": significant,
            }
        )
    return BinReport(
        ndb=ndb,
        per_bin=per_bin,
        jsd=jsd(model.train_proportions, gen_props),
        alpha=alpha,
        n_train=model.n_train,
        n_gen=n_gen,
    )


# -- serialization -----------------------------------------------------------


def save_bin_model(model: BinModel, path) -> None:
    meta = {"n_bins": model.n_bins, "n_train": model.n_train, "seed": model.seed}
    digest = tensorio.digest_of(tensorio.canonical_json(meta))
    tensorio.write_container(
        path,
        BINMODEL_MAGIC,
        BINMODEL_VERSION,
        digest,
        meta,
        {"centers": model.centers, "train_proportions": model.train_proportions},
    )


def load_bin_model(path) -> BinModel:
    version, _, meta, tensors = tensorio.read_container(path, BINMODEL_MAGIC)
    if version != BINMODEL_VERSION:
        raise FormatError(f"{path}: unsupported bin-model version {version}")
    model = BinModel(
        centers=tensors["centers"],
        train_proportions=tensors["train_proportions"].astype(np.float64),
        n_train=int(meta["n_train"]),
        seed=int(meta["seed"]),
    )
    if model.train_proportions.shape[0] != model.n_bins:
        raise FormatError(f"{path}: proportions do not match center count")
    return model


def report_to_json(report: BinReport) -> str:
    doc = {
        "format": "unagan-bin-report",
        "version": 1,
        "ndb": report.ndb,
        "jsd": report.jsd,
        "alpha": report.alpha,
        "n_train": report.n_train,
        "n_gen": report.n_gen,
        "per_bin": report.per_bin,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> BinReport:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad report JSON: {exc}") from exc
    if doc.get("format") != "unagan-bin-report":
        raise FormatError("not a bin report document")
    return BinReport(
        ndb=int(doc["ndb"]),
        per_bin=list(doc["per_bin"]),
        jsd=float(doc["jsd"]),
        alpha=float(doc["alpha"]),
        n_train=int(doc["n_train"]),
        n_gen=int(doc["n_gen"]),
    )


def format_report(report: BinReport) -> str:
    """Aligned human-readable table."""
    lines = [
        f"bins flagged (NDB): {report.ndb} / {len(report.per_bin)}   "
        f"JSD: {report.jsd:.6f} bits   alpha: {report.alpha}",
        f"{'bin':>4}  {'train':>8}  {'gen':>8}  {'z':>9}  flag",
    ]
    for k, row in enumerate(report.per_bin):
        flag = "*" if row["significant"] else ""
        lines.append(
            f"{k:>4}  {row['train_prop']:>8.4f}  {row['gen_prop']:>8.4f}  "
            f"{row['z_score']:>9.3f}  {flag}"
        )
    return "\n".join(lines) + "\n"
