"""Probe-versus-gallery scoring and the identification metric suite.

Scores are similarities (higher is better): ``cosine`` or
``negative_euclidean``. Metrics follow the usual open-set retrieval
conventions: ROC-AUC as the Mann-Whitney statistic with ties counted 0.5,
CMC with ties broken by gallery order, mAP as mean precision at the ranks
of correct items, and TAR at an order-statistic FAR threshold whose
realized FAR never exceeds the target.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import CorpusView, TemplateGallery

MEASURES = ("cosine", "negative_euclidean")


@dataclass(eq=False)
class ScoreMatrix:
    """Dense probe-by-gallery similarity matrix with its provenance."""

    values: np.ndarray
    probe_ids: list[str]
    gallery_ids: list[str]
    measure: str
    templated: bool


def pairwise_scores(a: np.ndarray, b: np.ndarray, measure: str) -> np.ndarray:
    """Similarity of every row of ``a`` against every row of ``b``.

    Computed in float64 with one fixed summation order per row. Under
    cosine, any zero-norm vector scores 0 against everything.
    """
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("inputs must be 2-D with matching dimension")
    dot = a @ b.T
    if measure == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        denom = np.outer(na, nb)
        out = np.zeros_like(dot)
        nz = denom > 0.0
        out[nz] = dot[nz] / denom[nz]
        return out
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * dot
    return -np.sqrt(np.maximum(sq, 0.0))


def score_matrix(probes: CorpusView, gallery, measure: str = "cosine") -> ScoreMatrix:
    """Score a probe view against a gallery view or a template gallery."""
    templated = isinstance(gallery, TemplateGallery)
    gallery_ids = gallery.identity_ids
    values = pairwise_scores(probes.vectors, gallery.vectors, measure)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite score")
    return ScoreMatrix(
        values=values,
        probe_ids=list(probes.identity_ids),
        gallery_ids=list(gallery_ids),
        measure=measure,
        templated=templated,
    )


def _score_values(scores) -> np.ndarray:
    values = scores.values if isinstance(scores, ScoreMatrix) else np.asarray(scores)
    if values.ndim != 2:
        raise ValueError("score matrix must be 2-D")
    return np.asarray(values, dtype=np.float64)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    # 1-based ranks; tied values share the mean rank of their group
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    return (upper - (counts - 1) / 2.0)[inverse]


def roc_auc(genuine, impostor) -> float:
    """P(genuine > impostor) with ties counted half, over all pairs."""
    g = np.asarray(genuine, dtype=np.float64).ravel()
    i = np.asarray(impostor, dtype=np.float64).ravel()
    if g.size == 0 or i.size == 0:
        raise ValueError("roc_auc needs non-empty genuine and impostor scores")
    ranks = _average_ranks(np.concatenate([g, i]))
    rank_sum = ranks[: g.size].sum()
    return float((rank_sum - g.size * (g.size + 1) / 2.0) / (g.size * i.size))


def _sorted_hits(values: np.ndarray, probe_ids, gallery_ids) -> tuple[np.ndarray, np.ndarray]:
    pid = np.asarray(probe_ids)
    gid = np.asarray(gallery_ids)
    if values.shape != (pid.size, gid.size):
        raise ValueError("score matrix shape does not match id lists")
    # stable sort keeps gallery order among tied scores
    order = np.argsort(-values, axis=1, kind="stable")
    return gid[order] == pid[:, None], order


def cmc(scores, probe_ids, gallery_ids, ks) -> list[tuple[int, float]]:
    """Cumulative match characteristic at each rank in ``ks``.

    A probe counts as matched at rank k when its identity appears among the
    k highest-scoring gallery entries (k clamped to the gallery size).
    Probes whose identity is absent from the gallery are excluded.
    """
    ks = list(ks)
    if not ks or any(int(k) < 1 for k in ks):
        raise ValueError("ranks must be positive integers")
    values = _score_values(scores)
    hits, _ = _sorted_hits(values, probe_ids, gallery_ids)
    included = hits.any(axis=1)
    if not included.any():
        raise ValueError("no probe identity present in the gallery")
    best = np.argmax(hits[included], axis=1)
    n_gallery = values.shape[1]
    return [(int(k), float(np.mean(best < min(int(k), n_gallery)))) for k in ks]


def mean_average_precision(
    scores,
    probe_ids,
    gallery_ids,
    *,
    probe_datasets=None,
    gallery_datasets=None,
    exclude_same_dataset: bool = False,
) -> float:
    """Mean over probes of average precision over their correct gallery items.

    With ``exclude_same_dataset``, gallery entries sharing the probe's
    dataset tag are dropped from that probe's ranking (off by default).
    Probes with no correct item are skipped; if none remains this raises.
    """
    values = _score_values(scores)
    hits, order = _sorted_hits(values, probe_ids, gallery_ids)
    if exclude_same_dataset:
        if probe_datasets is None or gallery_datasets is None:
            raise ValueError("same-dataset exclusion needs dataset tags for both sides")
        pds = np.asarray(probe_datasets)
        gds = np.asarray(gallery_datasets)
        valid = gds[order] != pds[:, None]
    else:
        valid = np.ones_like(hits, dtype=bool)
    rel = hits & valid
    n_rel = rel.sum(axis=1)
    included = n_rel > 0
    if not included.any():
        raise ValueError("no probe has any gallery match")
    position = np.cumsum(valid, axis=1)
    correct_so_far = np.cumsum(rel, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(rel, correct_so_far / position, 0.0)
    ap = precision.sum(axis=1)[included] / n_rel[included]
    return float(ap.mean())


def tar_at_far(genuine, impostor, far_target: float) -> tuple[float, float]:
    """True-accept rate at the threshold realizing at most ``far_target``.

    The threshold is the impostor order statistic at index
    ``floor(far_target * len(impostor))`` (descending, 0-indexed);
    acceptance is strictly-greater comparison.
    """
    g = np.asarray(genuine, dtype=np.float64).ravel()
    i = np.asarray(impostor, dtype=np.float64).ravel()
    if g.size == 0 or i.size == 0:
        raise ValueError("tar_at_far needs non-empty genuine and impostor scores")
    if not (0.0 < far_target < 1.0):
        raise ValueError(f"far_target must be in (0, 1), got {far_target}")
    desc = np.sort(i)[::-1]
    m = int(np.floor(far_target * i.size))
    threshold = -np.inf if m >= i.size else float(desc[m])
    tar = float(np.mean(g > threshold))
    return tar, threshold


@dataclass
class EvalReport:
    """Full identification report for one probe/gallery evaluation."""

    auc: float
    mean_ap: float
    cmc: list[tuple[int, float]]
    tar_at_far: list[tuple[float, float]]
    measure: str
    templated: bool
    subspace_descriptor: str | None = None
    excluded_probes: int = 0

    def rank(self, k: int) -> float:
        for kk, acc in self.cmc:
            if kk == k:
                return acc
        raise KeyError(f"rank {k} not in report")

    def to_json_dict(self) -> dict:
        return {
            "measure": self.measure,
            "templated": self.templated,
            "subspace_descriptor": self.subspace_descriptor,
            "auc": self.auc,
            "map": self.mean_ap,
            "cmc": [[k, v] for k, v in self.cmc],
            "tar_at_far": [[f, t] for f, t in self.tar_at_far],
            "excluded_probes": self.excluded_probes,
        }

    def to_csv_rows(self) -> list[tuple[str, float]]:
        rows = [("auc", self.auc), ("map", self.mean_ap)]
        rows += [(f"rank{k}", v) for k, v in self.cmc]
        rows += [(f"tar_far_{f:g}", t) for f, t in self.tar_at_far]
        rows.append(("excluded_probes", float(self.excluded_probes)))
        return rows


def genuine_impostor_split(values: np.ndarray, probe_ids, gallery_ids):
    """Flatten a score matrix into genuine and impostor score pools."""
    pid = np.asarray(probe_ids)
    gid = np.asarray(gallery_ids)
    mask = gid[None, :] == pid[:, None]
    return values[mask], values[~mask]


def evaluate_arrays(
    probe_vectors,
    probe_ids,
    gallery_vectors,
    gallery_ids,
    measure: str = "cosine",
    ks=(1, 20),
    far_targets=(1e-3,),
    *,
    templated: bool,
    subspace_descriptor: str | None = None,
    probe_datasets=None,
    gallery_datasets=None,
    exclude_same_dataset: bool = False,
) -> EvalReport:
    """Metric suite on raw arrays; the core shared by every evaluation path."""
    values = pairwise_scores(probe_vectors, gallery_vectors, measure)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite score")
    genuine, impostor = genuine_impostor_split(values, probe_ids, gallery_ids)
    auc = roc_auc(genuine, impostor)
    cmc_pairs = cmc(values, probe_ids, gallery_ids, ks)
    mean_ap = mean_average_precision(
        values,
        probe_ids,
        gallery_ids,
        probe_datasets=probe_datasets,
        gallery_datasets=gallery_datasets,
        exclude_same_dataset=exclude_same_dataset,
    )
    tars = [(float(f), tar_at_far(genuine, impostor, f)[0]) for f in far_targets]
    gallery_set = set(np.asarray(gallery_ids).tolist())
    excluded = int(sum(1 for p in probe_ids if p not in gallery_set))
    return EvalReport(
        auc=auc,
        mean_ap=mean_ap,
        cmc=cmc_pairs,
        tar_at_far=tars,
        measure=measure,
        templated=templated,
        subspace_descriptor=subspace_descriptor,
        excluded_probes=excluded,
    )


def evaluate(
    probes: CorpusView,
    gallery,
    measure: str = "cosine",
    ks=(1, 20),
    far_targets=(1e-3,),
    *,
    subspace_descriptor: str | None = None,
    exclude_same_dataset: bool = False,
) -> EvalReport:
    """Evaluate a probe view against a gallery view or template gallery."""
    templated = isinstance(gallery, TemplateGallery)
    if exclude_same_dataset and templated:
        raise ValueError("same-dataset exclusion requires an image-level gallery")
    return evaluate_arrays(
        probes.vectors,
        probes.identity_ids,
        gallery.vectors,
        gallery.identity_ids,
        measure,
        ks,
        far_targets,
        templated=templated,
        subspace_descriptor=subspace_descriptor,
        probe_datasets=probes.datasets if exclude_same_dataset else None,
        gallery_datasets=gallery.datasets if exclude_same_dataset else None,
        exclude_same_dataset=exclude_same_dataset,
    )


def report_to_json(report: EvalReport, config: dict | None = None) -> str:
    """Stable-key JSON text for a report, optionally embedding the run config."""
    obj = {}
    if config is not None:
        obj["config"] = config
    obj.update(report.to_json_dict())
    return json.dumps(obj, indent=2) + "\n"


def report_to_csv(report: EvalReport) -> str:
    lines = ["metric,value"]
    lines += [f"{name},{value!r}" for name, value in report.to_csv_rows()]
    return "\n".join(lines) + "\n"
