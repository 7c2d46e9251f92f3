"""Principal-subspace evaluation, the oracle excision sweep, and
gallery-only subspace selection.

Three levels, all sharing one evaluation path:

* ``pca_eval``      -- project into the full retained rank and evaluate
  (baseline: basis change plus centering, no excision).
* ``oracle_sweep``  -- for k = 0..rank-1 drop the k highest-variance
  components and evaluate probes against templates; the per-k curve is an
  upper bound that a deployable selector can aim for (it reads probes).
* ``select_subspace`` / ``apply_selection`` -- pick k using only the
  gallery (rank-1 of gallery images against their identity templates,
  smallest k attaining the maximum), then apply the frozen choice to
  probes. Probes are never read during selection; the signature only
  accepts a gallery view.

Selections serialize to JSON. They carry a fingerprint of the gallery
they were fitted on instead of the basis itself: ``fit_pca`` is
bit-reproducible, so re-deriving the basis from the same gallery gives
exactly the numbers of an in-process ``apply_selection``.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusView, EmbeddingCorpus, TemplateGallery, build_templates, load_corpus
from .metrics import EvalReport, evaluate_arrays, pairwise_scores
from .pca import PcaBasis, excise_prefix, fit_pca, project

FIT_SOURCES = ("images", "templates")


@dataclass(eq=False)
class SweepRow:
    k: int
    rank1: float
    mean_ap: float
    tars: tuple[tuple[float, float], ...]
    auc: float


@dataclass(eq=False)
class SweepResult:
    rows: list[SweepRow]
    measure: str
    far_targets: tuple[float, ...]
    fit_source: str
    basis: PcaBasis

    def to_csv(self) -> str:
        header = ["k", "rank1", "map"]
        header += [f"tar_far_{f:g}" for f in self.far_targets]
        header.append("auc")
        lines = [",".join(header)]
        for row in self.rows:
            cells = [str(row.k), repr(row.rank1), repr(row.mean_ap)]
            cells += [repr(t) for _, t in row.tars]
            cells.append(repr(row.auc))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def best_rank1(self) -> tuple[int, float]:
        values = np.array([row.rank1 for row in self.rows])
        best = int(np.argmax(values))
        return self.rows[best].k, float(values[best])


@dataclass(eq=False)
class SubspaceSelection:
    """A frozen excision choice made from gallery data alone."""

    k_star: int
    retained: tuple[int, ...]
    curve: list[tuple[int, float]]
    rule: str
    fit_source: str
    gallery_fingerprint: str
    degenerate: bool = False
    basis: PcaBasis | None = None

    def to_json_dict(self, config: dict | None = None) -> dict:
        obj = {"kind": "subspace_selection"}
        if config is not None:
            obj["config"] = config
        obj.update(
            {
                "rule": self.rule,
                "fit_source": self.fit_source,
                "k_star": self.k_star,
                "retained": list(self.retained),
                "curve": [[k, r1] for k, r1 in self.curve],
                "gallery_fingerprint": self.gallery_fingerprint,
                "degenerate": self.degenerate,
            }
        )
        return obj


def gallery_fingerprint(view: CorpusView) -> str:
    """SHA-256 over the gallery's ids and raw float32 vector bytes."""
    h = hashlib.sha256()
    for image_id, identity_id in zip(view.image_ids, view.identity_ids):
        h.update(image_id.encode("utf-8"))
        h.update(b"\x00")
        h.update(identity_id.encode("utf-8"))
        h.update(b"\x00")
    h.update(np.ascontiguousarray(view.vectors, dtype="<f4").tobytes())
    return h.hexdigest()


def _fit_rows(corpus_gallery: CorpusView, fit_on: str):
    if fit_on == "images":
        return corpus_gallery.vectors
    if fit_on == "templates":
        return build_templates(corpus_gallery).vectors
    raise ValueError(f"unknown fit source {fit_on!r}")


def _require_identities(view: CorpusView, minimum: int = 3) -> None:
    if len(set(view.identity_ids)) < minimum:
        raise ValueError(f"need at least {minimum} gallery identities")


def pca_eval(
    corpus: EmbeddingCorpus,
    measure: str = "cosine",
    fit_on: str = "images",
    *,
    templated: bool = False,
    ks=(1, 20),
    far_targets=(1e-3,),
    aux_gallery: EmbeddingCorpus | None = None,
) -> EvalReport:
    """Project everything into the full retained rank and evaluate.

    PCA is fitted on the target corpus's gallery (images or templates per
    ``fit_on``), or on ``aux_gallery``'s when given. Probes are centered
    with the fitted mean, i.e. the gallery-side mean, never their own.
    """
    gallery = corpus.gallery_view()
    probes = corpus.probe_view()
    source = aux_gallery.gallery_view() if aux_gallery is not None else gallery
    basis = fit_pca(_fit_rows(source, fit_on))
    if templated:
        side = build_templates(gallery)
        side_ids = side.identity_ids
    else:
        side = gallery
        side_ids = gallery.identity_ids
    g_proj = project(basis, side.vectors)
    p_proj = project(basis, probes.vectors)
    return evaluate_arrays(
        p_proj.coordinates,
        probes.identity_ids,
        g_proj.coordinates,
        side_ids,
        measure,
        ks,
        far_targets,
        templated=templated,
        subspace_descriptor="pca-full",
    )


def _sweep_row(
    k: int,
    probe_coords: np.ndarray,
    probe_ids,
    template_coords: np.ndarray,
    template_ids,
    measure: str,
    far_targets,
) -> SweepRow:
    report = evaluate_arrays(
        probe_coords[:, k:],
        probe_ids,
        template_coords[:, k:],
        template_ids,
        measure,
        (1,),
        far_targets,
        templated=True,
        subspace_descriptor=f"sweep-k={k}",
    )
    return SweepRow(
        k=k,
        rank1=report.cmc[0][1],
        mean_ap=report.mean_ap,
        tars=tuple(report.tar_at_far),
        auc=report.auc,
    )


def oracle_sweep(
    corpus: EmbeddingCorpus,
    measure: str = "cosine",
    far_targets=(1e-3,),
    *,
    aux_gallery: EmbeddingCorpus | None = None,
    workers: int = 1,
) -> SweepResult:
    """Evaluate probes against templates for every excision prefix k.

    Sweep iterations are independent; with ``workers > 1`` they run in a
    thread pool and are reassembled in k order, so the result does not
    depend on scheduling.
    """
    gallery = corpus.gallery_view()
    probes = corpus.probe_view()
    _require_identities(gallery)
    templates = build_templates(gallery)
    if aux_gallery is not None:
        aux_view = aux_gallery.gallery_view()
        _require_identities(aux_view)
        basis = fit_pca(build_templates(aux_view).vectors)
        fit_source = "aux-templates"
    else:
        basis = fit_pca(templates.vectors)
        fit_source = "templates"
    t_coords = project(basis, templates.vectors).coordinates
    p_coords = project(basis, probes.vectors).coordinates

    def row_for(k: int) -> SweepRow:
        return _sweep_row(
            k, p_coords, probes.identity_ids, t_coords, templates.identity_ids,
            measure, far_targets,
        )

    ks = range(basis.rank)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row_for, ks))
    else:
        rows = [row_for(k) for k in ks]
    return SweepResult(
        rows=rows,
        measure=measure,
        far_targets=tuple(float(f) for f in far_targets),
        fit_source=fit_source,
        basis=basis,
    )


def _rank1(values: np.ndarray, probe_ids, gallery_ids) -> float:
    pid = np.asarray(probe_ids)
    gid = np.asarray(gallery_ids)
    included = np.isin(pid, gid)
    if not included.any():
        raise ValueError("no probe identity present in the gallery")
    top = np.argmax(values, axis=1)  # first maximum keeps gallery-order ties
    hits = gid[top] == pid
    return float(np.mean(hits[included]))


def _row_scores(a: np.ndarray, b: np.ndarray, measure: str) -> np.ndarray:
    # similarity of a[i] against b[i], row by row
    dot = np.einsum("ij,ij->i", a, b)
    if measure == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        denom = na * nb
        out = np.zeros_like(dot)
        nz = denom > 0.0
        out[nz] = dot[nz] / denom[nz]
        return out
    sq = np.sum(a * a, axis=1) + np.sum(b * b, axis=1) - 2.0 * dot
    return -np.sqrt(np.maximum(sq, 0.0))


def select_subspace(
    gallery_view: CorpusView,
    measure: str = "cosine",
    *,
    leave_one_out: bool = False,
    aux_gallery: EmbeddingCorpus | None = None,
    aux_label: str | None = None,
) -> SubspaceSelection:
    """Choose the excision prefix from gallery self-identification alone.

    For each k, gallery images are scored against identity templates in
    the excised subspace; k* is the smallest k attaining the maximum
    rank-1. The leave-one-out variant removes each image's own
    contribution from its template (images of single-image identities are
    skipped there).
    """
    if not isinstance(gallery_view, CorpusView) or gallery_view.role != "gallery":
        raise ValueError("select_subspace takes a gallery view")
    _require_identities(gallery_view)
    templates = build_templates(gallery_view)
    if aux_gallery is not None:
        aux_view = aux_gallery.gallery_view()
        _require_identities(aux_view)
        basis = fit_pca(build_templates(aux_view).vectors)
        fit_source = f"aux-templates:{aux_label or ''}"
    else:
        basis = fit_pca(templates.vectors)
        fit_source = "templates"

    identity_ids = np.asarray(gallery_view.identity_ids)
    template_ids = np.asarray(templates.identity_ids)
    col_of = {identity: i for i, identity in enumerate(templates.identity_ids)}
    own_col = np.array([col_of[i] for i in gallery_view.identity_ids])
    counts = np.bincount(own_col, minlength=len(templates))
    counts_per_image = counts[own_col]
    degenerate = bool((counts == 1).all())
    if degenerate:
        warnings.warn(
            "every identity has a single gallery image; self rank-1 is trivial "
            "and k* falls back to 0",
            stacklevel=2,
        )
    loo = leave_one_out and not degenerate
    loo_included = counts_per_image >= 2

    g_coords = project(basis, gallery_view.vectors).coordinates
    t_coords = project(basis, templates.vectors).coordinates

    curve: list[tuple[int, float]] = []
    for k in range(basis.rank):
        g_k = g_coords[:, k:]
        t_k = t_coords[:, k:]
        values = pairwise_scores(g_k, t_k, measure)
        if loo:
            scale = counts_per_image[loo_included, None].astype(np.float64)
            t_own = (scale * t_k[own_col[loo_included]] - g_k[loo_included]) / (scale - 1.0)
            adjusted = _row_scores(g_k[loo_included], t_own, measure)
            values[loo_included, own_col[loo_included]] = adjusted
            top = np.argmax(values[loo_included], axis=1)
            rank1 = float(np.mean(top == own_col[loo_included]))
        else:
            rank1 = _rank1(values, identity_ids, template_ids)
        curve.append((k, rank1))

    rank1s = np.array([r for _, r in curve])
    k_star = int(np.argmax(rank1s))  # first maximum = smallest k
    rule = "smallest-k-max-rank1" + ("-loo" if loo else "")
    return SubspaceSelection(
        k_star=k_star,
        retained=excise_prefix(basis, k_star),
        curve=curve,
        rule=rule,
        fit_source=fit_source,
        gallery_fingerprint=gallery_fingerprint(gallery_view),
        degenerate=degenerate,
        basis=basis,
    )


def _refit_basis(selection: SubspaceSelection, gallery: CorpusView) -> PcaBasis:
    if selection.basis is not None:
        return selection.basis
    if selection.fit_source == "templates":
        return fit_pca(build_templates(gallery).vectors)
    if selection.fit_source.startswith("aux-templates:"):
        aux_path = selection.fit_source.split(":", 1)[1]
        if not aux_path:
            raise ValueError("selection was fitted on an unnamed auxiliary gallery")
        aux = load_corpus(Path(aux_path))
        return fit_pca(build_templates(aux.gallery_view()).vectors)
    raise ValueError(f"unknown fit source {selection.fit_source!r}")


def apply_selection(
    selection: SubspaceSelection,
    corpus: EmbeddingCorpus,
    measure: str = "cosine",
    ks=(1, 20),
    far_targets=(1e-3,),
) -> EvalReport:
    """Evaluate probes against templates in the frozen selected subspace."""
    gallery = corpus.gallery_view()
    if gallery_fingerprint(gallery) != selection.gallery_fingerprint:
        raise ValueError("selection does not match this corpus gallery (fingerprint mismatch)")
    probes = corpus.probe_view()
    templates = build_templates(gallery)
    basis = _refit_basis(selection, gallery)
    if selection.retained and selection.retained[-1] >= basis.rank:
        raise ValueError("selection retained indices exceed the basis rank")
    t_proj = project(basis, templates.vectors, selection.retained)
    p_proj = project(basis, probes.vectors, selection.retained)
    return evaluate_arrays(
        p_proj.coordinates,
        probes.identity_ids,
        t_proj.coordinates,
        templates.identity_ids,
        measure,
        ks,
        far_targets,
        templated=True,
        subspace_descriptor=f"alg2-k={selection.k_star}",
    )


def selection_to_json(selection: SubspaceSelection, config: dict | None = None) -> str:
    return json.dumps(selection.to_json_dict(config), indent=2) + "\n"


def selection_from_json(text: str) -> SubspaceSelection:
    obj = json.loads(text)
    if obj.get("kind") != "subspace_selection":
        raise ValueError("not a subspace selection file")
    return SubspaceSelection(
        k_star=int(obj["k_star"]),
        retained=tuple(int(i) for i in obj["retained"]),
        curve=[(int(k), float(r)) for k, r in obj["curve"]],
        rule=obj["rule"],
        fit_source=obj["fit_source"],
        gallery_fingerprint=obj["gallery_fingerprint"],
        degenerate=bool(obj.get("degenerate", False)),
        basis=None,
    )


def load_selection(path) -> SubspaceSelection:
    return selection_from_json(Path(path).read_text(encoding="utf-8"))


def sweep_to_json(sweep: SweepResult, config: dict | None = None, raw_baseline: dict | None = None) -> str:
    obj: dict = {"kind": "oracle_sweep"}
    if config is not None:
        obj["config"] = config
    obj["measure"] = sweep.measure
    obj["far_targets"] = list(sweep.far_targets)
    obj["fit_source"] = sweep.fit_source
    if raw_baseline is not None:
        obj["raw_baseline"] = raw_baseline
    obj["rows"] = [
        {
            "k": row.k,
            "rank1": row.rank1,
            "map": row.mean_ap,
            "tar_at_far": [[f, t] for f, t in row.tars],
            "auc": row.auc,
        }
        for row in sweep.rows
    ]
    return json.dumps(obj, indent=2) + "\n"
