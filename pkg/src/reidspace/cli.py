"""Command-line front end.

Subcommands: synth, eval, pca-eval, oracle-sweep, select, probe. Outputs
are deterministic: identical inputs, flags, and seeds reproduce every
output file byte for byte. Exit codes: 0 success, 2 validation error
(bad flags or malformed inputs), 1 unexpected runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import metrics, plots, probes, subspace, synth

_MEASURES = {"cosine": "cosine", "euclidean": "negative_euclidean"}


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rank list {text!r}")
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError(f"ranks must be positive: {text!r}")
    return ks


def _parse_attr(text: str) -> synth.AttributeSpec:
    parts = text.rsplit(":", 2)
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected name:classes:norm, got {text!r}")
    try:
        return synth.AttributeSpec(parts[0], int(parts[1]), float(parts[2]))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected name:classes:norm, got {text!r}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, attr="corpus") -> corpus_mod.EmbeddingCorpus:
    return corpus_mod.load_corpus(getattr(args, attr), getattr(args, "format", None))


def _far_targets(args) -> tuple[float, ...]:
    return tuple(args.far) if args.far else (1e-3,)


def _write_report(out: Path, report: metrics.EvalReport, config: dict) -> None:
    (out / "report.json").write_text(
        metrics.report_to_json(report, config), encoding="utf-8"
    )
    (out / "report.csv").write_text(metrics.report_to_csv(report), encoding="utf-8")
    plots.render_report(report, out / "report.png")


def _report_summary(name: str, report: metrics.EvalReport, out: Path) -> str:
    return (
        f"{name}: auc={report.auc:.4f} map={report.mean_ap:.4f} "
        f"rank1={report.rank(report.cmc[0][0]):.4f} -> {out}"
    )


def cmd_synth(args) -> int:
    config = synth.SynthConfig(
        dimension=args.dim,
        identities=args.identities,
        gallery_per_identity=args.gallery,
        probe_per_identity=args.probes,
        identity_variance=args.id_var,
        identity_dim=args.id_dim,
        nuisance_variance=args.nuis_var,
        nuisance_dim=args.nuis_dim,
        noise_variance=args.noise_var,
        attributes=tuple(args.attr or ()),
        offset_norm=args.offset_norm,
        dataset=args.dataset,
        seed=args.seed,
    )
    generated, truth = synth.generate(config)
    out = _out_dir(args)
    corpus_path = out / "corpus.emb1"
    corpus_mod.write_corpus(generated, corpus_path, "bin")
    synth.write_ground_truth(truth, out / "ground_truth.json")
    print(f"synth: wrote {len(generated)} records (d={generated.dimension}) -> {out}")
    return 0


def cmd_eval(args) -> int:
    measure = _MEASURES[args.measure]
    if args.exclude_same_dataset and args.selection:
        raise ValueError(
            "cannot combine --selection with --exclude-same-dataset "
            "(template galleries have no dataset tags)"
        )
    if args.exclude_same_dataset and args.templated:
        raise ValueError("same-dataset exclusion requires an image-level gallery")
    loaded = _load(args)
    far = _far_targets(args)
    config = {
        "command": "eval",
        "corpus": str(args.corpus),
        "measure": measure,
        "templated": bool(args.templated or args.selection),
        "ks": list(args.ks),
        "far_targets": list(far),
        "selection": str(args.selection) if args.selection else None,
        "exclude_same_dataset": bool(args.exclude_same_dataset),
    }
    if args.selection:
        selection = subspace.load_selection(args.selection)
        report = subspace.apply_selection(selection, loaded, measure, args.ks, far)
    else:
        gallery = (
            corpus_mod.build_templates(loaded) if args.templated else loaded.gallery_view()
        )
        report = metrics.evaluate(
            loaded.probe_view(),
            gallery,
            measure,
            args.ks,
            far,
            exclude_same_dataset=args.exclude_same_dataset,
        )
    out = _out_dir(args)
    _write_report(out, report, config)
    print(_report_summary("eval", report, out))
    return 0


def cmd_pca_eval(args) -> int:
    measure = _MEASURES[args.measure]
    loaded = _load(args)
    aux = corpus_mod.load_corpus(args.aux_gallery) if args.aux_gallery else None
    far = _far_targets(args)
    config = {
        "command": "pca-eval",
        "corpus": str(args.corpus),
        "measure": measure,
        "fit_on": args.fit_on,
        "templated": bool(args.templated),
        "ks": list(args.ks),
        "far_targets": list(far),
        "aux_gallery": str(args.aux_gallery) if args.aux_gallery else None,
    }
    report = subspace.pca_eval(
        loaded,
        measure,
        args.fit_on,
        templated=args.templated,
        ks=args.ks,
        far_targets=far,
        aux_gallery=aux,
    )
    out = _out_dir(args)
    _write_report(out, report, config)
    print(_report_summary("pca-eval", report, out))
    return 0


def cmd_oracle_sweep(args) -> int:
    measure = _MEASURES[args.measure]
    loaded = _load(args)
    aux = corpus_mod.load_corpus(args.aux_gallery) if args.aux_gallery else None
    far = _far_targets(args)
    config = {
        "command": "oracle-sweep",
        "corpus": str(args.corpus),
        "measure": measure,
        "far_targets": list(far),
        "aux_gallery": str(args.aux_gallery) if args.aux_gallery else None,
        "workers": args.workers,
    }
    sweep = subspace.oracle_sweep(
        loaded, measure, far, aux_gallery=aux, workers=args.workers
    )
    # raw templated numbers give the horizontal baselines in the figure
    raw = metrics.evaluate(
        loaded.probe_view(), corpus_mod.build_templates(loaded), measure, (1,), far
    )
    baseline = {"rank1": raw.cmc[0][1], "map": raw.mean_ap, "auc": raw.auc}
    for f, t in raw.tar_at_far:
        baseline[f"tar_far_{f:g}"] = t
    out = _out_dir(args)
    (out / "sweep.csv").write_text(sweep.to_csv(), encoding="utf-8")
    (out / "sweep.json").write_text(
        subspace.sweep_to_json(sweep, config, baseline), encoding="utf-8"
    )
    plots.render_sweep(sweep, out / "sweep.png", baseline)
    best_k, best = sweep.best_rank1()
    print(f"oracle-sweep: {len(sweep.rows)} rows, best rank1={best:.4f} at k={best_k} -> {out}")
    return 0


def cmd_select(args) -> int:
    measure = _MEASURES[args.measure]
    loaded = _load(args)
    aux = corpus_mod.load_corpus(args.aux_gallery) if args.aux_gallery else None
    config = {
        "command": "select",
        "corpus": str(args.corpus),
        "measure": measure,
        "leave_one_out": bool(args.leave_one_out),
        "aux_gallery": str(args.aux_gallery) if args.aux_gallery else None,
    }
    selection = subspace.select_subspace(
        loaded.gallery_view(),
        measure,
        leave_one_out=args.leave_one_out,
        aux_gallery=aux,
        aux_label=str(args.aux_gallery) if args.aux_gallery else None,
    )
    out = _out_dir(args)
    (out / "selection.json").write_text(
        subspace.selection_to_json(selection, config), encoding="utf-8"
    )
    plots.render_selection(selection, out / "selection.png")
    at_star = dict(selection.curve)[selection.k_star]
    print(f"select: k*={selection.k_star} (self rank1={at_star:.4f}) -> {out}")
    return 0


def cmd_probe(args) -> int:
    loaded = _load(args)
    config = {
        "command": "probe",
        "corpus": str(args.corpus),
        "attribute": args.attribute,
        "fraction": args.fraction,
        "seed": args.seed,
        "learning_rate": args.lr,
        "max_epochs": args.epochs,
        "l2": args.l2,
        "tolerance": args.tol,
    }
    probe_config = probes.ProbeConfig(
        learning_rate=args.lr, max_epochs=args.epochs, l2=args.l2, tolerance=args.tol
    )
    report, model = probes.run_attribute_probe(
        loaded, args.attribute, args.fraction, args.seed, probe_config
    )
    out = _out_dir(args)
    (out / "probe.json").write_text(
        json.dumps(report.to_json_dict(config), indent=2) + "\n", encoding="utf-8"
    )
    probes.save_probe_model(model, out / "model.emb1")
    plots.render_probe(report, out / "probe.png")
    auc_text = "n/a" if report.auc is None else f"{report.auc:.4f}"
    print(f"probe[{args.attribute}]: accuracy={report.accuracy:.4f} auc={auc_text} -> {out}")
    return 0


def _add_corpus_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", required=True, help="corpus file (csv or EMB1 binary)")
    p.add_argument("--format", choices=corpus_mod.FORMATS, default=None,
                   help="corpus format (default: by suffix)")


def _add_metric_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--measure", choices=sorted(_MEASURES), default="cosine")
    p.add_argument("--ks", type=_parse_ks, default=(1, 20),
                   help="comma-separated CMC ranks (default 1,20)")
    p.add_argument("--far", action="append", type=float, default=None,
                   help="FAR target, repeatable (default 1e-3)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reidspace",
        description="evaluation and principal-subspace editing for re-identification embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus with planted structure")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--identities", type=int, default=20)
    p.add_argument("--gallery", type=int, default=4, help="gallery images per identity")
    p.add_argument("--probes", type=int, default=2, help="probe images per identity")
    p.add_argument("--id-var", type=float, default=1.0, help="identity block variance")
    p.add_argument("--id-dim", type=int, default=8, help="identity block dimension")
    p.add_argument("--nuis-var", type=float, default=0.0, help="nuisance block variance")
    p.add_argument("--nuis-dim", type=int, default=1, help="nuisance block dimension")
    p.add_argument("--noise-var", type=float, default=0.0, help="per-coordinate noise variance")
    p.add_argument("--attr", action="append", type=_parse_attr, default=None,
                   metavar="NAME:CLASSES:NORM", help="planted attribute, repeatable")
    p.add_argument("--offset-norm", type=float, default=0.0,
                   help="norm of the corpus-wide offset vector")
    p.add_argument("--dataset", default="synth", help="dataset tag stamped on records")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="evaluate probes against the gallery")
    _add_corpus_flags(p)
    _add_metric_flags(p)
    p.add_argument("--templated", action="store_true",
                   help="compare against per-identity templates instead of images")
    p.add_argument("--selection", default=None,
                   help="selection.json: evaluate in its frozen subspace")
    p.add_argument("--exclude-same-dataset", action="store_true",
                   help="drop same-dataset gallery entries from each probe's mAP ranking")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pca-eval", help="evaluate in the full retained PCA rank")
    _add_corpus_flags(p)
    _add_metric_flags(p)
    p.add_argument("--fit-on", choices=subspace.FIT_SOURCES, default="images",
                   help="fit PCA on gallery images or templates")
    p.add_argument("--templated", action="store_true")
    p.add_argument("--aux-gallery", default=None,
                   help="fit PCA on this corpus's gallery instead")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pca_eval)

    p = sub.add_parser("oracle-sweep", help="probe metrics for every excision prefix k")
    _add_corpus_flags(p)
    p.add_argument("--measure", choices=sorted(_MEASURES), default="cosine")
    p.add_argument("--far", action="append", type=float, default=None)
    p.add_argument("--aux-gallery", default=None)
    p.add_argument("--workers", type=int, default=1, help="parallel sweep workers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle_sweep)

    p = sub.add_parser("select", help="choose the excision prefix from the gallery alone")
    _add_corpus_flags(p)
    p.add_argument("--measure", choices=sorted(_MEASURES), default="cosine")
    p.add_argument("--leave-one-out", action="store_true",
                   help="remove each image's own contribution from its template")
    p.add_argument("--aux-gallery", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("probe", help="train and evaluate a linear attribute probe")
    _add_corpus_flags(p)
    p.add_argument("--attribute", required=True,
                   help="attribute name, or 'dataset' for dataset-of-origin")
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (corpus_mod.CorpusError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
