"""Command-line entry point: one subcommand per pipeline.

Every run writes its outputs under ``--out`` plus ``run_manifest.json``
listing each file with its SHA-256.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, explain, fusion, retrieval
from .bags import load_dataset, read_manifest
from .config import FIT_TASKS, SUBCOMMANDS, build_config, load_config_file
from .errors import BagKernelError, ValidationError
from .machines import cv as cvmod
from .machines.model import load_model, predict_from_kernel, save_model
from .machines.survival import SurvivalRecord, censor, fit_survival
from .machines.svm import fit_svc, fit_svr
from .matrices import DistanceMatrix, KernelMatrix, load_matrix, save_matrix
from .mmd import PatchKernelParams, median_gamma, pairwise_distances, to_kernel

log = logging.getLogger("bagkernel")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--manifest")
    p.add_argument("--dist", help="SMM1 distance matrix")
    p.add_argument("--kernel", action="append", help="SMM1 kernel matrix (repeat for fuse)")
    p.add_argument("--model")
    p.add_argument("--topics")
    p.add_argument("--input", help="CSV input for stats")
    p.add_argument("--sensitivity", help="sensitivity CSV from explain")
    p.add_argument("--out")
    p.add_argument("--label", help="manifest label column")
    p.add_argument("--site", help="manifest column restricting retrieval pools")
    p.add_argument("--time-col", dest="time_col")
    p.add_argument("--event-col", dest="event_col")
    p.add_argument("--bag", action="append", help="bag id to explain (repeatable)")
    p.add_argument("--sigma", type=float)
    p.add_argument("--topic-sigma", dest="topic_sigma", type=float)
    p.add_argument("--gamma", help="'median' or a number")
    p.add_argument("--alpha", type=float)
    p.add_argument("--C", dest="C", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--medoids", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--val-frac", dest="val_frac", type=float)
    p.add_argument("--mode", choices=("sum", "product"))
    p.add_argument("--no-rescale", dest="rescale", action="store_const", const=False)
    p.add_argument("--n-clusters", dest="n_clusters", type=int)
    p.add_argument("--which", choices=("spearman", "auc", "cindex", "km", "logrank", "wilcoxon"))
    p.add_argument("--censor-years", dest="censor_years", type=float)
    p.add_argument("--block", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def make_parser():
    parser = _Parser(prog="bagkernel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        if name == "fit":
            p.add_argument("--task", choices=FIT_TASKS, required=True)
        _add_common(p)
    return parser


# ------------------------------------------------------------ helpers

def _need(cfg, *names):
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        raise ValidationError(f"{cfg.command} needs --{', --'.join(m.replace('_', '-') for m in missing)}")


def _gamma_for(cfg, D: DistanceMatrix, ids=None) -> float:
    if cfg.gamma == "median":
        return median_gamma(D.restrict(ids) if ids is not None else D)
    return float(cfg.gamma)


def _kernel_input(cfg, ids=None) -> KernelMatrix:
    """The kernel named by --kernel, or exp(-gamma D) from --dist."""
    if cfg.kernel:
        K = load_matrix(cfg.kernel[0])
        if not isinstance(K, KernelMatrix):
            raise ValidationError(f"{cfg.kernel[0]} holds a distance matrix, not a kernel")
        return K
    _need(cfg, "dist")
    D = load_matrix(cfg.dist)
    if not isinstance(D, DistanceMatrix):
        raise ValidationError(f"{cfg.dist} holds a kernel, not a distance matrix")
    return to_kernel(D, _gamma_for(cfg, D, ids))


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return Path(path)


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Path(path)


def _fmt(x):
    return repr(float(x))


def survival_labels(manifest, time_col="time", event_col="event", horizon=10.0) -> dict:
    """id -> SurvivalRecord from manifest columns, censored at ``horizon`` years.

    Rows with a missing value or a non-positive time are left out.
    """
    times = manifest.labels(time_col)
    events = manifest.labels(event_col)
    out = {}
    for i in manifest.ids:
        if i not in times or i not in events:
            continue
        t = float(times[i])
        if t <= 0:
            log.warning("dropping %s: non-positive survival time %g", i, t)
            continue
        out[i] = SurvivalRecord(i, t, int(float(events[i])))
    return dict(zip(out, censor(out.values(), horizon)))


def _task_labels(cfg, manifest):
    if cfg.task == "surv":
        return survival_labels(manifest, cfg.time_col, cfg.event_col, cfg.censor_years)
    _need(cfg, "label")
    if cfg.label not in manifest.label_columns:
        raise ValidationError(f"manifest has no column {cfg.label!r}")
    raw = manifest.labels(cfg.label)
    if cfg.task == "svr":
        return {i: float(v) for i, v in raw.items()}
    classes = sorted(set(raw.values()))
    if len(classes) != 2:
        raise ValidationError(f"column {cfg.label!r} must hold two classes, found {classes}")
    try:
        pos = max(classes, key=float)
    except ValueError:
        pos = classes[1]
    return {i: (1.0 if v == pos else -1.0) for i, v in raw.items()}


# ------------------------------------------------------------ pipelines

def cmd_kernel(cfg, out):
    _need(cfg, "manifest")
    ds = load_dataset(cfg.manifest)
    D = pairwise_distances(ds, PatchKernelParams(cfg.sigma), cfg.block, cfg.threads)
    return save_matrix(out / "distances.smm", D)


def cmd_transform(cfg, out):
    _need(cfg, "dist")
    D = load_matrix(cfg.dist)
    if not isinstance(D, DistanceMatrix):
        raise ValidationError(f"{cfg.dist} is not a distance matrix")
    return save_matrix(out / "kernel.smm", to_kernel(D, _gamma_for(cfg, D)))


def _retrieval_inputs(cfg):
    _need(cfg, "manifest")
    manifest = read_manifest(cfg.manifest)
    K = _kernel_input(cfg)
    patients = manifest.patients()
    sites = manifest.labels(cfg.site) if cfg.site else None
    labels = manifest.labels(cfg.label) if cfg.label else {}
    return K, patients, sites, labels


def cmd_retrieve(cfg, out):
    K, patients, sites, labels = _retrieval_inputs(cfg)
    rows = []
    for q in K.ids:
        res = retrieval.query_top_k(K, patients, q, cfg.k, sites)
        for rank, (nid, sim) in enumerate(res.neighbors, 1):
            rows.append([q, rank, nid, _fmt(sim), labels.get(nid, "")])
    return [_write_csv(out / "retrieval.csv",
                       ["query_id", "rank", "neighbor_id", "similarity", "neighbor_label"], rows)]


def cmd_eval_retrieval(cfg, out):
    _need(cfg, "label")
    K, patients, sites, labels = _retrieval_inputs(cfg)
    K = K.restrict([i for i in K.ids if i in labels])
    results = {q: retrieval.query_top_k(K, patients, q, cfg.k, sites) for q in K.ids}
    report = retrieval.mmv_report(K, patients, labels, cfg.k, sites, results)
    per_query = []
    for q in K.ids:
        for rank, (nid, sim) in enumerate(results[q].neighbors, 1):
            per_query.append([q, rank, nid, _fmt(sim), labels[nid]])
    counts = {}
    for q in K.ids:
        counts[labels[q]] = counts.get(labels[q], 0) + 1
    summary = [[lab, counts[lab], _fmt(v)] for lab, v in report.per_label.items()]
    summary.append(["macro", len(K.ids), _fmt(report.macro)])
    summary.append(["micro", len(K.ids), _fmt(report.micro)])
    return [
        _write_csv(out / "retrieval.csv",
                   ["query_id", "rank", "neighbor_id", "similarity", "neighbor_label"], per_query),
        _write_csv(out / f"mmv_at_{cfg.k}.csv", ["label", "n_queries", "mmv"], summary),
    ]


def _matrix_for_fit(cfg):
    if cfg.kernel:
        return load_matrix(cfg.kernel[0])
    _need(cfg, "dist")
    return load_matrix(cfg.dist)


def cmd_fit(cfg, out):
    _need(cfg, "manifest")
    manifest = read_manifest(cfg.manifest)
    labels = _task_labels(cfg, manifest)
    matrix = _matrix_for_fit(cfg)
    task = "survival" if cfg.task == "surv" else cfg.task
    if cfg.folds:
        return _run_cv(cfg, out, matrix, labels, manifest, task)
    ids = [i for i in matrix.ids if i in labels]
    if isinstance(matrix, DistanceMatrix):
        gamma = _gamma_for(cfg, matrix, ids)
        K = to_kernel(matrix.restrict(ids), gamma)
    else:
        K = matrix.restrict(ids)
    Kv = K.values
    if task == "svr":
        model = fit_svr(Kv, [labels[i] for i in ids], cfg.C, cfg.epsilon, train_ids=ids)
    elif task == "svc":
        model = fit_svc(Kv, [labels[i] for i in ids], cfg.C, train_ids=ids)
    else:
        model = fit_survival(Kv, [labels[i] for i in ids], cfg.alpha, train_ids=ids)
    model = model.with_meta(sigma=K.sigma, gamma=K.gamma, estimator=K.estimator,
                            provenance=K.provenance)
    return [save_model(out / "model.json", model)]


def _run_cv(cfg, out, matrix, labels, manifest, task):
    if task == "survival":
        if cfg.mode or not isinstance(matrix, DistanceMatrix):
            grid = [{"alpha": a} for a in cvmod.alpha_grid()]
            objective = (lambda params, value: -value + params["alpha"])
        else:
            grid = [{"alpha": cfg.alpha, "gamma_scale": 1.0}]
            objective = None
    else:
        grid, objective = None, None
        if not isinstance(matrix, DistanceMatrix):
            grid = [p for p in cvmod.default_grid(task) if p.get("gamma_scale", 1.0) == 1.0]
    res = cvmod.cross_validate(matrix, labels, task, cfg.folds, cfg.val_frac,
                               patients=manifest.patients(), grid=grid, objective=objective,
                               seed=cfg.seed, threads=cfg.threads)
    fold_rows, pred_rows = [], []
    for f in res.folds:
        params = json.dumps(f.params, sort_keys=True)
        fold_rows.append([f.fold, res.metric_name, _fmt(f.metric),
                          "" if f.gamma is None else _fmt(f.gamma),
                          "" if f.logrank_p is None else _fmt(f.logrank_p), params])
        for i, s in zip(f.test_ids, f.predictions):
            pred_rows.append([f.fold, i, _fmt(s)])
    summary = {"task": task, "metric": res.metric_name, "folds": len(res.folds),
               "mean": res.mean, "sd": res.sd, "logrank_p": res.logrank_p}
    return [
        _write_csv(out / "cv_folds.csv",
                   ["fold", "metric", "value", "gamma", "logrank_p", "params"], fold_rows),
        _write_csv(out / "cv_predictions.csv", ["fold", "id", "score"], pred_rows),
        _write_json(out / "cv_summary.json", summary),
    ]


def cmd_predict(cfg, out):
    _need(cfg, "model")
    model = load_model(cfg.model)
    if cfg.kernel:
        K = _kernel_input(cfg)
    else:
        _need(cfg, "dist")
        D = load_matrix(cfg.dist)
        K = to_kernel(D, float(model.kernel_meta["gamma"]))
    query = [i for i in K.ids if i not in set(model.train_ids)] or list(K.ids)
    scores = predict_from_kernel(model, K, query)
    return [_write_csv(out / "predictions.csv", ["id", "score"],
                       [[i, _fmt(s)] for i, s in zip(query, scores)])]


def _coords(manifest, bag_id, n):
    row = manifest.row(bag_id)
    path = row.labels.get("coords", "")
    if not path:
        return None
    p = Path(path)
    if not p.is_absolute():
        p = manifest.base_dir / p
    xy = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
    if xy.shape[0] != n:
        raise ValidationError(f"{p}: {xy.shape[0]} coordinates for {n} patches")
    return xy


def cmd_explain(cfg, out):
    _need(cfg, "model", "manifest")
    model = load_model(cfg.model)
    ds = load_dataset(cfg.manifest)
    targets = cfg.bag or [i for i in ds.ids if i not in set(model.train_ids)]
    # the model's own kernel meta unless overridden (a mismatch is then refused)
    sigma = cfg.sigma if "sigma" in cfg.explicit else model.kernel_meta.get("sigma")
    gamma = model.kernel_meta.get("gamma") if cfg.gamma == "median" else cfg.gamma
    rows = []
    for bid in targets:
        bag = ds.bag(bid)
        smap = explain.patch_sensitivity(model, ds, bag, sigma, gamma, cfg.block)
        xy = _coords(ds.manifest, bid, bag.n)
        for j, (d, z) in enumerate(zip(smap.deltas, smap.normalized)):
            extra = ["", ""] if xy is None else [_fmt(xy[j, 0]), _fmt(xy[j, 1])]
            rows.append([bid, j, _fmt(d), _fmt(z), *extra])
    return [_write_csv(out / "sensitivity.csv",
                       ["bag_id", "patch_index", "delta", "normalized", "x", "y"], rows)]


def _read_sensitivity(path, ds):
    deltas = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            deltas.setdefault(rec["bag_id"], []).append((int(rec["patch_index"]), float(rec["delta"])))
    entries = []
    for bid, items in deltas.items():
        items.sort()
        d = np.array([v for _, v in items])
        entries.append((ds.bag(bid), explain.SensitivityMap(bid, d, explain.minmax_normalize(d), 0.0)))
    return entries


def cmd_medoids(cfg, out):
    _need(cfg, "sensitivity", "manifest")
    ds = load_dataset(cfg.manifest)
    entries = _read_sensitivity(cfg.sensitivity, ds)
    files = []
    for mode, name in (("max", "high"), ("min", "low")):
        cands = explain.extreme_patches(entries, mode, cfg.seed)
        chosen = explain.representative_patches(cands, cfg.medoids)
        files.append(_write_csv(out / f"medoids_{name}.csv",
                                ["patch_id", "bag_id", "patch_index", "patient_id", "score"],
                                [[c.id, c.bag_id, c.patch_index, c.patient_id, _fmt(c.score)]
                                 for c in chosen]))
    return files


def cmd_topics(cfg, out):
    _need(cfg, "topics")
    K = fusion.topic_kernel(fusion.read_topics(cfg.topics), cfg.topic_sigma)
    return save_matrix(out / "topic_kernel.smm", K)


def cmd_fuse(cfg, out):
    if not cfg.kernel or len(cfg.kernel) < 2:
        raise ValidationError("fuse needs at least two --kernel inputs")
    if cfg.mode is None:
        raise ValidationError("fuse needs an explicit --mode (sum or product)")
    kernels = [load_matrix(p) for p in cfg.kernel]
    if not all(isinstance(K, KernelMatrix) for K in kernels):
        raise ValidationError("fuse inputs must be kernel matrices")
    fused = fusion.combine(fusion.align(kernels), cfg.mode, cfg.rescale)
    return save_matrix(out / f"fused_{cfg.mode}.smm", fused)


def cmd_cluster(cfg, out):
    K = _kernel_input(cfg)
    dendro = analysis.ward_cluster(analysis.kernel_to_distance(K), K.ids)
    labels = dendro.cut(cfg.n_clusters)
    merges = [[int(a), int(b), _fmt(h), int(s)] for a, b, h, s in dendro.merges]
    return [
        _write_csv(out / "dendrogram.csv", ["left", "right", "height", "size"], merges),
        _write_csv(out / "clusters.csv", ["id", "cluster"],
                   [[i, int(c)] for i, c in zip(K.ids, labels)]),
    ]


def cmd_export(cfg, out):
    if cfg.kernel:
        M = load_matrix(cfg.kernel[0])
    else:
        _need(cfg, "dist")
        M = load_matrix(cfg.dist)
    return analysis.export_distances(M, out / "matrix.csv")


def _column(rows, name):
    try:
        return np.array([float(r[name]) for r in rows])
    except KeyError:
        raise ValidationError(f"input lacks column {name!r}") from None


def cmd_stats(cfg, out):
    _need(cfg, "input", "which")
    with Path(cfg.input).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    which = cfg.which
    result = {"statistic": which}
    if which == "spearman":
        rho, p = analysis.spearman(_column(rows, "y_true"), _column(rows, "y_pred"))
        result.update(value=rho, p_value=p)
    elif which == "auc":
        res = analysis.auc_roc(_column(rows, "label").astype(int), _column(rows, "score"))
        result.update(value=res.auc, strength=res.strength)
    elif which == "wilcoxon":
        result.update(p_value=analysis.wilcoxon_signed_rank(_column(rows, "a"), _column(rows, "b")))
    else:
        t, e = _column(rows, "time"), _column(rows, "event").astype(int)
        recs = censor([SurvivalRecord(str(n), float(a), int(b)) for n, (a, b) in enumerate(zip(t, e))],
                      cfg.censor_years)
        risk = _column(rows, "risk")
        if which == "cindex":
            result.update(value=analysis.concordance_index(recs, risk))
        else:
            groups = (np.array([r["group"] for r in rows]) if rows and "group" in rows[0]
                      else analysis.median_split(risk, risk))
            if which == "logrank":
                lr = analysis.logrank(recs, groups)
                result.update(statistic_value=lr.statistic, p_value=lr.p_value)
            else:
                curves = analysis.km_curve(recs, groups)
                km_rows = [[_fmt(t_), _fmt(s), int(n), g] for g, c in curves.items()
                           for t_, s, n in zip(c.times, c.survival, c.at_risk)]
                return [_write_csv(out / "km.csv", ["time", "survival", "at_risk", "group"], km_rows)]
    return [_write_json(out / f"stats_{which}.json", result)]


COMMANDS = {
    "kernel": cmd_kernel, "transform": cmd_transform, "retrieve": cmd_retrieve,
    "eval-retrieval": cmd_eval_retrieval, "fit": cmd_fit, "predict": cmd_predict,
    "explain": cmd_explain, "medoids": cmd_medoids, "topics": cmd_topics, "fuse": cmd_fuse,
    "cluster": cmd_cluster, "export": cmd_export, "stats": cmd_stats,
}


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run(cfg) -> list:
    """Execute one pipeline and write ``run_manifest.json``; returns produced paths."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    produced = [Path(p) for p in COMMANDS[cfg.command](cfg, out)]
    entries = [{"path": p.name, "sha256": sha256(p)} for p in produced]
    _write_json(out / "run_manifest.json", {"command": cfg.command, "config": cfg.to_dict(),
                                            "files": entries})
    return produced


def main(argv=None) -> int:
    parser = make_parser()
    try:
        ns = parser.parse_args(argv)
        values = vars(ns)
        config_path = values.pop("config", None)
        verbose = values.pop("verbose", False)
        file_values = load_config_file(config_path) if config_path else {}
        cfg = build_config(values, file_values)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (ValidationError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"bagkernel: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(cfg)
    except (BagKernelError, KeyError, OSError, ValueError) as exc:
        print(f"bagkernel: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
