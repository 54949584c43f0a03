"""Subject-level cross-validation of the full pipeline.

Per cohort: group ICA (label-free, once), a template of ``n_regions`` maps,
and per-subject spatial similarity from the subject-specific IC maps. Per
fold: a model is initialised, the training partition is balanced on its
fused features, the model is trained and the held-out subjects are scored.
Test partitions are frozen views and never reach the sampler.

Every random stage draws from ``derive_seed(cfg.seed, stage, ...)``.
"""
from __future__ import annotations

import dataclasses
import json
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
import multiprocessing

import numpy as np
from threadpoolctl import threadpool_limits

from ..afgru import TrainingSet, init_model, predict, train
from ..config import ExperimentConfig
from ..ica import group_decompose
from ..rsnreg import spatial_regression, synth_template
from ..sampling import LabeledSet, as_test, balance
from ..seeding import derive_seed, stage_rng
from ..stfa import StfaBatch, aggregate_batch
from ..stfa import init_params as init_stfa_params
from .baselines import baseline_fit_predict
from .folds import FoldPlan, make_folds
from .metrics import confusion, metrics

METRIC_KEYS = ("acc", "sen", "ppv", "f1", "recall", "auc")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage


@dataclass
class PreparedCohort:
    subject_ids: list
    labels: np.ndarray
    timecourses: np.ndarray  # B x T x N
    similarity: np.ndarray  # B x N x R
    ica: dict


@dataclass
class ExperimentResult:
    report: dict
    timing: dict

    @property
    def ok(self) -> bool:
        return self.report["status"] == "ok"


def prepare(scans, cfg: ExperimentConfig) -> PreparedCohort:
    """Decompose the cohort and regress subject IC maps on the template."""
    try:
        dec = group_decompose(scans, cfg.n_ics, seed=derive_seed(cfg.seed, "ica"), allow_unconverged=True)
    except Exception as err:
        raise StageError("decompose", err) from err
    try:
        voxels = scans[0].data.shape[1]
        template = synth_template(cfg.n_regions, voxels, seed=derive_seed(cfg.seed, "template"))
        sim = np.array([spatial_regression(m, template) for m in dec.subject_maps])
    except Exception as err:
        raise StageError("regress", err) from err
    return PreparedCohort(
        subject_ids=[s.subject_id for s in scans],
        labels=np.array([s.label for s in scans], dtype=np.int64),
        timecourses=np.array(dec.timecourses),
        similarity=sim,
        ica={"converged": dec.converged, "final_delta": dec.final_delta, "n_components": cfg.n_ics},
    )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


def _recurrent_fold(prep: PreparedCohort, tr, te, cfg: ExperimentConfig, fold: int) -> tuple:
    stfa_cfg, model_cfg = cfg.effective_models()
    dtype = np.float32 if cfg.train.precision == "float32" else np.float64
    y = prep.labels
    train_batch = StfaBatch(prep.timecourses[tr], prep.similarity[tr], stfa_cfg, dtype)
    test_batch = StfaBatch(_frozen(prep.timecourses[te]), _frozen(prep.similarity[te]), stfa_cfg, dtype)

    model = init_model(stfa_cfg, model_cfg, cfg.n_ics, cfg.n_regions, seed=derive_seed(cfg.seed, "init", fold))
    rows = aggregate_batch(train_batch, {k: v.astype(dtype) for k, v in model.params.items()}).data
    train_set = LabeledSet(rows.reshape(len(tr), -1), y[tr], role="train")
    sampler = dataclasses.replace(cfg.sampler, seed=derive_seed(cfg.seed, "sampler", fold))
    balanced = balance(train_set, sampler)
    ids = [prep.subject_ids[i] for i in tr]
    names = [ids[a] if a == b else f"synthetic({ids[a]},{ids[b]},u={u:.4f})"
             for (a, b), u in zip(balanced.origin, balanced.step)]
    data = TrainingSet(train_batch, balanced.labels.astype(np.float64), balanced.origin, balanced.step, names)
    fitted = train(model, data, cfg.train)
    scores = predict(fitted, test_batch)
    extra = {"final_loss": fitted.curve["loss"][-1] if fitted.curve.get("loss") else None,
             "fusion_weights": [float(w) for w in fitted.weights]}
    return scores, balanced.info, extra


def _flat_fold(prep: PreparedCohort, tr, te, cfg: ExperimentConfig, fold: int) -> tuple:
    # baselines see fused features from fixed, seeded STFA kernels
    stfa_cfg = cfg.stfa
    params = init_stfa_params(stfa_cfg, stage_rng(cfg.seed, "baseline-stfa"))
    feats = aggregate_batch(StfaBatch(prep.timecourses, prep.similarity, stfa_cfg), params).data
    feats = feats.reshape(len(prep.labels), -1)
    train_set = LabeledSet(feats[tr], prep.labels[tr], role="train")
    test_set = as_test(LabeledSet(feats[te], prep.labels[te]))
    sampler = dataclasses.replace(cfg.sampler, seed=derive_seed(cfg.seed, "sampler", fold))
    balanced = balance(train_set, sampler)
    scores = baseline_fit_predict(cfg.classifier, balanced, test_set)
    return scores, balanced.info, {}


def run_fold(prep: PreparedCohort, plan: FoldPlan, fold: int, cfg: ExperimentConfig) -> dict:
    """Train on every fold but ``fold`` and evaluate on ``fold``; errors are recorded, not raised."""
    tr, te = plan.split(fold, prep.subject_ids)
    entry = {"fold": fold, "test_ids": [prep.subject_ids[i] for i in te],
             "n_train": int(len(tr)), "n_test": int(len(te))}
    stage = "train"
    try:
        with threadpool_limits(1):
            if cfg.classifier in ("stanet", "plain_gru"):
                scores, info, extra = _recurrent_fold(prep, tr, te, cfg, fold)
            else:
                scores, info, extra = _flat_fold(prep, tr, te, cfg, fold)
        stage = "evaluate"
        labels = prep.labels[te]
        c = confusion(scores, labels)
        m = metrics(c, scores, labels, allow_undefined_auc=True)
    except Exception as err:  # recorded per fold; the experiment is marked failed
        entry.update(status="failed", error=str(StageError(stage, err)),
                     traceback=traceback.format_exc(limit=3))
        return entry
    entry.update(
        status="ok",
        scores=[float(s) for s in scores],
        labels=[int(v) for v in labels],
        confusion=c.to_dict(),
        metrics=m.to_dict(),
        balance={"strategy": info["strategy"], "counts": {str(k): v for k, v in info["counts"].items()},
                 "k_used": info["k_used"], "fallback": info["fallback"]},
        **extra,
    )
    return entry


def aggregate(fold_entries: list) -> dict:
    """Unweighted mean of each metric over the successful folds."""
    ok = [f for f in fold_entries if f["status"] == "ok"]
    out = {}
    for key in METRIC_KEYS:
        vals = [f["metrics"][key] for f in ok if f["metrics"][key] is not None]
        out[key] = float(np.mean(vals)) if vals else None
    out["n_folds"] = len(ok)
    out["n_auc_folds"] = sum(1 for f in ok if f["metrics"]["auc"] is not None)
    return out


def _pool_init():
    threadpool_limits(1)


def _fold_task(args):
    return run_fold(*args)


def run_experiment(scans, cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    """Cross-validate ``cfg`` on ``scans``; fold order and worker count never change the report."""
    workers = cfg.workers if workers is None else workers
    t0 = time.perf_counter()
    with threadpool_limits(1):
        prep = prepare(scans, cfg)
    t_prep = time.perf_counter() - t0
    plan = make_folds(prep.subject_ids, prep.labels, k=cfg.folds, seed=derive_seed(cfg.seed, "folds"))
    tasks = [(prep, plan, f, cfg) for f in range(plan.k)]
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_pool_init) as pool:
            entries = list(pool.map(_fold_task, tasks))
    else:
        entries = [_fold_task(t) for t in tasks]
    entries.sort(key=lambda e: e["fold"])
    n_failed = sum(1 for e in entries if e["status"] != "ok")
    report = {
        "config": cfg.resolved(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "classifier": cfg.classifier,
        "ablation": cfg.effective_ablation,
        "balanced_on": "fused STFA features of the training partition",
        "ica": prep.ica,
        "folds": entries,
        "aggregate": aggregate(entries),
        "n_failed": n_failed,
        "status": "ok" if n_failed == 0 else "failed",
    }
    timing = {"config_hash": report["config_hash"], "prepare_seconds": t_prep,
              "total_seconds": time.perf_counter() - t0, "workers": workers}
    return ExperimentResult(report, timing)


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def report_table(report: dict, timing: dict | None = None) -> str:
    """Aligned per-fold metric table with the fold mean as the last row."""
    head = ["fold"] + list(METRIC_KEYS) + ["status"]
    rows = []
    for f in report["folds"]:
        if f["status"] == "ok":
            vals = [_fmt(f["metrics"][k]) for k in METRIC_KEYS]
        else:
            vals = ["-"] * len(METRIC_KEYS)
        rows.append([str(f["fold"])] + vals + [f["status"]])
    agg = report["aggregate"]
    rows.append(["mean"] + [_fmt(agg[k]) for k in METRIC_KEYS] + [report["status"]])
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    line = lambda r: "  ".join(c.rjust(w) for c, w in zip(r, widths))
    out = [f"classifier={report['classifier']} ablation={report['ablation']} "
           f"seed={report['seed']} config={report['config_hash']}",
           line(head), line(["-" * w for w in widths])]
    out += [line(r) for r in rows]
    for f in report["folds"]:
        if f["status"] != "ok":
            out.append(f"fold {f['fold']} failed: {f['error']}")
    if timing:
        out.append(f"wall time {timing['total_seconds']:.1f} s")
    return "\n".join(out) + "\n"


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"
