"""Training runs on IDX data and the CSV/JSON reports built from them."""

import csv
import json
import math
from pathlib import Path

from .estimators import RunRecord, SharedLogisticRegression, SplitMLPClassifier

FIELDS = ("batch", "elapsed_s", "val_accuracy", "loss", "mode")
MODELS = {"logistic": SharedLogisticRegression, "dnn": SplitMLPClassifier}


def train(model, ds, mode, steps, seed=0, transport=None, eval_every=100, **params):
    """Fit ``model`` ("logistic" or "dnn") on ``ds`` and return its RunRecords."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return []
    X, Y = ds.train()
    Xv, Yv = ds.validation()
    est = MODELS[model](mode=mode, n_steps=steps, random_state=seed, transport=transport,
                        eval_every=eval_every, **params)
    est.fit(X, Y.argmax(axis=1), Xv, Yv.argmax(axis=1))
    return list(est.history_)


def train_logistic(ds, mode, steps, seed=0, transport=None, **params):
    return train("logistic", ds, mode, steps, seed, transport, **params)


def train_dnn(ds, mode, steps, seed=0, transport=None, **params):
    return train("dnn", ds, mode, steps, seed, transport, **params)


# -- reports -----------------------------------------------------------------


def write_records(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(FIELDS)
        for r in records:
            w.writerow([r.batch, repr(r.elapsed_s), repr(r.val_accuracy), repr(r.loss), r.mode])
    return path


def read_records(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [RunRecord(int(r["batch"]), float(r["elapsed_s"]), float(r["val_accuracy"]), float(r["loss"]), r["mode"])
            for r in rows]


def slowdown(runs):
    """Framework elapsed time over local elapsed time, per model, at the last common checkpoint."""
    out = {}
    for model in {name.rsplit("-", 1)[0] for name in runs}:
        fw, lo = runs.get(f"{model}-framework"), runs.get(f"{model}-local")
        if not fw or not lo:
            continue
        common = sorted({r.batch for r in fw} & {r.batch for r in lo})
        if not common:
            continue
        t_fw = next(r.elapsed_s for r in fw if r.batch == common[-1])
        t_lo = next(r.elapsed_s for r in lo if r.batch == common[-1])
        out[model] = t_fw / t_lo if t_lo > 0 else math.inf
    return out


def emit_report(out_dir, runs):
    """Write ``<run>.csv`` per run, ``comparison.csv`` and ``curves.json``.

    ``runs`` maps a run name such as ``"logistic-framework"`` to its records.
    The comparison file has one row per (run, checkpoint); the JSON holds one
    series per run, usable directly as vega-lite ``data.values``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: write_records(out_dir / f"{name}.csv", recs) for name, recs in runs.items()}
    with open(out_dir / "comparison.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("run",) + FIELDS)
        for name, recs in runs.items():
            for r in recs:
                w.writerow([name, r.batch, repr(r.elapsed_s), repr(r.val_accuracy), repr(r.loss), r.mode])
    curves = {
        "runs": {name: [{f: getattr(r, f) for f in FIELDS} for r in recs] for name, recs in runs.items()},
        "values": [{"run": name, **{f: getattr(r, f) for f in FIELDS}} for name, recs in runs.items() for r in recs],
        "slowdown": slowdown(runs),
    }
    with open(out_dir / "curves.json", "w") as f:
        json.dump(curves, f, indent=1)
    paths["comparison"] = out_dir / "comparison.csv"
    paths["curves"] = out_dir / "curves.json"
    return paths
