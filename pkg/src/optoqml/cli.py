"""Command-line pipeline: synth / ingest -> features -> train <model> -> report.

Every stage reads its inputs from, and writes its outputs to, one run
directory. A JSON config (see ``DEFAULT_CONFIG``) fixes all knobs; the
``--seed`` and ``--out`` flags override the config. Stage seeds come from a
stable hash of (master seed, stage name), so any stage can be re-run alone.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, corpus, metrics, qnn, spectra
from .corpus import Dataset, SurrogateParams
from .features import FeaturePipeline
from .qkernel import QuantumKernelSVC
from .svm import KernelSVC

log = logging.getLogger("optoqml")

MODELS = ("svm", "qsvm-exact", "qsvm-noisy", "qnn")
ORDER = ("svm", "qnn", "qsvm-exact", "qsvm-noisy")  # expected accuracy ordering, best first

DEFAULT_CONFIG = {
    "seed": 0,
    "out": "run",
    "dataset": {
        "source": "surrogate",  # or "csv" (descriptor table) or "excitations" (two excitation lists)
        "sigma": 0.2,
        "surrogate": {},  # SurrogateParams overrides
        "path": None,
        "pristine": None,
        "doped": None,
    },
    "sigmas": [0.1, 0.15, 0.2],
    "split": [0.72, 0.19, 0.09],
    "features": {"k": 3, "C": 1.0, "rank_on": "transformed"},
    "svm": {"C": 1.0, "gamma": "scale"},
    "qsvm": {
        "C": 1.0,
        "reps": 1,
        "train_size": 200,
        "test_size": None,
        "shots": 1024,
        "p_noise": 0.05,
        "noisy_seeds": 5,
    },
    "qnn": {
        "layers": 4,
        "reps": 1,
        "final_rotation_layer": False,
        "control": {},  # TrainControl overrides
    },
    "metrics": {"bootstrap": 1000, "perm_repeats": 10, "perm_models": ["svm", "qsvm-exact"]},
}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


# --- config --------------------------------------------------------------

def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if key not in base:
            raise ValueError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict) and key not in ("surrogate", "control"):
            if not isinstance(value, dict):
                raise ValueError(f"config key {where + key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, seed=None, out=None) -> dict:
    """Defaults, then the JSON file, then flags."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        cfg = _merge(cfg, json.loads(Path(path).read_text()))
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = str(out)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    ds = cfg["dataset"]
    source = ds["source"]
    if source == "surrogate":
        SurrogateParams.from_dict(ds["surrogate"])
    elif source == "csv":
        if not ds["path"] or not Path(ds["path"]).is_file():
            raise ValueError(f"dataset.path {ds['path']!r} does not exist")
    elif source == "excitations":
        for key in ("pristine", "doped"):
            if not ds[key] or not Path(ds[key]).is_file():
                raise ValueError(f"dataset.{key} {ds[key]!r} does not exist")
    else:
        raise ValueError(f"dataset.source must be surrogate, csv or excitations, got {source!r}")
    if not ds["sigma"] > 0 or not all(s > 0 for s in cfg["sigmas"]):
        raise ValueError("broadening widths must be positive")
    if len(cfg["split"]) != 3:
        raise ValueError("split needs train/val/test fractions")
    q = cfg["qsvm"]
    if q["train_size"] < 2 or (q["test_size"] is not None and q["test_size"] < 2):
        raise ValueError("qsvm subsample sizes must be >= 2")
    if not 0 <= q["p_noise"] <= 1 or q["shots"] < 1 or q["noisy_seeds"] < 1:
        raise ValueError("invalid qsvm shots / p_noise / noisy_seeds")
    qnn.TrainControl(**cfg["qnn"]["control"])
    unknown = set(cfg["metrics"]["perm_models"]) - set(MODELS)
    if unknown:
        raise ValueError(f"unknown models in metrics.perm_models: {sorted(unknown)}")


def config_hash(cfg: dict) -> str:
    """Hash of everything that shapes the results; the output location is left out."""
    body = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def stage_seed(master: int, stage: str) -> int:
    digest = hashlib.sha256(f"{int(master)}/{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


# --- run directory -------------------------------------------------------

class RunDir:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.root = Path(cfg["out"])
        self.data = self.root / "data"
        self.features = self.root / "features"
        self.models = self.root / "models"
        self.manifest_path = self.root / "manifest.json"

    def model_dir(self, model: str) -> Path:
        return self.models / model

    def manifest(self) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text())
        return {"code_version": __version__, "stages": {}}

    def begin(self, stage: str, seed: int | None) -> None:
        """Record the stage as started before it writes anything else."""
        self.root.mkdir(parents=True, exist_ok=True)
        m = self.manifest()
        m["config_hash"] = config_hash(self.cfg)
        m["code_version"] = __version__
        m["master_seed"] = self.cfg["seed"]
        m["stages"][stage] = {"seed": seed, "status": "running", "started": _now(), "outputs": []}
        self._write(m)

    def finish(self, stage: str, outputs) -> None:
        m = self.manifest()
        entry = m["stages"][stage]
        entry["status"] = "done"
        entry["finished"] = _now()
        entry["outputs"] = sorted(str(Path(p).relative_to(self.root)) for p in outputs)
        self._write(m)

    def _write(self, m: dict) -> None:
        self.manifest_path.write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _claim(path: Path, force: bool, stage: str) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise StageError(stage, f"{path} already exists (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def write_table(dataset: Dataset, path: Path) -> Path:
    """CSV with an ``id`` column (row index in the full dataset), features, label."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + dataset.feature_names + [corpus.LABEL_COLUMN])
        for i, row, label in zip(dataset.index.tolist(), dataset.X.tolist(), dataset.y.tolist()):
            w.writerow([i] + [repr(v) for v in row] + [label])
    return path


def read_table(path: Path) -> Dataset:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "id" or rows[0][-1] != corpus.LABEL_COLUMN:
        raise corpus.SchemaError(f"{path}: expected id,<features>,{corpus.LABEL_COLUMN} header")
    body = rows[1:]
    X = np.array([[float(v) for v in r[1:-1]] for r in body], dtype=float)
    return Dataset(rows[0][1:-1], X, [int(r[-1]) for r in body], path.name, [int(r[0]) for r in body])


# --- stages --------------------------------------------------------------

def _write_splits(run: RunDir, dataset: Dataset) -> list:
    parts = corpus.split(dataset, run.cfg["split"], stage_seed(run.cfg["seed"], "split"))
    outputs = []
    for name, rows in zip(("train", "val", "test"), parts):
        path = run.data / f"split_{name}.idx"
        corpus.write_indices(rows, path)
        outputs.append(path)
    return outputs


def _write_profiles(run: RunDir, systems, grid) -> Path:
    """Broadened A(E) for every system at every configured width."""
    path = run.data / "profiles.csv"
    cols, header = [], ["E_eV"]
    for sigma in run.cfg["sigmas"]:
        for s in systems:
            cols.append(spectra.broaden(s, grid, sigma).values)
            header.append(f"A_{s.system_id}_sigma{sigma:g}")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, e in enumerate(grid.tolist()):
            w.writerow([repr(e)] + [repr(float(c[i])) for c in cols])
    return path


def _system_file(run: RunDir, label: int) -> Path:
    return run.data / f"excitations_{corpus.CLASS_NAMES[label].replace(':', '_')}.csv"


def cmd_synth(cfg: dict, force: bool = False) -> list:
    run = RunDir(cfg)
    ds_cfg = cfg["dataset"]
    if ds_cfg["source"] != "surrogate":
        raise StageError("synth", "synth needs dataset.source = 'surrogate'")
    seed = stage_seed(cfg["seed"], "synth")
    _claim(run.data, force, "synth")
    run.begin("synth", seed)
    params = SurrogateParams.from_dict(ds_cfg["surrogate"])
    systems, dataset = corpus.synth_dataset(params, ds_cfg["sigma"], seed)
    outputs = []
    for label, s in enumerate(systems):
        path = _system_file(run, label)
        spectra.write_excitations_csv(s, path)
        outputs.append(path)
    path = run.data / "dataset.csv"
    corpus.export_csv(dataset, path)
    outputs += [path, _write_profiles(run, systems, params.grid())]
    outputs += _write_splits(run, dataset)
    outputs.append(_write_json(run.data / "surrogate.json", {"params": params.to_dict(), "sigma": ds_cfg["sigma"],
                                                             "seed": seed}))
    run.finish("synth", outputs)
    return outputs


def cmd_ingest(cfg: dict, force: bool = False) -> list:
    run = RunDir(cfg)
    ds_cfg = cfg["dataset"]
    _claim(run.data, force, "ingest")
    run.begin("ingest", None)
    outputs = []
    if ds_cfg["source"] == "csv":
        dataset = corpus.ingest_csv(ds_cfg["path"])
    elif ds_cfg["source"] == "excitations":
        params = SurrogateParams.from_dict(ds_cfg["surrogate"])
        systems = [spectra.read_excitations_csv(ds_cfg[key], corpus.CLASS_NAMES[label])
                   for label, key in enumerate(("pristine", "doped"))]
        scale = corpus.kappa_scale(systems, params, ds_cfg["sigma"])
        records = [r for label, s in enumerate(systems)
                   for r in corpus.build_records(s, params, ds_cfg["sigma"], label, scale)]
        dataset = corpus.records_to_dataset(records)
        for label, s in enumerate(systems):
            path = _system_file(run, label)
            spectra.write_excitations_csv(s, path)
            outputs.append(path)
        outputs.append(_write_profiles(run, systems, params.grid()))
    else:
        raise StageError("ingest", "ingest needs dataset.source = 'csv' or 'excitations'")
    path = run.data / "dataset.csv"
    corpus.export_csv(dataset, path)
    outputs.append(path)
    outputs += _write_splits(run, dataset)
    run.finish("ingest", outputs)
    return outputs


def _load_split(run: RunDir, stage: str):
    path = run.data / "dataset.csv"
    if not path.exists():
        raise StageError(stage, f"{path} not found; run synth or ingest first")
    dataset = corpus.ingest_csv(path)
    return [dataset.take(corpus.read_indices(run.data / f"split_{name}.idx")) for name in ("train", "val", "test")]


def cmd_features(cfg: dict, force: bool = False) -> list:
    run = RunDir(cfg)
    train, val, test = _load_split(run, "features")
    _claim(run.features, force, "features")
    run.begin("features", None)
    fc = cfg["features"]
    pipe = FeaturePipeline(fc["k"], fc["C"], fc["rank_on"]).fit(train)
    outputs = [run.features / "pipeline.json"]
    pipe.save(outputs[0])
    outputs.append(_write_json(run.features / "ranking.json", {
        "ranking": pipe.ranking.to_dict()["ranking"], "selected": pipe.selected}))
    for name, part in (("train", train), ("val", val), ("test", test)):
        outputs.append(write_table(pipe.transform(part), run.features / f"{name}.csv"))
    run.finish("features", outputs)
    return outputs


def _load_features(run: RunDir, stage: str):
    paths = [run.features / f"{name}.csv" for name in ("train", "val", "test")]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise StageError(stage, f"missing feature tables {missing}; run features first")
    return [read_table(p) for p in paths]


def _evaluate(cfg, name, preds, scores, labels, extra) -> metrics.EvalReport:
    return metrics.evaluate(name, preds, scores, labels, cfg["metrics"]["bootstrap"],
                            stage_seed(cfg["seed"], f"bootstrap/{name}"), extra)


def _importance(cfg, name, predict, test: Dataset) -> dict:
    pi = metrics.permutation_importance(predict, test.X, test.y, test.feature_names,
                                        cfg["metrics"]["perm_repeats"], stage_seed(cfg["seed"], f"perm/{name}"))
    return pi.to_dict()


def _qsvm_data(cfg, train: Dataset, test: Dataset):
    q = cfg["qsvm"]
    sub = corpus.subsample(train, min(q["train_size"], len(train)), stage_seed(cfg["seed"], "qsvm-subsample"))
    if q["test_size"] is not None:
        test = corpus.subsample(test, min(q["test_size"], len(test)), stage_seed(cfg["seed"], "qsvm-test-subsample"))
    return sub, test


def cmd_train(cfg: dict, model: str, force: bool = False) -> list:
    if model not in MODELS:
        raise StageError("train", f"unknown model {model!r}; choose from {', '.join(MODELS)}")
    run = RunDir(cfg)
    stage = f"train/{model}"
    train, val, test = _load_features(run, stage)
    out = run.model_dir(model)
    _claim(out, force, stage)
    seed = stage_seed(cfg["seed"], model)
    run.begin(stage, seed)
    do_perm = model in cfg["metrics"]["perm_models"] and cfg["metrics"]["perm_repeats"] > 0
    extra = {"features": train.feature_names}
    outputs = []

    if model == "svm":
        est = KernelSVC(C=cfg["svm"]["C"], kernel="rbf", gamma=cfg["svm"]["gamma"]).fit(train.X, train.y)
        preds, scores = est.predict(test.X), est.decision_function(test.X)
        extra["train_accuracy"] = metrics.accuracy(est.predict(train.X), train.y)
        if do_perm:
            extra["permutation_importance"] = _importance(cfg, model, est.predict, test)
        outputs.append(_write_json(out / "model.json", est.to_dict()))

    elif model in ("qsvm-exact", "qsvm-noisy"):
        q = cfg["qsvm"]
        sub, qtest = _qsvm_data(cfg, train, test)
        extra.update(train_size=len(sub), test_size=len(qtest))
        if model == "qsvm-exact":
            runs = [QuantumKernelSVC(C=q["C"], reps=q["reps"], mode="exact", seed=seed)]
        else:
            runs = [QuantumKernelSVC(C=q["C"], reps=q["reps"], mode="shots", shots=q["shots"],
                                     p_noise=q["p_noise"], seed=stage_seed(cfg["seed"], f"{model}/{i}"))
                    for i in range(q["noisy_seeds"])]
        accs, aucs = [], []
        for i, est in enumerate(runs):
            est.fit(sub.X, sub.y)
            s = est.decision_function(qtest.X)
            p = est.classes_[(s >= 0).astype(int)]
            accs.append(metrics.accuracy(p, qtest.y))
            aucs.append(metrics.roc_auc(s, qtest.y)[1])
            if i == 0:
                preds, scores, first = p, s, est
        test = qtest
        extra["train_accuracy"] = metrics.accuracy(first.predict(sub.X), sub.y)
        extra["gram_min_eigenvalue"] = first.gram_train_.min_eigenvalue()
        if model == "qsvm-noisy":
            extra.update(seed_accuracies=accs, seed_aucs=aucs, mean_accuracy=float(np.mean(accs)),
                         mean_auc=float(np.mean(aucs)), p_noise=q["p_noise"], shots=q["shots"])
        if do_perm:
            extra["permutation_importance"] = _importance(cfg, model, first.predict, test)
        first.gram_train_.row_ids = first.gram_train_.col_ids = sub.index.tolist()
        gpath = out / "gram_train.csv"
        first.gram_train_.to_csv(gpath)
        outputs += [gpath, _write_json(out / "model.json", first.to_dict())]

    else:
        qc = cfg["qnn"]
        spec = qnn.AnsatzSpec(train.X.shape[1], qc["layers"], qc["final_rotation_layer"])
        fmap = qnn.FeatureMapSpec(train.X.shape[1], qc["reps"])
        control = qnn.TrainControl(**qc["control"])
        init = qnn.QnnModel.init(spec, seed, fmap)
        best, history = qnn.train((train.X, train.y), (val.X, val.y), init, control, seed)
        proba = best.predict_proba(test.X)[:, 1]
        preds, scores = (proba > 0.5).astype(int), proba
        extra.update(best_epoch=history.best_epoch, epochs_run=len(history.rows),
                     train_accuracy=metrics.accuracy(np.argmax(best.logits(train.X), axis=1), train.y))
        if do_perm:
            extra["permutation_importance"] = _importance(
                cfg, model, lambda X: np.argmax(best.logits(X), axis=1), test)
        hpath = out / "history.csv"
        history.to_csv(hpath)
        ckpt = dict(best.to_dict(), control=control.to_dict())
        outputs += [hpath, _write_json(out / "model.json", ckpt)]

    report = _evaluate(cfg, model, preds, scores, test.y, extra)
    for fname, writer in (("report.json", report.to_json), ("roc.csv", report.roc_to_csv),
                          ("confusion.csv", report.confusion_to_csv)):
        writer(out / fname)
        outputs.append(out / fname)
    run.finish(stage, outputs)
    return outputs


def headline_accuracy(report: dict) -> float:
    """Mean over noise seeds when present, else the single-run accuracy."""
    return report["extra"].get("mean_accuracy", report["accuracy"])


def ordering_holds(accs: dict) -> bool | None:
    if not all(m in accs for m in ORDER):
        return None
    return all(accs[a] >= accs[b] for a, b in zip(ORDER, ORDER[1:]))


def cmd_report(cfg: dict, force: bool = True) -> list:
    run = RunDir(cfg)
    reports = {}
    for model in MODELS:
        path = run.model_dir(model) / "report.json"
        if path.exists():
            reports[model] = json.loads(path.read_text())
    if not reports:
        raise StageError("report", f"no trained models under {run.models}")
    run.begin("report", None)
    accs = {m: headline_accuracy(r) for m, r in reports.items()}
    ordering = ordering_holds(accs)
    rows = []
    for m, r in reports.items():
        ci = r["accuracy_ci"]
        rows.append({"model": m, "accuracy": accs[m], "auc": r["extra"].get("mean_auc", r["auc"]),
                     "accuracy_ci": [ci["lower"], ci["upper"]], "n_test": r["n"]})
    ranking = json.loads((run.features / "ranking.json").read_text()) if (run.features / "ranking.json").exists() else None
    summary = {"config_hash": config_hash(cfg), "seed": cfg["seed"], "models": rows, "ordering": ordering,
               "features": ranking, "importance": {m: r["extra"]["permutation_importance"]
                                                   for m, r in reports.items()
                                                   if "permutation_importance" in r["extra"]}}
    jpath = _write_json(run.root / "report.json", summary)
    lines = ["| model | ACC | AUC | ACC 95% CI | N test |", "|---|---|---|---|---|"]
    for row in rows:
        lo, hi = row["accuracy_ci"]
        lines.append(f"| {row['model']} | {row['accuracy']:.3f} | {row['auc']:.3f} | [{lo:.3f}, {hi:.3f}] | {row['n_test']} |")
    flag = "n/a (not all four models trained)" if ordering is None else str(ordering).lower()
    lines += ["", f"ordering ACC(svm) >= ACC(qnn) >= ACC(qsvm-exact) >= ACC(qsvm-noisy): {flag}", ""]
    mpath = run.root / "report.md"
    mpath.write_text("\n".join(lines))
    run.finish("report", [jpath, mpath])
    return [jpath, mpath]


def run_all(cfg: dict, force: bool = False) -> list:
    outputs = (cmd_synth if cfg["dataset"]["source"] == "surrogate" else cmd_ingest)(cfg, force)
    outputs += cmd_features(cfg, force)
    for model in MODELS:
        outputs += cmd_train(cfg, model, force)
    return outputs + cmd_report(cfg)


# --- entry point ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="run directory (overrides config)")
    common.add_argument("--force", action="store_true", help="overwrite existing stage outputs")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="optoqml", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate the surrogate corpus and splits")
    ing = sub.add_parser("ingest", parents=[common], help="load a descriptor CSV or two excitation lists")
    ing.add_argument("--input", help="descriptor CSV (sets dataset.source = csv)")
    ing.add_argument("--pristine", help="pristine excitation CSV")
    ing.add_argument("--doped", help="doped excitation CSV")
    sub.add_parser("features", parents=[common], help="fit Box-Cox + ranking, write top-k tables")
    tr = sub.add_parser("train", parents=[common], help="train and evaluate one model")
    tr.add_argument("model", choices=MODELS)
    sub.add_parser("report", parents=[common], help="merge model reports into one table")
    sub.add_parser("run", parents=[common], help="all stages in order")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    stage = args.command
    try:
        cfg_overrides = {}
        if stage == "ingest":
            if args.input:
                cfg_overrides = {"source": "csv", "path": args.input}
            elif args.pristine or args.doped:
                cfg_overrides = {"source": "excitations", "pristine": args.pristine, "doped": args.doped}
        cfg = load_config(args.config, args.seed, args.out) if not cfg_overrides else None
        if cfg is None:
            base = json.loads(Path(args.config).read_text()) if args.config else {}
            base.setdefault("dataset", {}).update(cfg_overrides)
            cfg = _merge(DEFAULT_CONFIG, base)
            if args.seed is not None:
                cfg["seed"] = args.seed
            if args.out is not None:
                cfg["out"] = args.out
            validate_config(cfg)
        if stage == "synth":
            outputs = cmd_synth(cfg, args.force)
        elif stage == "ingest":
            outputs = cmd_ingest(cfg, args.force)
        elif stage == "features":
            outputs = cmd_features(cfg, args.force)
        elif stage == "train":
            stage = f"train/{args.model}"
            outputs = cmd_train(cfg, args.model, args.force)
        elif stage == "report":
            outputs = cmd_report(cfg)
        else:
            outputs = run_all(cfg, args.force)
    except StageError as exc:
        print(f"[{exc.stage}] error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"[{stage}] error: {exc}", file=sys.stderr)
        return 1
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
