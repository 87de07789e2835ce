"""Command-line interface: train, evaluate, mode-stats, noise-sweep, spectrum.

Every command writes its artifacts plus a run manifest (full configuration
echo, seeds, dataset fingerprint, timestamps) into --out-dir, so any run can
be reproduced bit-exactly from the manifest alone.  Artifact files themselves
never embed timestamps; identical configurations give identical bytes.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classify import (
    ClassifierConfig,
    Model,
    ModelFormatError,
    classify,
    load_model,
    save_model,
)
from .data import (
    DataError,
    Dataset,
    NoiseSpec,
    add_noise,
    dataset_from_ids,
    load_optdigits,
    read_ids_csv,
    subset_and_split,
    write_ids_csv,
)
from .encoding import BracketExhausted, RootRefinementError, encode, threshold_scale
from .lattice import ArrayParams, EvolutionOverflow
from .spectra import (
    EigendecompositionError,
    STRICT_ZERO_TOL,
    lasing_index,
    neighbor_phase_differences,
    spectral_gap,
    spectrum_rows,
)
from .train import AnnealParams, TrainConfig, dual_anneal, evaluate

USAGE_ERROR, DATA_ERROR, NUMERICAL_ERROR = 1, 2, 3

HIST_FLOOR = 1e-16
HIST_CEIL = 1.0
HIST_BINS = 64          # 4 per decade over 16 decades


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def _fmt(x) -> str:
    """Full-precision, locale-independent number formatting for CSV cells."""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_manifest(out_dir: Path, command: str, args, dataset_path, fingerprints,
                    artifacts, started: str):
    config = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("func", "config") and not k.startswith("_")
    }
    doc = {
        "command": command,
        "argv": sys.argv,
        "package_version": __version__,
        "config": config,
        "dataset": {
            "path": str(dataset_path) if dataset_path else None,
            "file_sha256": _file_sha256(dataset_path) if dataset_path else None,
            **fingerprints,
        },
        "started": started,
        "finished": _utcnow(),
        "artifacts": {k: str(v) for k, v in artifacts.items()},
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def _load_split(dataset: Dataset, split_path, tag) -> Dataset:
    ids = read_ids_csv(split_path)
    return dataset_from_ids(dataset, ids, split_tag=tag)


def _classifier_config(args) -> ClassifierConfig:
    task = args.task.replace("-", "_")
    return ClassifierConfig(
        delta=args.delta,
        target_digit=args.target_digit,
        task=task,
        other_digit=getattr(args, "other_digit", None) if task == "one_vs_one" else None,
        threshold_method=args.threshold_method.replace("-", "_"),
        lse_beta=args.lse_beta,
        encoding_mode=args.encoding,
    )


def _metrics_doc(m) -> dict:
    return {
        "accuracy": m.accuracy,
        "precision": m.precision,
        "recall": m.recall,
        "counts": {"tp": m.tp, "fp": m.fp, "tn": m.tn, "fn": m.fn},
    }


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    started = _utcnow()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_optdigits(args.dataset)
    cc = _classifier_config(args)
    train_set, test_set = subset_and_split(
        dataset,
        task=cc.task,
        target_digit=cc.target_digit,
        total=args.total,
        train_fraction=args.train_fraction,
        seed=args.seed,
        other_digit=cc.other_digit,
    )
    write_ids_csv(out / "split_train.csv", train_set)
    write_ids_csv(out / "split_test.csv", test_set)

    lo, hi = (float(v) for v in args.bounds.split(","))
    tc = TrainConfig(
        budget=args.budget,
        seed=args.seed,
        eta=args.eta,
        bounds=(lo, hi),
        anneal=AnnealParams(
            initial_temperature=args.initial_temp,
            visiting=args.visit,
            acceptance=args.accept,
            restart_ratio=args.restart_ratio,
        ),
        local_search=not args.no_local_search,
        workers=args.workers,
    )
    array = ArrayParams()
    model, report = dual_anneal(
        train_set, array, tc, cc, log_path=out / "training_log.csv"
    )
    save_model(model, out / "model.json")

    metrics = evaluate(model, train_set)
    print(
        f"final cost {report.total_cost:.6f} after {report.evaluations_used} "
        f"evaluations"
    )
    print(
        f"train metrics: accuracy {metrics.accuracy:.4f}, "
        f"precision {metrics.precision if metrics.precision is not None else 'n/a'}, "
        f"recall {metrics.recall if metrics.recall is not None else 'n/a'}"
    )
    _write_manifest(
        out, "train", args, args.dataset,
        {
            "fingerprint": dataset.fingerprint,
            "train_fingerprint": train_set.fingerprint,
            "test_fingerprint": test_set.fingerprint,
        },
        {
            "model": out / "model.json",
            "training_log": out / "training_log.csv",
            "split_train": out / "split_train.csv",
            "split_test": out / "split_test.csv",
        },
        started,
    )
    return 0


def cmd_evaluate(args) -> int:
    started = _utcnow()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(args.model)
    dataset = load_optdigits(args.dataset)
    subset = _load_split(dataset, args.split, "eval")

    rows = []
    tp = fp = tn = fn = 0
    for im in subset:
        r = classify(im, model)
        actual = im.label == model.config.target_digit
        tp += r.yes and actual
        fp += r.yes and not actual
        fn += (not r.yes) and actual
        tn += (not r.yes) and not actual
        rows.append(
            (
                im.id, im.label, r.answer, r.gap, r.alpha,
                r.lasing_eigenvalue.real, r.lasing_eigenvalue.imag,
                r.selected_count, int(r.strictly_zero), int(r.threshold_failed),
            )
        )
    _write_csv(
        out / "per_image.csv",
        [
            "id", "label", "answer", "gap", "alpha", "lasing_re", "lasing_im",
            "selected_count", "strictly_zero", "threshold_failed",
        ],
        rows,
    )
    total = tp + fp + tn + fn
    doc = {
        "accuracy": (tp + tn) / total,
        "precision": tp / (tp + fp) if tp + fp else None,
        "recall": tp / (tp + fn) if tp + fn else None,
        "counts": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
    }
    with open(out / "metrics.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    print(json.dumps(doc))
    _write_manifest(
        out, "evaluate", args, args.dataset,
        {"fingerprint": dataset.fingerprint, "split_fingerprint": subset.fingerprint},
        {"metrics": out / "metrics.json", "per_image": out / "per_image.csv"},
        started,
    )
    return 0


def cmd_mode_stats(args) -> int:
    started = _utcnow()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(args.model)
    dataset = load_optdigits(args.dataset)
    subset = _load_split(dataset, args.split, "stats") if args.split else dataset

    lasing_re = []       # (|Re eps*|, is_target, selected, strictly_zero)
    for im in subset:
        r = classify(im, model)
        if r.threshold_failed:
            continue
        selected = abs(r.lasing_eigenvalue.real) <= model.config.delta
        lasing_re.append(
            (
                abs(r.lasing_eigenvalue.real),
                im.label == model.config.target_digit,
                selected,
                r.strictly_zero,
            )
        )
    values = np.array([v[0] for v in lasing_re])
    is_target = np.array([v[1] for v in lasing_re], dtype=bool)
    selected = np.array([v[2] for v in lasing_re], dtype=bool)
    strictly_zero = np.array([v[3] for v in lasing_re], dtype=bool)

    edges = np.logspace(np.log10(HIST_FLOOR), np.log10(HIST_CEIL), HIST_BINS + 1)
    clipped = np.clip(values, HIST_FLOOR, HIST_CEIL)
    rows = []
    for i in range(HIST_BINS):
        left, right = edges[i], edges[i + 1]
        inside = (clipped >= left) & (
            (clipped < right) if i < HIST_BINS - 1 else (clipped <= right)
        )
        rows.append(
            (left, right, int((inside & is_target).sum()),
             int((inside & ~is_target).sum()))
        )
    _write_csv(
        out / "lasing_re_hist.csv",
        ["bin_lo", "bin_hi", "count_target", "count_other"],
        rows,
    )

    cdf_rows = []
    for name, mask in (("selected", selected), ("nonselected", ~selected)):
        vals = np.sort(clipped[mask])
        for k, v in enumerate(vals, start=1):
            cdf_rows.append((name, v, k / len(vals)))
    _write_csv(out / "lasing_re_cdf.csv", ["group", "value", "cdf"], cdf_rows)

    n_sel = int(selected.sum())
    frac = float((strictly_zero & selected).sum() / n_sel) if n_sel else None
    doc = {
        "images": len(subset),
        "lasing_modes": len(values),
        "selected_lasing_modes": n_sel,
        "strictly_zero_fraction_of_selected": frac,
        "strict_zero_tolerance": STRICT_ZERO_TOL,
    }
    with open(out / "mode_stats.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    print(json.dumps(doc))
    _write_manifest(
        out, "mode-stats", args, args.dataset,
        {"fingerprint": dataset.fingerprint},
        {
            "histogram": out / "lasing_re_hist.csv",
            "cdf": out / "lasing_re_cdf.csv",
            "stats": out / "mode_stats.json",
        },
        started,
    )
    return 0


def cmd_noise_sweep(args) -> int:
    started = _utcnow()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(args.model)
    dataset = load_optdigits(args.dataset)
    subset = _load_split(dataset, args.split, "noise")
    levels = [float(v) for v in args.noise_levels.split(",")]
    target = model.config.target_digit

    def accuracy(images) -> float:
        ok = sum(
            classify(im, model).yes == (im.label == target) for im in images
        )
        return ok / len(images)

    rows = []
    for li, level in enumerate(levels):
        if level == 0:
            # noise is the identity at level 0, so one pass suffices
            acc = accuracy(subset)
            rows.append((level, acc, 0.0, args.realizations))
            continue
        accs = []
        for r in range(args.realizations):
            spec = NoiseSpec(level=level, seed=args.seed + 1_000_003 * li + r)
            noisy = [add_noise(im, spec) for im in subset]
            accs.append(accuracy(noisy))
        rows.append(
            (level, float(np.mean(accs)), float(np.std(accs)), args.realizations)
        )
        print(f"level {level:g}: accuracy {rows[-1][1]:.4f} +- {rows[-1][2]:.4f}")
    _write_csv(
        out / "noise_sweep.csv",
        ["level", "mean_accuracy", "std_accuracy", "realizations"],
        rows,
    )
    _write_manifest(
        out, "noise-sweep", args, args.dataset,
        {"fingerprint": dataset.fingerprint, "split_fingerprint": subset.fingerprint},
        {"noise_sweep": out / "noise_sweep.csv"},
        started,
    )
    return 0


def cmd_spectrum(args) -> int:
    started = _utcnow()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(args.model)
    dataset = load_optdigits(args.dataset)
    matches = [im for im in dataset if im.id == args.image_id]
    if not matches:
        raise DataError(f"image id {args.image_id} not found in {args.dataset}")
    image = matches[0]
    delta = args.delta if args.delta is not None else model.config.delta

    pump = encode(image.pixels, model.transform)
    thr = threshold_scale(
        pump, model.array,
        method=model.config.threshold_method, lse_beta=model.config.lse_beta,
    )
    spec = thr.spectrum_at_threshold
    _write_csv(
        out / "spectrum.csv",
        ["index", "re", "im", "residual", "selected", "is_lasing"],
        spectrum_rows(spec, delta),
    )
    _write_csv(
        out / "pump.csv",
        [f"col{j}" for j in range(model.array.cols)],
        [tuple(row) for row in thr.scaled_pump],
    )
    li = lasing_index(spec)
    _write_csv(
        out / "lasing_phases.csv",
        ["site_a", "site_b", "phase_diff"],
        neighbor_phase_differences(
            spec.eigenvectors[:, li], model.array.rows, model.array.cols
        ),
    )
    g = spectral_gap(spec, delta, model.array.gamma)
    print(
        f"image {image.id} (label {image.label}): alpha {thr.alpha!r}, "
        f"gap {g.gap!r}, answer {'yes' if g.gap > 0 else 'no'}"
    )
    _write_manifest(
        out, "spectrum", args, args.dataset,
        {"fingerprint": dataset.fingerprint},
        {
            "spectrum": out / "spectrum.csv",
            "pump": out / "pump.csv",
            "lasing_phases": out / "lasing_phases.csv",
        },
        started,
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p):
    p.add_argument("--dataset", required=True, help="optdigits CSV path")
    p.add_argument("--out-dir", required=True, help="directory for artifacts")


def _add_model_flags(p):
    p.add_argument("--delta", type=float, default=1e-3,
                   help="spectral selection cutoff")
    p.add_argument("--target-digit", type=int, default=0)
    p.add_argument("--other-digit", type=int, default=1,
                   help="opposing digit for one-vs-one")
    p.add_argument("--task", choices=["one-vs-one", "one-vs-all"],
                   default="one-vs-one")
    p.add_argument("--threshold-method", choices=["exact-max", "lse"],
                   default="exact-max")
    p.add_argument("--lse-beta", type=float, default=200.0)
    p.add_argument("--encoding", choices=["matrix8", "flat64"], default="matrix8")


def build_parser() -> _Parser:
    parser = _Parser(prog="zeromode",
                     description="Nanolaser-array zero-mode image classifier")
    parser.add_argument("--config", help="JSON file of flag defaults; flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[], help="train a transform matrix")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--total", type=int, default=360,
                   help="subset size before the train/test split")
    p.add_argument("--train-fraction", type=float, default=0.75)
    p.add_argument("--eta", type=float, default=4.0, help="tanh scale in the cost")
    p.add_argument("--budget", type=int, required=True,
                   help="max full-dataset cost evaluations")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--bounds", default="-1,1", help="matrix entry bounds lo,hi")
    p.add_argument("--initial-temp", type=float, default=5230.0)
    p.add_argument("--visit", type=float, default=2.62)
    p.add_argument("--accept", type=float, default=-5.0)
    p.add_argument("--restart-ratio", type=float, default=0.02)
    p.add_argument("--no-local-search", action="store_true",
                   help="skip the Nelder-Mead polish")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on a split")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", required=True, help="ids CSV from training")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("mode-stats",
                       help="lasing-mode frequency histogram and CDFs")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", help="optional ids CSV; default whole dataset")
    p.set_defaults(func=cmd_mode_stats)

    p = sub.add_parser("noise-sweep", help="accuracy vs noise level")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--noise-levels", required=True,
                   help="comma-separated levels, fractions of max pixel")
    p.add_argument("--realizations", type=int, default=20)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("spectrum", help="full spectrum dump for one image")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image-id", type=int, required=True)
    p.add_argument("--delta", type=float, default=None,
                   help="override the model's selection cutoff")
    p.set_defaults(func=cmd_spectrum)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()

    # --config supplies defaults; explicit flags win because they re-parse over it
    if "--config" in argv:
        i = argv.index("--config")
        try:
            with open(argv[i + 1], "r", encoding="utf-8") as f:
                config = json.load(f)
        except (IndexError, OSError, json.JSONDecodeError) as err:
            print(f"error: cannot read config: {err}", file=sys.stderr)
            return USAGE_ERROR
        known = {
            a.dest
            for sp in parser._subparsers._group_actions
            for p in sp.choices.values()
            for a in p._actions
        }
        bad = set(config) - known
        if bad:
            print(f"error: unknown config keys: {sorted(bad)}", file=sys.stderr)
            return USAGE_ERROR
        for sp in parser._subparsers._group_actions:
            for p in sp.choices.values():
                p.set_defaults(**{k: v for k, v in config.items()
                                  if k in {a.dest for a in p._actions}})

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ModelFormatError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return DATA_ERROR
    except (
        RootRefinementError,
        BracketExhausted,
        EigendecompositionError,
        EvolutionOverflow,
        np.linalg.LinAlgError,
    ) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return NUMERICAL_ERROR
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
