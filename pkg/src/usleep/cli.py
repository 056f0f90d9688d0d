"""Command-line interface.

Every subcommand takes ``--seed`` and ``--config FILE`` (``key=value`` lines,
keys named like the long flags with dashes or underscores). Flags given on
the command line override the file; the resolved configuration is echoed.
The store root defaults to ``$USLEEP_STORE``.

Exit codes: 0 success, 1 data error, 2 configuration error.
"""
import argparse
import datetime as _dt
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import DatasetManifest, ManifestEntry, age_group, group_name, split
from .diagnostics import TOL_32, TOL_64, run_suite
from .edf_io import parse_derivation_config, read_edf, read_hypnogram
from .exceptions import CheckpointError, ConfigError, ContractError, IneligibleRecordingError, ParseError, \
    SamplingError, USleepError
from .model import ArchitectureConfig, build, convert_to_sabn, load_checkpoint, save_checkpoint
from .preprocess import preprocess_recording
from .sampler import Sampler, SamplerConfig, format_draw_log, sample_sequence
from .store import STORE_ENV, list_recordings, load_recording, recording_dir, save_recording, store_root
from .synthetic import read_metadata, synthetic_cohort, write_cohort
from .train_eval import EvalReport, TrainConfig, evaluate, paired_ttest, train

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2
REGIMES = ("dt", "scratch", "finetune", "finetune_sabn", "finetune_independent")
_NOT_CONFIG = {"command", "config", "func"}


# -- configuration -------------------------------------------------------------

def read_config_file(path):
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(parser, sub, argv):
    """Parse ``argv``; values from ``--config`` fill in flags that were not given."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = read_config_file(args.config)
        known = {a.dest: a for a in sub[args.command]._actions}
        unknown = sorted(set(values) - set(known) - _NOT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config keys for '{args.command}': {', '.join(unknown)}")
        defaults = {}
        for key, value in values.items():
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            elif action.nargs in ("*", "+") or isinstance(action, argparse._AppendAction):
                defaults[key] = [action.type(v) if action.type else v for v in value.split(",") if v.strip()]
            else:
                defaults[key] = value
        sub[args.command].set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def echo_config(args, out=None):
    lines = []
    for key in sorted(vars(args)):
        if key in ("func",):
            continue
        value = getattr(args, key)
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    text = "\n".join(lines) + "\n"
    (out or sys.stdout).write("# resolved configuration\n" + text)
    return text


# -- helpers -------------------------------------------------------------------

def _manifest_path(root, dataset):
    return Path(root) / "datasets" / f"{dataset}.json"


def _load_manifest(root, dataset):
    path = _manifest_path(root, dataset)
    if not path.is_file():
        raise FileNotFoundError(f"no manifest for dataset {dataset!r} at {path}")
    return DatasetManifest.load(path)


def _recordings(root, datasets, split_name):
    """Preprocessed recordings of ``split_name`` for each dataset, as ``{dataset: [recordings]}``."""
    out = {}
    for ds in datasets:
        manifest = _load_manifest(root, ds)
        if manifest.split_seed is None and split_name != "all":
            raise ConfigError(f"dataset {ds!r} has not been split; run 'split' first")
        entries = manifest.entries if split_name == "all" else manifest.subset(split_name)
        out[ds] = [load_recording(recording_dir(root, e.record_id)) for e in entries]
    return out


def _flatten(by_dataset):
    return [r for recs in by_dataset.values() for r in recs]


def _run_dir(args, root):
    if args.run_dir:
        path = Path(args.run_dir)
    else:
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
        path = Path(root) / "runs" / f"{stamp}_{args.regime}_seed{args.seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _arch(args, rate, epoch_s):
    return ArchitectureConfig(depth=args.depth, base_filters=args.base_filters, filter_growth=args.filter_growth,
                              kernel_size=args.kernel_size, rate=rate, epoch_s=epoch_s)


def _train_config(args):
    return TrainConfig(lr=args.lr, patience=args.patience, max_iterations=args.max_iterations,
                       batches_per_iteration=args.batches_per_iteration, batch_size=args.batch_size,
                       seed=args.seed, target_f1=args.target_f1)


def _sampler(args, datasets, n_groups, rate, epoch_s):
    cfg = SamplerConfig(alpha=args.alpha, L=args.sequence_length, rate=rate, epoch_s=epoch_s, seed=args.seed,
                        n_groups=n_groups)
    return Sampler(datasets, cfg, augment=not args.no_augment, dtype=np.dtype(args.dtype))


def _write_eval(run_dir, report, stem="eval"):
    (run_dir / f"{stem}.csv").write_text(report.to_csv())
    (run_dir / f"{stem}.txt").write_text(report.to_text())


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args):
    recs = synthetic_cohort(args.n, n_epochs=args.epochs, rate=args.rate, seed=args.seed, dataset_id=args.dataset)
    out = write_cohort(recs, args.out)
    print(f"wrote {len(recs)} synthetic recordings to {out}")
    return EXIT_OK


def cmd_ingest(args):
    root = store_root(args.store)
    edf_dir, hyp_dir = Path(args.edf_dir), Path(args.hyp_dir)
    if not edf_dir.is_dir():
        raise FileNotFoundError(f"EDF directory {edf_dir} does not exist")
    metadata = read_metadata(args.metadata) if args.metadata else {}
    recommended = parse_derivation_config(Path(args.derivations).read_text()) if args.derivations else None
    rng = np.random.default_rng(args.seed)
    dataset = args.dataset or edf_dir.name
    entries, problems = [], 0
    for path in sorted(edf_dir.glob("*.edf")) + sorted(edf_dir.glob("*.EDF")):
        rid = path.stem
        hyp_path = next((p for p in (hyp_dir / f"{rid}.txt", hyp_dir / f"{rid}.hyp") if p.is_file()), None)
        if hyp_path is None:
            print(f"SKIP {rid}: missing hypnogram in {hyp_dir}")
            problems += 1
            continue
        try:
            rec = read_edf(path, record_id=rid, dataset_id=dataset)
            rec.hypnogram = read_hypnogram(hyp_path)
            if rid in metadata:
                rec.subject = metadata[rid]
            pre = preprocess_recording(rec, mode=args.mode, rng=rng, recommended=recommended)
        except (ParseError, IneligibleRecordingError, OSError, ValueError) as err:
            print(f"SKIP {rid}: {err}")
            problems += 1
            continue
        save_recording(pre, root)
        s = pre.subject
        entries.append(ManifestEntry(rid, s.subject_id, str(recording_dir(root, rid)), s.family_id,
                                     s.age_years, s.sex))
        usable = ",".join(c.label for c in pre.channels if c.usable)
        excluded = "; ".join(f"{k}: {v}" for k, v in pre.excluded.items())
        print(f"OK   {rid}: {pre.n_epochs} epochs, channels {usable}" + (f", excluded {excluded}" if excluded else ""))
    if not entries:
        print("no recordings ingested", file=sys.stderr)
        return EXIT_DATA
    manifest = DatasetManifest(dataset, entries)
    manifest.save(_manifest_path(root, dataset))
    print(f"stored {len(entries)} recordings in dataset {dataset!r} ({problems} skipped) under {root}")
    return EXIT_OK


def cmd_split(args):
    root = store_root(args.store)
    manifest = split(_load_manifest(root, args.dataset), seed=args.seed)
    manifest.save(_manifest_path(root, args.dataset))
    counts = {k: len(manifest.subset(k)) for k in ("train", "val", "test")}
    print(f"{args.dataset}: " + ", ".join(f"{k}={v}" for k, v in counts.items()) + f" (seed {args.seed})")
    return EXIT_OK


def _check_train_args(args):
    if args.regime in ("dt", "finetune", "finetune_sabn", "finetune_independent") and not args.checkpoint:
        raise ConfigError(f"regime {args.regime!r} needs --checkpoint")
    if args.regime in ("finetune_sabn", "finetune_independent") and args.groups < 2:
        raise ConfigError(f"regime {args.regime!r} needs --groups 2 or 7")
    if args.groups not in (1, 2, 7):
        raise ConfigError(f"--groups must be 1, 2 or 7, got {args.groups}")
    if args.regime == "scratch" and args.checkpoint:
        raise ConfigError("regime 'scratch' does not take --checkpoint")


def cmd_train(args):
    _check_train_args(args)
    root = store_root(args.store)
    train_sets = _recordings(root, args.dataset, "train")
    val_sets = _recordings(root, args.dataset, "val")
    test_sets = _recordings(root, args.dataset, "test")
    first = _flatten(train_sets)[0] if _flatten(train_sets) else _flatten(test_sets)[0]
    rate, epoch_s = first.rate, first.epoch_s
    run_dir = _run_dir(args, root)
    with open(run_dir / "config.txt", "w") as f:
        echo_config(args, f)
    echo_config(args)
    tcfg = _train_config(args)
    dtype = np.dtype(args.dtype)
    ck_dir = run_dir / "checkpoints"

    def log(record):
        print(f"iter {record.iteration:4d}  loss {record.train_loss:.4f}  val macro F1 {record.val_macro_f1:.4f}",
              flush=True)

    if args.regime == "finetune_independent":
        source = load_checkpoint(args.checkpoint, dtype=dtype)
        results, histories = [], []
        for gi in range(args.groups):
            def in_group(recs):
                return {ds: [r for r in rs if age_group(r.subject.age_years, args.groups) == gi]
                        for ds, rs in recs.items()}
            tr, va, te = _flatten(in_group(train_sets)), _flatten(in_group(val_sets)), _flatten(in_group(test_sets))
            name = group_name(gi, args.groups)
            if not tr or not va:
                raise IneligibleRecordingError(f"group {name} has no training or validation recordings")
            res = train(source, _sampler(args, tr, 1, rate, epoch_s), va, tcfg, "finetune", log=log)
            save_checkpoint(res.net, ck_dir / f"group_{gi}")
            (run_dir / f"history_group_{gi}.csv").write_text(res.history_csv())
            print(f"group {name}: {res.iterations} iterations, best val macro F1 {res.best_f1:.4f} "
                  f"({res.stop_reason})")
            if te:
                results.extend(evaluate(res.net, te, 1, workers=args.workers).results)
        report = EvalReport(results)
        _write_eval(run_dir, report)
        print(report.to_text())
        print(f"run directory: {run_dir}")
        return EXIT_OK

    if args.regime == "scratch":
        net = build(_arch(args, rate, epoch_s), seed=args.seed, dtype=dtype)
        n_groups = 1
    else:
        net = load_checkpoint(args.checkpoint, dtype=dtype)
        if args.regime == "finetune_sabn":
            if net.config.bn_variant == "vanilla":
                net = convert_to_sabn(net, args.groups)
            elif net.config.bn_variant != "sabn" or net.config.n_groups != args.groups:
                raise ConfigError("finetune_sabn needs a vanilla checkpoint or a sabn one with matching --groups")
        n_groups = net.config.n_groups if net.config.bn_variant != "vanilla" else 1

    if args.regime != "dt":
        regime = {"scratch": "scratch", "finetune": "finetune", "finetune_sabn": "finetune_sabn"}[args.regime]
        val = _flatten(val_sets)
        if not _flatten(train_sets) or not val:
            raise IneligibleRecordingError("training needs non-empty train and val splits")
        res = train(net, _sampler(args, train_sets, n_groups, rate, epoch_s), val, tcfg, regime, log=log)
        net = res.net
        (run_dir / "history.csv").write_text(res.history_csv())
        print(f"{res.iterations} iterations, best val macro F1 {res.best_f1:.4f} at iteration "
              f"{res.best_iteration} ({res.stop_reason})")
        if res.target_iteration is not None:
            print(f"target reached at iteration {res.target_iteration}")
    save_checkpoint(net, ck_dir / "model")
    report = evaluate(net, _flatten(test_sets), n_groups, workers=args.workers)
    _write_eval(run_dir, report)
    print(report.to_text())
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_evaluate(args):
    root = store_root(args.store)
    net = load_checkpoint(args.checkpoint, dtype=np.dtype(args.dtype))
    recs = _flatten(_recordings(root, args.dataset, args.split))
    if not recs:
        raise IneligibleRecordingError(f"split {args.split!r} is empty")
    n_groups = net.config.n_groups if net.config.bn_variant != "vanilla" else 1
    report = evaluate(net, recs, n_groups, workers=args.workers)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        _write_eval(out, report)
    print(report.to_text())
    return EXIT_OK


def _fmt_cell(stats):
    if stats is None:
        return "-"
    mu, sd, n = stats
    return f"{100 * mu:5.1f} +- {'n/a' if np.isnan(sd) else f'{100 * sd:4.1f}'}"


def report_text(reports, names, metric="macro_f1", sides="two"):
    """Per-group mean +- sd table and, for two runs, paired t-tests per group and overall."""
    summaries = [r.group_summary(metric) for r in reports]
    groups = [g for g in list(group_name(i, 7) for i in range(7)) + ["ALL"] if any(g in s for s in summaries)]
    head = f"{'group':<6}" + "".join(f" {n[:22]:>22}" for n in names)
    if len(reports) == 2:
        head += f" {'t':>8} {'p':>10}"
    lines = [f"{metric} (mean +- sd across recordings, %)", head]
    for g in groups:
        row = f"{g:<6}" + "".join(f" {_fmt_cell(s.get(g)):>22}" for s in summaries)
        if len(reports) == 2:
            a, b = reports
            sel = [i for i, r in enumerate(a.results) if g == "ALL" or
                   (r.age_group >= 0 and group_name(r.age_group, 7) == g)]
            if len(sel) >= 2:
                va = np.array([getattr(a.results[i].metrics, metric) for i in sel])
                vb = np.array([getattr(b.results[i].metrics, metric) for i in sel])
                t = paired_ttest(va, vb, sides)
                flag = "*" if t.degenerate else " "
                row += f" {t.t:8.3f} {t.p:10.4g}{flag}"
            else:
                row += f" {'-':>8} {'-':>10}"
        lines.append(row)
    if len(reports) == 2:
        lines.append(f"paired t-test ({sides}-sided) of run 1 vs run 2; * marks degenerate (zero-variance) cases")
    return "\n".join(lines) + "\n"


def cmd_report(args):
    reports = []
    for run in args.runs:
        path = Path(run) / "eval.csv"
        if not path.is_file():
            raise FileNotFoundError(f"{path} not found")
        reports.append(EvalReport.from_csv(path.read_text()))
    if len(reports) == 2:
        a, b = (set(r.record_ids) for r in reports)
        if a != b:
            only_a, only_b = sorted(a - b), sorted(b - a)
            raise IneligibleRecordingError(
                "runs were evaluated on different recordings; "
                f"only in {args.runs[0]}: {only_a or 'none'}; only in {args.runs[1]}: {only_b or 'none'}")
        order = {rid: i for i, rid in enumerate(reports[0].record_ids)}
        reports[1].results.sort(key=lambda r: order[r.record_id])
    text = report_text(reports, [Path(r).name for r in args.runs], args.metric, args.sides)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_inspect_sampler(args):
    root = store_root(args.store)
    datasets = _recordings(root, args.dataset, args.split)
    if not _flatten(datasets):
        raise IneligibleRecordingError(f"split {args.split!r} is empty")
    first = _flatten(datasets)[0]
    cfg = SamplerConfig(alpha=args.alpha, L=args.sequence_length, rate=first.rate, epoch_s=first.epoch_s,
                        seed=args.seed, n_groups=args.groups)
    rng = np.random.default_rng(args.seed)
    elements = [sample_sequence(datasets, cfg, rng) for _ in range(args.n)]
    text = format_draw_log(elements)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.n} draws to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args):
    np.random.seed(args.seed)
    seeds = range(args.seed, args.seed + args.seeds)
    results = run_suite(seeds, model=not args.layers_only)
    print(f"{'check':<16} {'max rel err 64':>15} {'max err 32':>12} {'seconds':>8}  result")
    for r in results:
        print(f"{r.name:<16} {r.err64:15.3e} {r.err32:12.3e} {r.seconds:8.2f}  {'PASS' if r.passed else 'FAIL'}")
    print(f"tolerances: 64-bit < {TOL_64:g}, 32-bit < {TOL_32:g}; {args.seeds} seeds")
    return EXIT_OK if all(r.passed for r in results) else EXIT_DATA


# -- parser --------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--store", default=None, help=f"store root (default ${STORE_ENV} or ./usleep_store)")


def _model_flags(p):
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--base-filters", type=float, default=5.0)
    p.add_argument("--filter-growth", type=float, default=2 ** 0.5)
    p.add_argument("--kernel-size", type=int, default=9)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--workers", type=int, default=1, help="evaluation threads")


def build_parser():
    parser = argparse.ArgumentParser(prog="usleep", description="Sleep staging with a 1-D U-Net.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    sub = {}

    p = sub["synth"] = subs.add_parser("synth", help="write a synthetic EDF cohort")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--rate", type=float, default=128.0)
    p.add_argument("--dataset", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub["ingest"] = subs.add_parser("ingest", help="parse, derive and preprocess EDF recordings into the store")
    _common(p)
    p.add_argument("--edf-dir", required=True)
    p.add_argument("--hyp-dir", required=True)
    p.add_argument("--metadata", help="CSV with record_id, subject_id, family_id, age_years, sex")
    p.add_argument("--derivations", help="recommended-derivation file (MODALITY POS NEG lines)")
    p.add_argument("--mode", choices=("aasm", "atypical"), default="aasm")
    p.add_argument("--dataset", help="dataset id (default: EDF directory name)")
    p.set_defaults(func=cmd_ingest)

    p = sub["split"] = subs.add_parser("split", help="subject-level train/val/test split of a dataset")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_split)

    p = sub["train"] = subs.add_parser("train", help="run one experiment regime and evaluate on the test split")
    _common(p)
    p.add_argument("--dataset", action="append", required=True, help="repeat for several datasets")
    p.add_argument("--regime", choices=REGIMES, default="scratch")
    p.add_argument("--groups", type=int, default=1, help="age groups G (1, 2 or 7)")
    p.add_argument("--checkpoint", help="source checkpoint for dt/finetune regimes")
    p.add_argument("--run-dir", help="explicit run directory (default: timestamped under <store>/runs)")
    _model_flags(p)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--patience", type=int, default=100)
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--batches-per-iteration", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=12)
    p.add_argument("--sequence-length", type=int, default=35)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--target-f1", type=float, default=None)
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub["evaluate"] = subs.add_parser("evaluate", help="score a checkpoint on a dataset split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", action="append", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--out", help="directory for eval.csv / eval.txt")
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub["report"] = subs.add_parser("report", help="per-group table and paired t-tests between runs")
    _common(p)
    p.add_argument("runs", nargs="+", help="one or two run directories containing eval.csv")
    p.add_argument("--metric", choices=("macro_f1", "weighted_f1", "kappa"), default="macro_f1")
    p.add_argument("--sides", choices=("one", "two"), default="two")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub["inspect-sampler"] = subs.add_parser("inspect-sampler", help="tab-separated log of sampler draws")
    _common(p)
    p.add_argument("--dataset", action="append", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="train")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--sequence-length", type=int, default=35)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--groups", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect_sampler)

    p = sub["gradcheck"] = subs.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(p)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--layers-only", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser, sub


def main(argv=None):
    parser, sub = build_parser()
    try:
        args = resolve(parser, sub, argv)
        if args.command == "report" and len(args.runs) > 2:
            raise ConfigError("report takes one or two run directories")
        return args.func(args)
    except (ConfigError, CheckpointError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (USleepError, OSError, SamplingError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
