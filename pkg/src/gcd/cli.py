"""``gcd`` command-line interface.

Every artifact-producing subcommand writes ``<command>.manifest.json`` next to
its outputs.  JSON reports embed the deterministic part of the manifest
(everything except wall-clock duration), so reruns with the same arguments
produce byte-identical reports.

Per-stage seeds are ``derive_seed(seed, stage)``: the first eight bytes of
``sha256(f"{seed}:{stage}")`` read little-endian, shifted right by one bit.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .assignment import acc_report
from .class_count import KSearchConfig, estimate_k, scan_k
from .clustering import KMeansConfig, kmeans_fit, ss_kmeans_fit
from .contrastive import (
    ContrastiveConfig,
    ProjectionHead,
    ViewBatch,
    central_difference,
    grad_total_loss,
    max_relative_error,
    sup_loss,
    train_toy,
    unsup_loss,
)
from .dataset import GcdDataset, SplitSpec, generate_split, make_blobs
from .exceptions import GCDError, InvalidInputError
from .fileio import (
    load_assignments,
    load_features,
    load_label_sidecar,
    save_assignments,
    save_features,
    save_label_sidecar,
)


def derive_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Run:
    """Collects the manifest of one subcommand invocation."""

    def __init__(self, command: str, args: argparse.Namespace, inputs=()):
        self.command = command
        self.params = {k: v for k, v in sorted(vars(args).items())
                       if k not in ("func", "config") and not callable(v)}
        self.seed = getattr(args, "seed", None)
        self.inputs = {str(p): file_digest(p) for p in inputs if p is not None}
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.start = time.perf_counter()

    def manifest(self, with_duration=False) -> dict:
        m = {"command": self.command, "params": self.params, "seed": self.seed,
             "inputs": self.inputs, "version": __version__}
        if with_duration:
            m["duration_s"] = round(time.perf_counter() - self.start, 6)
        return m

    def write_report(self, name: str, payload: dict) -> Path:
        path = self.out / name
        path.write_text(_dump({**payload, "manifest": self.manifest()}))
        return path

    def finish(self, summary: str) -> int:
        (self.out / f"{self.command}.manifest.json").write_text(
            _dump(self.manifest(with_duration=True)))
        print(summary)
        return 0


def _load_dataset(features_path, labels_path, truth_path=None, normalize=False) -> GcdDataset:
    X, _ = load_features(features_path)
    if normalize:
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = X / np.where(norms > 0, norms, 1.0)
    labels, mask = load_label_sidecar(labels_path)
    if labels.size != X.shape[0]:
        raise InvalidInputError(
            f"{labels_path} has {labels.size} rows but {features_path} has {X.shape[0]} points")
    y_l = tuple(np.unique(labels[mask]).tolist())
    y_true = None
    if truth_path is not None:
        y_true, _ = load_label_sidecar(truth_path)
        if y_true.size != X.shape[0]:
            raise InvalidInputError(f"{truth_path} does not match the feature count")
    return GcdDataset(features=X, labels=np.where(mask, labels, -1), labelled_mask=mask,
                      y_l=y_l, _y_true=y_true)


def cmd_gen_data(args) -> int:
    run = Run("gen-data", args)
    X, y = make_blobs(args.classes, args.per_class, args.dim, separation=args.sep,
                      spread=args.spread, seed=derive_seed(args.seed, "gen-data"))
    save_features(run.out / args.features_name, X)
    save_label_sidecar(run.out / "truth.csv", y, np.ones(y.size, dtype=bool))
    return run.finish(f"gen-data: {X.shape[0]} points, {args.classes} classes, dim {args.dim} "
                      f"-> {run.out}")


def cmd_split(args) -> int:
    run = Run("split", args, [args.truth])
    y, _ = load_label_sidecar(args.truth)
    spec = SplitSpec(args.class_frac, args.image_frac, args.selection,
                     derive_seed(args.seed, "split"))
    split = generate_split(y, spec)
    save_label_sidecar(run.out / args.labels_name, np.where(split.labelled_mask, y, -1),
                       split.labelled_mask)
    run.write_report("split.json", {"y_l": list(split.y_l), "n_labelled": split.n_labelled,
                                    "n_unlabelled": split.n_unlabelled})
    return run.finish(f"split: |Y_L|={len(split.y_l)} |D_L|={split.n_labelled} "
                      f"|D_U|={split.n_unlabelled}")


def _evaluate(ds: GcdDataset, assignments) -> dict:
    return acc_report(ds, np.asarray(assignments)[ds.unlabelled_indices]).to_dict()


def cmd_cluster(args) -> int:
    run = Run("cluster", args, [args.features, args.labels])
    ds = _load_dataset(args.features, args.labels, normalize=args.normalize)
    cfg = KMeansConfig(k=args.k, max_iters=args.max_iters, tol=args.tol,
                       n_restarts=args.restarts or (1 if args.mode == "semi-sup" else 10),
                       seed=derive_seed(args.seed, "cluster"))
    if args.mode == "semi-sup":
        model = ss_kmeans_fit(ds, cfg)
    else:
        model = kmeans_fit(ds.features, cfg)
    save_assignments(run.out / "assignments.csv", model.assignments)
    save_features(run.out / "centroids.gcdf", model.centroids)
    payload = {"mode": args.mode, "k": model.k, "inertia": model.inertia,
               "n_iters": model.n_iters, "converged": model.converged,
               "n_reseeded": model.n_reseeded, "seeding_fallback": model.seeding_fallback}
    run.write_report("cluster.json", payload)
    msg = f"cluster[{args.mode}]: k={model.k} inertia={model.inertia:.6g} iters={model.n_iters}"
    if args.truth is not None:
        # scoring goes through the dataset's explicit evaluation view
        run.inputs[str(args.truth)] = file_digest(args.truth)
        ev = _load_dataset(args.features, args.labels, args.truth, normalize=args.normalize)
        report = _evaluate(ev, model.assignments)
        run.write_report("acc_report.json", report)
        msg += (f" acc_all={report['acc_all']:.4f} acc_old={_fmt(report['acc_old'])} "
                f"acc_new={_fmt(report['acc_new'])}")
    return run.finish(msg)


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def cmd_eval(args) -> int:
    run = Run("eval", args, [args.labels, args.truth, args.assignments])
    labels, mask = load_label_sidecar(args.labels)
    y_true, _ = load_label_sidecar(args.truth)
    idx, clusters = load_assignments(args.assignments)
    if labels.size != y_true.size:
        raise InvalidInputError("labels and truth files differ in length")
    ds = GcdDataset(features=np.zeros((labels.size, 1)), labels=np.where(mask, labels, -1),
                    labelled_mask=mask, y_l=tuple(np.unique(labels[mask]).tolist()),
                    _y_true=y_true)
    pred = np.full(labels.size, -1, dtype=np.int64)
    pred[idx] = clusters
    unl = ds.unlabelled_indices
    if np.any(pred[unl] < 0):
        raise InvalidInputError("assignments do not cover every unlabelled point")
    report = acc_report(ds, pred[unl]).to_dict()
    run.write_report("acc_report.json", report)
    return run.finish(f"eval: acc_all={report['acc_all']:.4f} acc_old={_fmt(report['acc_old'])} "
                      f"acc_new={_fmt(report['acc_new'])}")


def cmd_estimate_k(args) -> int:
    run = Run("estimate-k", args, [args.features, args.labels])
    ds = _load_dataset(args.features, args.labels, normalize=args.normalize)
    k_min = args.k_min if args.k_min is not None else max(2, len(ds.y_l))
    k_max = args.k_max if args.k_max is not None else min(1000, ds.n_points)
    cfg = KSearchConfig(k_min=k_min, k_max=k_max, max_evals=args.max_evals,
                        restarts_per_eval=args.restarts, seed=derive_seed(args.seed, "estimate-k"))
    trace = estimate_k(ds, cfg)
    trace.to_csv(run.out / "k_trace.csv")
    with open(run.out / "k_curve.dat", "w") as fh:
        fh.write("# k score  (plot with: plot 'k_curve.dat' using 1:2 with linespoints)\n")
        for k, s in trace.curve():
            fh.write(f"{k} {s!r}\n")
    summary = trace.summary()
    if args.scan:
        scan = scan_k(ds, k_min, k_max, args.restarts, cfg.seed)
        scan.to_csv(run.out / "k_scan.csv")
        summary["scan_best_k"] = scan.best_k
        summary["scan_best_score"] = scan.best_score
    run.write_report("k_summary.json", summary)
    return run.finish(f"estimate-k: best_k={trace.best_k} score={trace.best_score:.4f} "
                      f"evals={trace.n_evals}")


def cmd_train_toy(args) -> int:
    run = Run("train-toy", args, [args.features, args.labels])
    ds = _load_dataset(args.features, args.labels)
    head_seed, train_seed = (derive_seed(args.seed, "train-toy/head"),
                             derive_seed(args.seed, "train-toy"))
    cfg = ContrastiveConfig(tau=args.tau, lam=args.lam, normalize=not args.no_normalize)
    head = ProjectionHead.init(ds.features.shape[1], args.hidden, args.out_dim,
                               cfg.normalize, seed=head_seed)
    res = train_toy(ds, head, cfg, epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
                    noise_scale=args.noise, schedule=args.schedule, seed=train_seed)
    theta = res.head.get_params()
    save_features(run.out / "head.gcdf", theta[None, :])
    (run.out / "head.json").write_text(_dump({
        "layers": [{"name": n, "shape": list(s)} for n, s in
                   zip(("w1", "b1", "w2", "b2"), res.head.shapes)],
        "activation": "gelu_tanh", "normalize": cfg.normalize}))
    with open(run.out / "loss_curve.csv", "w") as fh:
        fh.write("epoch,mean_loss\n")
        for e, v in enumerate(res.loss_curve, start=1):
            fh.write(f"{e},{v!r}\n")
    save_features(run.out / args.embeddings_name, res.head.embed(ds.features, args.embed))
    run.write_report("train.json", {"loss_curve": res.loss_curve,
                                    "final_loss": res.loss_curve[-1] if res.loss_curve else None})
    return run.finish(f"train-toy: {args.epochs} epochs, loss {res.loss_curve[0]:.4f} -> "
                      f"{res.loss_curve[-1]:.4f}")


def loss_check(n_batches=50, seed=0, step=1e-5) -> dict:
    """Finite-difference and identity checks over random small batches."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    cases = []
    for t in range(n_batches):
        b = int(rng.integers(2, 9))
        p = int(rng.integers(2, 17))
        d, h = int(rng.integers(2, 7)), int(rng.integers(3, 9))
        lam = (0.0, 0.35, 1.0)[t % 3]
        normalize = bool((t // 3) % 2)
        cfg = ContrastiveConfig(tau=float(rng.choice([0.1, 0.5, 1.0])), lam=lam,
                                normalize=normalize)
        head = ProjectionHead.init(d, h, p, normalize=normalize, seed=rng.integers(2 ** 31))
        X = rng.standard_normal((2 * b, d))
        labels = rng.integers(0, 3, b)
        mask = rng.random(b) < 0.6
        mask[0] = True
        _, g, _ = grad_total_loss(head, X, labels, mask, cfg)
        probe = head.copy()
        num = central_difference(
            lambda th: grad_total_loss(probe.set_params(th), X, labels, mask, cfg)[0],
            head.get_params(), step)
        err = max_relative_error(g, num)
        worst = max(worst, err)
        cases.append({"B": b, "P": p, "lambda": lam, "normalize": normalize, "rel_err": err})
    ident = 0.0
    for two_b in (4, 8, 64, 256):
        z = np.ones((two_b, 3)) / math.sqrt(3.0)
        batch = ViewBatch(z, np.zeros(two_b // 2, dtype=int), np.ones(two_b // 2, dtype=bool))
        cfg = ContrastiveConfig(tau=0.2)
        target = math.log(two_b - 1)
        for per in (unsup_loss(batch, cfg)[1], sup_loss(batch, cfg)[1]):
            ident = max(ident, float(np.abs(per - target).max() / target))
    return {"max_rel_grad_error": worst, "grad_tolerance": 1e-5,
            "uniform_identity_rel_error": ident, "identity_tolerance": 1e-12,
            "passed": bool(worst < 1e-5 and ident <= 1e-12), "cases": cases}


def cmd_loss_check(args) -> int:
    run = Run("loss-check", args)
    res = loss_check(args.batches, derive_seed(args.seed, "loss-check"), args.step)
    run.write_report("loss_check.json", res)
    run.finish(f"loss-check: max grad rel err {res['max_rel_grad_error']:.3e}, identity rel err "
               f"{res['uniform_identity_rel_error']:.3e} -> {'PASS' if res['passed'] else 'FAIL'}")
    return 0 if res["passed"] else 1


def cmd_report(args) -> int:
    root = Path(args.dir)
    manifests = sorted(root.rglob("*.manifest.json"))
    if not manifests:
        raise InvalidInputError(f"no manifests under {root}")
    lines = [f"# GCD run report ({len(manifests)} runs)", ""]
    for path in manifests:
        m = json.loads(path.read_text())
        lines.append(f"## {m['command']}  ({path.parent})")
        lines.append(f"- seed: {m.get('seed')}  version: {m.get('version')}  "
                     f"duration: {m.get('duration_s')} s")
        for k, v in m.get("params", {}).items():
            lines.append(f"- {k} = {v}")
        for p, digest in m.get("inputs", {}).items():
            lines.append(f"- input {p} sha256:{digest[:16]}")
        for rep in sorted(path.parent.glob("*.json")):
            if rep.name.endswith(".manifest.json"):
                continue
            data = json.loads(rep.read_text())
            if data.get("manifest", {}).get("command") != m["command"]:
                continue
            keys = [k for k in ("acc_all", "acc_old", "acc_new", "best_k", "best_score",
                                "inertia", "final_loss", "passed", "n_labelled") if k in data]
            if keys:
                lines.append(f"- {rep.name}: " + ", ".join(f"{k}={data[k]}" for k in keys))
        lines.append("")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def _truthy(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(v)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file; command-line flags win")
    common.add_argument("--seed", type=int, default=0)

    parser = argparse.ArgumentParser(prog="gcd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gcd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="synthetic Gaussian blobs")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--sep", type=float, default=8.0)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--features-name", default="f.gcdf")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("split", parents=[common], help="choose labelled classes and images")
    p.add_argument("--truth", required=True)
    p.add_argument("--class-frac", type=float, default=0.5)
    p.add_argument("--image-frac", type=float, default=0.5)
    p.add_argument("--selection", choices=["first_indices", "random"], default="first_indices")
    p.add_argument("--labels-name", default="l.csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("cluster", parents=[common], help="plain or semi-supervised k-means")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--mode", choices=["plain", "semi-sup"], default="semi-sup")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--restarts", type=int, default=0, help="0 = 10 for plain, 1 for semi-sup")
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--normalize", action="store_true", help="L2-normalise features first")
    p.add_argument("--truth", help="also write acc_report.json using these ground-truth labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("estimate-k", parents=[common], help="estimate the number of classes")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--max-evals", type=int, default=25)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--scan", action="store_true", help="also score every k exhaustively")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_k)

    p = sub.add_parser("eval", parents=[common], help="All/Old/New clustering accuracy")
    p.add_argument("--labels", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--assignments", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-toy", parents=[common], help="contrastive training of a small head")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--schedule", choices=["cosine", "constant"], default="cosine")
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--hidden", type=int, default=2048)
    p.add_argument("--out-dim", type=int, default=128)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--lam", type=float, default=0.35)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--embed", choices=["hidden", "projection"], default="hidden",
                   help="layer written as the embeddings")
    p.add_argument("--embeddings-name", default="embeddings.gcdf")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("loss-check", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--batches", type=int, default=50)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("report", help="summarise run manifests")
    p.add_argument("--dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def read_config(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _config_path(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    return pre.parse_known_args(argv)[0].config


def _apply_config(parser, argv, path) -> None:
    """Install config-file values as subcommand defaults (so flags still win)."""
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if command is None:
        return
    sub = choices[command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in read_config(path).items():
        if key not in actions or key in ("help", "config"):
            sub.error(f"unknown config key {key!r} in {path}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            try:
                defaults[key] = _truthy(value)
            except ValueError:
                sub.error(f"config key {key!r} expects a boolean, got {value!r}")
        else:
            if action.choices is not None and value not in action.choices:
                sub.error(f"config key {key!r} must be one of {sorted(action.choices)}")
            defaults[key] = value
        # a config value satisfies a required flag
        action.required = False
    sub.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    path = _config_path(argv)
    if path:
        try:
            _apply_config(parser, argv, path)
        except OSError as exc:
            print(f"gcd: error: {exc}", file=sys.stderr)
            return 1
        except GCDError as exc:
            parser.error(str(exc))
    args = parser.parse_args(argv)
    threads = int(os.environ.get("GCD_THREADS", "0") or 0)
    if threads > 0:
        from threadpoolctl import threadpool_limits
        ctx = threadpool_limits(limits=threads)
    else:
        ctx = nullcontext()
    try:
        with ctx:
            return args.func(args)
    except (GCDError, OSError) as exc:
        print(f"gcd {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
