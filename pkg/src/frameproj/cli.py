"""Command-line entry point: ``frameproj <command> [options]``.

Every command writes its outputs plus ``config.<command>.json`` (resolved
configuration) and ``manifest.<command>.json`` (seed, input and output
hashes) into its output directory. Exit codes: 0 success, 1 validation
failure, 2 I/O error.
"""

import argparse
import glob
import hashlib
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__, kernels
from .config import load_config
from .data import (
    LABEL_CLASS,
    LABEL_TARGET,
    RNG_ALGORITHM,
    SPLIT_TEST,
    SPLIT_TRAIN,
    generate_synthetic_classification,
    generate_synthetic_regression,
    philox,
    read_dataset,
    write_dataset,
)
from .errors import ContractError, FormatError, FrameProjError
from .frames import cache_views, compute_views, estimate_frame_bounds, load_views, verify_parseval
from .gradchecks import TOLERANCE as GRAD_TOLERANCE
from .gradchecks import layer_family_checks
from .probe import (
    CLASSIFICATION,
    REGRESSION,
    evaluate_classification,
    evaluate_regression,
    extract_features,
    train_linear_probe,
)
from .theory import (
    AngleStats,
    InvarianceBatchSpec,
    check_invariance_bound,
    distance_deviation_fraction,
    exceedance_frequency,
    histogram_svg,
    levy_bound,
    pairwise_l2_table,
    radial_histogram,
    same_sample_angles,
    uniform_sphere,
    write_histogram_csv,
    write_table_csv,
)
from .trainer import (
    PHASE_MAPPERS,
    BundleConfig,
    build_bundle,
    encode_all,
    load_bundle,
    pretrain,
    save_bundle,
    train_latent_mappers,
)

logger = logging.getLogger("frameproj")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


# ----------------------------------------------------------------------
# provenance


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _path_hashes(paths):
    out = {}
    for p in paths:
        if p is None:
            continue
        if os.path.isdir(p):
            for f in sorted(os.listdir(p)):
                full = os.path.join(p, f)
                if os.path.isfile(full) and not f.startswith(("manifest.", "config.")):
                    out[os.path.abspath(full)] = file_sha256(full)
        else:
            out[os.path.abspath(p)] = file_sha256(p)
    return out


def verify_input(path):
    """Check ``path`` against any manifest in its directory that lists it as an output."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"input not found: {path}")
    targets = [os.path.join(path, f) for f in sorted(os.listdir(path))] if os.path.isdir(path) else [path]
    for target in targets:
        if not os.path.isfile(target):
            continue
        folder, name = os.path.split(os.path.abspath(target))
        for mpath in sorted(glob.glob(os.path.join(folder, "manifest.*.json"))):
            with open(mpath) as fh:
                manifest = json.load(fh)
            recorded = manifest.get("outputs", {}).get(name)
            if recorded is not None and recorded != file_sha256(target):
                raise ContractError(f"{target} does not match the hash recorded in {mpath}")


def write_run_record(out_dir, command, cfg, inputs=(), outputs=(), extra=None):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"config.{command}.json"), "w") as fh:
        fh.write(cfg.dumps() + "\n")
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "rng": RNG_ALGORITHM,
        "backend": kernels.BACKEND,
        "argv": sys.argv[1:],
        "inputs": _path_hashes(inputs),
        "outputs": {os.path.basename(p): file_sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, f"manifest.{command}.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _bundle_config(cfg, batch):
    return BundleConfig(channels=batch.channels, length=batch.length, n_scales=cfg.transform.num_scales,
                        **cfg.model.__dict__)


def _load_dataset(path):
    verify_input(path)
    return read_dataset(path)


def _load_views(cache_dir, ds, cfg):
    verify_input(cache_dir)
    spec, scal, _ = load_views(cache_dir, ds.batch, cfg.transform)
    return spec, scal


def _train_indices(ds):
    return np.arange(ds.batch.n) if ds.splits is None else np.flatnonzero(ds.splits == SPLIT_TRAIN)


# ----------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    cfg = load_config(args.config)
    if cfg.data.kind == "classification":
        ds = generate_synthetic_classification(cfg.data.classification, cfg.seed)
    else:
        ds = generate_synthetic_regression(cfg.data.regression, cfg.seed)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_dataset(ds, args.out)
    write_run_record(out_dir, "gen-data", cfg, [args.config], [args.out],
                     {"content_hash": ds.content_hash()})
    print(f"wrote {ds.batch.n} windows ({cfg.data.kind}) to {args.out}")
    return EXIT_OK


def cmd_transform(args):
    cfg = load_config(args.config)
    ds = _load_dataset(args.dataset)
    t0 = time.perf_counter()
    _, _, key = cache_views(ds.batch, args.cache_dir, cfg.transform)
    outputs = [os.path.join(args.cache_dir, f) for f in ("spectral.fpvc", "scalogram.fpvc", "transform.json")]
    write_run_record(args.cache_dir, "transform", cfg, [args.dataset, args.config], outputs,
                     {"cache_key": key.hex()})
    print(f"cached views for {ds.batch.n} windows in {time.perf_counter() - t0:.2f}s (key {key.hex()[:16]})")
    return EXIT_OK


def cmd_pretrain(args):
    cfg = load_config(args.config)
    ds = _load_dataset(args.dataset)
    spec, scal = _load_views(args.cache_dir, ds, cfg)
    idx = _train_indices(ds)
    batch = ds.batch.subset(idx)

    def progress(epoch, log):
        means = log.epoch_means()
        if epoch in means:
            print(f"epoch {epoch + 1}/{cfg.train.epochs}  loss {means[epoch]:.6f}", flush=True)

    bundle, log = pretrain(batch, spec.subset(idx), scal.subset(idx), cfg.train,
                           bundle_cfg=_bundle_config(cfg, batch), progress=progress)
    os.makedirs(args.out, exist_ok=True)
    bundle_path = os.path.join(args.out, "pretrained.fpck")
    log_path = os.path.join(args.out, "pretrain_log.csv")
    save_bundle(bundle, bundle_path)
    log.write_csv(log_path)
    write_run_record(args.out, "pretrain", cfg, [args.dataset, args.cache_dir, args.config],
                     [bundle_path, log_path], {"parameter_hash": bundle.hash(), "log_digest": log.digest()})
    print(f"saved {bundle_path} (parameter hash {bundle.hash()[:16]})")
    return EXIT_OK


def cmd_train_mappers(args):
    cfg = load_config(args.config)
    verify_input(args.bundle)
    bundle = load_bundle(args.bundle)
    ds = _load_dataset(args.dataset)
    spec, scal = _load_views(args.cache_dir, ds, cfg)
    idx = _train_indices(ds)
    log = []
    bundle = train_latent_mappers(bundle, ds.batch.subset(idx), spec.subset(idx), scal.subset(idx),
                                  cfg.train, log)
    os.makedirs(args.out, exist_ok=True)
    bundle_path = os.path.join(args.out, "bundle.fpck")
    log_path = os.path.join(args.out, "mapper_log.csv")
    save_bundle(bundle, bundle_path)
    with open(log_path, "w") as fh:
        fh.write("step,epoch,lr,l_map\n")
        for step, epoch, lr, loss in log:
            fh.write(f"{step},{epoch},{lr!r},{loss!r}\n")
    write_run_record(args.out, "train-mappers", cfg, [args.bundle, args.dataset, args.cache_dir, args.config],
                     [bundle_path, log_path], {"parameter_hash": bundle.hash()})
    final = log[-1][3] if log else float("nan")
    print(f"saved {bundle_path} (final mapper loss {final:.6f})")
    return EXIT_OK


def _probe_bundle(args, cfg, ds):
    if args.random:
        return build_bundle(_bundle_config(cfg, ds.batch), cfg.seed, with_h_mappers=True)
    verify_input(args.bundle)
    bundle = load_bundle(args.bundle)
    if bundle.phase != PHASE_MAPPERS:
        raise ContractError(f"probing needs a bundle in phase {PHASE_MAPPERS!r}; run train-mappers first")
    return bundle


def cmd_probe(args):
    cfg = load_config(args.config)
    ds = _load_dataset(args.dataset)
    if ds.splits is None:
        raise ContractError("probing needs a dataset with a train/test split")
    expected = LABEL_CLASS if args.task == CLASSIFICATION else LABEL_TARGET
    if ds.label_kind != expected:
        raise ContractError(f"dataset labels do not fit task {args.task!r}")
    bundle = _probe_bundle(args, cfg, ds)
    parts = tuple(cfg.probe.parts)
    train, test = ds.split(SPLIT_TRAIN), ds.split(SPLIT_TEST)
    f_tr = extract_features(bundle, train, parts)
    f_te = extract_features(bundle, test, parts)
    n_classes = int(ds.labels.max()) + 1 if args.task == CLASSIFICATION else None
    probe = train_linear_probe(f_tr, train.labels, args.task, cfg.probe.lr, cfg.probe.epochs, cfg.seed,
                               n_classes, cfg.probe.standardize)
    if args.task == CLASSIFICATION:
        report = evaluate_classification(probe, f_te, test.labels)
    else:
        report = evaluate_regression(probe, f_te, test.labels, mape=bool((np.abs(test.labels) > 1e-9).all()))
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.csv")
    report.write_csv(metrics_path)
    write_run_record(args.out, "probe", cfg, [args.bundle, args.dataset, args.config], [metrics_path],
                     {"bundle": "random" if args.random else bundle.hash(), "parts": list(parts),
                      "feature_hash": f_tr.hash()})
    print(report.summary())
    return EXIT_OK


def _emit_angle_outputs(out, label, h_a, h_b, bins, plot):
    stats = AngleStats.compute(h_a, h_b)
    write_table_csv(os.path.join(out, f"angles_{label}.csv"), ["index", "theta"],
                    list(enumerate(stats.same_sample_angles)))
    n = h_a.shape[0]
    i, j = np.triu_indices(n, k=1)
    write_table_csv(os.path.join(out, f"delta_{label}.csv"), ["i", "j", "delta"],
                    zip(i, j, stats.delta_ij))
    hists = {
        "theta": radial_histogram(stats.same_sample_angles, bins),
        "delta": radial_histogram(stats.delta_ij, bins, signed=True),
        "absdelta": radial_histogram(np.abs(stats.delta_ij), bins),
    }
    for name, (edges, counts) in hists.items():
        write_histogram_csv(os.path.join(out, f"hist_{name}_{label}.csv"), edges, counts)
        if plot:
            with open(os.path.join(out, f"hist_{name}_{label}.svg"), "w") as fh:
                fh.write(histogram_svg(edges, counts, f"{name} {label}"))
    table = pairwise_l2_table(h_a, h_b)
    write_table_csv(os.path.join(out, f"l2_{label}.csv"), ["i", "j", "d_a", "d_b"],
                    [(int(r[0]), int(r[1]), r[2], r[3]) for r in table])
    summary = {"same": stats.same, "delta": stats.delta,
               "max_abs_delta": float(np.abs(stats.delta_ij).max()),
               "l2_deviation_fraction": distance_deviation_fraction(table)}
    print(f"[{label}]\n{stats.summary()}\nl2 pairs deviating > 10%: {summary['l2_deviation_fraction']:.4f}")
    return summary


def cmd_diagnose(args):
    cfg = load_config(args.config)
    th = cfg.theory
    os.makedirs(args.out, exist_ok=True)
    summaries = {}
    inputs = [args.config]
    if args.random:
        d, n = th.random_dim, th.random_samples
        u = uniform_sphere(n, d, cfg.seed, 0)
        v = uniform_sphere(n, d, cfg.seed, 1)
        m = min(n, th.max_samples)
        theta = same_sample_angles(u, v)
        summaries["uniform"] = _emit_angle_outputs(args.out, "uniform", u[:m], v[:m], th.bins, args.plot)
        summaries["uniform"]["same_full"] = {"n": n, "mean": float(theta.mean()),
                                             "std": float(theta.std(ddof=1))}
        bound = levy_bound(d, th.levy_eps)
        freq = exceedance_frequency(d, th.levy_eps, 100000, cfg.seed)
        summaries["levy"] = {"d": d, "eps": th.levy_eps, "bound": bound, "empirical": freq, "pass": freq <= bound}
        print(f"same-sample angle over {n} pairs: mean {theta.mean():.4f} (pi/2 = {math.pi / 2:.4f}), "
              f"std {theta.std(ddof=1):.4f}")
        print(f"levy: Pr(|cos| > {th.levy_eps}) empirical {freq:.6f} <= bound {bound:.6f}: "
              f"{'pass' if freq <= bound else 'FAIL'}")
    else:
        if args.dataset is None:
            raise ContractError("diagnose needs --dataset together with --bundle")
        verify_input(args.bundle)
        bundle = load_bundle(args.bundle)
        ds = _load_dataset(args.dataset)
        m = min(ds.batch.n, th.max_samples)
        batch = ds.batch.subset(np.arange(m))
        if args.cache_dir:
            spec, scal = _load_views(args.cache_dir, ds, cfg)
            spec, scal = spec.subset(np.arange(m)), scal.subset(np.arange(m))
        else:
            spec, scal = compute_views(batch, cfg.transform)
        reps = encode_all(bundle, batch, spec, scal)
        for a, b in (("t", "F"), ("t", "W"), ("F", "W")):
            summaries[f"{a}-{b}"] = _emit_angle_outputs(args.out, f"{a}-{b}", reps[a], reps[b], th.bins, args.plot)
        inputs += [args.bundle, args.dataset]
    summary_path = os.path.join(args.out, "diagnose.json")
    with open(summary_path, "w") as fh:
        json.dump(summaries, fh, indent=2, sort_keys=True, default=float)
    outputs = sorted(p for p in glob.glob(os.path.join(args.out, "*"))
                     if os.path.isfile(p) and not os.path.basename(p).startswith(("manifest.", "config.")))
    write_run_record(args.out, "diagnose", cfg, inputs, outputs, {"mode": "random" if args.random else "bundle"})
    return EXIT_OK


def cmd_check_invariance(args):
    cfg = load_config(args.config)
    spec = InvarianceBatchSpec(k_near=args.k, delta=args.delta, n_far=args.far,
                               dim=args.dim or cfg.theory.dim, s_pos=args.s_pos)
    report = check_invariance_bound(spec, args.tau, cfg.seed)
    print(f"bound {report.analytic_bound:.6f}  measured {report.measured_loss:.6f}  "
          f"slack {report.slack:.3e}  {'pass' if report.passed else 'FAIL'}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "invariance.csv")
        write_table_csv(path, ["k", "delta", "far", "dim", "s_pos", "tau", "measured", "bound", "slack", "pass"],
                        [(spec.k_near, float(spec.delta), spec.n_far, spec.dim, float(spec.s_pos), float(args.tau),
                          report.measured_loss, report.analytic_bound, report.slack, int(report.passed))])
        write_run_record(args.out, "check-invariance", cfg, [args.config], [path])
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_verify_frames(args):
    cfg = load_config(args.config)
    inputs = [args.config]
    if args.random:
        x = philox(cfg.seed, 7).standard_normal((args.n, args.length))
    else:
        ds = _load_dataset(args.dataset)
        x = ds.batch.samples.reshape(-1, ds.batch.length)
        inputs.append(args.dataset)
    ratios = verify_parseval(x)
    worst = float(np.abs(ratios - 1.0).max())
    tc = cfg.transform
    probes = philox(cfg.seed, 8).standard_normal((args.probes, x.shape[-1]))
    fb = estimate_frame_bounds(tc.scales(), tc.sigma, tc.xi, probes, tc.truncation)
    ok = worst < 1e-12 and 0 < fb.a_lower <= fb.b_upper < math.inf and math.isfinite(fb.ratio)
    print(f"signals: {x.shape[0]}  length: {x.shape[-1]}")
    print(f"max Parseval deviation: {worst:.3e}")
    print(f"wavelet frame bounds over {fb.n_probes} unit probes: A = {fb.a_lower:.6g}, B = {fb.b_upper:.6g}, "
          f"B/A = {fb.ratio:.6g}")
    print("pass" if ok else "FAIL")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "frames.csv")
        write_table_csv(path, ["quantity", "value"],
                        [("max_parseval_deviation", worst), ("frame_lower", fb.a_lower),
                         ("frame_upper", fb.b_upper), ("frame_ratio", fb.ratio), ("n_probes", fb.n_probes)])
        write_run_record(args.out, "verify-frames", cfg, inputs, [path])
    return EXIT_OK if ok else EXIT_INVALID


def cmd_gradcheck(args):
    cfg = load_config(args.config)
    t0 = time.perf_counter()
    results = layer_family_checks(cfg.seed)
    worst = 0.0
    for name, rep in results.items():
        worst = max(worst, rep.max_rel_error)
        note = f"  ({rep.skipped_kinks} kink-straddling coordinates skipped)" if rep.skipped_kinks else ""
        print(f"{name:<18s} max rel error {rep.max_rel_error:.3e} over {rep.checked} coordinates{note}")
    ok = worst <= GRAD_TOLERANCE
    print(f"{'pass' if ok else 'FAIL'}: worst {worst:.3e} (tolerance {GRAD_TOLERANCE:g}) "
          f"in {time.perf_counter() - t0:.1f}s")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "gradcheck.csv")
        write_table_csv(path, ["family", "max_rel_error", "checked", "skipped_kinks"],
                        [(k, r.max_rel_error, r.checked, r.skipped_kinks) for k, r in results.items()])
        write_run_record(args.out, "gradcheck", cfg, [args.config], [path])
    return EXIT_OK if ok else EXIT_INVALID


# ----------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="frameproj", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"frameproj {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON run configuration (defaults when omitted)")
        sp.set_defaults(func=fn)
        return sp

    sp = cmd("gen-data", cmd_gen_data, "generate a synthetic dataset file")
    sp.add_argument("--out", required=True, help="dataset file to write")

    sp = cmd("transform", cmd_transform, "compute and cache the spectral and scalogram views")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--cache-dir", required=True)

    sp = cmd("pretrain", cmd_pretrain, "joint contrastive pretraining on the train split")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--cache-dir", required=True)
    sp.add_argument("--out", required=True, help="output directory")

    sp = cmd("train-mappers", cmd_train_mappers, "fit representation mappers on frozen encoders")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--cache-dir", required=True)
    sp.add_argument("--out", required=True)

    sp = cmd("probe", cmd_probe, "linear probe on frozen features")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--bundle")
    g.add_argument("--random", action="store_true", help="probe an untrained, randomly initialized bundle")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--task", choices=[CLASSIFICATION, REGRESSION], default=CLASSIFICATION)
    sp.add_argument("--out", required=True)

    sp = cmd("diagnose", cmd_diagnose, "embedding angle and distance diagnostics")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--bundle")
    g.add_argument("--random", action="store_true", help="uniform sphere samples instead of a bundle")
    sp.add_argument("--dataset")
    sp.add_argument("--cache-dir")
    sp.add_argument("--out", required=True)
    sp.add_argument("--plot", action="store_true", help="also write SVG radial histograms")

    sp = cmd("check-invariance", cmd_check_invariance, "NT-Xent lower bound under encoder invariance")
    sp.add_argument("--k", type=int, default=1, help="near-duplicate negatives")
    sp.add_argument("--delta", type=float, default=0.0)
    sp.add_argument("--tau", type=float, default=0.2)
    sp.add_argument("--far", type=int, default=0, help="orthogonal negatives")
    sp.add_argument("--dim", type=int, default=None)
    sp.add_argument("--s-pos", type=float, default=1.0)
    sp.add_argument("--out")

    sp = cmd("verify-frames", cmd_verify_frames, "Parseval identity and wavelet frame bounds")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--dataset")
    g.add_argument("--random", action="store_true")
    sp.add_argument("--n", type=int, default=100, help="random signals (with --random)")
    sp.add_argument("--length", type=int, default=128, help="random signal length (with --random)")
    sp.add_argument("--probes", type=int, default=100, help="unit probes for the frame bounds")
    sp.add_argument("--out")

    sp = cmd("gradcheck", cmd_gradcheck, "finite-difference gradient checks per layer family")
    sp.add_argument("--out")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FrameProjError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
