"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines.
"""

import math
import time

import numpy as np
import pytest

from frameproj import kernels
from frameproj.config import ProbeConfig
from frameproj.data import SPLIT_TEST, SPLIT_TRAIN, SyntheticConfig, generate_synthetic_classification, philox
from frameproj.frames import (
    TransformConfig,
    cache_views,
    compute_views,
    dft_ortho,
    estimate_frame_bounds,
    gabor_cwt,
    load_views,
    morlet_scales,
    verify_parseval,
)
from frameproj.gradchecks import TOLERANCE, composition_check, layer_family_checks, parameter_counts
from frameproj.objectives import ntxent_pair
from frameproj.probe import evaluate_classification, extract_features, train_linear_probe
from frameproj.theory import (
    InvarianceBatchSpec,
    check_invariance_bound,
    exceedance_frequency,
    invariance_sweep,
    levy_bound,
    pairwise_angle_spread,
    same_sample_angles,
    uniform_sphere,
)
from frameproj.trainer import TrainConfig, build_bundle, bundle_config_for, pretrain, train_latent_mappers
from oracles import cwt_loop, dft_loop

SEED = 0


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail, elapsed=None, limit=None):
        timing = ""
        if elapsed is not None:
            within = limit is None or elapsed < limit
            ok = ok and within
            timing = f" [{elapsed:.1f}s" + (f" < {limit:g}s" if limit else "") + "]"
        with capsys.disabled():
            print(f"\ncriterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}{timing}")
        assert ok, detail

    return emit


class TestTransforms:
    def test_1_orthonormality(self, verdict):
        t0 = time.perf_counter()
        worst = 0.0
        for i, length in enumerate((8, 32, 200)):
            x = philox(SEED, 100 + i).standard_normal((1000, length))
            worst = max(worst, float(np.abs(verify_parseval(x) - 1.0).max()))
        verdict(1, worst < 1e-12, f"max relative Parseval deviation {worst:.2e} (< 1e-12)",
                time.perf_counter() - t0, 5)

    def test_2_oracle_equivalence(self, verdict):
        t0 = time.perf_counter()
        r = philox(SEED, 110)
        dft_err = 0.0
        for length in (8, 12, 32, 64, 100, 128, 200):
            for x in r.standard_normal((3, length)):
                dft_err = max(dft_err, float(np.abs(dft_ortho(x, full=True) - dft_loop(x)).max()))
        scales = morlet_scales(4, 1.0, 8.0)
        x = r.standard_normal(64)
        got = gabor_cwt(x, scales, magnitude=False)
        cwt_err = float(np.abs(got - cwt_loop(x, scales, 1.0, TransformConfig().xi)).max())
        verdict(2, dft_err < 1e-10 and cwt_err < 1e-10,
                f"dft vs direct sum {dft_err:.2e}, cwt vs direct sum {cwt_err:.2e} (< 1e-10)",
                time.perf_counter() - t0, 30)

    def test_3_frame_bounds(self, verdict):
        t0 = time.perf_counter()
        tc = TransformConfig()
        probes = philox(SEED, 120).standard_normal((100, 128))
        fb = estimate_frame_bounds(tc.scales(), tc.sigma, tc.xi, probes, tc.truncation)
        ok = 0 < fb.a_lower <= fb.b_upper < math.inf and math.isfinite(fb.ratio) and fb.n_probes == 100
        verdict(3, ok, f"A = {fb.a_lower:.6g}, B = {fb.b_upper:.6g}, B/A = {fb.ratio:.6g} over {fb.n_probes} probes",
                time.perf_counter() - t0, 60)


class TestGradients:
    def test_4_gradient_checks(self, verdict):
        t0 = time.perf_counter()
        reports = layer_family_checks(SEED)
        comp = composition_check(SEED)
        worst_name = max(reports, key=lambda k: reports[k].max_rel_error)
        worst = reports[worst_name].max_rel_error
        small = max(parameter_counts().values()) <= 10_000
        ok = worst <= TOLERANCE and comp.max_rel_error <= TOLERANCE and small
        verdict(4, ok, f"{len(reports)} families, worst {worst_name} {worst:.2e}; composition "
                f"{comp.max_rel_error:.2e} ({comp.skipped_kinks}/{comp.checked} kink-straddling coordinates "
                f"skipped) on backend {kernels.BACKEND} (<= {TOLERANCE:g})", time.perf_counter() - t0, 120)


class TestObjectives:
    def test_5_ntxent_cases(self, verdict):
        errs = []
        for tau in (0.2, 0.5, 1.0):
            got = ntxent_pair(np.eye(2), np.eye(2), tau).data
            errs.append(float(np.abs(got - math.log1p(math.exp(-1.0 / tau))).max()))
        for n in (2, 5, 16, 64):
            z = np.tile([0.5, -1.0, 2.0, 0.25], (n, 1))
            errs.append(float(np.abs(ntxent_pair(z, z, 0.2).data - math.log(n)).max()))
        verdict(5, max(errs) < 1e-9, f"max error against log(1+e^(-1/tau)) and log N: {max(errs):.2e} (< 1e-9)")

    def test_6_invariance_bound(self, verdict):
        t0 = time.perf_counter()
        sweep = invariance_sweep(seed=SEED)
        worst = min(r.slack for r in sweep)
        tight = check_invariance_bound(InvarianceBatchSpec(1, 0.0, 0, 16), 0.2, SEED)
        ok = (len(sweep) == 24 and all(r.passed for r in sweep) and abs(tight.slack) <= 1e-9
              and abs(tight.measured_loss - math.log(2)) <= 1e-9)
        verdict(6, ok, f"24-cell sweep min slack {worst:.2e}; tight case {tight.measured_loss:.9f} vs log 2, "
                f"slack {tight.slack:.1e}", time.perf_counter() - t0, 5)


class TestConcentration:
    def test_7_angle_statistics(self, verdict):
        t0 = time.perf_counter()
        d, n = 128, 1000
        u, v = uniform_sphere(n, d, SEED, 0), uniform_sphere(n, d, SEED, 1)
        theta = same_sample_angles(u, v)
        mean_ok = abs(theta.mean() - math.pi / 2) < 0.02
        bound = levy_bound(d, 0.3)
        freq = float((np.abs(np.cos(theta)) > 0.3).mean())
        freq_mc = exceedance_frequency(d, 0.3, 100_000, SEED)
        spread = float(np.abs(pairwise_angle_spread(u[:200], v[:200])).max())
        ok = mean_ok and freq <= bound and freq_mc <= bound and spread > 1.0
        verdict(7, ok, f"mean angle {theta.mean():.4f} (pi/2 +- 0.02: {mean_ok}); Pr(|cos| > 0.3) {freq:.5f} "
                f"over {n} pairs, {freq_mc:.5f} over 1e5 (bound {bound:.5f}); max |delta_ij| {spread:.3f} "
                f"(> 1.0 required)", time.perf_counter() - t0, 30)


def _end_to_end(tmp_dir=None):
    """Pretrain, mapper phase and probes on the default synthetic task."""
    t0 = time.perf_counter()
    ds = generate_synthetic_classification(SyntheticConfig(samples_per_class=300, split=[2 / 3, 0.0, 1 / 3]), SEED)
    train, test = ds.split(SPLIT_TRAIN), ds.split(SPLIT_TEST)
    tc = TransformConfig()
    spec, scal = compute_views(train, tc)
    out = {"n_train": train.n, "n_test": test.n}
    if tmp_dir is not None:
        cache_views(train, tmp_dir, tc, (spec, scal))
        spec2, scal2, _ = load_views(tmp_dir, train, tc)
        out["cache_bitwise"] = (np.array_equal(spec.magnitudes, spec2.magnitudes)
                                and np.array_equal(spec.phases, spec2.phases)
                                and np.array_equal(scal.coefficients, scal2.coefficients))
        spec, scal = spec2, scal2
    cfg = TrainConfig(batch_size=128, epochs=30, mapper_epochs=20, tau=0.2, seed=SEED)
    bcfg = bundle_config_for(train, tc.num_scales)
    bundle, log = pretrain(train, spec, scal, cfg, bundle_cfg=bcfg)
    mapper_log = []
    bundle = train_latent_mappers(bundle, train, spec, scal, cfg, mapper_log)
    pc = ProbeConfig()

    def probe(b, parts):
        f_tr, f_te = extract_features(b, train, parts), extract_features(b, test, parts)
        p = train_linear_probe(f_tr, train.labels, "classification", pc.lr, pc.epochs, SEED, 3, pc.standardize)
        return evaluate_classification(p, f_te, test.labels)["accuracy"]

    out["acc_full"] = probe(bundle, ("t", "F", "W"))
    out["acc_t"] = probe(bundle, ("t",))
    out["acc_random"] = probe(build_bundle(bcfg, SEED, with_h_mappers=True), ("t", "F", "W"))
    out.update(log_digest=log.digest(), mapper_log=mapper_log, hash=bundle.hash(),
               elapsed=time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    first = _end_to_end()
    second = _end_to_end(str(tmp_path_factory.mktemp("cache")))
    return first, second


class TestEndToEnd:
    def test_8_synthetic_ssl(self, runs, verdict):
        r = runs[0]
        gap = r["acc_full"] - r["acc_random"]
        ok = r["acc_full"] >= 0.85 and gap >= 0.10 and (r["n_train"], r["n_test"]) == (600, 300)
        verdict(8, ok, f"trained probe accuracy {r['acc_full']:.4f} (>= 0.85), untrained bundle "
                f"{r['acc_random']:.4f}, gap {100 * gap:.1f} points (>= 10 required)", r["elapsed"], 600)

    def test_9_mapper_concatenation(self, runs, verdict):
        r = runs[0]
        ok = r["acc_full"] >= r["acc_t"] - 0.02
        verdict(9, ok, f"[h_t; mapped F; mapped W] accuracy {r['acc_full']:.4f} vs h_t alone {r['acc_t']:.4f} "
                f"(allowed drop 2 points)")

    def test_10_determinism(self, runs, verdict):
        a, b = runs
        same_log = a["log_digest"] == b["log_digest"] and a["mapper_log"] == b["mapper_log"]
        same_hash = a["hash"] == b["hash"]
        ok = same_log and same_hash and b["cache_bitwise"]
        verdict(10, ok, f"loss logs identical: {same_log}; parameter hash identical: {same_hash} "
                f"({a['hash'][:16]}); cache round-trip bitwise: {b['cache_bitwise']}")
