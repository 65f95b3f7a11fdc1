"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion lines.
Numeric tolerances and runtime budgets are pinned in the assertions.
"""

import contextlib
import json
import time

import numpy as np
import pytest

from svlr import backend as be
from svlr import evaluation as ev
from svlr import gmm
from svlr import ivector as iv
from svlr import pipeline as pl
from svlr.benchmark import benchmark_config, benchmark_dict
from svlr.cli import main as cli_main
from svlr.config import config_from_dict
from svlr.data import generate_corpus
from svlr.dvector import init_mlp, loss_and_gradients

from tests.test_backend import lstsq_descent_oracle
from tests.test_dvector import max_relative_error, numeric_gradients
from tests.test_evaluation import eer_oracle, make_scored, min_dcf_oracle
from tests.test_ivector import dense_oracle


@contextlib.contextmanager
def criterion(number, description, budget=None):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] criterion {number:2d}: {description}", flush=True)
        raise
    elapsed = time.perf_counter() - start
    if budget is not None and elapsed > budget:
        print(f"[FAIL] criterion {number:2d}: {description} "
              f"(runtime {elapsed:.1f}s over the {budget}s budget)", flush=True)
        raise AssertionError(f"criterion {number} exceeded its runtime budget")
    print(f"[PASS] criterion {number:2d}: {description} ({elapsed:.2f}s)", flush=True)


def test_criterion_01_lr_matches_iterative_least_squares():
    with criterion(1, "closed-form regression matches the descent oracle", budget=5.0):
        rng = np.random.default_rng(101)
        for _ in range(20):
            dim = int(rng.integers(2, 11))
            n = int(rng.integers(2 * dim + 5, 101))
            X = rng.standard_normal((dim, n))
            Y, _ = be.indicator_matrix([f"s{j % (dim - 1 or 1)}" for j in range(n)])
            model = be.fit_lr(X, Y, ridge=0.0)
            oracle = lstsq_descent_oracle(X, Y)
            assert np.abs(model.A - oracle).max() <= 1e-8
            grad = 2.0 * ((X @ X.T) @ model.A - X @ Y.T)
            assert np.abs(grad).max() <= 1e-8


def test_criterion_02_ivector_matches_dense_inverse():
    with criterion(2, "embedding extraction matches dense explicit-inverse evaluation",
                   budget=2.0):
        rng = np.random.default_rng(202)
        for _ in range(50):
            c = int(rng.integers(1, 4))
            f = int(rng.integers(1, 4))
            r = int(rng.integers(1, 5))
            tv = iv.TvModel(rng.standard_normal((c * f, r)), rng.uniform(0.3, 2.0, c * f))
            n = rng.uniform(0.0, 8.0, c)
            first = rng.standard_normal((c, f))
            got = iv.extract_ivector(tv, gmm.BwStats(n, first)).x
            assert np.abs(got - dense_oracle(tv, n, first)).max() <= 1e-10
        tv = iv.TvModel(rng.standard_normal((4, 2)), rng.uniform(0.5, 1.5, 4))
        zero = iv.extract_ivector(tv, gmm.BwStats(np.zeros(2), np.zeros((2, 2)))).x
        assert np.all(zero == 0.0)


def test_criterion_03_metric_sweep_oracles():
    with criterion(3, "detection metrics match exhaustive sweep oracles exactly",
                   budget=5.0):
        rng = np.random.default_rng(303)
        for _ in range(200):
            n_tar = int(rng.integers(1, 26))
            n_non = int(rng.integers(1, 51 - n_tar))
            # quarter-integer grid: ties occur and 2s+1 stays exact
            tar = (rng.integers(-8, 9, n_tar) / 4).tolist()
            non = (rng.integers(-8, 9, n_non) / 4).tolist()
            scored = make_scored(tar, non)
            assert ev.eer(scored) == eer_oracle(tar, non)
            for params in (ev.DCF08, ev.DCF10):
                assert ev.min_dcf(scored, params) == min_dcf_oracle(tar, non, params)
            shifted = make_scored([2 * s + 1 for s in tar], [2 * s + 1 for s in non])
            assert ev.eer(shifted) == ev.eer(scored)
        perfect = make_scored([2.0, 3.0], [0.0, 1.0])
        assert ev.eer(perfect) == 0.0
        assert ev.min_dcf(perfect, ev.DCF08) == 0.0
        assert ev.min_dcf(perfect, ev.DCF10) == 0.0


def test_criterion_04_relative_improvement_formula():
    with criterion(4, "relative-improvement formula reproduces the published value",
                   budget=1.0):
        assert ev.relative_improvement(0.69, 1.24) == pytest.approx(-0.4435, abs=5e-4)


def test_criterion_05_gmm_em_monotone_log_likelihood():
    with criterion(5, "background-model EM log-likelihood is non-decreasing", budget=30.0):
        spec = config_from_dict(benchmark_dict()).synth
        _, features = generate_corpus(spec)
        frames = np.vstack([m.frames for m in features.values()])
        for seed in range(10):
            ubm = gmm.train_ubm_em(frames, 16, n_iters=25, seed=seed)
            ll = ubm.em_log_likelihoods
            assert np.all(np.diff(ll) >= -1e-8 * np.abs(ll[:-1]))


def test_criterion_06_tv_subspace_recovery():
    with criterion(6, "subspace training recovers the generating loading matrix",
                   budget=60.0):
        from scipy.linalg import subspace_angles

        from tests.test_ivector import synthetic_subspace_stats

        rng = np.random.default_rng(606)
        ubm = gmm.Ubm(np.full(2, 0.5), rng.standard_normal((2, 3)), np.ones((2, 3)))
        true_T = rng.standard_normal((6, 2)) * 1.5
        stats = synthetic_subspace_stats(rng, true_T, np.ones(6), 500, 3)
        tv = iv.train_tv(stats, ubm, n_factors=2, n_iters=20, seed=0)
        assert subspace_angles(tv.T, true_T).max() < 0.05


def test_criterion_07_neural_gradient_check():
    with criterion(7, "analytic gradients match central finite differences", budget=10.0):
        rng = np.random.default_rng(707)
        mlp = init_mlp(5, (7, 6), 4, seed=7)
        x = rng.standard_normal((6, 5))
        y = rng.integers(0, 4, 6)
        _, analytic_w, analytic_b = loss_and_gradients(mlp, x, y)
        numeric_w, numeric_b = numeric_gradients(mlp, x, y, step=1e-5)
        assert max_relative_error(analytic_w, numeric_w) <= 1e-5
        assert max_relative_error(analytic_b, numeric_b) <= 1e-5


def test_criterion_08_wccn_whitens_within_class_covariance():
    with criterion(8, "whitening transform yields identity within-class covariance"):
        rng = np.random.default_rng(808)
        for _ in range(10):
            dim = int(rng.integers(2, 6))
            n_classes = int(rng.integers(3, 8))
            X, labels = [], []
            scale_chol = np.linalg.cholesky(
                np.diag(rng.uniform(0.3, 3.0, dim))
            )
            for c in range(n_classes):
                mu = 3.0 * rng.standard_normal(dim)
                for _ in range(int(rng.integers(4, 12))):
                    X.append(mu + scale_chol @ rng.standard_normal(dim))
                    labels.append(f"c{c}")
            X = np.column_stack(X)
            model = be.fit_wccn(X, labels)
            cov = be.average_within_class_covariance(be.apply_wccn(model, X), labels)
            assert np.abs(cov - np.eye(dim)).max() <= 1e-6


def test_criterion_09_end_to_end_benchmark_ordering():
    with criterion(9, "regression back-end leads the synthetic benchmark", budget=300.0):
        report = pl.run_comparison(benchmark_config(n_runs=20))
        means = {
            name: block["30-15"]["mean"]["eer"]
            for name, block in report["back_ends"].items()
        }
        best_other = min(means[n] for n in ("wccn_cosine", "lda_cosine", "lda_plda"))
        assert means["lr_cosine"] <= means["cosine"], means
        assert means["lr_cosine"] <= 1.10 * best_other, means


def test_criterion_10_fusion_sanity():
    with criterion(10, "score fusion never degrades past the worse system"):
        fused_cfg = benchmark_config(
            n_runs=20, front_end=["gmm_ivector", "posterior_ivector"], back_end="lr_cosine"
        )
        report = pl.run_fusion(fused_cfg)
        block = report["conditions"]["30-15"]
        systems = list(block["systems"].values())
        for k, fused_run in enumerate(block["fused"]["per_run"]):
            worse = max(system["per_run"][k]["eer"] for system in systems)
            assert fused_run["eer"] <= worse + 0.01

        self_cfg = benchmark_config(
            n_runs=5, front_end=["gmm_ivector", "gmm_ivector"], back_end="lr_cosine"
        )
        self_report = pl.run_fusion(self_cfg)
        self_block = self_report["conditions"]["30-15"]
        assert self_block["fused"]["per_run"] == self_block["systems"]["gmm_ivector"]["per_run"]


def test_criterion_11_compare_is_byte_deterministic(tmp_path):
    with criterion(11, "repeated compare invocations emit byte-identical reports"):
        config = benchmark_dict(n_runs=2, back_end=["cosine", "lr_cosine"])
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config))
        assert cli_main(["compare", "--config", str(path),
                         "--out-dir", str(tmp_path / "a")]) == 0
        assert cli_main(["compare", "--config", str(path),
                         "--out-dir", str(tmp_path / "b")]) == 0
        first = (tmp_path / "a" / "reports" / "comparison.json").read_bytes()
        second = (tmp_path / "b" / "reports" / "comparison.json").read_bytes()
        assert first == second
