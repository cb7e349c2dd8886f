"""Acceptance criteria, one test each.

Every test records a single ``PASS``/``FAIL`` line with the measured value and
its threshold (listed again at the end of the run), then asserts. The repeated
experiments are shared through module-scoped fixtures; the whole module takes
tens of minutes on one core, most of it the jackknife+ run (200 logistic fits
per repetition).

Run it on its own with ``pytest tests/test_acceptance.py`` or
``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import sys
import time

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES

from adaptive_sets.cli import main as cli_main
from adaptive_sets.core import RandomSource
from adaptive_sets.harness import ExperimentConfig, run_experiment
from adaptive_sets.oracle_sets import generalized_inverse_set_S, sort_probs
from adaptive_sets.scores import conformity_score, conformity_score_bruteforce, conformity_scores
from adaptive_sets.synthdata import generate_multinomial_inhomogeneous

SEED = 1
ALPHA = 0.1


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _random_triples(count: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        C = int(rng.integers(2, 21))
        p = rng.dirichlet(np.full(C, rng.choice([0.2, 1.0, 5.0])))
        if rng.random() < 0.2:
            p[rng.random(C) < 0.25] = 0.0
            if p.sum() == 0:
                p[0] = 1.0
            p /= p.sum()
        if rng.random() < 0.2 and C > 2:
            i, j = rng.choice(C, 2, replace=False)
            if p[i] > 0:
                p[j] = p[i]
                p /= p.sum()
        sp = sort_probs(p, RandomSource(int(rng.integers(2**31))))
        yield sp, int(rng.integers(C)), float(rng.random()), rng


def _mean(result, key):
    return float(np.mean([getattr(r, key) for r in result.reports]))


# shared runs -------------------------------------------------------------------

def _config(**kw):
    return ExperimentConfig(synthetic=True, alpha=ALPHA, seed=SEED, **kw)


@pytest.fixture(scope="module")
def sc_oracle():
    return run_experiment(_config(method="sc", black_box="oracle", n_train=1000, n_test=5000,
                                  reps=100))


@pytest.fixture(scope="module")
def hcc_oracle():
    return run_experiment(_config(method="hcc", black_box="oracle", n_train=1000, n_test=5000,
                                  reps=100))


@pytest.fixture(scope="module")
def small_logistic():
    """The three calibrators on the same 50 draws of 200 training / 2000 test rows."""
    common = dict(black_box="logistic", n_train=200, n_test=2000, reps=50)
    return {
        "jk+": run_experiment(_config(method="jk+", **common)),
        "cv+": run_experiment(_config(method="cv+", folds=10, **common)),
        "sc": run_experiment(_config(method="sc", **common)),
    }


@pytest.fixture(scope="module")
def cv_logistic_1000():
    return run_experiment(_config(method="cv+", black_box="logistic", folds=10, n_train=1000,
                                  n_test=2000, reps=50))


# criteria ---------------------------------------------------------------------

def test_c1_closed_form_matches_bruteforce():
    t0 = time.perf_counter()
    worst = 0.0
    for sp, y, u, _ in _random_triples(10_000, 101):
        worst = max(worst, abs(conformity_score(sp, y, u) - conformity_score_bruteforce(sp, y, u)))
    secs = time.perf_counter() - t0
    ok = worst < 1e-9 and secs < 60
    report(1, ok, f"max |closed form - brute force| = {worst:.2e} (< 1e-9), {secs:.1f}s (< 60s)")
    assert ok


def test_c2_duality():
    t0 = time.perf_counter()
    mismatches = checked = 0
    for sp, y, u, rng in _random_triples(10_000, 202):
        u = min(max(u, 1e-9), 1 - 1e-9)
        E = conformity_score(sp, y, u)
        for tau in np.concatenate([rng.random(8), [0.0, 1.0]]):
            if abs(tau - E) < 1e-12:
                continue
            checked += 1
            mismatches += (y in generalized_inverse_set_S(sp, u, tau)) != (E < tau)
    secs = time.perf_counter() - t0
    ok = mismatches == 0 and secs < 60
    report(2, ok, f"{mismatches} mismatches in {checked} (set, level) checks (need 0), {secs:.1f}s")
    assert ok


def test_c3_split_marginal_coverage(sc_oracle):
    cov = _mean(sc_oracle, "marginal_coverage")
    lo, hi = 0.900 - 0.005, 0.902 + 0.005
    ok = sc_oracle.n_failed == 0 and lo <= cov <= hi
    report(3, ok, f"mean marginal coverage {cov:.4f} in [{lo:.3f}, {hi:.3f}]")
    assert ok


def test_c4_oracle_worst_slab(sc_oracle):
    wsc = _mean(sc_oracle, "wsc_coverage")
    ok = wsc >= 0.87
    report(4, ok, f"mean worst-slab coverage {wsc:.4f} >= 0.87")
    assert ok


def test_c5_hcc_gap(sc_oracle, hcc_oracle):
    gaps = np.array([a.wsc_coverage - b.wsc_coverage
                     for a, b in zip(sc_oracle.reports, hcc_oracle.reports)])
    wins = int((gaps >= 0.03).sum())
    ok = len(gaps) == 100 and wins >= 90
    report(5, ok, f"HCC worst-slab coverage >= 0.03 below SC in {wins}/100 repetitions (need 90); "
                  f"median gap {np.median(gaps):.3f}")
    assert ok


def test_c6_jackknife_coverage(small_logistic):
    res = small_logistic["jk+"]
    covs = np.array([r.marginal_coverage for r in res.reports])
    ok = res.n_failed == 0 and covs.min() >= 0.80 and covs.mean() >= 0.88
    report(6, ok, f"JK+ coverage min {covs.min():.4f} (>= 0.80), mean {covs.mean():.4f} (>= 0.88) "
                  f"over {covs.size} repetitions, {res.repetitions[0].n_models} models each")
    assert ok


def test_c7_cvplus_bound(cv_logistic_1000):
    n, K = 1000, 10
    slack = min(2 * (1 - 1 / K) / (n / K + 1), (1 - K / n) / (K + 1))
    bound = 1 - 2 * ALPHA - slack - 0.01
    cov = _mean(cv_logistic_1000, "marginal_coverage")
    ok = cv_logistic_1000.n_failed == 0 and cov >= bound
    report(7, ok, f"CV+ mean marginal coverage {cov:.4f} >= {bound:.4f}")
    assert ok


def test_c8_oracle_scores_uniform():
    crit = 0.0163
    below = 0
    for seed in range(100):
        rs = RandomSource(10_000 + seed)
        data_rng, u_rng = rs.split(2)
        synth = generate_multinomial_inhomogeneous(10_000, rng=data_rng)
        P = synth.spec.class_probabilities(synth.dataset.features)
        E = conformity_scores(P, synth.dataset.labels, u_rng.uniform(10_000), u_rng)
        below += stats.kstest(E, "uniform").statistic < crit
    ok = below >= 95
    report(8, ok, f"KS statistic < {crit} in {below}/100 seeds (need 95)")
    assert ok


def test_c9_size_ordering(small_logistic):
    jk, cv, sc = (_mean(small_logistic[m], "avg_size") for m in ("jk+", "cv+", "sc"))
    ok = jk <= cv <= sc + 0.05
    report(9, ok, f"mean set size JK+ {jk:.3f} <= CV+ {cv:.3f} <= SC {sc:.3f} + 0.05")
    assert ok


def test_c10_determinism(tmp_path):
    base = ["--method", "cv+", "--black-box", "logistic", "--folds", "5", "--n-train", "150",
            "--n-test", "500", "--reps", "3", "--seed", "42"]
    verdicts = {}
    for fmt in ("csv", "json"):
        out = tmp_path / f"report.{fmt}"
        codes, blobs = [], []
        for _ in range(2):
            codes.append(cli_main(base + ["--format", fmt, "--output", str(out)]))
            blobs.append(out.read_bytes())
            out.unlink()
        verdicts[fmt] = codes == [0, 0] and blobs[0] == blobs[1]
    ok = all(verdicts.values())
    report(10, ok, "reports byte-identical across reruns: "
                   + ", ".join(f"{k} {v}" for k, v in verdicts.items()))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
