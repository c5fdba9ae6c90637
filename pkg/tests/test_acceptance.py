"""Acceptance criteria 1-9, one test each.

Every test prints (and records for the terminal summary) a single
``criterion N: PASS|FAIL`` line with the measured quantities.
"""
import csv
import time
from contextlib import contextmanager
from itertools import permutations

import numpy as np
import pytest
from scipy.stats import chisquare

from visipost import classifiers as clf
from visipost import pipeline as pl
from visipost.domain import build_scale, discretize
from visipost.mvconstruct import ecc, equidistant_quantiles, schaake_shuffle
from visipost.mvscore import (PreRankKind, dependence_weights, energy_score, histogram,
                              stationary_bootstrap_ci, variogram_score)
from visipost.synth import SynthConfig, generate
from visipost.uniscore import (RankHistogram, crps_discrete, rank_histogram, reliability_index,
                               verification_rank)

from conftest import CRITERIA_LINES
from oracles import crps_double_sum, ensemble_crps_double_sum, spearman_tie_free, variogram_triple_loop

SCALE = build_scale()


@contextmanager
def criterion(n, title):
    info = {}
    try:
        yield info
    except BaseException:
        line = f"criterion {n}: FAIL  {title}  {info}"
        CRITERIA_LINES.append(line)
        print(line)
        raise
    line = f"criterion {n}: PASS  {title}  {info}"
    CRITERIA_LINES.append(line)
    print(line)


def test_criterion_1_scoring_oracles():
    with criterion(1, "scoring oracles") as info:
        rng = np.random.default_rng(1)
        t0 = time.perf_counter()
        worst = {"crps": 0.0, "es": 0.0, "vs": 0.0}
        values = SCALE.meters
        for i in range(1000):
            conc = float(rng.choice([0.05, 0.5, 5.0]))
            pmf = rng.dirichlet(np.full(84, conc))
            y = int(rng.integers(84))
            ref = crps_double_sum(pmf, y, values)
            worst["crps"] = max(worst["crps"], abs(crps_discrete(pmf, y, SCALE) - ref) / max(abs(ref), 1e-300))
            K = int(rng.integers(1, 52))
            members = rng.choice(values, size=K)
            obs = float(rng.choice(values))
            ref = ensemble_crps_double_sum(members, obs)
            got = energy_score(members[:, None], np.array([obs]))
            worst["es"] = max(worst["es"], abs(got - ref) / max(abs(ref), 1e-300))
            D = int(rng.integers(1, 6))
            sample = rng.choice(values, size=(int(rng.integers(1, 21)), D))
            o = rng.choice(values, size=D)
            w = rng.uniform(0, 1, size=(D, D))
            ref = variogram_triple_loop(sample, o, w, 0.5)
            worst["vs"] = max(worst["vs"], abs(variogram_score(sample, o, w, 0.5) - ref) / max(abs(ref), 1.0))
        info.update({k: f"{v:.2e}" for k, v in worst.items()})
        info["seconds"] = round(time.perf_counter() - t0, 2)
        assert worst["crps"] <= 1e-9 and worst["es"] <= 1e-9 and worst["vs"] <= 1e-10
        assert info["seconds"] < 30


def test_criterion_2_degenerate_closed_forms():
    with criterion(2, "degenerate closed forms") as info:
        rng = np.random.default_rng(2)
        member, obs = rng.normal(size=(1, 5)), rng.normal(size=5)
        assert energy_score(member, obs) == np.linalg.norm(member[0] - obs)
        assert variogram_score(np.tile(obs, (7, 1)), obs) == 0.0
        for y in (0, 41, 83):
            assert crps_discrete(np.eye(84)[y], y, SCALE) == 0.0
        assert reliability_index(RankHistogram(np.full(52, 7))) == 0.0
        ri = reliability_index(RankHistogram(np.eye(52, dtype=int)[10]))
        info["one_bin_RI_K51"] = ri
        assert abs(ri - 2 * 51 / 52) < 1e-12


def test_criterion_3_reordering_invariants():
    with criterion(3, "reordering invariants") as info:
        rng = np.random.default_rng(3)
        ds = generate(SynthConfig(n_stations=4, n_days=120, lead_times=(6,), ensemble_size=11, seed=3))
        ids = ds.station_ids
        days = ds.init_dates()
        spearman_checked = 0
        for i in range(500):
            K, D = 11, 4
            raw = rng.normal(size=(K, D))
            pmfs = rng.dirichlet(np.full(84, 0.3), size=D)
            sorted_s = equidistant_quantiles(pmfs, K, SCALE).T
            out = ecc(sorted_s, raw, rng)
            assert np.array_equal(np.sort(out, axis=0), sorted_s)
            distinct = np.sort(rng.choice(np.arange(5000.0), size=(K, D), replace=False), axis=0)
            out = ecc(distinct, raw, rng)
            assert all(spearman_tie_free(out[:, d], raw[:, d]) == 1.0 for d in range(D))
            day = days[int(rng.integers(60, len(days)))]
            out, tpl = schaake_shuffle(sorted_s, ds, ids, 60, day, 6, K, rng, return_template=True)
            assert np.array_equal(np.sort(out, axis=0), sorted_s)
            out, tpl = schaake_shuffle(distinct, ds, ids, 60, day, 6, K, rng, return_template=True)
            for d in range(D):
                if len(np.unique(tpl.values[:, d])) == K:
                    spearman_checked += 1
                    assert spearman_tie_free(out[:, d], tpl.values[:, d]) == 1.0
        counts = {p: 0 for p in permutations((1.0, 2.0, 3.0))}
        for _ in range(10000):
            counts[tuple(ecc(np.array([[1.0], [2.0], [3.0]]), np.zeros((3, 1)), rng)[:, 0])] += 1
        p = chisquare(list(counts.values())).pvalue
        info.update(ssh_tie_free_columns=spearman_checked, all_ties_p=round(p, 4))
        assert spearman_checked > 0 and p > 0.001


def test_criterion_4_polr():
    with criterion(4, "POLR intercept-only and masked coefficient") as info:
        rng = np.random.default_rng(4)
        y = rng.choice([3, 4, 4, 7, 9, 9, 12], size=500)
        m = clf.polr_fit(np.empty((500, 0)), y)
        emp = np.array([(y <= k).mean() for k in range(3, 12)])
        err_cdf = np.max(np.abs(clf.polr_cdf(m, np.empty((1, 0)))[0] - emp))
        y2 = rng.integers(30, 45, size=300)
        x = -(y2 + rng.uniform(0, 0.5, size=300))
        masked = clf.polr_fit(x[:, None], y2, mask=np.array([True]))
        base = clf.polr_fit(np.empty((300, 0)), y2)
        info.update(cdf_err=f"{err_cdf:.1e}", coef=f"{masked.coefficients[0]:.1e}",
                    loglik_gap=f"{abs(masked.loglik - base.loglik):.1e}")
        assert err_cdf < 1e-6
        assert 0 <= masked.coefficients[0] < 1e-6
        assert abs(masked.loglik - base.loglik) < 1e-8


def test_criterion_5_mlp():
    with criterion(5, "MLP gradients and toy overfit") as info:
        rng = np.random.default_rng(5)
        h = 1e-6
        worst = 0.0
        for _ in range(20):
            n_in = int(rng.integers(1, 5))
            hidden = tuple(int(v) for v in rng.integers(2, 6, size=int(rng.integers(1, 3))))
            m = clf.mlp_init(n_in, hidden, seed=int(rng.integers(1000)))
            for w in m.weights:
                w += rng.normal(scale=0.5, size=w.shape)
            for b in m.biases:
                b += rng.normal(scale=0.5, size=b.shape)
            X = rng.normal(size=(6, n_in))
            y = rng.integers(0, 84, size=6)
            _, gw, gb = clf.mlp_loss_and_grad(m, X, y, 1e-3)
            a, n = [], []
            for params, grads in ((m.weights, gw), (m.biases, gb)):
                for p, g in zip(params, grads):
                    for idx in np.ndindex(p.shape):
                        old = p[idx]
                        p[idx] = old + h
                        fp = clf.mlp_loss_and_grad(m, X, y, 1e-3)[0]
                        p[idx] = old - h
                        fm = clf.mlp_loss_and_grad(m, X, y, 1e-3)[0]
                        p[idx] = old
                        a.append(g[idx])
                        n.append((fp - fm) / (2 * h))
            a, n = np.array(a), np.array(n)
            worst = max(worst, np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n)))
        X = rng.normal(size=(20, 3))
        y = rng.integers(0, 84, size=20)
        fit = clf.mlp_fit(X, y, hidden=(64, 64), opts=clf.TrainOptions(
            max_iter=3000, validation_fraction=0.0, l2=0.0, batch_size=20, seed=3))
        info.update(worst_rel_err=f"{worst:.1e}", overfit_ce=round(fit.metadata["train_loss"], 4))
        assert worst < 1e-5
        assert fit.metadata["train_loss"] < 0.05


def _synthetic_ranks(dispersion, seed):
    ds = generate(SynthConfig(n_stations=3, n_days=5000, lead_times=(6,), dispersion=dispersion,
                              ensemble_bias=0.0, seed=seed))
    rng = np.random.default_rng(seed)
    ranks, cases = [], []
    for day in ds.init_dates():
        cs = [ds.case(s, day, 6) for s in ds.station_ids]
        members = SCALE.meters[discretize(np.stack([c.ensemble.members() for c in cs], axis=1))]
        obs = SCALE.meters[np.array([c.observation for c in cs])]
        ranks.append(verification_rank(members[:, 0], obs[0], rng))
        cases.append((members, obs))
    return ds, ranks, cases, rng


def test_criterion_6_calibration_diagnostics():
    with criterion(6, "calibration diagnostics") as info:
        ds, ranks, cases, rng = _synthetic_ranks(1.0, 6)
        h = rank_histogram(ranks, 51)
        assert h.total == 5000 and len(h.counts) == 52
        pvals = {"univariate": chisquare(h.counts).pvalue}
        weights = dependence_weights(ds.stations)
        for kind in PreRankKind:
            pvals[kind.value] = chisquare(histogram(kind, cases, rng, weights).counts).pvalue
        _, ranks_u, _, _ = _synthetic_ranks(0.5, 6)
        hu = rank_histogram(ranks_u, 51)
        expected = hu.total / 52
        info.update({k: round(v, 4) for k, v in pvals.items()})
        info.update(underdispersed_end_bins=(int(hu.counts[0]), int(hu.counts[-1])), expected=round(expected, 1))
        assert all(p > 0.001 for p in pvals.values())
        assert hu.counts[0] >= 2 * expected and hu.counts[-1] >= 2 * expected


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    config = pl.ExperimentConfig(workers=1)
    t0 = time.perf_counter()
    pl.run(config, out)
    return out, time.perf_counter() - t0


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_criterion_7_direction_reproduction(full_run):
    with criterion(7, "direction reproduction on synthetic data") as info:
        out, seconds = full_run
        info["seconds"] = round(seconds, 1)
        scores = {(r["model"], int(r["lead_time_h"]), r["score"]): float(r["mean"])
                  for r in _read(out / "scores.csv")}
        leads = (6, 48, 120)
        models = ("POLR-L", "MLP-C", "POLR-L+aux", "MLP-C+aux")
        # (a)
        a = all(scores[(m, l, "CRPS")] < min(scores[("RAW", l, "CRPS")], scores[("CLIM", l, "CRPS")])
                for m in models for l in leads)
        # (b)
        b_mean = all(scores[(m + "+aux", l, "CRPS")] < scores[(m, l, "CRPS")]
                     for m in ("POLR-L", "MLP-C") for l in leads)
        report = _read(out / "report.csv")
        ci = {r["model"]: (float(r["skill_lo"]), float(r["skill_hi"])) for r in report
              if r["lead_time_h"] == "6" and r["score"] == "CRPS" and r["reference"] == r["model"][:-4]
              and r["model"].endswith("+aux")}
        b_ci = len(ci) == 2 and all(lo > 0 for lo, _ in ci.values())
        # (c)
        c = all(scores[(f"{m}/{meth}", l, "VS")] < min(scores[(f"{m}/NAIVE", l, "VS")], scores[("MVCLIM", l, "VS")])
                for m in models for meth in ("ECC", "SSH") for l in leads)
        # (d)
        ri = {(r["model"], int(r["lead_time_h"]), r["kind"]): float(r["ri"]) for r in _read(out / "reliability.csv")}
        d = all(ri[(f"{m}/ECC", l, k.value)] < ri[(f"{m}/NAIVE", l, k.value)]
                for m in models for l in leads for k in PreRankKind)
        info.update(a=a, b_mean=b_mean, b_ci={k: tuple(round(x, 4) for x in v) for k, v in ci.items()},
                    c=c, d=d)
        assert a and b_mean and b_ci and c and d
        assert seconds < 600


def test_criterion_8_bootstrap_coverage():
    with criterion(8, "stationary bootstrap coverage") as info:
        rng = np.random.default_rng(8)
        covered = 0
        for trial in range(500):
            x = rng.standard_normal(200)
            r = stationary_bootstrap_ci(x, B=2000, mean_block_length=6, seed=trial)
            covered += r.lo <= 0.0 <= r.hi
        info["coverage"] = covered / 500
        assert 0.93 <= covered / 500 <= 0.97


def test_criterion_9_determinism(tmp_path):
    with criterion(9, "determinism across reruns and worker counts") as info:
        small = dict(synthetic=dict(n_stations=5, n_days=90, lead_times=[6, 48], ensemble_size=21, seed=9),
                     models=["POLR-R", "POLR-C2", "MLP-C2"], ensemble_size=21, window_days=50,
                     climatology_days=20, bootstrap_samples=200, mlp_max_epochs=30)
        outputs = []
        for name, workers in (("a", 1), ("b", 1), ("c", 3)):
            pl.run(pl.ExperimentConfig(workers=workers, **small), tmp_path / name)
            outputs.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).iterdir())})
        info["files"] = len(outputs[0])
        assert outputs[0] == outputs[1]
        assert outputs[0] == outputs[2]
