"""End-to-end experiment: data, rolling-window training, prediction, multivariate
reconstruction, verification and bootstrap reports.

Work is split into independent chains, one per (model, training scheme,
feature set, lead time, training unit). A chain walks through the
verification dates, refits on the rolling window (warm-started from the
previous date) and predicts. All randomness is drawn from substreams keyed
by the task, so the worker count never changes a result.
"""
import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date, timedelta
from itertools import product
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import classifiers as clf
from .domain import as_date, discretize, format_time, load_directory, parse_time, to_datetime
from .errors import ConfigError, DataError, UnfitModelError, VisipostError, add_context
from .features import FeatureConfig, feature_matrix
from .mvconstruct import (climatology_window, ecc, equidistant_quantiles, mv_climatology,
                          naive_multivariate, read_mv_dump, reorder, schaake_template,
                          write_mv_dump)
from .mvscore import (PreRankKind, dependence_weights, energy_score, pre_rank, stationary_bootstrap_ci,
                      variogram_score, write_report)
from .rng import substream
from .synth import SynthConfig, generate
from .training import RollingWindow, cluster_stations, parse_scheme, write_cluster_dump
from .uniscore import (RankHistogram, crps_discrete, logs, rank_histogram, reliability_index,
                       verification_ranks, write_histogram_rows, write_score_rows)

WORKERS_ENV = "VISIPOST_WORKERS"
MODEL_TYPES = ("POLR", "MLP")
MV_METHODS = ("naive", "ecc", "ssh")
RAW, CLIM, MVCLIM = "RAW", "CLIM", "MVCLIM"


@dataclass
class ExperimentConfig:
    """Everything that determines an experiment's outputs.

    ``models`` entries look like ``"POLR-L"`` or ``"MLP-C"``;
    ``feature_sets`` is a subset of ``("base", "aux")``. Verification dates
    default to every date with a full training window behind it.
    """

    data_dir: str = None
    synthetic: dict = field(default_factory=dict)
    models: list = field(default_factory=lambda: ["POLR-L", "MLP-C"])
    feature_sets: list = field(default_factory=lambda: ["base", "aux"])
    lead_times: list = None
    window_days: int = 350
    climatology_days: int = 30
    ensemble_size: int = 51
    n_clusters: int = 4
    mv_methods: list = field(default_factory=lambda: list(MV_METHODS))
    mv_models: list = None
    verify_start: str = None
    verify_end: str = None
    bootstrap_samples: int = 2000
    mean_block_length: float = None
    level: float = 0.95
    p_min: float = clf.P_MIN
    quantile_rule: str = "midpoint"
    vs_weights: str = "unit"
    mlp_hidden: list = field(default_factory=lambda: [32, 16])
    mlp_learning_rate: float = 0.01
    mlp_batch_size: int = 128
    mlp_max_epochs: int = 300
    mlp_patience: int = 20
    mlp_l2: float = 1e-4
    mlp_validation_fraction: float = 0.1
    polr_max_iter: int = 200
    polr_gtol: float = 1e-8
    warm_start: bool = True
    seed: int = 0
    workers: int = None

    def validate(self):
        if not self.models or not self.feature_sets:
            raise ConfigError("at least one model and one feature set are required")
        for m in self.models:
            typ, _, scheme = m.partition("-")
            if typ not in MODEL_TYPES or not scheme:
                raise ConfigError(f"unknown model {m!r}; expected e.g. POLR-L or MLP-C")
            try:
                parse_scheme(scheme)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if set(self.feature_sets) - {"base", "aux"}:
            raise ConfigError("feature sets must be 'base' and/or 'aux'")
        if set(self.mv_methods) - set(MV_METHODS):
            raise ConfigError(f"multivariate methods must be among {MV_METHODS}")
        if self.window_days < 1 or self.climatology_days < 1 or self.ensemble_size < 1:
            raise ConfigError("window lengths and ensemble size must be positive")
        if self.vs_weights not in ("unit", "distance"):
            raise ConfigError("vs_weights must be 'unit' or 'distance'")
        if self.bootstrap_samples < 1 or not 0 < self.level < 1:
            raise ConfigError("invalid bootstrap settings")
        unknown = set(self.synthetic) - {f.name for f in fields(SynthConfig)}
        if unknown:
            raise ConfigError(f"unknown synthetic settings {sorted(unknown)}")
        for key in ("verify_start", "verify_end"):
            if getattr(self, key) is not None:
                try:
                    as_date(getattr(self, key))
                except ValueError:
                    raise ConfigError(f"{key} must be an ISO date") from None
        return self

    def labels(self):
        """Univariate model labels in run order, e.g. ``POLR-L+aux``."""
        return [f"{m}{'+aux' if fs == 'aux' else ''}" for m, fs in product(self.models, self.feature_sets)]

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from None
        return cls.from_dict(doc)


def parse_label(label):
    """``"MLP-C3+aux"`` -> ``("MLP", "C3", True)``."""
    base, _, aux = label.partition("+")
    typ, _, scheme = base.partition("-")
    return typ, scheme, aux == "aux"


def load_dataset(config):
    if config.data_dir:
        return load_directory(config.data_dir, ensemble_size=config.ensemble_size)
    return generate(SynthConfig(**config.synthetic))


# --------------------------------------------------------------------------
# feature cache
# --------------------------------------------------------------------------

@dataclass
class FeatureCache:
    """Per-lead arrays over the full calendar of init dates.

    ``X[(lead, fs)]`` has shape ``(n_days, D, M)`` with NaN rows for missing
    cases; ``y[lead]`` holds category indices or -1.
    """

    dates: list
    station_ids: tuple
    X: dict
    y: dict
    present: dict

    def index(self, day):
        return (as_date(day) - self.dates[0]).days


def build_cache(dataset, leads, feature_sets):
    init_dates = dataset.init_dates()
    if not init_dates:
        raise DataError("dataset contains no forecast cases")
    n_days = (init_dates[-1] - init_dates[0]).days + 1
    dates = [init_dates[0] + timedelta(days=i) for i in range(n_days)]
    ids = dataset.station_ids
    X, y, present = {}, {}, {}
    for lead in leads:
        yy = np.full((n_days, len(ids)), -1, dtype=np.int64)
        pres = np.zeros((n_days, len(ids)), dtype=bool)
        cases = []
        slots = []
        for i, day in enumerate(dates):
            for d, sid in enumerate(ids):
                case = dataset.case(sid, day, lead)
                if case is None:
                    continue
                pres[i, d] = True
                cases.append(case)
                slots.append((i, d))
                if case.observation is not None:
                    yy[i, d] = case.observation
        y[lead], present[lead] = yy, pres
        for fs in feature_sets:
            cfg = FeatureConfig(include_aux=(fs == "aux"))
            arr = np.full((n_days, len(ids), len(cfg.names)), np.nan)
            if cases:
                rows = feature_matrix(cases, cfg)
                ii, dd = zip(*slots)
                arr[list(ii), list(dd)] = rows
            X[(lead, fs)] = arr
    return FeatureCache(dates, ids, X, y, present)


def verification_dates(config, cache):
    first_trainable = cache.dates[0] + timedelta(days=1)
    start = as_date(config.verify_start) if config.verify_start else cache.dates[0] + timedelta(
        days=config.window_days)
    end = as_date(config.verify_end) if config.verify_end else cache.dates[-1]
    if start < first_trainable:
        raise ConfigError(f"verification must start after the first trainable date {first_trainable}")
    if end < start:
        raise ConfigError("verification range is empty")
    return [d for d in cache.dates if start <= d <= end]


# --------------------------------------------------------------------------
# training chains
# --------------------------------------------------------------------------

_STATE = {}


def _init_worker(state):
    _STATE.clear()
    _STATE.update(state)


def _fit_one(typ, X, y, mask, config, prev, seed):
    if typ == "POLR":
        opts = clf.TrainOptions(max_iter=config.polr_max_iter, gtol=config.polr_gtol)
        return clf.polr_fit(X, y, mask=mask, opts=opts, init=prev if config.warm_start else None)
    opts = clf.TrainOptions(max_iter=config.mlp_max_epochs, learning_rate=config.mlp_learning_rate,
                            batch_size=config.mlp_batch_size, patience=config.mlp_patience,
                            l2=config.mlp_l2, validation_fraction=config.mlp_validation_fraction,
                            seed=seed)
    return clf.mlp_fit(X, y, hidden=tuple(config.mlp_hidden), opts=opts,
                       init=prev if config.warm_start else None)


def _run_chain(task):
    """Fit and predict one (label, lead, unit) chain over all verification dates."""
    label, lead, unit = task
    config = _STATE["config"]
    cache = _STATE["cache"]
    clusters = _STATE["clusters"]
    vdates = _STATE["vdates"]
    typ, scheme_text, use_aux = parse_label(label)
    scheme = parse_scheme(scheme_text)
    fs = "aux" if use_aux else "base"
    X_all = cache.X[(lead, fs)]
    y_all = cache.y[lead]
    mask = FeatureConfig(include_aux=use_aux).constraint_mask()
    ids = cache.station_ids
    W = config.window_days

    out = {}
    prev = None
    for vi, day in enumerate(vdates):
        if scheme.name == "L":
            members = [ids.index(unit)]
        elif scheme.name == "R":
            members = list(range(len(ids)))
        else:
            labels = clusters[(day, lead)].labels
            members = [d for d, sid in enumerate(ids) if labels[sid] == unit]
            if not members:
                continue
        i = cache.index(day)
        lo = max(0, i - W)
        Xw = X_all[lo:i][:, members].reshape(-1, X_all.shape[-1])
        yw = y_all[lo:i][:, members].reshape(-1)
        keep = (yw >= 0) & np.all(np.isfinite(Xw), axis=1)
        Xw, yw = Xw[keep], yw[keep]
        if len(yw) == 0:
            raise DataError(f"empty training set for {label}, date {day}, lead {lead} h")
        seed = int(substream(config.seed, "fit", label, lead, unit, day.isoformat()).integers(2**31))
        Xp = X_all[i, members]
        if not np.all(np.isfinite(Xp)):
            raise DataError(f"missing features for {label} on {day} +{lead} h")
        try:
            model = _fit_one(typ, Xw, yw, mask, config, prev, seed)
            probs = clf.predict(model, Xp)
            prev = model
        except UnfitModelError:
            # a single observed category: predict it with certainty
            probs = np.tile(clf.climatology_pmf(yw), (len(members), 1))
        except VisipostError as exc:
            raise add_context(exc, f"{label}, unit {unit}, date {day}, lead {lead} h") from None
        for d, p in zip(members, probs):
            out[(vi, d)] = p
    return task, out


def compute_clusters(dataset, config, vdates, leads):
    window = RollingWindow(config.window_days)
    ks = {parse_scheme(parse_label(m)[1]).k for m in config.models
          if parse_label(m)[1].upper().startswith("C")}
    clusters = {}
    for k in sorted(ks):
        for day, lead in product(vdates, leads):
            clusters[(k, day, lead)] = cluster_stations(dataset, window, day, lead, k, config.seed)
    return clusters


def _worker_count(config):
    if config.workers is not None:
        return max(1, int(config.workers))
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def predict_all(dataset, config, cache=None, vdates=None, leads=None):
    """Rolling-window predictions for every configured model.

    Returns ``(pmfs, vdates, leads, clusters)`` where ``pmfs[label]`` has
    shape ``(n_dates, n_leads, D, 84)`` (NaN where no case exists).
    """
    config.validate()
    leads = leads or sorted(config.lead_times or dataset.lead_times())
    cache = cache or build_cache(dataset, leads, config.feature_sets)
    vdates = vdates or verification_dates(config, cache)
    all_clusters = compute_clusters(dataset, config, vdates, leads)
    ids = cache.station_ids

    tasks = []
    for label in config.labels():
        _, scheme_text, _ = parse_label(label)
        scheme = parse_scheme(scheme_text)
        for lead in leads:
            if scheme.name == "L":
                units = list(ids)
            elif scheme.name == "R":
                units = ["ALL"]
            else:
                units = list(range(scheme.k))
            tasks.extend((label, lead, u) for u in units)

    def clusters_for(label):
        _, scheme_text, _ = parse_label(label)
        scheme = parse_scheme(scheme_text)
        if scheme.name != "C":
            return {}
        return {(day, lead): all_clusters[(scheme.k, day, lead)] for day in vdates for lead in leads}

    pmfs = {label: np.full((len(vdates), len(leads), len(ids), clf.N_CATEGORIES), np.nan)
            for label in config.labels()}
    by_label = {}
    for t in tasks:
        by_label.setdefault(t[0], []).append(t)

    workers = _worker_count(config)
    for label, label_tasks in by_label.items():
        state = {"config": config, "cache": cache, "clusters": clusters_for(label), "vdates": vdates}
        if workers == 1:
            _init_worker(state)
            results = map(_run_chain, label_tasks)
        else:
            pool = ProcessPoolExecutor(max_workers=workers, mp_context=get_context("fork"),
                                       initializer=_init_worker, initargs=(state,))
            results = pool.map(_run_chain, label_tasks)
        for (lab, lead, _), out in results:
            li = leads.index(lead)
            for (vi, d), p in out.items():
                pmfs[lab][vi, li, d] = p
        if workers > 1:
            pool.shutdown()
    return pmfs, vdates, leads, all_clusters


def fit_models(dataset, config, forecast_date, lead):
    """Fit every configured model for a single forecast date and lead time.

    Returns a dict ``{(label, unit): model}``; units are station ids,
    ``"ALL"`` or cluster labels.
    """
    config.validate()
    cache = build_cache(dataset, [lead], config.feature_sets)
    day = as_date(forecast_date)
    clusters = compute_clusters(dataset, config, [day], [lead])
    window = config.window_days
    i = cache.index(day)
    ids = cache.station_ids
    models = {}
    for label in config.labels():
        typ, scheme_text, use_aux = parse_label(label)
        scheme = parse_scheme(scheme_text)
        X_all = cache.X[(lead, "aux" if use_aux else "base")]
        y_all = cache.y[lead]
        if scheme.name == "L":
            groups = {sid: [d] for d, sid in enumerate(ids)}
        elif scheme.name == "R":
            groups = {"ALL": list(range(len(ids)))}
        else:
            labels = clusters[(scheme.k, day, lead)].labels
            groups = {c: [d for d, s in enumerate(ids) if labels[s] == c] for c in range(scheme.k)}
        for unit, members in groups.items():
            if not members:
                continue
            Xw = X_all[max(0, i - window):i][:, members].reshape(-1, X_all.shape[-1])
            yw = y_all[max(0, i - window):i][:, members].reshape(-1)
            keep = (yw >= 0) & np.all(np.isfinite(Xw), axis=1)
            seed = int(substream(config.seed, "fit", label, lead, unit, day.isoformat()).integers(2**31))
            models[(label, unit)] = _fit_one(typ, Xw[keep], yw[keep],
                                             FeatureConfig(include_aux=use_aux).constraint_mask(),
                                             config, None, seed)
    return models


# --------------------------------------------------------------------------
# references and multivariate samples
# --------------------------------------------------------------------------

def valid_hour(lead):
    return lead % 24


def reference_pmfs(dataset, config, vdates, leads):
    """Raw-ensemble and climatological PMFs, shaped like the model PMFs."""
    ids = dataset.station_ids
    raw = np.full((len(vdates), len(leads), len(ids), clf.N_CATEGORIES), np.nan)
    clim = np.full_like(raw, np.nan)
    for (vi, day), (li, lead) in product(enumerate(vdates), enumerate(leads)):
        for d, sid in enumerate(ids):
            case = dataset.case(sid, day, lead)
            if case is not None:
                raw[vi, li, d] = clf.ensemble_pmf(_discretized_members(dataset, case))
            clim[vi, li, d] = clf.climatology_pmf(climatology_window(
                dataset, sid, day, valid_hour(lead), config.climatology_days))
    return {RAW: raw, CLIM: clim}


def _discretized_members(dataset, case):
    return discretize(case.ensemble.members(), dataset.scale)


def observations_array(dataset, vdates, leads):
    ids = dataset.station_ids
    obs = np.full((len(vdates), len(leads), len(ids)), -1, dtype=np.int64)
    for (vi, day), (li, lead) in product(enumerate(vdates), enumerate(leads)):
        valid = to_datetime(day) + timedelta(hours=lead)
        for d, sid in enumerate(ids):
            o = dataset.observation(sid, valid)
            if o is not None:
                obs[vi, li, d] = o
    return obs


def mv_label(label, method):
    return f"{label}/{method.upper()}"


def build_multivariate(dataset, config, pmfs, vdates, leads):
    """Multivariate samples ``{label: {(date, lead): (K, D)}}`` incl. RAW and MVCLIM."""
    ids = dataset.station_ids
    K = config.ensemble_size
    mv_models = config.mv_models if config.mv_models is not None else list(pmfs)
    out = {RAW: {}, MVCLIM: {}}
    for label in mv_models:
        for method in config.mv_methods:
            out[mv_label(label, method)] = {}
    for (vi, day), (li, lead) in product(enumerate(vdates), enumerate(leads)):
        cases = [dataset.case(sid, day, lead) for sid in ids]
        if any(c is None for c in cases):
            continue
        raw_m = np.stack([c.ensemble.members() for c in cases], axis=1)
        if raw_m.shape[0] != K:
            raise ConfigError(f"ensemble size {raw_m.shape[0]} differs from K={K}")
        raw_cat = dataset.scale.meters[discretize(raw_m, dataset.scale)]
        key = (day, lead)
        out[RAW][key] = raw_cat
        out[MVCLIM][key] = mv_climatology(dataset, ids, day, valid_hour(lead), config.climatology_days,
                                          K, config.quantile_rule)
        template = None
        if "ssh" in config.mv_methods:
            template = schaake_template(dataset, ids, config.window_days, day, valid_hour(lead), K,
                                        substream(config.seed, "ssh-dates", day.isoformat(), lead))
        for label in mv_models:
            p = pmfs[label][vi, li]
            if np.any(np.isnan(p)):
                continue
            sorted_samples = equidistant_quantiles(p, K, dataset.scale, config.quantile_rule).T
            for method in config.mv_methods:
                rng = substream(config.seed, method, label, day.isoformat(), lead)
                if method == "naive":
                    sample = naive_multivariate(sorted_samples)
                elif method == "ecc":
                    sample = ecc(sorted_samples, raw_m, rng)
                else:
                    sample = reorder(sorted_samples, template.values, rng)
                out[mv_label(label, method)][key] = sample
    return out


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------

@dataclass
class Verification:
    """Per-date score series, summary rows, histograms and reliability indices."""

    series: dict  # (label, lead, score) -> (dates, values)
    summary: list  # (label, lead, score, mean, n_cases)
    histograms: dict  # lead -> list of (label, kind, RankHistogram)
    reliability: list  # (label, lead, kind, ri)


def verify_forecasts(dataset, config, pmfs, mv, vdates, leads):
    """Score univariate PMFs (plus references) and multivariate samples."""
    ids = dataset.station_ids
    obs = observations_array(dataset, vdates, leads)
    refs = reference_pmfs(dataset, config, vdates, leads)
    all_pmfs = dict(refs)
    all_pmfs.update(pmfs)
    K = config.ensemble_size
    series, summary, reliability = {}, [], []
    hists = {lead: [] for lead in leads}

    for label, arr in all_pmfs.items():
        for li, lead in enumerate(leads):
            p = arr[:, li]
            y = obs[:, li]
            ok = (y >= 0) & ~np.any(np.isnan(p), axis=-1)
            safe_y = np.where(ok, y, 0)
            safe_p = np.where(ok[..., None], p, 1.0 / clf.N_CATEGORIES)
            scores = {"CRPS": crps_discrete(safe_p, safe_y, dataset.scale),
                      "LogS": logs(safe_p, safe_y, config.p_min)}
            rows = np.flatnonzero(ok.any(axis=1))
            for name, s in scores.items():
                vals = np.array([s[r][ok[r]].mean() for r in rows])
                series[(label, lead, name)] = ([vdates[r] for r in rows], vals)
                summary.append((label, lead, name, float(np.add.reduce(s[ok]) / ok.sum())
                                if ok.any() else float("nan"), int(ok.sum())))
            # univariate ranks of the observation within the K-member sample
            if ok.any():
                if label == RAW:
                    members = np.stack([
                        dataset.scale.meters[_discretized_members(dataset, dataset.case(ids[d], vdates[r], lead))]
                        for r, d in zip(*np.nonzero(ok))])
                else:
                    members = equidistant_quantiles(p[ok], K, dataset.scale, config.quantile_rule)
                yv = dataset.scale.meters[y[ok]]
                rng = substream(config.seed, "rank", label, lead)
                h = rank_histogram(verification_ranks(members, yv, rng), members.shape[1])
                hists[lead].append((label, "univariate", h))
                reliability.append((label, lead, "univariate", reliability_index(h)))

    vs_w = None if config.vs_weights == "unit" else dependence_weights(dataset.stations)
    dep_w = dependence_weights(dataset.stations)
    for label in sorted(mv):
        samples = mv[label]
        for li, lead in enumerate(leads):
            keys = [(day, lead) for day in vdates if (day, lead) in samples]
            keys = [k for k in keys if np.all(obs[vdates.index(k[0]), li] >= 0)]
            if not keys:
                continue
            es, vs = [], []
            counts = {kind: np.zeros(K + 1, dtype=np.int64) for kind in PreRankKind}
            for day, _ in keys:
                sample = samples[(day, lead)]
                yv = dataset.scale.meters[obs[vdates.index(day), li]]
                es.append(energy_score(sample, yv))
                vs.append(variogram_score(sample, yv, vs_w, 0.5))
                for kind in PreRankKind:
                    rng = substream(config.seed, "prerank", label, kind.value, day.isoformat(), lead)
                    counts[kind][pre_rank(kind, sample, yv, rng, dep_w) - 1] += 1
            dates = [k[0] for k in keys]
            for name, vals in (("ES", np.array(es)), ("VS", np.array(vs))):
                series[(label, lead, name)] = (dates, vals)
                summary.append((label, lead, name, float(np.add.reduce(vals) / len(vals)), len(vals)))
            for kind in PreRankKind:
                h = RankHistogram(counts[kind])
                hists[lead].append((label, kind.value, h))
                reliability.append((label, lead, kind.value, reliability_index(h)))
    return Verification(series, summary, hists, reliability)


def skill_pairs(labels, mv_labels):
    """Reference comparisons reported for each forecast label."""
    pairs = []
    for label in labels:
        pairs += [(label, RAW), (label, CLIM)]
        if label.endswith("+aux") and label[:-4] in labels:
            pairs.append((label, label[:-4]))
    for label in mv_labels:
        pairs += [(label, RAW), (label, MVCLIM)]
        base, _, method = label.partition("/")
        if base.endswith("+aux") and f"{base[:-4]}/{method}" in mv_labels:
            pairs.append((label, f"{base[:-4]}/{method}"))
    return pairs


def bootstrap_report(config, series):
    """Report rows with score intervals and paired skill-score intervals."""
    keys = sorted({(lab, lead) for lab, lead, _ in series})
    labels = sorted({lab for lab, _ in keys})
    uni = [l for l in labels if "/" not in l and l not in (RAW, CLIM, MVCLIM)]
    mvl = [l for l in labels if "/" in l]
    refs = {}
    for lab, ref in skill_pairs(uni, mvl):
        refs.setdefault(lab, []).append(ref)
    rows = []
    for (label, lead, score) in sorted(series):
        dates, vals = series[(label, lead, score)]
        if len(vals) < 2:
            continue
        ci = stationary_bootstrap_ci(vals, config.bootstrap_samples, config.mean_block_length,
                                     substream(config.seed, "boot", label, lead, score), config.level)
        base = {"model": label, "lead_time_h": lead, "score": score, "mean": float(np.mean(vals)),
                "ci_lo": ci.lo, "ci_hi": ci.hi}
        rows.append(dict(base))
        for ref in refs.get(label, []):
            if (ref, lead, score) not in series:
                continue
            rdates, rvals = series[(ref, lead, score)]
            common = sorted(set(dates) & set(rdates))
            if len(common) < 2:
                continue
            a = np.array([vals[dates.index(d)] for d in common])
            b = np.array([rvals[rdates.index(d)] for d in common])
            if not b.mean() > 0:
                continue
            sk = stationary_bootstrap_ci(a, config.bootstrap_samples, config.mean_block_length,
                                         substream(config.seed, "boot", label, ref, lead, score),
                                         config.level, reference=b)
            rows.append(dict(base, reference=ref, skill_vs=sk.estimate, skill_lo=sk.lo, skill_hi=sk.hi))
    return rows


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def write_pmf_dump(path, pmfs, station_ids, vdates, leads):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "station_id", "init_time", "lead_time_h"]
                   + [f"p{k:02d}" for k in range(clf.N_CATEGORIES)])
        for label, arr in pmfs.items():
            for (vi, day), (li, lead), (d, sid) in product(enumerate(vdates), enumerate(leads),
                                                           enumerate(station_ids)):
                p = arr[vi, li, d]
                if np.any(np.isnan(p)):
                    continue
                w.writerow([label, sid, format_time(to_datetime(day)), lead] + [_fmt(v) for v in p])


def read_pmf_dump(path, station_ids):
    """Inverse of :func:`write_pmf_dump`; returns ``(pmfs, vdates, leads)``."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            rows.append((row[0], row[1], parse_time(row[2]).date(), int(row[3]),
                         np.array([float(v) for v in row[4:]])))
    vdates = sorted({r[2] for r in rows})
    leads = sorted({r[3] for r in rows})
    labels = list(dict.fromkeys(r[0] for r in rows))
    pmfs = {lab: np.full((len(vdates), len(leads), len(station_ids), clf.N_CATEGORIES), np.nan)
            for lab in labels}
    for lab, sid, day, lead, p in rows:
        pmfs[lab][vdates.index(day), leads.index(lead), station_ids.index(sid)] = p
    return pmfs, vdates, leads


def mv_filename(label):
    return "mv_" + label.replace("/", "_").replace("+", "p") + ".csv"


def write_mv_dumps(directory, mv, station_ids):
    index = {}
    for label, samples in mv.items():
        name = mv_filename(label)
        index[label] = name
        blocks = [(to_datetime(day), lead, s) for (day, lead), s in sorted(samples.items())]
        write_mv_dump(Path(directory) / name, blocks, station_ids)
    with open(Path(directory) / "mv_index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, sort_keys=True, indent=1)


def read_mv_dumps(directory, station_ids):
    index = json.loads((Path(directory) / "mv_index.json").read_text(encoding="utf-8"))
    out = {}
    for label, name in index.items():
        blocks, stations = read_mv_dump(Path(directory) / name)
        if blocks and list(stations) != list(station_ids):
            raise DataError(f"station order in {name} differs from the dataset")
        out[label] = {(t.date(), lead): s for (t, lead), s in blocks.items()}
    return out


def write_verification(directory, ver):
    directory = Path(directory)
    write_score_rows(directory / "scores.csv", ver.summary)
    with open(directory / "series.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "lead_time_h", "score", "date", "value"])
        for (label, lead, score), (dates, vals) in ver.series.items():
            for d, v in zip(dates, vals):
                w.writerow([label, lead, score, d.isoformat(), _fmt(v)])
    for lead, rows in ver.histograms.items():
        write_histogram_rows(directory / f"histograms_lead{lead:03d}.csv", rows)
    with open(directory / "reliability.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "lead_time_h", "kind", "ri"])
        for label, lead, kind, ri in ver.reliability:
            w.writerow([label, lead, kind, _fmt(ri)])


def read_series(path):
    series = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (row["model"], int(row["lead_time_h"]), row["score"])
            dates, vals = series.setdefault(key, ([], []))
            dates.append(date.fromisoformat(row["date"]))
            vals.append(float(row["value"]))
    return {k: (d, np.array(v)) for k, (d, v) in series.items()}


def write_clusters(path, clusters, station_ids):
    rows = [(day, lead, sid, c.labels[sid]) for (k, day, lead), c in sorted(clusters.items())
            for sid in station_ids]
    write_cluster_dump(path, rows)


def write_manifest(directory, config, files):
    directory = Path(directory)
    digests = {}
    for name in sorted(files):
        digests[name] = hashlib.sha256((directory / name).read_bytes()).hexdigest()
    doc = {"config": asdict(replace(config, workers=None)), "seed": config.seed, "files": digests}
    (directory / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")
    return doc


def run(config, out_dir):
    """Full experiment; writes every report file into ``out_dir`` and returns the manifest."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config)
    pmfs, vdates, leads, clusters = predict_all(dataset, config)
    ids = list(dataset.station_ids)
    write_pmf_dump(out / "pmf.csv", pmfs, ids, vdates, leads)
    write_clusters(out / "clusters.csv", clusters, ids)
    mv = build_multivariate(dataset, config, pmfs, vdates, leads)
    write_mv_dumps(out, mv, ids)
    ver = verify_forecasts(dataset, config, pmfs, mv, vdates, leads)
    write_verification(out, ver)
    write_report(out / "report.csv", bootstrap_report(config, ver.series))
    files = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    return write_manifest(out, config, files)
