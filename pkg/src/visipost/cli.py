"""Command-line entry point.

Every subcommand reads an optional JSON configuration and applies
``--set key=value`` overrides on top (values are parsed as JSON when
possible, ``synthetic.<field>`` reaches into the generator settings).
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
import argparse
import json
import sys
from pathlib import Path

from . import pipeline as pl
from .classifiers import model_to_json
from .domain import write_csv
from .errors import ConfigError, VisipostError
from .mvscore import write_report


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(args):
    doc = json.loads(pl.ExperimentConfig.load(args.config).to_json()) if args.config else {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        head, _, sub = key.partition(".")
        if sub:
            if head != "synthetic":
                raise ConfigError(f"nested override {key!r} is only supported for synthetic.*")
            doc.setdefault("synthetic", {})[sub] = _parse_value(value)
        else:
            doc[key] = _parse_value(value)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.workers is not None:
        doc["workers"] = args.workers
    try:
        return pl.ExperimentConfig.from_dict(doc).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _out(args):
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_generate(args, config):
    ds = pl.load_dataset(config)
    paths = write_csv(ds, _out(args))
    print(f"wrote {len(paths)} files to {args.out}")


def cmd_train(args, config):
    ds = pl.load_dataset(config)
    out = _out(args)
    models = pl.fit_models(ds, config, args.date, args.lead)
    for (label, unit), model in models.items():
        name = f"model_{label.replace('+', 'p')}_{unit}_lead{args.lead:03d}.json"
        (out / name).write_text(model_to_json(model), encoding="utf-8")
    print(f"wrote {len(models)} models to {args.out}")


def cmd_predict(args, config):
    ds = pl.load_dataset(config)
    out = _out(args)
    pmfs, vdates, leads, clusters = pl.predict_all(ds, config)
    ids = list(ds.station_ids)
    pl.write_pmf_dump(out / "pmf.csv", pmfs, ids, vdates, leads)
    pl.write_clusters(out / "clusters.csv", clusters, ids)


def cmd_mv(args, config):
    ds = pl.load_dataset(config)
    ids = list(ds.station_ids)
    pmfs, vdates, leads = pl.read_pmf_dump(args.pmf, ids)
    pl.write_mv_dumps(_out(args), pl.build_multivariate(ds, config, pmfs, vdates, leads), ids)


def cmd_verify(args, config):
    ds = pl.load_dataset(config)
    ids = list(ds.station_ids)
    pmfs, vdates, leads = pl.read_pmf_dump(args.pmf, ids)
    mv = pl.read_mv_dumps(args.mv_dir, ids) if args.mv_dir else {}
    pl.write_verification(_out(args), pl.verify_forecasts(ds, config, pmfs, mv, vdates, leads))


def cmd_report(args, config):
    write_report(_out(args) / "report.csv", pl.bootstrap_report(config, pl.read_series(args.series)))


def cmd_run(args, config):
    manifest = pl.run(config, args.out)
    print(f"wrote {len(manifest['files'])} files and manifest.json to {args.out}")


def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration entry (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help=f"worker processes (default ${pl.WORKERS_ENV} or 1)")

    parser = argparse.ArgumentParser(prog="visipost", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset as CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="fit models for one forecast date and lead")
    p.add_argument("--date", required=True)
    p.add_argument("--lead", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="rolling-window PMF predictions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("mv", parents=[common], help="multivariate samples from a PMF dump")
    p.add_argument("--pmf", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mv)

    p = sub.add_parser("verify", parents=[common], help="score PMF and multivariate dumps")
    p.add_argument("--pmf", required=True)
    p.add_argument("--mv-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", parents=[common], help="bootstrap intervals from score series")
    p.add_argument("--series", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", parents=[common], help="end-to-end experiment")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        config = build_config(args)
        args.func(args, config)
    except VisipostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
