"""``grank`` command line: ingest, split, build-graph, recommend, evaluate, bench.

Settings come from built-in defaults, then a ``key=value`` config file
(``--config``), then command-line flags. Every command writes into a run
directory together with ``config.txt`` (the effective settings, re-runnable
with ``--config``) and ``manifest.txt`` (inputs, seed, sha256 of outputs).
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .evaluation import (ALGORITHMS, DEFAULT_LEVELS, FACTORS, fit_trend, pooled_ttest, run_experiment,
                         scalability_run, write_report_csv, write_scalability_csv, write_ttest_csv)
from .ingest import (EmptyDatasetError, ParseError, SplitSpec, ValidationError, parse_ratings,
                     ratings_to_observations, split, write_ratings)
from .ppr import PprConfig
from .scoring import ColdStartError, GRank

_log = logging.getLogger("grank")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# key -> (parser, default); parsers turn config-file strings into values
def _ints(s):
    return tuple(int(x) for x in str(s).split(",") if x.strip())


def _floats(s):
    return tuple(float(x) for x in str(s).split(",") if x.strip())


def _names(s):
    return tuple(x.strip() for x in str(s).split(",") if x.strip())


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {s!r}")


SETTINGS = {
    "data": (str, None),
    "format": (str, "auto"),
    "dataset_name": (str, ""),
    "out": (str, None),
    "seed": (int, 0),
    "threads": (int, os.cpu_count() or 1),
    "T": (_ints, (50,)),
    "variants": (int, 5),
    "variant": (int, 0),
    "min_test": (int, 10),
    "algorithms": (_names, ("grank", "bgr", "wbgr")),
    "algorithm": (str, "grank"),
    "ks": (_ints, (1, 3, 5, 10)),
    "k": (int, 10),
    "users": (_names, ()),
    "alpha": (float, 0.85),
    "tolerance": (float, 1e-8),
    "max_iterations": (int, 200),
    "pruned": (_bool, False),
    "block": (int, 16),
    "neighborhood_size": (int, 100),
    "epsilon": (float, 0.85),
    "factors": (_names, FACTORS),
    "levels": (_floats, DEFAULT_LEVELS),
    "batch": (int, 3),
    "repeats": (int, 5),
    "factored": (_bool, False),
    "base_items": (int, 0),
}

# settings each command reads (and echoes into config.txt)
COMMAND_KEYS = {
    "ingest": ("data", "format", "out", "seed"),
    "split": ("data", "format", "out", "seed", "T", "variants", "min_test"),
    "build-graph": ("data", "format", "out", "seed", "T", "variant", "min_test", "pruned"),
    "recommend": ("data", "format", "out", "seed", "threads", "T", "variant", "min_test", "algorithm",
                  "k", "users", "alpha", "tolerance", "max_iterations", "pruned", "block",
                  "neighborhood_size", "epsilon"),
    "evaluate": ("data", "format", "dataset_name", "out", "seed", "threads", "T", "variants", "min_test",
                 "algorithms", "ks", "alpha", "tolerance", "max_iterations", "pruned", "block",
                 "neighborhood_size", "epsilon"),
    "bench": ("data", "format", "out", "seed", "T", "min_test", "factors", "levels", "batch", "repeats",
              "base_items", "alpha", "tolerance", "max_iterations", "factored"),
}


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def read_config(path) -> dict:
    """Parse a ``key=value`` file; blank lines and ``#`` comments are ignored."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS and key != "command":
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    raw = read_config(args.config) if args.config else {}
    for key in SETTINGS:
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    settings = {}
    for key in COMMAND_KEYS[command]:
        parse, default = SETTINGS[key]
        v = raw.get(key, default)
        try:
            settings[key] = parse(v) if v is not None and isinstance(v, str) else v
        except ValueError as e:
            raise UsageError(f"bad value for {key}: {v!r} ({e})") from None
    _validate(command, settings)
    return settings


def _validate(command, s):
    if not s.get("data"):
        raise UsageError("no input ratings file given (--data or data= in the config)")
    if not Path(s["data"]).is_file():
        raise UsageError(f"input file not found: {s['data']}")
    for name in s.get("algorithms", ()):
        if name not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {name!r}; expected one of {', '.join(ALGORITHMS)}")
    if "algorithm" in s and s["algorithm"] not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {s['algorithm']!r}; expected one of {', '.join(ALGORITHMS)}")
    for f in s.get("factors", ()):
        if f not in FACTORS:
            raise UsageError(f"unknown factor {f!r}; expected one of {', '.join(FACTORS)}")
    if any(not 0 < lv <= 1 for lv in s.get("levels", ())):
        raise UsageError("levels must lie in (0, 1]")
    if "threads" in s and s["threads"] < 1:
        raise UsageError("threads must be >= 1")
    if any(k < 1 for k in s.get("ks", ())) or s.get("k", 1) < 1:
        raise UsageError("K must be >= 1")
    if {"alpha", "tolerance", "max_iterations"} <= s.keys():
        try:
            PprConfig(s["alpha"], s["tolerance"], s["max_iterations"])
        except ValueError as e:
            raise UsageError(str(e)) from None
    if command in ("build-graph", "recommend", "bench") and len(s["T"]) != 1:
        raise UsageError(f"{command} takes a single T")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunDir:
    def __init__(self, command: str, settings: dict):
        self.command = command
        self.settings = settings
        self.path = Path(settings["out"] or Path("runs") / command)
        self.path.mkdir(parents=True, exist_ok=True)
        self.outputs: list[Path] = []

    def file(self, name: str) -> Path:
        p = self.path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p

    def finish(self) -> None:
        with open(self.path / "config.txt", "w", encoding="utf-8", newline="\n") as f:
            f.write(f"command={self.command}\n")
            for k, v in self.settings.items():
                f.write(f"{k}={_format_value(v)}\n")
        with open(self.path / "manifest.txt", "w", encoding="utf-8", newline="\n") as f:
            f.write(f"grank {__version__}\ncommand {self.command}\nseed {self.settings['seed']}\n")
            f.write(f"input {self.settings['data']} sha256={_sha256(self.settings['data'])}\n")
            for p in self.outputs:
                f.write(f"output {p.relative_to(self.path).as_posix()} sha256={_sha256(p)}\n")


def _ppr_config(s) -> PprConfig:
    return PprConfig(s["alpha"], s["tolerance"], s["max_iterations"])


def _split(s, table, T, variants=None):
    spec = SplitSpec(T, s["min_test"], variants or s.get("variants", 1), s["seed"])
    return split(table, spec)


def _variant(s, table):
    T = s["T"][0]
    ds = _split(s, table, T, s["variant"] + 1)
    return ds[s["variant"]]


def cmd_ingest(s, run: RunDir) -> None:
    table = parse_ratings(s["data"], s["format"])
    obs = ratings_to_observations(table)
    write_ratings(table, run.file("ratings.tsv"))
    obs.save(run.file("observations.tsv"))
    table.user_ids.save(run.file("users.map"))
    table.item_ids.save(run.file("items.map"))
    _log.info("ingest: %d ratings, %d users, %d items, %d observations",
              len(table), table.n_users, table.n_items, len(obs))


def cmd_split(s, run: RunDir) -> None:
    table = parse_ratings(s["data"], s["format"])
    for T in s["T"]:
        for ds in _split(s, table, T):
            write_ratings(ds.train, run.file(f"T{T}/v{ds.variant}/train.tsv"))
            write_ratings(ds.test, run.file(f"T{T}/v{ds.variant}/test.tsv"))


def cmd_build_graph(s, run: RunDir) -> None:
    from .tpg import build_tpg

    table = parse_ratings(s["data"], s["format"])
    ds = _variant(s, table)
    tpg = build_tpg(ds.n_users, ds.n_items, ratings_to_observations(ds.train), pruned=s["pruned"])
    tpg.save(run.file("graph.tpg"))
    with open(run.file("graph_summary.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("users,items,preference_nodes,vertices,edges,observations,pruned\n")
        f.write(f"{tpg.m},{tpg.n},{tpg.preference_count},{tpg.vertex_count},{tpg.edge_count},"
                f"{len(tpg.up_user)},{str(tpg.pruned).lower()}\n")


def _recommender(s, ds):
    from .baselines import BipartiteRanker, EigenRank

    cfg = _ppr_config(s)
    name = s["algorithm"]
    if name == "grank":
        return GRank.fit(ds.train, ds.n_users, ds.n_items, pruned=s["pruned"], cfg=cfg, block=s["block"])
    if name in ("bgr", "wbgr"):
        return BipartiteRanker.fit(ds.train, ds.n_users, ds.n_items, weighted=name == "wbgr",
                                   cfg=cfg, block=s["block"])
    return EigenRank(ds.train, ds.n_users, ds.n_items, s["neighborhood_size"], s["epsilon"])


def cmd_recommend(s, run: RunDir) -> None:
    """Top-k unseen items for the requested (raw id) users of one split variant."""
    from concurrent.futures import ThreadPoolExecutor

    table = parse_ratings(s["data"], s["format"])
    ds = _variant(s, table)
    if s["users"]:
        try:
            users = [table.user_ids.dense(u) for u in s["users"]]
        except KeyError as e:
            raise UsageError(f"unknown user id {e.args[0]}") from None
    else:
        users = [int(u) for u in ds.users]
    profile = ds.train_profile()
    rec = _recommender(s, ds)

    def one(u):
        try:
            if s["algorithm"] == "eigenrank":
                return rec.recommend(u, s["k"])
            return rec.recommend(u, s["k"], train_profile=profile.get(u, ()))
        except ColdStartError as e:
            return e

    with ThreadPoolExecutor(s["threads"]) as ex:
        results = list(ex.map(one, users))
    skipped = 0
    with open(run.file("recommendations.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("user,rank,item,gr\n")
        for u, r in zip(users, results):
            if isinstance(r, ColdStartError):
                skipped += 1
                _log.warning("recommend: %s", r)
                continue
            for row in r.to_csv_rows(table.user_ids.raw[u], table.item_ids.raw):
                f.write(row + "\n")
    if skipped:
        _log.warning("recommend: %d cold-start users skipped", skipped)


def cmd_evaluate(s, run: RunDir) -> None:
    table = parse_ratings(s["data"], s["format"])
    name = s["dataset_name"] or Path(s["data"]).resolve().parent.name
    cfg = _ppr_config(s)
    reports, rows, skips = [], [], []
    for T in s["T"]:
        datasets = _split(s, table, T)
        by_alg = {}
        for alg in s["algorithms"]:
            by_alg[alg] = run_experiment(
                datasets, alg, s["ks"], cfg, dataset_name=name, pruned=s["pruned"], threads=s["threads"],
                block=s["block"],
                **({"neighborhood_size": s["neighborhood_size"], "epsilon": s["epsilon"]}
                   if alg == "eigenrank" else {}))
            reports += by_alg[alg]
            skips += [(alg, T, r.variant, u) for r in by_alg[alg] for u in r.skipped]
        first, *others = s["algorithms"]
        for k in s["ks"]:
            for other in others:
                try:
                    rows.append((T, k, pooled_ttest(by_alg[first], by_alg[other], k)))
                except ValueError as e:
                    _log.warning("t-test %s vs %s (T=%d, K=%d) skipped: %s", first, other, T, k, e)
    write_report_csv(reports, run.file("report.csv"))
    write_report_csv(reports, run.file("report_by_variant.csv"), per_variant=True)
    write_ttest_csv(rows, run.file("ttest.csv"))
    with open(run.file("skipped.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("algorithm,T,variant,user\n")
        for alg, T, v, u in skips:
            f.write(f"{alg},{T},{v},{table.user_ids.raw[u]}\n")


def cmd_bench(s, run: RunDir) -> None:
    table = parse_ratings(s["data"], s["format"])
    ds = _split(s, table, s["T"][0], 1)[0]
    cfg = _ppr_config(s)
    points = []
    fits = []
    for factor in s["factors"]:
        pts = scalability_run(ds, factor, s["levels"], cfg, batch=s["batch"], repeats=s["repeats"],
                              seed=s["seed"], factored=s["factored"], base_items=s["base_items"] or None)
        points += pts
        fits.append((factor, fit_trend(pts)))
    write_scalability_csv(points, run.file("scalability.csv"))
    with open(run.file("scalability_fit.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("factor,linear_residual,quadratic_residual,normalized_slope\n")
        for factor, fit in fits:
            if fit is not None:
                f.write(f"{factor},{fit.linear_residual:.6g},{fit.quadratic_residual:.6g},"
                        f"{fit.normalized_slope:.6g}\n")


COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "build-graph": cmd_build_graph,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grank", description="Graph-based collaborative ranking.")
    p.add_argument("--version", action="version", version=f"grank {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def S(opt, key, **kw):
        # every flag defaults to None so config-file values are not clobbered
        return opt, dict(dest=key, default=None, **kw)

    common = [
        S("--config", "config", metavar="FILE", help="key=value settings file; flags override it"),
        S("--data", "data", metavar="PATH", help="ratings file (u.data or ratings.dat)"),
        S("--format", "format", choices=("auto", "ml-100k", "ml-1m")),
        S("--out", "out", metavar="DIR", help="run directory (default runs/<command>)"),
        S("--seed", "seed", type=int),
        S("--log-level", "log_level", choices=("DEBUG", "INFO", "WARNING", "ERROR")),
    ]
    split_opts = [
        S("--T", "T", metavar="T[,T...]", help="training ratings per user"),
        S("--min-test", "min_test", type=int),
    ]
    ppr_opts = [
        S("--alpha", "alpha", type=float),
        S("--tolerance", "tolerance", type=float),
        S("--max-iterations", "max_iterations", type=int),
    ]
    threads = [S("--threads", "threads", type=int)]
    block = [S("--block", "block", type=int, help="users solved together per block")]
    eigen = [S("--neighborhood-size", "neighborhood_size", type=int), S("--epsilon", "epsilon", type=float)]
    pruned = [S("--pruned", "pruned", metavar="BOOL", help="keep only stated preference nodes")]

    specs = {
        "ingest": common,
        "split": common + split_opts + [S("--variants", "variants", type=int)],
        "build-graph": common + split_opts + pruned + [S("--variant", "variant", type=int)],
        "recommend": common + split_opts + ppr_opts + threads + block + eigen + pruned + [
            S("--variant", "variant", type=int),
            S("--algorithm", "algorithm", choices=ALGORITHMS),
            S("--k", "k", type=int),
            S("--users", "users", metavar="ID[,ID...]", help="raw user ids (default: all retained users)"),
        ],
        "evaluate": common + split_opts + ppr_opts + threads + block + eigen + pruned + [
            S("--variants", "variants", type=int),
            S("--algorithms", "algorithms", metavar="NAME[,NAME...]"),
            S("--ks", "ks", metavar="K[,K...]"),
            S("--dataset-name", "dataset_name"),
        ],
        "bench": common + split_opts + ppr_opts + [
            S("--factors", "factors", metavar="F[,F...]"),
            S("--levels", "levels", metavar="L[,L...]"),
            S("--batch", "batch", type=int),
            S("--repeats", "repeats", type=int),
            S("--factored", "factored", metavar="BOOL"),
            S("--base-items", "base_items", type=int, help="restrict to a random item subset first (0: all)"),
        ],
    }
    helps = {
        "ingest": "parse ratings into observation and id-map files",
        "split": "write train/test split variants",
        "build-graph": "build and snapshot the preference graph of one split variant",
        "recommend": "top-k recommendations for users of one split variant",
        "evaluate": "NDCG@K reports and paired t-tests over split variants",
        "bench": "scalability timings over users, items and preferences",
    }
    for name, opts in specs.items():
        sp = sub.add_parser(name, help=helps[name])
        for opt, kw in opts:
            sp.add_argument(opt, **kw)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level or "INFO"),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        settings = resolve_settings(args.command, args)
        run = RunDir(args.command, settings)
        COMMANDS[args.command](settings, run)
        run.finish()
    except (UsageError, ValidationError, ParseError, EmptyDatasetError) as e:
        print(f"grank: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"grank: error: file not found: {e.filename}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - report, don't trace, at the CLI boundary
        _log.debug("failure", exc_info=True)
        print(f"grank: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
