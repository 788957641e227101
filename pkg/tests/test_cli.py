import csv

import numpy as np
import pytest

from conftest import random_ratings
from grank.cli import main, read_config
from grank.ingest import ObservationSet, parse_ratings, ratings_to_observations


@pytest.fixture(scope="module")
def ratings_file(tmp_path_factory):
    t = random_ratings(np.random.default_rng(11), 30, 40, (32, 40))
    p = tmp_path_factory.mktemp("data") / "u.data"
    with open(p, "w") as f:
        for k in range(len(t)):
            # raw ids offset so the dense remap is exercised
            f.write(f"{t.user[k] + 100}\t{t.item[k] + 7}\t{int(t.rating[k])}\t{880000000 + k}\n")
    return p


def run(*args):
    return main([str(a) for a in args])


def rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_ingest(ratings_file, tmp_path):
    assert run("ingest", "--data", ratings_file, "--out", tmp_path / "a") == 0
    obs = ObservationSet.load(tmp_path / "a" / "observations.tsv")
    table = parse_ratings(ratings_file)
    assert obs == ratings_to_observations(table)
    # per-user count of distinctly rated pairs
    expected = 0
    for u in range(table.n_users):
        r = table.rating[table.user == u]
        expected += int(np.sum(r[:, None] > r[None, :]))
    assert len(obs) == expected
    assert (tmp_path / "a" / "users.map").read_text().startswith("100\t0\n")
    manifest = (tmp_path / "a" / "manifest.txt").read_text()
    assert "observations.tsv sha256=" in manifest and "seed 0" in manifest

    assert run("ingest", "--data", ratings_file, "--out", tmp_path / "b") == 0
    for name in ("observations.tsv", "users.map", "items.map", "ratings.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_file_exit_code(tmp_path, capsys):
    missing = tmp_path / "nope.data"
    assert run("ingest", "--data", missing, "--out", tmp_path / "x") == 2
    assert str(missing) in capsys.readouterr().err


@pytest.mark.parametrize("args", [
    ["--algorithms", "grank,cofirank"],
    ["--alpha", "1.5"],
    ["--ks", "0"],
])
def test_validation_exit_code(ratings_file, tmp_path, args):
    assert run("evaluate", "--data", ratings_file, "--out", tmp_path, *args) == 2


def test_argparse_usage_exit_code():
    with pytest.raises(SystemExit) as e:
        main(["evaluate", "--no-such-flag"])
    assert e.value.code == 2


def test_split_and_build_graph(ratings_file, tmp_path):
    assert run("split", "--data", ratings_file, "--T", "20", "--variants", 2, "--out", tmp_path / "s") == 0
    train = (tmp_path / "s" / "T20" / "v1" / "train.tsv").read_text().splitlines()
    assert len(train) == 20 * 30
    assert run("build-graph", "--data", ratings_file, "--T", 20, "--out", tmp_path / "g") == 0
    summary = rows(tmp_path / "g" / "graph_summary.csv")[0]
    n = int(summary["items"])
    assert int(summary["vertices"]) == 30 + n * (n - 1) + 2 * n
    assert int(summary["edges"]) == int(summary["observations"]) + 2 * n * (n - 1)


@pytest.mark.parametrize("alg", ["grank", "bgr", "eigenrank"])
def test_recommend(ratings_file, tmp_path, alg):
    out = tmp_path / alg
    assert run("recommend", "--data", ratings_file, "--T", 20, "--algorithm", alg, "--k", 5,
               "--users", "100,101", "--out", out) == 0
    got = rows(out / "recommendations.csv")
    assert [r["user"] for r in got] == ["100"] * 5 + ["101"] * 5
    assert [int(r["rank"]) for r in got[:5]] == [1, 2, 3, 4, 5]


def test_recommend_unknown_user(ratings_file, tmp_path):
    assert run("recommend", "--data", ratings_file, "--T", 20, "--users", "9999", "--out", tmp_path) == 2


def test_evaluate_outputs_and_config_round_trip(ratings_file, tmp_path):
    out = tmp_path / "e"
    assert run("evaluate", "--data", ratings_file, "--T", "20,25", "--variants", 2, "--algorithms",
               "grank,bgr", "--out", out, "--threads", 1) == 0
    report = rows(out / "report.csv")
    assert len([r for r in report if r["algorithm"] == "grank"]) == 2 * 4
    assert {r["variant"] for r in report} == {"all"}
    assert len(rows(out / "report_by_variant.csv")) == 2 * 2 * 4 * 2
    tt = rows(out / "ttest.csv")
    assert [(r["T"], r["K"]) for r in tt] == [(T, K) for T in ("20", "25") for K in ("1", "3", "5", "10")]
    assert all(r["algorithm_vs"] == "grank_vs_bgr" for r in tt)

    cfg = read_config(out / "config.txt")
    assert cfg["T"] == "20,25" and cfg["algorithms"] == "grank,bgr"
    again = tmp_path / "again"
    assert run("evaluate", "--config", out / "config.txt", "--out", again) == 0
    for name in ("report.csv", "ttest.csv", "report_by_variant.csv", "skipped.csv"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_flags_override_config(ratings_file, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text(f"# test\ndata={ratings_file}\nT=20\nvariants=1\nalgorithms=bgr,wbgr\nks=3\n")
    assert run("evaluate", "--config", cfg, "--ks", "1,5", "--out", tmp_path / "o") == 0
    assert {r["K"] for r in rows(tmp_path / "o" / "report.csv")} == {"1", "5"}


def test_single_variant_still_tests(ratings_file, tmp_path):
    assert run("evaluate", "--data", ratings_file, "--T", 20, "--variants", 1, "--algorithms", "bgr,wbgr",
               "--ks", 10, "--out", tmp_path) == 0
    assert len(rows(tmp_path / "ttest.csv")) == 1


def test_bad_config_key(ratings_file, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text(f"data={ratings_file}\nflavour=mint\n")
    assert run("evaluate", "--config", cfg, "--out", tmp_path) == 2


def test_bench(ratings_file, tmp_path):
    out = tmp_path / "b"
    assert run("bench", "--data", ratings_file, "--T", 20, "--levels", "0.5,1.0", "--batch", 1,
               "--repeats", 1, "--out", out) == 0
    pts = rows(out / "scalability.csv")
    assert [p["factor"] for p in pts] == ["M", "M", "N", "N", "S", "S"]
    assert all(float(p["mean_seconds"]) > 0 for p in pts)
    assert "std_seconds" in pts[0]
