import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_counts
from hetmisclass import cli
from hetmisclass import io as hio
from hetmisclass.matrix import BaseParams, CauseSet, CountMatrix, build_base_matrix

QUICK = ["--chains", "2", "--warmup", "100", "--draws", "50", "--seed", "7", "-q"]

GRID = """country,gold_cause,predicted_cause,count
A,x,x,5
A,x,y,1
A,y,x,2
A,y,y,7
B,x,x,3
B,x,y,0
B,y,x,4
B,y,y,9
"""


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.fixture(scope="module")
def dataset_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    counts = random_counts(np.random.default_rng(3), 3, 3, low=2, high=15)
    path = d / "data.csv"
    hio.write_dataset(path, counts, ["north", "south", "east"])
    return path


def read_csv(path):
    header, rows = hio.read_table(path)
    return [dict(zip(header, r)) for r in rows]


class TestIngest:
    def test_two_by_two_grid(self, tmp_path):
        data = hio.ingest(write(tmp_path, GRID))
        assert data.countries == ("A", "B")
        assert data.causes.labels == ("x", "y")
        assert [c.total for c in data.counts] == [15, 16]
        np.testing.assert_array_equal(data.by_country()["A"].counts, [[5, 1], [2, 7]])

    def test_absent_triple_is_zero(self, tmp_path):
        text = GRID.replace("B,x,y,0\n", "")
        data = hio.ingest(write(tmp_path, text))
        assert data.by_country()["B"].counts[0, 1] == 0

    def test_duplicate_names_line(self, tmp_path):
        with pytest.raises(hio.DataParseError, match="line 10"):
            hio.ingest(write(tmp_path, GRID + "A,x,y,3\n"))

    @pytest.mark.parametrize("bad, match", [
        ("A,x,y,-1", "line 10: negative"),
        ("A,x,y", "line 10: expected 4 fields"),
        ("A,x,y,1.5", "line 10: .*not an integer"),
        ("A,x,y,many", "line 10: .*not an integer"),
        (",x,y,1", "line 10: empty"),
    ])
    def test_bad_rows(self, tmp_path, bad, match):
        text = GRID.replace("B,y,y,9\n", "B,y,y,9\n" + bad + "\n")
        with pytest.raises(hio.DataParseError, match=match):
            hio.ingest(write(tmp_path, text))

    def test_declared_causes_fix_order_and_labels(self, tmp_path):
        data = hio.ingest(write(tmp_path, "# causes: y,x,z\n" + GRID))
        assert data.causes.labels == ("y", "x", "z")
        np.testing.assert_array_equal(data.counts[0].counts, [[7, 2, 0], [1, 5, 0], [0, 0, 0]])
        with pytest.raises(hio.DataParseError, match="line 11: cause 'w'"):
            hio.ingest(write(tmp_path, "# causes: x,y\n" + GRID + "A,w,x,1\n"))

    def test_header_checked(self, tmp_path):
        with pytest.raises(hio.DataParseError, match="header"):
            hio.ingest(write(tmp_path, GRID.replace("count", "n", 1)))

    def test_integral_float_count_accepted(self, tmp_path):
        data = hio.ingest(write(tmp_path, GRID.replace("A,x,x,5", "A,x,x,5.0")))
        assert data.counts[0].counts[0, 0] == 5

    @given(st.integers(2, 5), st.integers(1, 4), st.integers(0, 2 ** 31))
    def test_round_trip_lossless(self, n_causes, n_countries, seed):
        counts = random_counts(np.random.default_rng(seed), n_causes, n_countries, low=0, high=40)
        names = [f"c{s}" for s in range(n_countries)]
        data = hio.parse_dataset(hio.format_dataset(counts, names))
        assert data.countries == tuple(names)
        for a, b in zip(data.counts, counts):
            np.testing.assert_array_equal(a.counts, b.counts)


class TestTables:
    def test_full_precision(self, tmp_path):
        x = 0.1 + 0.2
        hio.write_table(tmp_path / "t.csv", ("a", "b"), [(x, 1e-300), (float("nan"), None)])
        header, rows = hio.read_table(tmp_path / "t.csv")
        assert float(rows[0][0]) == x and float(rows[0][1]) == 1e-300
        assert rows[1] == ["nan", ""]

    def test_bytes_are_lf_and_quoted(self, tmp_path):
        digest = hio.write_table(tmp_path / "t.csv", ("name",), [("a,b",), (True,)])
        raw = (tmp_path / "t.csv").read_bytes()
        assert raw == b'name\n"a,b"\ntrue\n'
        assert digest == hio.sha256_file(tmp_path / "t.csv")


class TestCommands:
    def test_usage_errors(self, capsys):
        assert cli.main(["frobnicate"]) == cli.EXIT_USAGE
        assert cli.main([]) == cli.EXIT_USAGE
        assert cli.main(["fit", "--chains", "two"]) == cli.EXIT_USAGE
        assert cli.main(["--version"]) == 0

    def test_missing_input_is_config_error(self, tmp_path):
        assert cli.main(["fit", "-o", str(tmp_path), "-q"]) == cli.EXIT_CONFIG
        assert cli.main(["fit", "-i", str(tmp_path / "nope.csv"), "-o", str(tmp_path), "-q"]) == cli.EXIT_CONFIG

    def test_parse_error_exit(self, tmp_path):
        bad = write(tmp_path, GRID + "A,x,y,-4\n")
        assert cli.main(["fit", "-i", str(bad), "-o", str(tmp_path / "o"), *QUICK]) == cli.EXIT_PARSE

    def test_bad_config(self, tmp_path, dataset_file):
        cfg = write(tmp_path, json.dumps({"model": "fully-het", "colour": "blue"}), "cfg.json")
        assert cli.main(["fit", "--config", str(cfg), "-i", str(dataset_file), "-q"]) == cli.EXIT_CONFIG
        cfg = write(tmp_path, json.dumps({"sampler": {"chains": 0}}), "cfg2.json")
        assert cli.main(["fit", "--config", str(cfg), "-i", str(dataset_file), "-q"]) == cli.EXIT_CONFIG
        assert cli.main(["fit", "-m", "quadratic", "-i", str(dataset_file), "-q"]) == cli.EXIT_CONFIG

    def test_config_file_with_flag_override(self, tmp_path, dataset_file):
        cfg = write(tmp_path, json.dumps({"model": "homogeneous", "input": str(dataset_file),
                                          "sampler": {"chains": 1, "warmup": 100, "draws": 30}}), "cfg.json")
        out = tmp_path / "o"
        assert cli.main(["fit", "--config", str(cfg), "--draws", "20", "-o", str(out), "-q"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["sampler"]["draws"] == 20
        assert manifest["config"]["sampler"]["warmup"] == 100
        assert manifest["model"]["variant"] == "homogeneous"

    def test_env_output_dir(self, tmp_path, dataset_file, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env-out"))
        assert cli.main(["diagnose-odds", "-i", str(dataset_file), "-q"]) == 0
        assert (tmp_path / "env-out" / "odds_spread.csv").is_file()


@pytest.fixture(scope="module")
def fit_dir(tmp_path_factory, dataset_file):
    out = tmp_path_factory.mktemp("fit") / "out"
    code = cli.main(["fit", "-m", "fully-het", "-i", str(dataset_file), "-o", str(out), "--save-draws", *QUICK])
    assert code == 0
    return out


class TestFit:
    def test_artifacts(self, fit_dir):
        names = {p.name for p in fit_dir.iterdir()}
        assert {"summary.csv", "matrices.csv", "comparison.csv", "diagnostics.csv", "odds.csv",
                "odds_spread.csv", "draws.csv", "manifest.json"} <= names
        manifest = json.loads((fit_dir / "manifest.json").read_text())
        for name, digest in manifest["outputs"].items():
            assert hio.sha256_file(fit_dir / name) == digest
        assert manifest["seeds"]["sampler"] == 7
        assert set(manifest["versions"]) >= {"hetmisclass", "numpy", "scipy"}

    def test_matrices_table(self, fit_dir):
        rows = read_csv(fit_dir / "matrices.csv")
        assert len(rows) == 3 * 9
        for r in rows:
            assert float(r["lower"]) <= float(r["mean"]) <= float(r["upper"])

    def test_summarize_draws_reproduces_summary(self, fit_dir, tmp_path):
        out = tmp_path / "again"
        assert cli.main(["summarize-draws", str(fit_dir / "draws.csv"), "-o", str(out), "-q"]) == 0
        assert (out / "summary.csv").read_bytes() == (fit_dir / "summary.csv").read_bytes()

    def test_manifest_reruns_identically(self, fit_dir, tmp_path):
        manifest = json.loads((fit_dir / "manifest.json").read_text())
        cfg = dict(manifest["config"])
        cfg["output"] = str(tmp_path / "rerun")
        cfg_path = write(tmp_path, json.dumps(cfg), "cfg.json")
        assert cli.main(["fit", "--config", str(cfg_path), "-q"]) == 0
        for name in manifest["outputs"]:
            assert (tmp_path / "rerun" / name).read_bytes() == (fit_dir / name).read_bytes()

    def test_strict_gate(self, tmp_path, dataset_file):
        # a handful of warmup iterations cannot reach R-hat <= 1.01 on this model
        code = cli.main(["fit", "-i", str(dataset_file), "-o", str(tmp_path), "--chains", "4", "--warmup", "100",
                         "--draws", "10", "--seed", "1", "--strict", "-q"])
        assert code == cli.EXIT_STRICT
        assert (tmp_path / "manifest.json").is_file()


def test_byte_identical_fit(tmp_path, dataset_file):
    outputs = []
    for run_dir in ("first", "second"):
        d = tmp_path / run_dir
        d.mkdir()
        cwd = os.getcwd()
        os.chdir(d)
        try:
            assert cli.main(["fit", "--model", "fully-het", "--input", str(dataset_file), "-o", "out", *QUICK]) == 0
        finally:
            os.chdir(cwd)
        outputs.append({p.name: p.read_bytes() for p in (d / "out").iterdir()})
    assert outputs[0] == outputs[1]


def test_base_fit_has_nine_free_parameters(tmp_path):
    rng = np.random.default_rng(4)
    counts = random_counts(rng, 5, 2, low=5, high=30)
    path = tmp_path / "d.csv"
    hio.write_dataset(path, counts, ["p", "q"])
    assert cli.main(["fit", "-m", "base", "-i", str(path), "-o", str(tmp_path / "o"), *QUICK]) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["model"]["n_free_parameters"] == 9
    names = [r["name"] for r in read_csv(tmp_path / "o" / "summary.csv")]
    assert sum(n.startswith("a[") for n in names) == 5
    assert sum(n.startswith("alpha[") for n in names) == 5


def test_predict_homogeneous_equals_pooled(tmp_path, dataset_file):
    out = tmp_path / "o"
    assert cli.main(["predict", "-m", "homogeneous", "-i", str(dataset_file), "-o", str(out), "--country", "new",
                     *QUICK]) == 0
    pred = {r["name"]: r for r in read_csv(out / "predict.csv")}
    summ = {r["name"]: r for r in read_csv(out / "summary.csv")}
    labels = CauseSet.default(3).labels
    for gi in labels:
        for pj in labels:
            p = pred[f"phi[new,{gi},{pj}]"]
            s = summ[f"phi[{gi},{pj}]"]
            for col in ("mean", "sd", "q2.5", "q50", "q97.5"):
                assert p[col] == s[col]


def test_predict_needs_country_and_hierarchy(tmp_path, dataset_file):
    assert cli.main(["predict", "-i", str(dataset_file), "-o", str(tmp_path), *QUICK]) == cli.EXIT_CONFIG
    assert cli.main(["predict", "-m", "base", "-i", str(dataset_file), "-o", str(tmp_path), "-c", "x",
                     *QUICK]) == cli.EXIT_CONFIG


def test_diagnose_odds_base_data_below_threshold(tmp_path, capsys):
    rng = np.random.default_rng(8)
    params = BaseParams(rng.uniform(0.3, 0.7, 4), rng.dirichlet(np.full(4, 5.0)))
    phi = build_base_matrix(params).probs
    cs = CauseSet.default(4)
    counts = [CountMatrix(np.array([rng.multinomial(20000, row) for row in phi]), cs) for _ in range(3)]
    path = tmp_path / "base.csv"
    hio.write_dataset(path, counts, ["u", "v", "w"])
    out = tmp_path / "o"
    assert cli.main(["diagnose-odds", "-i", str(path), "-o", str(out), "--strict", "-q"]) == 0
    rows = read_csv(out / "odds_spread.csv")
    assert all(r["exceeds"] == "false" for r in rows)
    assert max(float(r["spread"]) for r in rows) < cli.DEFAULT_ODDS_THRESHOLD
    assert "0 pair(s) above threshold" in capsys.readouterr().out


def test_diagnose_odds_flags_heterogeneous_rows(tmp_path):
    phi = build_base_matrix(BaseParams([0.5, 0.5, 0.5, 0.5], [0.25] * 4)).probs.copy()
    phi[0] = [0.4, 0.55, 0.025, 0.025]
    counts = [CountMatrix(np.round(phi * 10000).astype(int), CauseSet.default(4))]
    path = tmp_path / "het.csv"
    hio.write_dataset(path, counts, ["only"])
    assert cli.main(["diagnose-odds", "-i", str(path), "-o", str(tmp_path / "o"), "--strict", "-q"]) == cli.EXIT_STRICT


def test_simulate_small(tmp_path, capsys):
    argv = ["simulate", "--scenario", "homogeneous", "--reps", "2", "--n-causes", "3", "--n-countries", "2",
            "--n-per-country", "30", "--warmup", "100", "--draws", "40", "--seed", "3", "-q"]
    assert cli.main(argv + ["-o", str(tmp_path / "a")]) == 0
    printed = capsys.readouterr().out
    assert printed.count("[PASS]") + printed.count("[FAIL]") == 3
    rows = read_csv(tmp_path / "a" / "replications.csv")
    assert len(rows) == 6
    checks = read_csv(tmp_path / "a" / "checks.csv")
    assert len(checks) == 3
