import json

import pytest
import yaml

from loglab.constants import ExitCodes
from loglab.loglab import parse_command_line, run
from loglab.weaklabel import read_failures

from tests.conftest import TINY_MODEL


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ["VERBOSE", "LOGLAB_OUTPUT_DIR", "LOGLAB_SEED", "LOGLAB_THREADS"]:
        monkeypatch.delenv(name, raising=False)


def _config(tmpdir, name: str = "loglab.yaml", **sections) -> str:
    sections.setdefault("output_dir", str(tmpdir.join("out")))
    p = tmpdir.join(name)
    p.write(yaml.safe_dump(sections))
    return str(p)


def _generate(tmpdir, **synthetic) -> str:
    """Generates a synthetic corpus into tmpdir/gen and returns the directory."""
    synthetic.setdefault("n_lines", 2000)
    cfg = _config(tmpdir, "generate.yaml", output_dir=str(tmpdir.join("gen")), synthetic=synthetic)
    assert run(["generate", "-c", cfg]) == ExitCodes.SUCCESS
    return str(tmpdir.join("gen"))


@pytest.mark.unit
def test_command_line_options_anywhere():
    before = parse_command_line(["-c", "a.yaml", "--seed", "3", "parse"])
    after = parse_command_line(["parse", "-c", "a.yaml", "--seed", "3"])
    for args in (before, after):
        assert args.command == "parse"
        assert args.config == "a.yaml"
        assert args.seed == 3
        assert args.output_dir is None
        assert args.verbose is False

    with pytest.raises(SystemExit):
        parse_command_line([])
    with pytest.raises(SystemExit):
        parse_command_line(["evaluate"])


@pytest.mark.unit
def test_generate(tmpdir):
    _generate(tmpdir)
    lines = tmpdir.join("gen", "corpus.csv").read().splitlines()
    assert lines[0].startswith("# loglab-toolkit")
    assert lines[1] == "index,timestamp_ms,source,truth,content"
    assert len(lines) == 2 + 2000
    assert tmpdir.join("gen", "manifest.csv").check()
    # failures are only listed for planted incidents
    assert not tmpdir.join("gen", "failures.csv").check()


@pytest.mark.unit
def test_parse_is_reproducible(tmpdir):
    gen = _generate(tmpdir)
    cfg = _config(tmpdir, dataset={"path": f"{gen}/corpus.csv"})

    assert run(["parse", "-c", cfg]) == ExitCodes.SUCCESS
    assert sorted(p.basename for p in tmpdir.join("out").listdir()) == ["parsed.csv", "templates.tsv"]

    assert run(["parse", "-c", cfg, "-o", str(tmpdir.join("again"))]) == ExitCodes.SUCCESS
    for name in ["parsed.csv", "templates.tsv"]:
        assert tmpdir.join("out", name).read_binary() == tmpdir.join("again", name).read_binary()


@pytest.mark.unit
def test_missing_input(tmpdir, capsys):
    missing = str(tmpdir.join("nowhere.csv"))
    cfg = _config(tmpdir, dataset={"path": missing})
    assert run(["parse", "-c", cfg]) == ExitCodes.CONFIG_ERROR
    assert missing in capsys.readouterr().err
    # nothing is written
    assert not tmpdir.join("out").check()


@pytest.mark.unit
def test_config_errors(tmpdir):
    assert run(["parse", "-c", str(tmpdir.join("missing.yaml"))]) == ExitCodes.CONFIG_ERROR

    cfg = _config(tmpdir, dataset={"path": "x.csv"}, parser={"depth": 1})
    assert run(["parse", "-c", cfg]) == ExitCodes.CONFIG_ERROR

    # no dataset section at all
    cfg = _config(tmpdir, "empty.yaml")
    assert run(["taxonomy", "-c", cfg]) == ExitCodes.CONFIG_ERROR


@pytest.mark.unit
def test_invalid_env_var(tmpdir, monkeypatch):
    monkeypatch.setenv("LOGLAB_SEED", "many")
    cfg = _config(tmpdir, dataset={"path": "corpus.csv"})
    assert run(["parse", "-c", cfg]) == ExitCodes.CONFIG_ERROR


@pytest.mark.unit
def test_bad_data(tmpdir):
    corpus = tmpdir.join("bad.csv")
    corpus.write("idx,ts,content\n0,1,a\n")
    cfg = _config(tmpdir, dataset={"path": str(corpus)})
    assert run(["parse", "-c", cfg]) == ExitCodes.DATA_ERROR


@pytest.mark.unit
def test_taxonomy_with_one_threshold(tmpdir):
    gen = _generate(tmpdir)
    cfg = _config(tmpdir, dataset={"path": f"{gen}/corpus.csv"}, taxonomy={"thresholds": [0.5]})
    assert run(["taxonomy", "-c", cfg, "--per-line"]) == ExitCodes.SUCCESS

    report = tmpdir.join("out", "taxonomy_report.csv").read().splitlines()
    assert report[1] == "threshold,type,count,percentage,flags"
    assert len(report) == 2 + 4
    assert {line.split(",")[0] for line in report[2:]} == {"0.5"}

    document = json.loads(tmpdir.join("out", "taxonomy_scores.json").read())
    assert len(document["scores"]) == 2000


@pytest.mark.unit
def test_taxonomy_default_thresholds(tmpdir):
    gen = _generate(tmpdir)
    cfg = _config(tmpdir, dataset={"path": f"{gen}/corpus.csv"})
    assert run(["taxonomy", "-c", cfg]) == ExitCodes.SUCCESS

    report = tmpdir.join("out", "taxonomy_report.csv").read().splitlines()
    assert len(report) == 2 + 5 * 4
    thresholds = [line.split(",")[0] for line in report[2::4]]
    assert thresholds == ["0.6", "0.7", "0.8", "0.9", "1.0"]
    # abnormal lines exist: nothing is flagged
    assert all(line.endswith(",") for line in report[2:])


@pytest.mark.unit
def test_taxonomy_without_abnormal_lines(tmpdir):
    gen = _generate(tmpdir, anomaly_rate=0.0)
    cfg = _config(tmpdir, dataset={"path": f"{gen}/corpus.csv"})
    assert run(["taxonomy", "-c", cfg]) == ExitCodes.SUCCESS

    report = tmpdir.join("out", "taxonomy_report.csv").read().splitlines()
    assert report[2] == "0.6,template,0,0.0000,percentage_zero_division"
    assert len(report) == 2 + 5 * 4
    assert all(line.endswith(",percentage_zero_division") for line in report[2:])


@pytest.mark.unit
def test_taxonomy_of_template_anomalies_only(tmpdir):
    gen = _generate(tmpdir, anomaly_rate=0.05, mix={"template": 1.0})
    cfg = _config(tmpdir, dataset={"path": f"{gen}/corpus.csv"})
    assert run(["taxonomy", "-c", cfg]) == ExitCodes.SUCCESS

    rows = [line.split(",") for line in tmpdir.join("out", "taxonomy_report.csv").read().splitlines()[2:]]
    template_rows = [r for r in rows if r[1] == "template"]
    assert len(template_rows) == 5
    # injected skeletons never show up in normal lines
    assert all(r[3] == "100.0000" for r in template_rows)
    assert all(r[3] == "0.0000" for r in rows if r[1] == "unclassified")


def _assert_rerun_is_identical(tmpdir, args: list[str]):
    """Runs the command into 'out' and into 'again'; every output file except checkpoints must match."""
    assert run(args) == ExitCodes.SUCCESS
    assert run(args + ["-o", str(tmpdir.join("again"))]) == ExitCodes.SUCCESS
    names = sorted(p.basename for p in tmpdir.join("out").listdir() if p.ext != ".pt")
    assert names == sorted(p.basename for p in tmpdir.join("again").listdir() if p.ext != ".pt")
    assert names
    for name in names:
        assert tmpdir.join("out", name).read_binary() == tmpdir.join("again", name).read_binary(), name


@pytest.mark.unit
def test_generate_is_reproducible(tmpdir):
    cfg = _config(tmpdir, synthetic={"n_lines": 2000, "n_causes": 2, "incidents_per_cause": 3})
    _assert_rerun_is_identical(tmpdir, ["generate", "-c", cfg])


@pytest.mark.unit
def test_taxonomy_is_reproducible(tmpdir):
    gen = _generate(tmpdir)
    cfg = _config(tmpdir, dataset={"path": f"{gen}/corpus.csv"})
    _assert_rerun_is_identical(tmpdir, ["taxonomy", "-c", cfg, "--per-line"])


@pytest.mark.unit
def test_label_is_reproducible(tmpdir):
    gen = _generate(tmpdir)
    cfg = _config(tmpdir, dataset={"path": f"{gen}/corpus.csv"}, weaklabel={"deltas_ms": [1000]}, model=TINY_MODEL)
    _assert_rerun_is_identical(tmpdir, ["label", "-c", cfg])


@pytest.mark.unit
def test_rca_is_reproducible(tmpdir):
    gen = _generate(tmpdir, n_lines=3000, anomaly_rate=0.0, n_causes=3, incidents_per_cause=4)
    cfg = _config(tmpdir, dataset={"path": f"{gen}/corpus.csv", "failures": f"{gen}/failures.csv"}, model=TINY_MODEL)
    _assert_rerun_is_identical(tmpdir, ["rca", "-c", cfg])


@pytest.mark.unit
def test_label_and_evaluate(tmpdir):
    gen = _generate(tmpdir)
    cfg = _config(
        tmpdir, dataset={"path": f"{gen}/corpus.csv"}, weaklabel={"deltas_ms": [1000]}, model=TINY_MODEL
    )
    assert run(["label", "-c", cfg]) == ExitCodes.SUCCESS

    out = tmpdir.join("out")
    for name in ["weak_labels_d1000.csv", "model_d1000.pt", "scores_d1000.csv", "metrics_d1000.json"]:
        assert out.join(name).check()
    metrics = json.loads(out.join("metrics_d1000.json").read())
    assert metrics["delta_ms"] == 1000
    assert 0 < metrics["q"] < 1
    assert metrics["tp"] + metrics["fp"] + metrics["tn"] + metrics["fn"] == 2000

    scores = str(out.join("scores_d1000.csv"))
    assert run(["evaluate", "-c", cfg, "--scores", scores]) == ExitCodes.SUCCESS
    evaluation = json.loads(out.join("evaluation_metrics.json").read())
    assert evaluation["f1"] == metrics["f1"]

    assert run(["evaluate", "-c", cfg, "--scores", str(tmpdir.join("none.csv"))]) == ExitCodes.CONFIG_ERROR


@pytest.mark.unit
def test_label_without_truth_skips_evaluation(tmpdir):
    corpus = tmpdir.join("corpus.csv")
    rows = [f"{i},{i * 100},node1,,{'kernel panic' if i % 50 == 25 else 'job done'} {i % 7}" for i in range(300)]
    corpus.write("index,timestamp_ms,source,truth,content\n" + "\n".join(rows) + "\n")
    failures = tmpdir.join("failures.csv")
    failures.write("timestamp_ms,tag\n" + "\n".join(f"{i * 100}," for i in range(25, 300, 50)) + "\n")

    cfg = _config(
        tmpdir,
        dataset={"path": str(corpus), "failures": str(failures)},
        weaklabel={"deltas_ms": [150]},
        model=TINY_MODEL,
    )
    assert run(["label", "-c", cfg]) == ExitCodes.SUCCESS
    assert tmpdir.join("out", "scores_d150.csv").check()
    assert not tmpdir.join("out", "metrics_d150.json").check()

    # no failure file and no truth to derive failures from
    cfg = _config(tmpdir, "nofail.yaml", dataset={"path": str(corpus)}, model=TINY_MODEL)
    assert run(["label", "-c", cfg]) == ExitCodes.DATA_ERROR


@pytest.mark.unit
def test_rca(tmpdir):
    gen = _generate(tmpdir, n_lines=3000, anomaly_rate=0.0, n_causes=3, incidents_per_cause=4)
    failures = f"{gen}/failures.csv"
    cfg = _config(tmpdir, dataset={"path": f"{gen}/corpus.csv", "failures": failures}, model=TINY_MODEL)
    assert run(["rca", "-c", cfg]) == ExitCodes.SUCCESS

    out = tmpdir.join("out")
    clusters = out.join("clusters.csv").read().splitlines()
    assert clusters[1] == "window_id,cluster_id"
    assert len(clusters) == 2 + len(read_failures(failures))
    # one cluster per planted cause
    assert len({line.split(",")[1] for line in clusters[2:]}) == 3
    assert out.join("plan.csv").check()

    document = json.loads(out.join("ranked_causes.json").read())
    assert len(document["windows"]) == len(read_failures(failures))
    assert all(len(w["lines"]) <= 3 for w in document["windows"])
    assert {w["tag"] for w in document["windows"]} == {"disk", "network", "memory"}


@pytest.mark.unit
def test_rca_without_failures(tmpdir, capsys):
    gen = _generate(tmpdir)
    failures = tmpdir.join("failures.csv")
    failures.write("timestamp_ms,tag\n")
    cfg = _config(tmpdir, dataset={"path": f"{gen}/corpus.csv", "failures": str(failures)})
    assert run(["rca", "-c", cfg]) == ExitCodes.DATA_ERROR
    assert "No failure window" in capsys.readouterr().err
