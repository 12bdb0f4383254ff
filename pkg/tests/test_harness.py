import pytest

from radiobc.broadcast import multi_message_known
from radiobc.cli import main
from radiobc.engine import EngineConfig, Packet, Trace, parse_trace, trace_hash
from radiobc.graph import clog2, generate_graph, serialize_graph
from radiobc.gst import build_gst_oracle
from radiobc.harness import (ABLATION_CONFIG, CSV_FIELDS, ConfigError, ExperimentConfig, GraphPoint, Variant,
                             ablation_config, fit_line, messages_for, parse_seeds, potential_trace,
                             reachability_sizes, read_csv, rows_to_csv, run_experiment, run_trial, summarize)

SMALL = """\
name = small
graph = path n=8
graph = star n=6
variant = known multi-known
k = 2
seeds = 0..2
"""


def test_parse_seeds():
    assert parse_seeds("0..3") == [0, 1, 2, 3]
    assert parse_seeds("1 5, 7") == [1, 5, 7]
    assert parse_seeds("") == []


def test_empty_sweep_is_header_only():
    res = run_experiment(ExperimentConfig.parse("name = e\n"), write=False)
    assert res.rows == []
    assert res.csv_text == ",".join(CSV_FIELDS) + "\n"


def test_two_graphs_three_seeds_six_rows():
    res = run_experiment(ExperimentConfig.parse(SMALL), write=False)
    rows = read_csv(res.csv_text)
    assert len(rows) == 6
    assert [r["graph"] for r in rows] == ["path(n=8)"] * 3 + ["star(n=6)"] * 3
    assert [r["seed"] for r in rows] == ["0", "1", "2"] * 2
    assert all(r["success"] == "1" and r["schema"] == "1" for r in rows)


def test_rerun_is_byte_identical(tmp_path):
    text = SMALL + f"hash_traces = 1\ncsv = {tmp_path}/a.csv\n"
    a = run_experiment(ExperimentConfig.parse(text))
    b = run_experiment(ExperimentConfig.parse(text), write=False)
    assert a.csv_text == b.csv_text == (tmp_path / "a.csv").read_text()
    assert all(len(r["trace_hash"]) == 64 for r in a.rows)


def test_workers_do_not_change_rows():
    a = run_experiment(ExperimentConfig.parse(SMALL), write=False)
    b = run_experiment(ExperimentConfig.parse(SMALL + "workers = 3\n"), write=False)
    assert a.csv_text == b.csv_text


def test_trace_hash_examples():
    t = Trace(2, 0)
    assert trace_hash(t) == trace_hash(Trace(2, 0))
    t2 = Trace(2, 1)
    t2.records.append((0, 0, Packet.data(0, 5), None))
    t2.records.append((0, 1, None, Packet.data(0, 5)))
    h = trace_hash(t2)
    assert h != trace_hash(t) and len(h) == 64
    assert trace_hash(parse_trace(t2.export())) == h


def test_config_round_trip():
    cfg = ExperimentConfig.parse(SMALL + "constants = ring_width=2\ngraph_seed = 4\ncsv = x.csv\n")
    again = ExperimentConfig.parse(cfg.serialize())
    assert again.serialize() == cfg.serialize()
    assert again.consts().ring_width == 2
    assert again.graph_seed == 4


def test_pipeline_key_becomes_variant():
    cfg = ExperimentConfig.parse("pipeline = gather\ngraph = path n=5\nseeds = 0\n")
    assert [str(v) for v in cfg.variants] == ["gather gather"]


@pytest.mark.parametrize("text", ["bogus = 1\n", "no equals sign\n", "constants = nope=1\n",
                                  "graph = moebius n=3\n", "k = one\n"])
def test_config_errors(text):
    # every error is caught at parse time, before any trial runs
    with pytest.raises((ConfigError, KeyError, ValueError)):
        ExperimentConfig.parse(text)


def test_failed_trial_is_a_row():
    row = run_trial(Variant.parse("x single source=99"), GraphPoint.parse("path n=4"), 1, 0)
    assert row["success"] == 0 and row["stage_breakdown"].startswith("error=")
    assert rows_to_csv([row]).count("\n") == 2


@pytest.mark.parametrize("pipe", ["single", "multi-unknown", "gst", "gather", "decay"])
def test_every_pipeline_runs(pipe):
    row = run_trial(Variant.parse(f"{pipe} {pipe}"), GraphPoint.parse("path n=6"), 2, 1, hash_traces=True)
    assert row["success"] == 1, row
    assert row["trace_hash"] != "-"


def test_fit_line_and_summary():
    assert fit_line([1, 1], [2, 3]) is None
    slope, icpt = fit_line([0, 1, 2], [1, 3, 5])
    assert slope == pytest.approx(2) and icpt == pytest.approx(1)
    rows = [{"pipeline": "p", "graph": f"g{D}", "k": 1, "D": D, "success": 1, "completion_round": 3 * D + 2}
            for D in (2, 4, 8)]
    text, dat = summarize(rows)
    assert "p vs_D k=1 slope=3.0000 intercept=2.00" in text
    assert dat.startswith("# p\n")


def test_messages_are_seeded():
    assert messages_for(3, 4) == messages_for(3, 4)
    assert messages_for(3, 4) != messages_for(4, 4)


def test_ablation_config_parses():
    cfg = ablation_config()
    assert len(cfg.variants) == 6 and len(cfg.seeds) == 100
    assert cfg.graph_seed == 1


# -- potential ---------------------------------------------------------------------------------


def known_run(n=40, seed=1):
    g = generate_graph("gnp_connected", n=n, p=0.1, seed=seed)
    labels = build_gst_oracle(g, 0)
    r = multi_message_known(g, 0, messages_for(seed, 3), EngineConfig(seed=seed), labels=labels)
    assert r.success
    return g, labels, r.trace()


def test_potential_reaches_zero_and_never_rises():
    g, labels, tr = known_run()
    L = clog2(g.n)
    D = labels.depth()
    for v in range(g.n):
        s = potential_trace(tr, labels, v)
        assert s.nonincreasing()
        assert s.initial <= 2 * L * L + D
        assert s.final == 0


def test_potential_with_mu_also_monotone():
    _, labels, tr = known_run()
    for v in (5, 17):
        s = potential_trace(tr, labels, v, mu=0b101)
        assert s.nonincreasing()


def test_silent_target_stays_constant():
    g = generate_graph("path", n=4)
    labels = build_gst_oracle(g, 0)
    t = Trace(4, 3)
    t.records.append((0, 0, Packet.data(0, 1), None))
    t.records.append((0, 1, None, Packet.data(0, 1)))
    s = potential_trace(t, labels, 3)
    assert s.points == [(0, labels.vdist[3] * clog2(4) + 3, 1)]
    assert reachability_sizes(t, 3) == [(0, 1)]


def test_potential_small_chain():
    g = generate_graph("path", n=3)
    labels = build_gst_oracle(g, 0)
    L = clog2(3)
    t = Trace(3, 2)
    t.records += [(0, 0, Packet.data(0, 1), None), (0, 1, None, Packet.data(0, 1)),
                  (1, 1, Packet.data(1, 1), None), (1, 2, None, Packet.data(1, 1))]
    s = potential_trace(t, labels, 2)
    phi = lambda v: labels.vdist[v] * L + labels.level[v]
    assert s.points == [(0, phi(2), 1), (1, phi(1), 2), (2, 0, 3)]
    assert reachability_sizes(t, 2) == [(0, 1), (1, 2), (2, 3)]


def test_potential_unknown_target():
    g = generate_graph("path", n=3)
    labels = build_gst_oracle(g, 0)
    with pytest.raises(KeyError):
        potential_trace(Trace(3, 0), labels, 7)
    with pytest.raises(KeyError):
        reachability_sizes(Trace(3, 0), -1)


# -- command line -----------------------------------------------------------------------------


def test_cli_run(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL.replace("seeds = 0..2", "") + f"csv = {tmp_path}/out.csv\n")
    assert main(["--seed", "5", "run", "--config", str(cfg)]) == 0
    rows = read_csv((tmp_path / "out.csv").read_text())
    assert {r["seed"] for r in rows} == {"5"}
    assert "success_rate" in capsys.readouterr().out


def test_cli_seed_from_environment(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("graph = path n=5\npipeline = multi-known\n")
    monkeypatch.setenv("RADIOBC_SEED", "9")
    assert main(["run", "--config", str(cfg)]) == 0
    rows = read_csv(capsys.readouterr().out.split("# summary")[0])
    assert [r["seed"] for r in rows] == ["9"]


def test_cli_validate_gst(tmp_path, capsys):
    g = generate_graph("gnp_connected", n=20, p=0.2, seed=3)
    labels = build_gst_oracle(g, 0)
    (tmp_path / "g.txt").write_text(serialize_graph(g))
    (tmp_path / "l.txt").write_text(labels.export())
    assert main(["validate-gst", "--graph", str(tmp_path / "g.txt"), "--labels", str(tmp_path / "l.txt")]) == 0
    assert capsys.readouterr().out.strip() == "valid"
    bad = labels.export().splitlines()
    victim = next(i for i, line in enumerate(bad) if line.split()[0] not in ("#", "0") and not line.startswith("#"))
    parts = bad[victim].split()
    parts[1] = str(int(parts[1]) + 5)
    bad[victim] = " ".join(parts)
    (tmp_path / "bad.txt").write_text("\n".join(bad) + "\n")
    assert main(["validate-gst", "--graph", str(tmp_path / "g.txt"), "--labels", str(tmp_path / "bad.txt")]) == 1
    assert "invalid" in capsys.readouterr().out


def test_cli_diagnose_potential(tmp_path, capsys):
    g, labels, tr = known_run()
    (tmp_path / "t.txt").write_text(tr.export())
    (tmp_path / "l.txt").write_text(labels.export())
    assert main(["diagnose-potential", "--trace", str(tmp_path / "t.txt"), "--target", "7",
                 "--labels", str(tmp_path / "l.txt")]) == 0
    out = capsys.readouterr().out
    assert "nonincreasing=True" in out and "final=0" in out
    assert main(["diagnose-potential", "--trace", str(tmp_path / "t.txt"), "--target", "7"]) == 0
    assert "reach" in capsys.readouterr().out


def test_cli_ablation(capsys):
    assert main(["ablation"]) == 0
    assert capsys.readouterr().out == ABLATION_CONFIG


def test_cli_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    (tmp_path / "c.cfg").write_text("graph = path n=3\n")
    assert main(["--constants", "nope=1", "run", "--config", str(tmp_path / "c.cfg")]) == 2
    assert "error" in capsys.readouterr().err
