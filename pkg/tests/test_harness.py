import math

import pytest
from hypothesis import given, settings, strategies as st

from sitan.core import ConfigurationError
from sitan.harness import (audit_trace, format_trace, from_dict, parse_trace, run_scenario,
                           run_trial, t_interval, to_dict)
from sitan.harness.cli import main as cli_main
from sitan.harness.emit import DETAIL_COLUMNS, emit
from sitan.harness.metrics import loglog_exponent
from sitan.harness.trace import Trace, TraceRecord


def test_t_interval_hand_computed():
    # mean 3, sd sqrt(2.5), sem sqrt(0.5), t(0.975, 4) = 2.776445
    mean, half = t_interval([1, 2, 3, 4, 5])
    assert mean == 3.0
    assert half == pytest.approx(1.963243, abs=1e-6)
    assert math.isnan(t_interval([7.0])[1])


def test_loglog_exponent_recovers_power():
    xs = [4, 10, 25, 50, 100]
    assert loglog_exponent(xs, [3 * x ** 1.5 for x in xs]) == pytest.approx(1.5)


def test_config_rejections():
    with pytest.raises(ConfigurationError, match="3f\\+1"):
        from_dict(dict(n=4, f=2))
    with pytest.raises(ConfigurationError, match="unknown scenario keys"):
        from_dict(dict(n=4, colour="red"))
    with pytest.raises(ConfigurationError, match="unknown keys"):
        from_dict(dict(n=4, link={"lossy": 1}))
    with pytest.raises(ConfigurationError):
        from_dict(dict(n=4, protocol="paxos"))
    with pytest.raises(ConfigurationError):
        from_dict(dict(n=4, adversary={"nodes": [0, 1]}))


def test_config_roundtrip():
    cfg = from_dict(dict(name="r", n=7, protocol="vector", adversary={"behavior": "mixed"},
                         crashes=[{"node": 1, "at": 50}]))
    assert from_dict(to_dict(cfg)) == cfg


def test_emit_detail_has_one_row_per_trial_and_node(tmp_path):
    res = run_scenario(from_dict(dict(name="e", n=4, protocol="binary", trials=10)))
    emit(res, tmp_path)
    lines = (tmp_path / "detail.tsv").read_text().splitlines()
    assert lines[0].split("\t") == list(DETAIL_COLUMNS)
    assert len(lines) == 1 + 40
    assert (tmp_path / "violations.tsv").read_text().count("\n") == 1


def test_trials_are_deterministic():
    cfg = from_dict(dict(name="d", n=5, protocol="multivalued", proposals="divergent",
                         adversary={"behavior": "random_values"}))
    a, b = (run_trial(cfg, 3, keep_trace=True) for _ in range(2))
    assert a.trace_text == b.trace_text and a.nodes == b.nodes


def test_trace_roundtrip_and_audit_detects_tampering():
    t = run_trial(from_dict(dict(name="a", n=4, protocol="binary", proposals="divergent")), 0,
                  keep_trace=True)
    trace = parse_trace(t.trace_text)
    assert format_trace(trace) == t.trace_text
    assert not audit_trace(trace).violations
    decides = list(trace.of_kind("DECIDE"))
    other = [r for r in decides if r.data["value"] != decides[0].data["value"]]
    assert not other
    # rewrite one correct node's decision and the audit must notice
    decides[0].data = dict(decides[0].data, value="ff" * 8)
    kinds = {p for p, _ in audit_trace(trace).violations}
    assert "agreement" in kinds


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e6, allow_nan=False), st.integers(0, 99),
                          st.sampled_from(["SINK", "DECIDE", "X"]),
                          st.dictionaries(st.text(max_size=5), st.integers(), max_size=3)),
                max_size=10))
def test_trace_format_parse_property(rows):
    trace = Trace({"n": 4}, [TraceRecord(round(t, 6), n, k, d) for t, n, k, d in rows])
    back = parse_trace(format_trace(trace))
    assert format_trace(back) == format_trace(trace)
    assert [r.data for r in back.records] == [r.data for r in trace.records]


def test_parse_rejects_garbage():
    with pytest.raises(ValueError):
        parse_trace("hello\n")


def test_cli_exit_codes_and_audit(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli_main(["run", "--protocol", "binary", "--trials", "2", "--out-dir", str(out)]) == 0
    assert sorted(p.name for p in (out / "traces").iterdir()) == ["trial-0000.trace",
                                                                  "trial-0001.trace"]
    assert cli_main(["audit", str(out)]) == 0
    assert "agreement=ok" in capsys.readouterr().out
    assert cli_main(["run", "--f", "2", "--n", "4", "--out-dir", str(out)]) == 1

    bad = tmp_path / "bad.trace"
    text = (out / "traces" / "trial-0000.trace").read_text().splitlines()
    trace = parse_trace("\n".join(text) + "\n")
    first = next(trace.of_kind("DECIDE"))
    first.data = dict(first.data, value="00" * 8)
    bad.write_text(format_trace(trace))
    assert cli_main(["audit", str(bad)]) == 2
    assert cli_main(["audit", str(tmp_path / "empty")]) == 1


def test_cli_sweep(tmp_path):
    code = cli_main(["sweep", "--protocol", "binary", "--trials", "2", "--n", "4", "7",
                     "--out-dir", str(tmp_path)])
    assert code == 0
    text = (tmp_path / "sweep.tsv").read_text()
    assert text.startswith("n\ttrials") and "# send_exponent" in text
