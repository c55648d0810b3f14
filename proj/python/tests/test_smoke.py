import json
import math
import pathlib

import numpy as np
import pytest

import rmlab

ROOT = pathlib.Path(__file__).resolve().parents[2]
TINY = ROOT / "tests" / "data" / "tiny.json"


def test_kl_bon_values():
    assert rmlab.kl_bon(1) == 0.0
    assert rmlab.kl_bon(2) == pytest.approx(math.log(2) - 0.5, abs=1e-15)
    with pytest.raises(rmlab.DomainError):
        rmlab.kl_bon(0)


def test_bon_weights_sum_to_one():
    w = rmlab.bon_weights(2048, 64)
    assert abs(sum(w) - 1.0) < 1e-12
    assert all(x == 0.0 for x in w[:63])


def test_unbiased_curve_endpoints():
    rng = np.random.default_rng(0)
    proxy, gold = rng.normal(size=50).tolist(), rng.normal(size=50).tolist()
    c = rmlab.bon_unbiased_curve(proxy, gold, 50)
    assert c[0] == pytest.approx(np.mean(gold))
    assert c[-1] == gold[int(np.argmax(proxy))]


def test_combiners():
    s = [1.0, 2.0, 6.0]
    assert rmlab.combine(s, "mean") == 3.0
    assert rmlab.combine(s, "wco") == 1.0
    assert rmlab.combine(s, "uwo", 0.5) == pytest.approx(3.0 - 0.5 * np.var(s))
    assert rmlab.intra_variance(s) == pytest.approx(np.var(s))
    with pytest.raises(rmlab.ConfigError):
        rmlab.combine(s, "median")


def test_winrate():
    a = {0: 1.0, 1: 0.0, 2: 0.5}
    b = {0: 0.0, 1: 0.0, 2: 1.0}
    assert rmlab.winrate(a, a) == 50.0
    assert rmlab.winrate(a, b) + rmlab.winrate(b, a) == 100.0
    with pytest.raises(rmlab.ShapeError):
        rmlab.winrate(a, {0: 1.0})


def test_world_enumeration_sums_to_one():
    cfg = rmlab.load_config(TINY)
    w = rmlab.World(cfg["world"])
    assert len(w.hash) == 16
    lp = np.array(w.all_logprobs(0, 0.9))
    assert abs(np.exp(lp).sum() - 1.0) < 1e-9
    tokens = w.sample(1, 5, seed=3)
    assert len(tokens) == 5 and all(len(t) == 3 for t in tokens)
    assert math.isfinite(w.gold_score(1, tokens[0]))


def test_sweep_round_trip(tmp_path):
    cfg = rmlab.load_config(TINY)
    cfg["seeds"] = [0]
    cfg["sweep"] = {}
    out = rmlab.sweep(cfg, out=tmp_path)
    assert out["ok"]
    assert len(out["records"]) == 6
    rows = rmlab.read_summary(out["summary_path"])
    assert [r["final_gold"] for r in rows] == [r["final_gold"] for r in out["records"]]
    again = rmlab.sweep(json.dumps(cfg), out=tmp_path)
    assert pathlib.Path(again["summary_path"]).read_text() == pathlib.Path(out["summary_path"]).read_text()
    assert rmlab.cell_hashes(cfg) == [out["records"][0]["cell_hash"]]
    curves = sorted(tmp_path.glob("runs/*/0/curves_*.csv"))
    rmlab.plot_curves([str(p) for p in curves], str(tmp_path / "c.svg"))
    assert (tmp_path / "c.svg").stat().st_size > 0


def test_bad_config_raises():
    with pytest.raises(rmlab.ConfigError):
        rmlab.cell_hashes({"schema_version": 1, "bogus": 1})
