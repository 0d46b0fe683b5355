import json

import pytest

from wfalign.cli import main
from wfalign.config import RunConfig, config_from_dict, load_config
from wfalign.dataset import dumps_sample, file_sha256, parse_dataset, read_dataset, write_dataset
from wfalign.errors import ConfigError, EmptyInput, ParseError
from wfalign.synth import GenConfig, gen_corpus

TINY = {
    "gen": {"n_sites": 8, "resources_per_site": [3, 8], "visits_per_site": 4},
    "model": {"embed_dim": 8, "conv_channels": [2, 2], "kernel_size": 3, "token_dim": 8,
              "n_layers": 1, "n_heads": 2, "cont_dim": 4, "cat_dim": 2, "traffic_len": 64,
              "logic_len": 16},
    "train": {"epochs": 2, "batch_size": 8},
    "eval": {"shots": 2, "n_perm": 50},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(TINY))
    return str(p)


# --- dataset files ----------------------------------------------------------

def test_dataset_roundtrip_is_byte_stable(tmp_path):
    corpus = gen_corpus(GenConfig(n_sites=3, visits_per_site=2))
    p = write_dataset(corpus, tmp_path / "a.jsonl")
    back = read_dataset(p)
    assert back == corpus
    q = write_dataset(back, tmp_path / "b.jsonl")
    assert p.read_bytes() == q.read_bytes()
    assert file_sha256(p) == file_sha256(q)


def test_dataset_errors(tmp_path):
    with pytest.raises(ParseError) as ei:
        parse_dataset('{"site_id": "a", "logic": [], "packets": []}\nnot json')
    assert ei.value.line == 1
    with pytest.raises(ParseError):
        parse_dataset('{"site_id": "a"}')
    empty = tmp_path / "e.jsonl"
    empty.write_text("\n")
    with pytest.raises(EmptyInput):
        read_dataset(empty)
    assert read_dataset(empty, allow_empty=True) == []
    s = gen_corpus(GenConfig(n_sites=1, visits_per_site=1))[0]
    assert list(json.loads(dumps_sample(s))) == ["label", "logic", "packets", "site_id"]


# --- configuration ----------------------------------------------------------

def test_config_roundtrip_and_unknown_keys(tmp_path):
    cfg = config_from_dict(TINY)
    assert cfg.model.conv_channels == (2, 2)
    again = config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert config_from_dict({}) == RunConfig()
    with pytest.raises(ConfigError):
        config_from_dict({"trian": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"epoch": 3}})
    with pytest.raises(ConfigError):
        config_from_dict({"gen": {"noise": {"jitter": 1}}})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"tau": -1}})
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_config(bad)
    s = cfg.with_seed(5)
    assert (s.gen.rng_seed, s.model.init_seed, s.train.rng_seed, s.augment.rng_seed) == (5,) * 4


# --- commands ---------------------------------------------------------------

def test_exit_codes(tmp_path, cfg_path, capsys):
    assert main(["synth", "--config", str(tmp_path / "none.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": {"depth": 3}}')
    assert main(["--config", str(bad), "synth"]) == 2
    assert main(["anchors", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "a")]) == 3
    garbage = tmp_path / "g.jsonl"
    garbage.write_text("{nope\n")
    assert main(["augment", str(garbage), "--out", str(tmp_path / "x.jsonl")]) == 3
    assert main(["extract", "--out", str(tmp_path / "d.jsonl")]) == 2
    with pytest.raises(SystemExit) as ei:
        main(["nonsense"])
    assert ei.value.code == 2


def test_synth_split_and_force(tmp_path, cfg_path):
    out = tmp_path / "s"
    assert main(["synth", "--config", cfg_path, "--out", str(out)]) == 0
    train, test = read_dataset(out / "train.jsonl"), read_dataset(out / "test.jsonl")
    assert not {p.site_id for p in train} & {p.site_id for p in test}
    assert len({p.site_id for p in test}) == 2
    before = file_sha256(out / "train.jsonl")
    assert main(["synth", "--config", cfg_path, "--out", str(out)]) == 2
    assert main(["synth", "--config", cfg_path, "--out", str(out), "--force"]) == 0
    assert file_sha256(out / "train.jsonl") == before
    assert main(["--seed", "9", "synth", "--config", cfg_path, "--out", str(out), "--force"]) == 0
    assert file_sha256(out / "train.jsonl") != before


def test_pipeline(tmp_path, cfg_path, capsys):
    d = tmp_path / "s"
    assert main(["synth", "--config", cfg_path, "--out", str(d)]) == 0
    train, test = str(d / "train.jsonl"), str(d / "test.jsonl")
    assert main(["augment", train, "--config", cfg_path, "--out", str(tmp_path / "aug.jsonl")]) == 0
    aug = read_dataset(tmp_path / "aug.jsonl", allow_empty=True)
    assert {p.site_id for p in aug} <= {p.site_id for p in read_dataset(train)}

    assert main(["anchors", train, "--config", cfg_path, "--out", str(tmp_path / "an")]) == 0
    rep = json.loads((tmp_path / "an" / "anchors.json").read_text())
    assert rep["inputs"]["files"][train] == file_sha256(train)
    assert "request" in rep["report"]

    ck = str(tmp_path / "ck")
    assert main(["train", train, "--config", cfg_path, "--out", ck]) == 0
    man = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert len(man["config"]["epoch_losses"]) == 2

    assert main(["embed", ck, test, "--out", str(tmp_path / "z.jsonl")]) == 0
    rows = [json.loads(line) for line in (tmp_path / "z.jsonl").read_text().splitlines()]
    assert len(rows) == len(read_dataset(test)) and len(rows[0]["z"]) == 8

    g = str(tmp_path / "gal")
    assert main(["gallery", ck, test, "--out", g]) == 0
    assert main(["classify", ck, g, test, "--threshold", "1.0",
                 "--out", str(tmp_path / "p.jsonl")]) == 0
    preds = [json.loads(line) for line in (tmp_path / "p.jsonl").read_text().splitlines()]
    assert all(p["predicted"] is None or p["score"] >= 1.0 for p in preds)

    ev = tmp_path / "ev"
    assert main(["eval", ck, test, "--out", str(ev), "--mode", "closed"]) == 0
    closed = json.loads((ev / "report_closed.json").read_text())
    assert 0 <= closed["metrics"]["top1"] <= closed["metrics"]["top5"] <= 1
    assert main(["eval", ck, test, "--out", str(ev), "--mode", "open"]) == 2
    assert main(["eval", ck, test, "--out", str(ev), "--mode", "open",
                 "--unmonitored", train]) == 0
    csv_lines = (ev / "pr_curve.csv").read_text().splitlines()
    assert csv_lines[0] == "threshold,precision,recall" and len(csv_lines) > 2
    for mode in ("fewshot-linear", "fewshot-tip"):
        assert main(["eval", ck, test, "--config", cfg_path, "--out", str(ev), "--mode", mode,
                     "--support", test]) == 0
        rep = json.loads((ev / f"report_{mode}.json").read_text())
        assert rep["metrics"]["shots"] == 2
    # rerun gives the same report
    first = (ev / "report_closed.json").read_text()
    assert main(["eval", ck, test, "--out", str(ev), "--mode", "closed", "--force"]) == 0
    assert (ev / "report_closed.json").read_text() == first
