import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from bayeslm.checkpoint import load_checkpoint, save_checkpoint
from bayeslm.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, main
from bayeslm.config import DEFAULTS, ConfigError, parse_override, resolve_config
from bayeslm.corpus import Vocabulary
from bayeslm.nnlm import build_model

TINY = {
    "seed": 3,
    "data": {"batch_size": 8, "synthetic": {"train": 40, "dev": 10, "test": 10, "seed": 1}},
    "model": {"num_layers": 1, "embed_dim": 6, "hidden_dim": 6, "model_dim": 4, "ffn_dim": 6},
    "train": {"epochs": 2},
    "nas": {"epochs": 1, "finetune_epochs": 1},
    "rescore": {"synthetic_n": 5},
}


def write_config(tmp_path, extra=None, name="cfg.yaml"):
    doc = yaml.safe_load(yaml.safe_dump(TINY))
    for key, value in (extra or {}).items():
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def run(cmd, cfg, out, *sets):
    args = [cmd, "--config", str(cfg), "--output-dir", str(out)]
    for s in sets:
        args += ["--set", s]
    return main(args)


# -- config --------------------------------------------------------------------------------


def test_defaults_mirror_training_recipe():
    cfg = resolve_config(env={})
    assert cfg["model"]["dropout"] == 0.2 and cfg["data"]["batch_size"] == 32
    assert cfg["train"]["halving_patience"] == 1 and cfg["bayes"]["init_ratio"] == 0.05
    assert cfg["rescore"]["lm_scale"] == 12.0 and cfg["rescore"]["insertion_penalty"] == 0.0
    assert cfg["bayes"]["lr"] < cfg["train"]["lr"] and cfg["bayes"]["clip_norm"] > 0
    assert cfg["train"]["clip_norm"] is None


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("model:\n  hiden_dim: 5\n")
    with pytest.raises(ConfigError, match="model.hiden_dim"):
        resolve_config(path, env={})
    with pytest.raises(ConfigError, match="unknown"):
        resolve_config(overrides=["nope=1"], env={})


def test_type_and_choice_errors_name_the_key():
    with pytest.raises(ConfigError, match="train.epochs"):
        resolve_config(overrides=["train.epochs=two"], env={})
    with pytest.raises(ConfigError, match="model.kind"):
        resolve_config(overrides=["model.kind=gru"], env={})
    with pytest.raises(ConfigError, match="model.dropout"):
        resolve_config(overrides=["model.dropout=1.5"], env={})
    with pytest.raises(ConfigError, match="map_reference"):
        resolve_config(overrides=["train.regularizer=map"], env={})
    for bad in ("train.clip_norm=-1", "bayes.clip_norm=big"):
        with pytest.raises(ConfigError, match=bad.split("=")[0]):
            resolve_config(overrides=[bad], env={})
    assert resolve_config(overrides=["bayes.clip_norm=null"], env={})["bayes"]["clip_norm"] is None


def test_overrides_beat_file_beat_env(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 5\ntrain:\n  lr: 0.2\n")
    assert resolve_config(env={"BAYESLM_SEED": "9"})["seed"] == 9
    cfg = resolve_config(path, ["train.lr=0.3"], env={"BAYESLM_SEED": "9"})
    assert cfg["seed"] == 5 and cfg["train"]["lr"] == 0.3
    with pytest.raises(ConfigError, match="BAYESLM_SEED"):
        resolve_config(env={"BAYESLM_SEED": "x"})


def test_parse_override():
    assert parse_override("bayes.positions=[l1.cell-input]") == {
        "bayes": {"positions": ["l1.cell-input"]}}
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_missing_config_file():
    with pytest.raises(ConfigError, match="cannot read"):
        resolve_config("/nonexistent/cfg.yaml", env={})


def test_resolved_config_is_written_and_reusable(tmp_path):
    cfg = write_config(tmp_path)
    assert run("prep", cfg, tmp_path / "a") == EXIT_OK
    echoed = tmp_path / "a" / "config.resolved.yaml"
    resolved = yaml.safe_load(echoed.read_text())
    assert resolved["seed"] == 3 and set(resolved) == set(DEFAULTS)
    assert main(["prep", "--config", str(echoed), "--output-dir", str(tmp_path / "b")]) == EXIT_OK
    for f in ("train.txt", "vocab.txt", "ngram.arpa", "prep.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# -- exit codes --------------------------------------------------------------------------------


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["prep", "--output-dir", str(tmp_path), "--set", "data.batch_size=0"]) == \
        EXIT_CONFIG
    assert "data.batch_size" in capsys.readouterr().err


def test_data_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, {"data.train": str(tmp_path / "missing.txt")})
    assert run("prep", cfg, tmp_path / "o") == EXIT_DATA
    assert "missing.txt" in capsys.readouterr().err


def test_bad_checkpoint_is_data_error(tmp_path):
    (tmp_path / "junk.ckpt").write_bytes(b"garbage")
    cfg = write_config(tmp_path, {"eval.checkpoint": str(tmp_path / "junk.ckpt")})
    assert run("ppl", cfg, tmp_path / "o") == EXIT_DATA


def test_numerical_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, {"train.lr": 1e9, "train.epochs": 3})
    assert run("train", cfg, tmp_path / "o") == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_bayes_without_positions_is_config_error(tmp_path):
    cfg = write_config(tmp_path, {"bayes.variant": "bayes"})
    assert run("train", cfg, tmp_path / "o") == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "bayeslm", "prep", "--output-dir",
                          str(tmp_path), "--set", "data.synthetic.train=20",
                          "--set", "data.synthetic.dev=5", "--set", "data.synthetic.test=5"],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "prep.json").exists()


# -- subcommands -------------------------------------------------------------------------------


def test_train_twice_is_bit_identical(tmp_path):
    cfg = write_config(tmp_path)
    for name in ("a", "b"):
        assert run("train", cfg, tmp_path / name) == EXIT_OK
    for f in ("model.ckpt", "train_log.tsv", "metrics.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_ppl_of_zero_weight_model_is_vocab_size(tmp_path):
    cfg = write_config(tmp_path)
    assert run("prep", cfg, tmp_path / "p") == EXIT_OK
    vocab = Vocabulary.load(tmp_path / "p" / "vocab.txt")
    model = build_model("lstm", len(vocab), num_layers=1, embed_dim=4, hidden_dim=4)
    model.params["output.weight"].value[...] = 0.0
    save_checkpoint(tmp_path / "zero.ckpt", model, vocab)
    cfg = write_config(tmp_path, {"eval.checkpoint": str(tmp_path / "zero.ckpt")})
    assert run("ppl", cfg, tmp_path / "o") == EXIT_OK
    ppl = json.loads((tmp_path / "o" / "ppl.json").read_text())["ppl"]
    assert ppl == pytest.approx(len(vocab), rel=1e-12)


@pytest.mark.parametrize("variant,positions", [
    ("bayes", ["l1.cell-input"]), ("gp", ["l1.h-gate"]), ("latent", ["l1.hidden-output"])])
def test_train_variants(tmp_path, variant, positions):
    cfg = write_config(tmp_path)
    assert run("train", cfg, tmp_path / "base") == EXIT_OK
    cfg = write_config(tmp_path, {"bayes.variant": variant, "bayes.positions": positions,
                                  "bayes.init_from": str(tmp_path / "base" / "model.ckpt")})
    assert run("train", cfg, tmp_path / "v") == EXIT_OK
    model = load_checkpoint(tmp_path / "v" / "model.ckpt").model
    if variant == "latent":
        assert list(model.latents) == positions
    else:
        assert model.variational_sites() == positions
    metrics = json.loads((tmp_path / "v" / "metrics.json").read_text())
    assert np.isfinite(metrics["dev_ppl"]) and metrics["variant"] == variant


def test_pipeline_outputs(tmp_path):
    cfg = write_config(tmp_path)
    assert run("prep", cfg, tmp_path / "p") == EXIT_OK
    assert run("train", cfg, tmp_path / "t") == EXIT_OK
    ck = str(tmp_path / "t" / "model.ckpt")
    comps = [{"kind": "neural", "path": ck}, {"kind": "ngram", "path": str(tmp_path / "p" / "ngram.arpa")}]
    cfg2 = write_config(tmp_path, {"eval.checkpoint": ck, "eval.components": comps,
                                   "bayes.positions": ["l1.cell-input"]}, "cfg2.yaml")
    assert run("interp", cfg2, tmp_path / "i") == EXIT_OK
    interp = json.loads((tmp_path / "i" / "interp.json").read_text())
    assert abs(sum(interp["weights"]) - 1.0) < 1e-12
    h = interp["em_loglik_history"]
    assert all(b >= a - 1e-12 for a, b in zip(h, h[1:]))
    assert run("rescore", cfg2, tmp_path / "r") == EXIT_OK
    wer = json.loads((tmp_path / "r" / "wer.json").read_text())
    assert set(wer) >= {"acoustic_1best", "rescored"}
    assert run("nas-search", cfg2, tmp_path / "n", "nas.locations=[l1.cell-input,l1.forget-gate]") \
        == EXIT_OK
    assert len((tmp_path / "n" / "arch_weights.tsv").read_text().splitlines()) == 3
    assert (tmp_path / "n" / "selected.ckpt").exists()
    cfg3 = write_config(tmp_path, {"eval.checkpoint": str(tmp_path / "n" / "selected.ckpt")},
                        "cfg3.yaml")
    sel = load_checkpoint(tmp_path / "n" / "selected.ckpt").model
    if sel.variational_sites():
        assert run("snr", cfg3, tmp_path / "s") == EXIT_OK
        assert (tmp_path / "s" / "snr.tsv").exists()
    else:
        assert run("snr", cfg3, tmp_path / "s") == EXIT_DATA


def test_gradcheck_command(tmp_path):
    assert main(["gradcheck", "--output-dir", str(tmp_path)]) == EXIT_OK
    rows = (tmp_path / "gradcheck.tsv").read_text().splitlines()
    assert len(rows) > 20
