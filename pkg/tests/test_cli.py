import json
import math
import shutil
import wave

import pytest

from semspeech.cli import main
from semspeech.config import load_config
from semspeech.data import split_ids
from semspeech.errors import ConfigError, ParseError
from semspeech.plotting import plot_results, read_results

from conftest import read_csv, run_cli

SHORT = ("--set", "training.stage1_epochs=1", "--set", "training.stage2_epochs=1", "--set", "training.lm_epochs=1",
         "--set", "training.reconstructor_epochs=1")


# configuration ---------------------------------------------------------------------------

def test_unknown_keys_rejected(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"manifest": "m.tsv", "learning_rate": 1.0}))
    with pytest.raises(ConfigError, match="learning_rate"):
        load_config(p)
    p.write_text(json.dumps({"training": {"epochs": 3}}))
    with pytest.raises(ConfigError, match="epochs"):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(None, ["dims.no_such_width=3"])


def test_overrides_apply_on_top_of_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"manifest": "m.tsv", "beam": 3, "training": {"stage1_epochs": 4}}))
    cfg = load_config(p, ["beam=7", "training.stage1_epochs=2", "snr_db=[5, Infinity]"])
    assert cfg.beam == 7 and cfg.training_config().stage1_epochs == 2
    assert cfg.snr_db == [5.0, math.inf]
    assert cfg.manifest == str(tmp_path / "m.tsv")
    with pytest.raises(ConfigError):
        load_config(p, ["beam"])


def test_json_error_names_line(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "beam": 3,\n  "seed": ,\n}\n')
    with pytest.raises(ConfigError, match=r"c\.json:3"):
        load_config(p)


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["prepare", "--config", str(tmp_path / "absent.json")]) == 2
    assert "config" in capsys.readouterr().err


def test_split_is_ninety_ten():
    ids = [f"utt{i:04d}" for i in range(200)]
    train, test = split_ids(ids)
    assert (len(train), len(test)) == (180, 20)
    assert not set(train) & set(test)
    assert split_ids(list(reversed(ids))) == (train, test)


# prepare ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    run_cli("make-toy-corpus", root, "--utterances", 20)
    return root


def copy_corpus(src, dst):
    shutil.copytree(src, dst)
    return dst / "toy_config.json"


def test_empty_manifest_exits_2(tmp_path):
    (tmp_path / "m.tsv").write_text("")
    (tmp_path / "c.json").write_text(json.dumps({"manifest": "m.tsv"}))
    assert main(["prepare", "--config", str(tmp_path / "c.json")]) == 2


def test_missing_wav_is_listed(small_corpus, tmp_path, capsys):
    cfg = copy_corpus(small_corpus, tmp_path / "c")
    victim = sorted((tmp_path / "c" / "wav").glob("utt*.wav"))[3]
    victim.unlink()
    assert main(["prepare", "--config", str(cfg)]) == 3
    assert victim.stem in capsys.readouterr().err
    assert main(["prepare", "--config", str(cfg), "--skip-missing"]) == 0
    split = json.loads((tmp_path / "c" / "run" / "split.json").read_text())
    assert len(split["train"]) + len(split["test"]) == 19


def test_prepare_is_deterministic(small_corpus, tmp_path):
    sums = []
    for name in ("a", "b"):
        cfg = copy_corpus(small_corpus, tmp_path / name)
        run_cli("prepare", "--config", cfg)
        sums.append(json.loads((tmp_path / name / "run" / "split.json").read_text()))
    assert sums[0] == sums[1]
    assert (len(sums[0]["train"]), len(sums[0]["test"])) == (18, 2)


# a short end-to-end run ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def short_run(small_corpus, tmp_path_factory):
    root = tmp_path_factory.mktemp("short")
    cfg = copy_corpus(small_corpus, root / "c")
    run_cli("prepare", "--config", cfg)
    run_cli("train-stage1", "--config", cfg, *SHORT)
    run_cli("train-stage2", "--config", cfg, *SHORT)
    return cfg, cfg.parent / "run"


def test_s2t_rows_cover_sweep(short_run):
    cfg, out = short_run
    run_cli("eval-s2t", "--config", cfg, "--set", "snr_db=[0, 10, Infinity]", "--set", 'channels=["awgn", "rayleigh"]')
    rows = read_csv(out / "results_s2t.csv")
    assert len(rows) == 3 * 2
    assert {(r["snr_db"], r["channel"]) for r in rows} == {(s, c) for s in ("0.0", "10.0", "inf")
                                                            for c in ("awgn", "rayleigh")}
    assert all(0.0 <= float(r["wer"]) for r in rows)
    assert (out / "transcripts_s2t.tsv").exists()


def test_s2s_writes_mono_16k_audio(short_run):
    cfg, out = short_run
    run_cli("eval-s2s", "--config", cfg, "--set", "snr_db=[10]", "--jobs", 2, "--tag", "short")
    wavs = sorted((out / "wav_s2s_short" / "awgn_10.0dB").glob("*.wav"))
    assert len(wavs) == 2 * 2  # two test utterances, with and without side information
    for p in wavs:
        with wave.open(str(p)) as w:
            assert (w.getframerate(), w.getnchannels(), w.getsampwidth()) == (16000, 1, 2)
    rows = read_csv(out / "utterances_s2s_short.csv")
    assert all(r["frames_with_info"] == r["duration_sum"] for r in rows)


def test_zero_jobs_rejected(short_run):
    cfg, _ = short_run
    assert main(["eval-s2t", "--config", str(cfg), "--jobs", "0"]) == 2


def test_eval_without_training_fails(small_corpus, tmp_path):
    cfg = copy_corpus(small_corpus, tmp_path / "c")
    run_cli("prepare", "--config", cfg)
    assert main(["eval-s2t", "--config", str(cfg)]) == 3


# plots ---------------------------------------------------------------------------------------

HEADER = "snr_db,channel,wer,similarity,mcd,symbols_per_sentence\n"


def test_plots_are_deterministic(tmp_path):
    csv_path = tmp_path / "r.csv"
    csv_path.write_text(HEADER + "0.0,awgn,0.3,0.8,,64\n10.0,awgn,0.1,0.9,,64\ninf,awgn,0.05,0.95,,64\n"
                        "0.0,rayleigh,0.5,0.6,,64\n10.0,rayleigh,0.2,0.8,,64\n")
    a = plot_results(csv_path, tmp_path / "a")
    b = plot_results(csv_path, tmp_path / "b")
    assert sorted(p.name for p in a) == ["similarity_awgn.png", "similarity_rayleigh.png", "wer_awgn.png",
                                         "wer_rayleigh.png"]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_single_row_plots(tmp_path):
    csv_path = tmp_path / "r.csv"
    csv_path.write_text(HEADER + "5.0,awgn,0.2,,,32\n")
    assert [p.name for p in plot_results(csv_path, tmp_path / "p")] == ["wer_awgn.png"]


@pytest.mark.parametrize("body, line", [("0.0,awgn,0.3,0.8,,64\n5.0,awgn,abc,0.8,,64\n", 3),
                                        ("0.0,awgn,0.3\n", 2),
                                        ("0.0,,0.3,0.8,,64\n", 2)])
def test_malformed_csv_names_line(tmp_path, body, line):
    csv_path = tmp_path / "r.csv"
    csv_path.write_text(HEADER + body)
    with pytest.raises(ParseError, match=f"line {line}"):
        read_results(csv_path)
    assert main(["sweep-plot", str(csv_path)]) == 3
