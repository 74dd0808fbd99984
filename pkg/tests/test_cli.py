#!/usr/bin/env python3

import json

import numpy as np
import pandas as pd
import pytest

import ipfsim.cli as cli
import ipfsim.synth as synth

SMALL_MAP = {"grid": 3, "beta_max": 0.3, "n_alpha": 6, "n_seeds": 5, "n_steps": 300, "tail": 50}


def test_parse_range():
    assert cli.parse_range("0.5:3.0") == (0.5, 3.0, None)
    assert cli.parse_range("0.5:3.0:600") == (0.5, 3.0, 600)
    with pytest.raises(Exception):
        cli.parse_range("0.5")


def test_orbit(tmp_path):
    out = tmp_path / "orbit.csv"
    assert cli.main(["-q", "orbit", "--inv-alpha", "1.0:2.8:19", "--out", str(out)]) == 0
    df = pd.read_csv(out, dtype={"sample_index": str})
    assert list(df.columns) == ["inv_alpha", "sample_index", "g"]
    assert df["inv_alpha"].nunique() == 19
    assert (df["sample_index"] == "DIVERGED").any()


def test_orbit_explicit_seeds(tmp_path):
    out = tmp_path / "fig2.csv"
    argv = ["-q", "orbit", "--beta", "0.164", "--seed-explicit", "0.3,0",
            "--inv-alpha", "1.0:2.0", "--n", "5", "--steps", "300", "--tail", "20", "--out", str(out)]
    assert cli.main(argv) == 0
    assert len(pd.read_csv(out)) == 5 * 20


def test_orbit_missing_output():
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["orbit", "--inv-alpha", "1.0:2.0"])
    assert excinfo.value.code == 2


def test_orbit_invalid_range(tmp_path):
    out = tmp_path / "orbit.csv"
    assert cli.main(["-q", "orbit", "--inv-alpha", "2.0:1.0", "--out", str(out)]) == 2


def test_regimes(tmp_path):
    out = tmp_path / "regimes.csv"
    assert cli.main(["-q", "regimes", "--inv-alpha", "1.5:2.75:3", "--out", str(out)]) == 0
    df = pd.read_csv(out)
    assert df["kind"].tolist()[0] == "fixed-point"
    assert df["kind"].tolist()[-1] == "divergent"


def test_config_overrides_flags(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"inv_alpha": "1.0:1.5:4", "steps": 200, "tail": 10}))
    out = tmp_path / "orbit.csv"
    assert cli.main(["-q", "orbit", "--config", str(config), "--inv-alpha", "1.0:2.0:50", "--out", str(out)]) == 0
    df = pd.read_csv(out)
    assert df["inv_alpha"].nunique() == 4
    assert len(df) == 40


def test_config_unknown_key(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"no_such_option": 1}))
    out = tmp_path / "orbit.csv"
    assert cli.main(["-q", "orbit", "--config", str(config), "--out", str(out)]) == 2


@pytest.mark.parametrize(
    "document",
    [
        {"g0": "half"},
        {"steps": 2.5},
        {"steps": True},
        {"seed_explicit": "a,b"},
        {"inv_alpha": "1.0"},
        {"beta": ["x"]},
        {"quiet": 1},
    ],
)
def test_config_rejects_bad_values(tmp_path, document):
    config = tmp_path / "run.json"
    config.write_text(json.dumps(document))
    out = tmp_path / "orbit.csv"
    assert cli.main(["-q", "orbit", "--config", str(config), "--out", str(out)]) == 2
    assert not out.exists()


def test_config_accepts_lists(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"inv_alpha": [1.0, 1.5, 4], "beta": [0.05], "steps": 200, "tail": 10}))
    out = tmp_path / "orbit.csv"
    assert cli.main(["-q", "orbit", "--config", str(config), "--out", str(out)]) == 0
    df = pd.read_csv(out)
    assert df["inv_alpha"].nunique() == 4
    assert len(df) == 40


def test_likelihood_and_centroid(tmp_path):
    config = tmp_path / "map.json"
    config.write_text(json.dumps(SMALL_MAP))
    map_csv = tmp_path / "map.csv"
    argv = ["-q", "likelihood", "--config", str(config), "--target-semitones", "0", "--out", str(map_csv)]
    assert cli.main(argv) == 0
    df = pd.read_csv(map_csv)
    assert len(df) == 9
    assert df["likelihood"].max() == 1.0

    summary = tmp_path / "centroid.csv"
    argv = ["-q", "centroid", "--in", str(map_csv), "--target-semitones", "0", "--out", str(summary)]
    assert cli.main(argv) == 0
    row = pd.read_csv(summary)
    assert len(row) == 1
    assert 0.0 <= row["beta1_centroid"][0] <= 0.3
    assert row["region_cell_count"][0] >= 1


def test_sweep_catalog(tmp_path):
    catalog = tmp_path / "catalog.txt"
    catalog.write_text("# two intervals\n0\n12\n")
    config = tmp_path / "map.json"
    config.write_text(json.dumps(SMALL_MAP))
    out = tmp_path / "centroids.csv"
    argv = ["-q", "sweep", "--config", str(config), "--catalog", str(catalog), "--out", str(out)]
    assert cli.main(argv) == 0
    df = pd.read_csv(out)
    assert len(df) == 2
    assert df["target_semitones"].tolist() == pytest.approx([0.0, 12.0])


def test_sweep_max_interval(tmp_path):
    out = tmp_path / "max.csv"
    argv = ["-q", "sweep", "--max-interval", "--grid", "2", "--n-alpha", "20",
            "--n-steps", "300", "--tail", "50", "--out", str(out)]
    assert cli.main(argv) == 0
    df = pd.read_csv(out, keep_default_na=False)
    assert set(df["mark"]) <= {"interval", "stable-only", "none"}
    assert len(df) == 4


def test_synth_writes_outputs(tmp_path):
    out = tmp_path / "tone.wav"
    argv = ["-q", "synth", "--beta1", "0.0", "--beta2", "0.0", "--alpha", "0.45",
            "--duration", "0.5", "--out", str(out)]
    with pytest.warns(UserWarning):
        assert cli.main(argv) == 0
    audio, rate = synth.read_wav(out)
    assert rate == 44100
    assert audio.size > 0 and np.max(np.abs(audio)) <= 1.0
    score = pd.read_csv(tmp_path / "tone-score.csv")
    assert "period_s_layer2" in score.columns
    spec = pd.read_csv(tmp_path / "tone-spectrogram.csv")
    assert list(spec.columns) == ["time_s", "freq_hz", "magnitude"]


def test_synth_invalid_wave(tmp_path):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"garbage")
    out = tmp_path / "tone.wav"
    argv = ["-q", "synth", "--beta1", "0.0", "--beta2", "0.0", "--alpha", "0.45",
            "--duration", "0.5", "--wave", str(bad), "--out", str(out)]
    with pytest.warns(UserWarning):
        assert cli.main(argv) == 2


def test_envelope(tmp_path):
    wav = tmp_path / "tone.wav"
    t = np.arange(44100) / 44100
    synth.write_wav(wav, 0.5 * np.sin(2 * np.pi * 500.0 * t), 44100)
    out = tmp_path / "envelope.csv"
    assert cli.main(["-q", "envelope", "--in", str(wav), "--out", str(out)]) == 0
    df = pd.read_csv(out)
    assert len(df) == 50
    np.testing.assert_allclose(df["envelope"], 0.5 / np.sqrt(2), rtol=0.01)


def test_help_documents_units(capsys):
    for command in ("synth", "likelihood", "orbit"):
        with pytest.raises(SystemExit):
            cli.main([command, "--help"])
        text = capsys.readouterr().out
        assert any(unit in text for unit in ("semitones", "Hz", "seconds", "dimensionless"))
