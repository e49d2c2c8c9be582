import json
import subprocess
import sys

import numpy as np
import pytest

from fedzip.cli import main
from fedzip.config import DataConfig, build_data, load_config
from fedzip.federated import FedConfig

SMALL = ["--clients", "4", "--rounds", "2"]


def write_config(path, extra="hidden = 8\n"):
    path.write_text(
        "[federated]\nlocal_lr = 0.2\n" + extra +
        "\n[data]\nnum_classes = 3\ndim = 5\nn = 600\n"
    )
    return path


@pytest.fixture
def config_file(tmp_path):
    return write_config(tmp_path / "run.ini")


class TestConfigFile:
    def test_parses_types(self, tmp_path):
        path = write_config(tmp_path / "c.ini", "M = 7\nC = 0.5\nB = inf\nk = auto\nmode = fedzip\n"
                                                "weight_keep_fraction = 0.2\nhidden = 16, 8\n")
        fed, data = load_config(path)
        cfg = FedConfig(**fed)
        assert (cfg.M, cfg.C, cfg.k, cfg.mode, cfg.hidden) == (7, 0.5, "auto", "fedzip", (16, 8))
        assert np.isinf(cfg.B)
        assert cfg.sparsity.weight_keep_fraction == 0.2
        assert DataConfig(**data).num_classes == 3

    @pytest.mark.parametrize("text", ["[federated]\ncolour = red\n", "[data]\nsize = 3\n", "[other]\na = 1\n"])
    def test_unknown_keys(self, tmp_path, text):
        path = tmp_path / "bad.ini"
        path.write_text(text)
        with pytest.raises(ValueError):
            load_config(path)

    def test_duplicate_key(self, tmp_path):
        path = tmp_path / "dup.ini"
        path.write_text("[federated]\nM = 3\nM = 4\n")
        with pytest.raises(ValueError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_config(tmp_path / "nope.ini")

    @pytest.mark.parametrize("partition", ["noniid", "unbalanced", "noniid-unbalanced"])
    def test_build_data(self, partition):
        cfg = DataConfig(num_classes=4, dim=5, n=800, partition=partition)
        shards, test = build_data(cfg, 10, 0)
        assert len(shards) == 10
        assert sum(s.n_m for s in shards) + len(test) == 800

    def test_csv_source(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = np.column_stack([rng.normal(size=(120, 3)), rng.integers(0, 2, 120)])
        path = tmp_path / "d.csv"
        np.savetxt(path, rows, delimiter=",", header="a,b,c,y", comments="")
        shards, test = build_data(DataConfig(csv=str(path), partition="noniid"), 4, 0)
        assert shards[0].data.dim == 3

    def test_bad_partition(self):
        with pytest.raises(ValueError):
            DataConfig(partition="random")


class TestRunCommand:
    def test_run_and_compare(self, tmp_path, config_file, capsys):
        a, b = tmp_path / "avg", tmp_path / "zip"
        assert main(["run", "--config", str(config_file), *SMALL, "--out", str(a)]) == 0
        assert main(["run", "--config", str(config_file), *SMALL, "--mode", "fedzip", "--encoder", "ap",
                     "--keep-frac", "0.2", "--save-updates", "--out", str(b)]) == 0
        for d in (a, b):
            assert {p.name for p in d.iterdir()} >= {"run.json", "rounds.csv", "sizes_histogram.csv"}
        log = json.loads((b / "run.json").read_text())
        assert log["config"]["encoder"] == "ap"
        assert log["config"]["sparsity"]["weight_keep_fraction"] == 0.2
        assert log["config"]["data"]["num_classes"] == 3
        updates = sorted((b / "updates").iterdir())
        assert len(updates) == 8
        assert sum(8 * p.stat().st_size for p in updates) == log["b_total"]
        capsys.readouterr()
        assert main(["compare", str(a), str(b)]) == 0
        out = capsys.readouterr().out
        assert "avg" in out and "zip" in out and "delta_acc" in out

    def test_run_rejects_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[federated]\nC = 3\n")
        assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
        assert "error" in capsys.readouterr().err

    def test_compare_missing_run(self, tmp_path, capsys):
        assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 1


class TestCodecCommand:
    def test_encode_inspect_decode(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        src = tmp_path / "delta.npz"
        np.savez(src, **{"layer0.weight": rng.normal(size=(30, 20)).astype(np.float32),
                         "layer0.bias": rng.normal(size=20).astype(np.float32)})
        fz, out = tmp_path / "u.fzip", tmp_path / "back.npz"
        assert main(["codec", "encode", str(src), str(fz), "--encoder", "doap", "--client", "3", "--n", "50"]) == 0
        assert main(["codec", "inspect", str(fz)]) == 0
        text = capsys.readouterr().out
        assert "client 3" in text and "layer0.weight" in text and "doap" in text
        assert main(["codec", "decode", str(fz), str(out)]) == 0
        with np.load(out) as back:
            w = back["layer0.weight"]
            assert w.shape == (30, 20)
            assert np.count_nonzero(w) <= 60
            assert np.unique(w).size <= 3

    def test_decode_corrupt_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.fzip"
        bad.write_bytes(b"FZIP\x01\x00garbage")
        assert main(["codec", "decode", str(bad), str(tmp_path / "o.npz")]) == 1
        assert "error" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    result = subprocess.run([sys.executable, "-m", "fedzip", "codec", "inspect", str(tmp_path / "none.fzip")],
                            capture_output=True, text=True)
    assert result.returncode == 1
    assert "cannot" in result.stderr or "No such file" in result.stderr
    result = subprocess.run([sys.executable, "-m", "fedzip", "--help"], capture_output=True, text=True)
    assert result.returncode == 0 and "compare" in result.stdout
