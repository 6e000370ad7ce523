"""Tests for the command-line interface."""

import numpy as np
import pytest

from ctfuse import ctf
from ctfuse.backbone import BackboneConfig, build, forward_features, save_checkpoint
from ctfuse.cli import main
from ctfuse.operators import OperatorKind, forward, load_operator
from ctfuse.rng import SeededRng


class TestParsing:
    def test_no_arguments_is_a_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 2

    def test_unknown_flag_is_a_usage_error(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["cost", "--frobnicate"])
        assert excinfo.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand_rejected(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["transmogrify"])
        assert excinfo.value.code == 2

    def test_forward_requires_exactly_one_source(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["forward", "--operator", "a", "--backbone", "b",
                  "--input", "x", "--out", "y"])
        assert excinfo.value.code == 2


class TestCost:
    def test_depth_seven_slice_mixing_overheads(self, capsys):
        assert main(["cost", "--fusion", "a3d", "--d", "7"]) == 0
        out = capsys.readouterr().out
        # per-layer MAC overhead 1 + 7/(Cout*9) for Cout = 64, 256, 512
        for frac in ("583/576", "2311/2304", "4615/4608"):
            assert frac in out

    def test_all_kinds_by_default(self, capsys):
        assert main(["cost", "--d", "3"]) == 0
        out = capsys.readouterr().out
        for kind in OperatorKind:
            assert f"\n{kind.value}" in out or out.startswith(kind.value)

    def test_csv_block_present_and_parsable(self, capsys):
        assert main(["cost", "--fusion", "tsm", "--stages", "8x2",
                     "--height", "16", "--width", "16"]) == 0
        out = capsys.readouterr().out
        lines = out[out.index("kind,layer"):].strip().splitlines()
        assert lines[0] == "kind,layer,params,macs,overhead_params,overhead_macs"
        assert len(lines) == 4  # two layers plus a total row
        assert lines[1].split(",")[0] == "tsm"

    def test_flops_column_is_opt_in(self, capsys):
        main(["cost", "--fusion", "i3d"])
        plain = capsys.readouterr().out
        main(["cost", "--fusion", "i3d", "--flops"])
        with_flops = capsys.readouterr().out
        assert "flops" not in plain
        assert "flops" in with_flops

    def test_invalid_stage_string_error_is_clean(self, capsys):
        assert main(["cost", "--stages", "64xx1"]) == 1
        assert "error:" in capsys.readouterr().err


class TestCheck:
    def test_reports_passes_and_exits_zero(self, capsys):
        assert main(["check", "--trials", "2"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "0 failed" in out
        assert "oracle:a3d" in out
        assert "grad:backbone" in out


class TestDemo:
    def test_identical_invocations_write_identical_bytes(self, tmp_path):
        args = ["demo", "--fusion", "i3d", "--epochs", "2", "--volumes", "12",
                "--seed", "4"]
        p1, p2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
        assert main(args + ["--out", str(p1)]) == 0
        assert main(args + ["--out", str(p2)]) == 0
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_auc"
        assert len(lines) == 3

    def test_slice_mixing_beats_slice_wise_on_validation_loss(self, tmp_path):
        runs = {}
        for kind in ("a3d", "nofusion"):
            out = tmp_path / f"{kind}.csv"
            assert main(["demo", "--fusion", kind, "--epochs", "20",
                         "--volumes", "24", "--seed", "0", "--out", str(out)]) == 0
            last = out.read_text().splitlines()[-1].split(",")
            runs[kind] = (float(last[2]), float(last[3]))
        assert runs["a3d"][0] < runs["nofusion"][0]
        assert runs["a3d"][1] > runs["nofusion"][1]

    def test_config_file_overrides_task_and_training(self, tmp_path, capsys):
        cfg = tmp_path / "demo.cfg"
        cfg.write_text("# small run\nvolumes=12\nepochs=2\nlearning_rate=0.05\n")
        out = tmp_path / "m.csv"
        assert main(["demo", "--config", str(cfg), "--out", str(out)]) == 0
        assert "volumes=12" in capsys.readouterr().out
        assert len(out.read_text().splitlines()) == 3

    def test_flags_override_config_file(self, tmp_path):
        cfg = tmp_path / "demo.cfg"
        cfg.write_text("volumes=12\nepochs=5\n")
        out = tmp_path / "m.csv"
        assert main(["demo", "--config", str(cfg), "--epochs", "1",
                     "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 2

    def test_unknown_config_key_fails_cleanly(self, tmp_path, capsys):
        cfg = tmp_path / "demo.cfg"
        cfg.write_text("volumes=12\nmomentum=0.9\n")
        assert main(["demo", "--config", str(cfg)]) == 1
        assert "momentum" in capsys.readouterr().err


class TestInflateForward:
    def test_operator_round_trip_matches_library(self, tmp_path):
        rng = SeededRng(9)
        w2d = rng.uniform(-1, 1, (4, 2, 3, 3))
        x = rng.uniform(-1, 1, (2, 5, 6, 6))
        ctf.write_tensor(tmp_path / "w2d.ctf", w2d)
        ctf.write_tensor(tmp_path / "vol.ctf", x)
        op_dir = tmp_path / "op"
        assert main(["inflate", "--kernel", str(tmp_path / "w2d.ctf"),
                     "--fusion", "a3d", "--depth", "5", "--seed", "3",
                     "--out", str(op_dir)]) == 0
        assert main(["forward", "--operator", str(op_dir),
                     "--input", str(tmp_path / "vol.ctf"),
                     "--out", str(tmp_path / "y.ctf")]) == 0
        state = load_operator(op_dir)
        got = ctf.read_tensor(tmp_path / "y.ctf")
        assert np.array_equal(got, forward(state, x))

    def test_every_kind_inflates_from_the_cli(self, tmp_path):
        ctf.write_tensor(tmp_path / "w.ctf",
                         SeededRng(1).uniform(-1, 1, (3, 2, 3, 3)))
        for kind in OperatorKind:
            out = tmp_path / kind.value
            assert main(["inflate", "--kernel", str(tmp_path / "w.ctf"),
                         "--fusion", kind.value, "--depth", "4",
                         "--out", str(out)]) == 0
            assert load_operator(out).kind is kind

    def test_backbone_forward_matches_library(self, tmp_path):
        config = BackboneConfig(depth=3, stages=((4, 1),), height=8, width=8,
                                fusion=OperatorKind.TSM, seed=5)
        bb = build(config)
        save_checkpoint(bb, tmp_path / "ckpt")
        x = SeededRng(2).uniform(-1, 1, (1, 3, 8, 8))
        ctf.write_tensor(tmp_path / "vol.ctf", x)
        assert main(["forward", "--backbone", str(tmp_path / "ckpt"),
                     "--input", str(tmp_path / "vol.ctf"),
                     "--out", str(tmp_path / "map.ctf")]) == 0
        got = ctf.read_tensor(tmp_path / "map.ctf")
        assert np.array_equal(got, forward_features(bb, x))

    def test_missing_operator_directory_is_reported(self, tmp_path, capsys):
        ctf.write_tensor(tmp_path / "vol.ctf", np.zeros((1, 3, 4, 4)))
        assert main(["forward", "--operator", str(tmp_path / "nope"),
                     "--input", str(tmp_path / "vol.ctf"),
                     "--out", str(tmp_path / "y.ctf")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_wrong_input_rank_is_reported(self, tmp_path, capsys):
        ctf.write_tensor(tmp_path / "w.ctf", np.ones((2, 2, 3, 3)))
        op_dir = tmp_path / "op"
        main(["inflate", "--kernel", str(tmp_path / "w.ctf"), "--fusion",
              "i3d", "--depth", "3", "--out", str(op_dir)])
        ctf.write_tensor(tmp_path / "bad.ctf", np.ones((5, 5)))
        assert main(["forward", "--operator", str(op_dir),
                     "--input", str(tmp_path / "bad.ctf"),
                     "--out", str(tmp_path / "y.ctf")]) == 1
        assert "error:" in capsys.readouterr().err
