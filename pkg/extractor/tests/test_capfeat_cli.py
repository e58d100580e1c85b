"""CLI behavior: happy paths and exit codes."""

import json

import pytest

from caplab.features import read_capf

from capfeat import cli


def run(argv):
    return cli.main(argv)


class TestExtractCommand:
    def test_end_to_end(self, image_dir, tmp_path, capsys):
        out = tmp_path / "feats.capf"
        with pytest.warns(UserWarning, match="broken.jpg"):
            code = run(["extract", "--images", str(image_dir),
                        "--cnn", "squeezenet1_0", "--grid", "2x4",
                        "--weights", "random", "--seed", "5",
                        "--out", str(out)])
        assert code == 0
        msg = capsys.readouterr().out
        assert "6 images" in msg and "2x4 grid" in msg and "skipped 1" in msg

        store = read_capf(out)
        assert (store.regions, store.dim) == (8, 512)
        assert len(store) == 6
        side = json.loads((tmp_path / "feats.manifest.json").read_text())
        assert side["skipped_images"] == ["broken.jpg"]
        assert "last spatial feature map" in side["truncation"]

    def test_missing_image_dir_exits_3(self, tmp_path, capsys):
        code = run(["extract", "--images", str(tmp_path / "void"),
                    "--cnn", "resnet18", "--weights", "random",
                    "--out", str(tmp_path / "x.capf")])
        assert code == 3
        assert "not found" in capsys.readouterr().err

    def test_bad_grid_exits_2(self, image_dir, tmp_path, capsys):
        code = run(["extract", "--images", str(image_dir),
                    "--cnn", "resnet18", "--grid", "7by7",
                    "--weights", "random", "--out", str(tmp_path / "x.capf")])
        assert code == 2
        assert "grid" in capsys.readouterr().err

    def test_unknown_cnn_exits_2_listing_names(self, image_dir, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["extract", "--images", str(image_dir), "--cnn", "lenet5",
                 "--weights", "random", "--out", str(tmp_path / "x.capf")])
        assert exc.value.code == 2
        assert "alexnet" in capsys.readouterr().err

    def test_pretrained_unavailable_exits_3(self, image_dir, tmp_path,
                                            monkeypatch, capsys):
        from capfeat.exceptions import DataError

        def refuse(name, weights="pretrained", seed=0):
            raise DataError(f"pretrained weights for {name!r} unavailable")
        monkeypatch.setattr("capfeat.extraction.encoders.build_model", refuse)
        code = run(["extract", "--images", str(image_dir),
                    "--cnn", "resnet18", "--out", str(tmp_path / "x.capf")])
        assert code == 3
        assert "unavailable" in capsys.readouterr().err


class TestParamsCommand:
    def test_prints_thousands(self, capsys):
        assert run(["params", "--cnn", "squeezenet1_0"]) == 0
        assert "squeezenet1_0: 1248 thousand parameters" in capsys.readouterr().out

    def test_unknown_cnn_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["params", "--cnn", "lenet5"])
        assert exc.value.code == 2


class TestParser:
    def test_no_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run([])
        assert exc.value.code == 2

    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run(["transmogrify"])
        assert exc.value.code == 2
