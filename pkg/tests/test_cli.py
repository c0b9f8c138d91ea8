import json

import pytest
from conftest import tiny_config

from plca import cli, ppm, segnet
from plca.train import summarize

SMALL_NET = segnet.net_config_dict(segnet.NetConfig(channels=(6, 6, 6, 6)))


@pytest.fixture(scope="module")
def trained(tiny_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_train")
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps(tiny_config(tiny_data, net=SMALL_NET)))
    assert cli.main(["train", "--config", str(cfg), "--out", str(out / "run")]) == 0
    return out


def test_gen_data(tiny_data, tmp_path, capsys):
    assert cli.main(["gen-data", "--spec", str(tiny_data / "spec.json"), "--out", str(tmp_path)]) == 0
    assert "source_train: 8 items" in capsys.readouterr().out
    assert json.loads((tmp_path / "target_test" / "manifest.json").read_text())["count"] == 4


def test_train_writes_metrics_and_checkpoint(trained):
    lines = (trained / "run" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 6
    assert (trained / "run" / "final" / "manifest.json").exists()


def test_eval(trained, tiny_data, tmp_path, capsys):
    ck = str(trained / "run" / "final")
    assert cli.main(["eval", "--checkpoint", ck, "--data", str(tiny_data / "target_test"),
                     "--json", str(tmp_path / "r.json")]) == 0
    assert "mIoU" in capsys.readouterr().out
    assert cli.main(["eval", "--checkpoint", ck, "--data", str(tiny_data / "target_test"),
                     "--no-aggregate"]) == 0
    assert 0 <= json.loads((tmp_path / "r.json").read_text())["miou"] <= 1


def test_eval_missing_checkpoint(tiny_data, tmp_path, capsys):
    assert cli.main(["eval", "--checkpoint", str(tmp_path), "--data", str(tiny_data / "target_test")]) == 2
    assert "error" in capsys.readouterr().err


def test_ablate_prints_table_and_csv(tiny_data, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(tiny_config(tiny_data, net=SMALL_NET, max_iters=2)))
    assert cli.main(["ablate", "--config", str(cfg), "--out", str(tmp_path / "abl"),
                     "--columns", "source_only,plca", "--seeds", "0,1"]) == 0
    out = capsys.readouterr().out
    assert "column" in out and "mean mIoU" in out and "seed 1" in out
    csv = (tmp_path / "abl" / "ablation.csv").read_text().splitlines()
    assert csv[0].startswith("column,seed,miou") and len(csv) == 5
    with pytest.raises(SystemExit):
        cli.main(["ablate", "--config", str(cfg), "--columns", "bogus"])


def test_ablation_table_alignment():
    rows = [{"column": c, "seed": s, "miou": 0.5 + s / 10, "per_class_iou": [0.5, None]}
            for c in ("a", "long_name") for s in (0, 1)]
    table, csv = cli.ablation_table(rows, summarize(rows))
    lines = table.splitlines()
    assert len({len(line) for line in lines}) == 1
    assert "55.00" in lines[2] and csv.splitlines()[1] == "a,0,0.500000,0.500000,"


def test_grad_check_without_params(capsys):
    assert cli.main(["grad-check", "--no-params"]) == 0
    out = capsys.readouterr().out
    assert "0 failed" in out and "FAIL" not in out


def test_dump_assoc(trained, capsys):
    ck = trained / "run" / "final"
    out = trained / "dump"
    assert cli.main(["dump-assoc", "--checkpoint", str(ck), "--pair", "1", "--out", str(out)]) == 0
    names = sorted(p.name for p in out.glob("*.ppm"))
    assert "association_map.ppm" in names and any(n.startswith("similarity_row_") for n in names)
    assert ppm.read_ppm(out / "source.ppm").shape == (48, 48, 3)
    assert ppm.read_ppm(out / "association_map.ppm").shape == (48, 48, 3)
    assert "valid cycles" in capsys.readouterr().out


def test_dump_assoc_pair_out_of_range(trained):
    with pytest.raises(SystemExit):
        cli.main(["dump-assoc", "--checkpoint", str(trained / "run" / "final"), "--pair", "99"])
