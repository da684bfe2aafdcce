import json

import pytest

from premsel.cli import EXIT_CHECK, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from premsel.synthetic import write_corpus

from conftest import FIXTURES

TINY = {
    "split_ratio": 0.75,
    "model": {"dim": 16, "layers": 1, "heads": 2, "qk_dim": 4, "v_dim": 4, "ffn_dim": 32,
              "dropout": 0.0, "ref_dropout": 0.0},
    "train": {"epochs": 2, "warmup_epochs": 1, "peak_lr": 3e-3, "holes_per_batch": 8},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    write_corpus(data, 4, seed=21)
    for name in ("no_holes", "cyclic"):
        (data / f"{name}.json").write_bytes((FIXTURES / f"{name}.json").read_bytes())
    (data / "broken.json").write_text("{not json")
    cfg = dict(TINY, data_dir=str(data), cache=str(root / "corpus.ndjson"),
               checkpoint_dir=str(root / "ckpt"))
    (root / "config.json").write_text(json.dumps(cfg))
    return root


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_pipeline(workspace, capsys):
    cfg = workspace / "config.json"
    code, out, _ = run(capsys, "ingest", "--config", cfg)
    assert code == EXIT_OK
    assert "reject (no holes)" in out and "reject (mutual induction)" in out
    assert "reject (schema error)" in out and "accept=4" in out

    code, out, _ = run(capsys, "train", "--config", cfg, "--seed", "2")
    assert code == EXIT_OK and "train=3 id=1 ood=0" in out
    ckpt = workspace / "ckpt"
    assert (ckpt / "epoch-001.ckpt").is_file() and (ckpt / "best.ckpt").is_file()
    assert json.loads((ckpt / "config.json").read_text())["seed"] == 2

    dump = workspace / "z.ndjson"
    code, out, _ = run(capsys, "eval", "--config", cfg, "--checkpoint", ckpt / "epoch-000.ckpt",
                       "--checkpoint", ckpt / "epoch-001.ckpt", "--dump", dump)
    assert code == EXIT_OK and out.startswith("id\tAveP") and "runs 2" in out
    rec = json.loads(dump.read_text().splitlines()[0])
    assert set(rec) == {"split", "run", "z", "positive"}

    sample = sorted((workspace / "data").glob("Synthetic*.json"))[0]
    code, out, _ = run(capsys, "rank", "--config", cfg, "--checkpoint", ckpt / "best.ckpt",
                       "--file", sample, "--hole", 0, "--top-k", 3)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert "hole 0" in lines[0] and len(lines) == 4
    assert lines[1].split()[0] == "1"

    code, _, err = run(capsys, "rank", "--config", cfg, "--checkpoint", ckpt / "best.ckpt",
                       "--file", sample, "--hole", 999)
    assert code == EXIT_DATA and "hole 999 not found" in err


def test_train_checkpoint_flag_names_directory(workspace, capsys):
    cfg = workspace / "config.json"
    run(capsys, "ingest", "--config", cfg)
    out_dir = workspace / "alt"
    code, _, _ = run(capsys, "train", "--config", cfg, "--checkpoint", out_dir, "--max-steps", 2,
                     "--ablation", "no-taylor")
    assert code == EXIT_OK and (out_dir / "epoch-000.ckpt").is_file()
    stored = json.loads((out_dir / "config.json").read_text())
    assert stored["model"]["ablations"] == ["no-taylor"]


def test_stats(workspace, capsys, tmp_path):
    out_file = tmp_path / "stats.ndjson"
    code, out, err = run(capsys, "stats", "--config", workspace / "config.json", "--out", out_file)
    assert code == EXIT_OK and out.startswith("files 6") and "broken.json" in err
    kinds = {json.loads(l)["kind"] for l in out_file.read_text().splitlines()}
    assert kinds == {"file", "histogram", "lemma"}


def test_exit_codes(workspace, capsys, tmp_path):
    assert run(capsys, "frobnicate")[0] == EXIT_USAGE
    assert run(capsys, "train", "--ablation", "no-such-thing")[0] == EXIT_USAGE
    assert run(capsys, "eval", "--config", workspace / "config.json")[0] == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": {"dim": -1}}')
    assert run(capsys, "train", "--config", bad)[0] == EXIT_USAGE
    assert run(capsys, "ingest", "--data-dir", tmp_path / "missing")[0] == EXIT_DATA
    empty = tmp_path / "empty"
    empty.mkdir()
    (empty / "x.json").write_bytes((FIXTURES / "no_holes.json").read_bytes())
    assert run(capsys, "ingest", "--data-dir", empty, "--cache", tmp_path / "c")[0] == EXIT_DATA
    assert run(capsys, "train", "--cache", tmp_path / "nope.ndjson")[0] == EXIT_DATA
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"junk")
    assert run(capsys, "rank", "--checkpoint", junk, "--file", FIXTURES / "nat_comm.json",
               "--hole", 0)[0] == EXIT_DATA


def test_training_abort_exit_code(workspace, capsys, monkeypatch):
    import premsel.cli as cli
    from premsel.training import NonFiniteLoss

    def boom(*a, **k):
        raise NonFiniteLoss("non-finite loss at epoch 0, step 0")

    run(capsys, "ingest", "--config", workspace / "config.json")
    monkeypatch.setattr(cli, "train", boom)
    code, _, err = run(capsys, "train", "--config", workspace / "config.json")
    assert code == EXIT_CHECK and "non-finite" in err


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK
    assert "premsel" in capsys.readouterr().out


def test_selfcheck(capsys):
    code, out, _ = run(capsys, "selfcheck")
    assert code == EXIT_OK
    assert out.count("PASS") == 7 and out.rstrip().endswith("7/7 checks passed")
