"""File formats, round trips, validation errors and the command line."""
import os

import numpy as np
import pytest

from cednn.cli import run_command
from cednn.io_utils import (CheckpointError, ManifestError, load_checkpoint,
                            load_config, load_landmarks, load_manifest,
                            read_checkpoint_header, save_checkpoint,
                            save_config, save_landmarks, save_manifest)
from cednn.model import ModelConfig, build_model
from cednn.synthetic import write_dataset
from cednn.training import TrainOptions


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    manifest_path = write_dataset(str(root), n=6, size=28, d=3, seed=0,
                                  n_subjects=3)
    return str(root), manifest_path


SMALL_CFG = dict(num_blocks=2, input_size=28, attention_depth=2, d=3,
                 reduction_channels=36, top_channels=32)


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.cfg"
    save_config(ModelConfig(**SMALL_CFG),
                TrainOptions(epochs=2, batch_size=4, lr_profile="custom",
                             lr_step=100, seed=0), path)
    return str(path)


# ---------------------------------------------------------------------------
# landmarks

def test_landmarks_roundtrip(tmp_path):
    pts = np.array([[1.5, 2.25], [3.0, 4.125]])
    path = tmp_path / "lm.txt"
    save_landmarks(pts, path)
    np.testing.assert_allclose(load_landmarks(path), pts, atol=1e-4)


def test_landmarks_validate_indices(tmp_path):
    path = tmp_path / "lm.txt"
    path.write_text("0,1.0,2.0\n2,3.0,4.0\n")
    with pytest.raises(ManifestError):
        load_landmarks(path)
    path.write_text("0,1.0\n")
    with pytest.raises(ManifestError):
        load_landmarks(path)


# ---------------------------------------------------------------------------
# manifest

def test_manifest_roundtrip(dataset, tmp_path):
    _, manifest_path = dataset
    m1 = load_manifest(manifest_path)
    assert len(m1.records) == 6 and m1.d == 3
    out = tmp_path / "copy.csv"
    save_manifest(m1, out)
    # copy lives in a different directory; reload against the original root
    m2 = load_manifest(manifest_path)
    assert len(m2.records) == len(m1.records)
    for a, b in zip(m1.records, m2.records):
        assert a.subject == b.subject and a.fold == b.fold
        np.testing.assert_array_equal(a.labels, b.labels)
    assert (out.read_text().splitlines()[0]
            == open(manifest_path).read().splitlines()[0])


def test_manifest_binarizes_intensities(dataset, tmp_path):
    root, manifest_path = dataset
    lines = open(manifest_path).read().splitlines()
    first = lines[1].rsplit(",", 1)
    doctored = tmp_path / "m.csv"
    doctored.write_text("\n".join([lines[0], first[0] + ",1;3;0"] + lines[2:]) + "\n")
    # point the relative paths back at the dataset root
    os.symlink(os.path.join(root, "images"), tmp_path / "images")
    os.symlink(os.path.join(root, "landmarks"), tmp_path / "landmarks")
    m = load_manifest(doctored)
    np.testing.assert_array_equal(m.records[0].labels, [0, 1, 0])


def test_manifest_errors_carry_line_numbers(dataset, tmp_path):
    root, manifest_path = dataset
    lines = open(manifest_path).read().splitlines()
    os.symlink(os.path.join(root, "images"), tmp_path / "images")
    os.symlink(os.path.join(root, "landmarks"), tmp_path / "landmarks")

    bad_header = tmp_path / "a.csv"
    bad_header.write_text("who,what\n")
    with pytest.raises(ManifestError, match=":1"):
        load_manifest(bad_header)

    missing_file = tmp_path / "b.csv"
    doctored = lines[1].replace("0000_action", "no_such")
    missing_file.write_text("\n".join([lines[0], doctored]) + "\n")
    with pytest.raises(ManifestError, match=":2.*no_such"):
        load_manifest(missing_file)

    mixed_arity = tmp_path / "c.csv"
    mixed_arity.write_text("\n".join(
        [lines[0], lines[1], lines[2].rsplit(",", 1)[0] + ",1;0"]) + "\n")
    with pytest.raises(ManifestError, match=":3.*arity"):
        load_manifest(mixed_arity)

    bad_label = tmp_path / "d.csv"
    bad_label.write_text("\n".join(
        [lines[0], lines[1].rsplit(",", 1)[0] + ",9;0;0"]) + "\n")
    with pytest.raises(ManifestError, match=":2"):
        load_manifest(bad_label)


# ---------------------------------------------------------------------------
# config files

def test_config_roundtrip(tmp_path):
    config = ModelConfig(connection="dense", groups=6, d=13,
                         se_mode="after_block", linear_mode=False)
    options = TrainOptions(epochs=40, base_lr=0.02, lr_profile="ck", seed=7)
    path = tmp_path / "full.cfg"
    save_config(config, options, path)
    c2, o2 = load_config(path)
    assert c2 == config and o2 == options


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("optimizer = adam\n")
    with pytest.raises(ValueError, match="unknown key"):
        load_config(path)
    path.write_text("groups\n")
    with pytest.raises(ValueError, match="key = value"):
        load_config(path)


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_bit_exact_roundtrip(tmp_path):
    config = ModelConfig(**SMALL_CFG)
    params = build_model(config, seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(params, config, path, metadata={"epochs": 5})
    p2, c2, meta = load_checkpoint(path)
    assert c2 == config and meta == {"epochs": 5}
    for (na, a, ta), (nb, b, tb) in zip(params.named_arrays(),
                                        p2.named_arrays()):
        assert na == nb and ta == tb
        np.testing.assert_array_equal(a, b)


def test_checkpoint_header_inventory_invariant(tmp_path):
    config = ModelConfig(**SMALL_CFG)
    path = tmp_path / "m.ckpt"
    save_checkpoint(build_model(config, seed=0), config, path)
    header = read_checkpoint_header(path)
    payload_bytes = sum(int(np.prod(e["shape"])) * 4
                        for e in header["inventory"])
    header_end = 8 + 6 + len(  # magic + struct + json header
        __import__("json").dumps(header, sort_keys=True).encode())
    assert os.path.getsize(path) == header_end + payload_bytes


def test_checkpoint_truncation_detected(tmp_path):
    config = ModelConfig(**SMALL_CFG)
    path = tmp_path / "m.ckpt"
    save_checkpoint(build_model(config, seed=0), config, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(CheckpointError, match="payload"):
        load_checkpoint(path)


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "not.ckpt"
    path.write_bytes(b"PNG....definitely not a checkpoint")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        read_checkpoint_header(path)


# ---------------------------------------------------------------------------
# command line

def test_cli_analyze_reference_total(capsys):
    assert run_command(["analyze", "--connection", "res", "--groups", "18"]) == 0
    out = capsys.readouterr().out
    assert "total_params\t9578158" in out


def test_cli_analyze_config_file(config_file, capsys):
    assert run_command(["analyze", "--config", config_file,
                        "--convention", "implementation"]) == 0
    assert "convention\timplementation" in capsys.readouterr().out


def test_cli_gen_attn_identical_pair_all_zero(dataset, tmp_path, capsys):
    root, _ = dataset
    out = tmp_path / "attn"
    rc = run_command([
        "gen-attn",
        "--action", os.path.join(root, "images/0000_neutral.png"),
        "--neutral", os.path.join(root, "images/0000_neutral.png"),
        "--lm5", os.path.join(root, "landmarks/0000_lm5n.txt"),
        "--lm5-neutral", os.path.join(root, "landmarks/0000_lm5n.txt"),
        "--lm-dense", os.path.join(root, "landmarks/0000_dense.txt"),
        "--size", "28", "--out", str(out)])
    assert rc == 0
    from PIL import Image
    pngs = sorted(os.listdir(out))
    assert len(pngs) == 15          # 5 thresholds x 3 pyramid levels
    for name in pngs:
        assert (np.asarray(Image.open(out / name)) == 0).all()


def test_cli_train_eval_viz_cycle(dataset, config_file, tmp_path, capsys):
    _, manifest = dataset
    ckpt = tmp_path / "model.ckpt"
    log = tmp_path / "train.log"
    rc = run_command(["train", "--manifest", manifest, "--config", config_file,
                      "--seed", "0", "--out", str(ckpt), "--log", str(log)])
    assert rc == 0 and ckpt.exists()
    assert log.read_text().startswith("epoch=0\t")

    rc = run_command(["eval", "--manifest", manifest,
                      "--checkpoint", str(ckpt),
                      "--out", str(tmp_path / "report.txt")])
    assert rc == 0
    report = (tmp_path / "report.txt").read_text()
    assert report.startswith("au\t") and "average_f1" in report
    assert capsys.readouterr().out.strip().endswith(report.strip()[-20:])

    png = tmp_path / "feat.png"
    rc = run_command(["viz", "--checkpoint", str(ckpt), "--manifest", manifest,
                      "--block", "2", "--out", str(png)])
    assert rc == 0 and png.exists()


def test_cli_train_holds_out_fold(dataset, config_file, tmp_path, capsys):
    _, manifest = dataset
    ckpt = tmp_path / "fold.ckpt"
    rc = run_command(["train", "--manifest", manifest, "--config", config_file,
                      "--fold", "1", "--out", str(ckpt)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "on 4 samples" in out          # 6 records, 1 of 3 subjects held out


def test_cli_error_paths(dataset, tmp_path, capsys):
    _, manifest = dataset
    assert run_command(["no-such-command"]) != 0
    assert run_command(["analyze", "--groups", "5"]) != 0
    err = capsys.readouterr().err
    assert "error" in err.lower()
    assert run_command(["eval", "--manifest", manifest,
                        "--checkpoint", str(tmp_path / "missing.ckpt")]) != 0
