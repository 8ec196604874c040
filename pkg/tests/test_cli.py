import json

import numpy as np
import pytest

from gmark.cli import main
from gmark.codec import embed_latent, prepare
from gmark.fusion import load_fuser
from gmark.keys import load_key
from gmark.latent_io import read_latent, write_latent
from gmark.latents import sample_gaussian
from gmark.transforms import TransformSpec, apply_transform


@pytest.fixture()
def keyfile(tmp_path):
    p = tmp_path / "key.json"
    assert main(["keygen", "--out", str(p), "--seed", "0"]) == 0
    return p


def test_keygen_defaults(keyfile):
    doc = json.loads(keyfile.read_text())
    assert doc["l"] == 256
    assert doc["latent_shape"] == [4, 64, 64]
    assert doc["ring_radius"] == 4


def test_keygen_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["keygen", "--out", str(a), "--seed", "5"]) == 0
    assert main(["keygen", "--out", str(b), "--seed", "5"]) == 0
    assert a.read_text() == b.read_text()


def test_keygen_capacity_exit_code(tmp_path):
    out = tmp_path / "k.json"
    assert main(["keygen", "--out", str(out), "--bits", str(2**14 + 1)]) == 1


def test_usage_error_exit_code(capsys):
    assert main(["keygen"]) == 1  # missing --out
    assert main(["frobnicate"]) == 1
    capsys.readouterr()


def test_missing_file_exit_code(tmp_path):
    assert main(["detect", "--key", str(tmp_path / "nope.json"), "--latent", "x"]) == 2


def test_bad_latent_exit_code(keyfile, tmp_path):
    bad = tmp_path / "bad.gmlt"
    bad.write_bytes(b"XXXX")
    assert main(["detect", "--key", str(keyfile), "--latent", str(bad)]) == 2


def test_embed_detect_round_trip(keyfile, tmp_path, capsys):
    z = tmp_path / "z.gmlt"
    assert main(["embed", "--key", str(keyfile), "--out", str(z), "--seed", "1"]) == 0
    out_json = tmp_path / "result.json"
    assert (
        main(["detect", "--key", str(keyfile), "--latent", str(z), "--json", str(out_json)]) == 0
    )
    captured = capsys.readouterr().out
    assert "bit accuracy  : 1.000000" in captured
    assert "watermarked   : yes" in captured
    doc = json.loads(out_json.read_text())
    assert doc["bit_accuracy"] == 1.0
    assert doc["watermarked"] is True
    assert len(doc["votes"]) == 256


def test_embed_existing_latent(keyfile, tmp_path):
    src = tmp_path / "in.gmlt"
    write_latent(sample_gaussian((4, 64, 64), 7), src)
    out = tmp_path / "out.gmlt"
    assert main(["embed", "--key", str(keyfile), "--in", str(src), "--out", str(out)]) == 0
    marked = read_latent(out)
    km = prepare(load_key(keyfile))
    assert np.allclose(marked, embed_latent(sample_gaussian((4, 64, 64), 7), km), atol=1e-6)


def test_embed_shape_mismatch_exit(keyfile, tmp_path):
    src = tmp_path / "in.gmlt"
    write_latent(sample_gaussian((4, 32, 32), 7), src)
    assert main(["embed", "--key", str(keyfile), "--in", str(src), "--out", str(tmp_path / "o")]) == 1


def test_detect_rotated_without_restorer(keyfile, tmp_path, capsys):
    km = prepare(load_key(keyfile))
    marked = embed_latent(sample_gaussian((4, 64, 64), 3), km)
    rotated = apply_transform(marked, TransformSpec.rotate(75, rng_seed=11))
    rot_path = tmp_path / "rot.gmlt"
    write_latent(rotated, rot_path)
    assert main(["detect", "--key", str(keyfile), "--latent", str(rot_path)]) == 0
    out = capsys.readouterr().out
    acc = float([l for l in out.splitlines() if "bit accuracy" in l][0].split(":")[1])
    assert 0.45 <= acc <= 0.60
    assert "watermarked   : no" in out


def test_train_fuser_without_restorer(keyfile, tmp_path, capsys):
    fuser_path = tmp_path / "f.gmfu"
    code = main(
        ["train-fuser", "--key", str(keyfile), "--out", str(fuser_path), "--n", "12", "--seed", "0"]
    )
    assert code == 0
    model = load_fuser(fuser_path)
    assert 0.0 < model.score(-10.0, -1000.0) < 1.0
    assert "training accuracy" in capsys.readouterr().out


def test_train_gnr_tiny_and_detect_uses_it(keyfile, tmp_path, capsys):
    # tiny config exercises the wiring, not the quality
    model_path = tmp_path / "m.gmnr"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"steps": 4, "batch_size": 4, "base_features": 4}))
    code = main(
        [
            "train-gnr",
            "--key",
            str(keyfile),
            "--out",
            str(model_path),
            "--config",
            str(cfg),
            "--quiet",
        ]
    )
    assert code == 0
    assert "wrote restorer" in capsys.readouterr().out
    z = tmp_path / "z.gmlt"
    assert main(["embed", "--key", str(keyfile), "--out", str(z), "--seed", "2"]) == 0
    assert main(["detect", "--key", str(keyfile), "--latent", str(z), "--gnr", str(model_path)]) == 0


def test_simulate_writes_report(keyfile, tmp_path, capsys):
    out_dir = tmp_path / "report"
    code = main(
        [
            "simulate",
            "--key",
            str(keyfile),
            "--out-dir",
            str(out_dir),
            "--n",
            "10",
            "--n-train",
            "10",
            "--variants",
            "spatial,freq",
            "--seed",
            "1",
        ]
    )
    assert code == 0
    csv_text = (out_dir / "benchmark.csv").read_text()
    assert "spatial,clean,10," in csv_text
    assert (out_dir / "summary.txt").exists()


def test_simulate_missing_model_exit(keyfile, tmp_path):
    code = main(
        [
            "simulate",
            "--key",
            str(keyfile),
            "--out-dir",
            str(tmp_path / "r"),
            "--n",
            "4",
            "--variants",
            "dual_gnr",
        ]
    )
    assert code == 1


def test_identify_round_trip(keyfile, tmp_path, capsys):
    from gmark.stats import make_registry, save_registry

    key = load_key(keyfile)
    registry = make_registry(key.bits, 8, seed=4)
    reg_path = tmp_path / "registry.json"
    save_registry(registry, reg_path)
    # embed user 5's watermark
    km = prepare(key.with_bits(registry.user_bits(5)))
    marked = embed_latent(sample_gaussian((4, 64, 64), 9), km)
    lat = tmp_path / "user5.gmlt"
    write_latent(marked, lat)
    code = main(
        ["identify", "--key", str(keyfile), "--registry", str(reg_path), "--latent", str(lat)]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "result: user 5 (256 matched bits)" in out
    # unwatermarked noise is rejected
    noise_path = tmp_path / "noise.gmlt"
    write_latent(sample_gaussian((4, 64, 64), 10), noise_path)
    assert (
        main(["identify", "--key", str(keyfile), "--registry", str(reg_path), "--latent", str(noise_path)])
        == 0
    )
    assert "result: no watermark" in capsys.readouterr().out
