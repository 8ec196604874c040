import json

import numpy as np
import pytest

from gmark.errors import BadVersionError, CapacityError, FormatError
from gmark.keys import generate_key, load_key, save_key, xor_bits


def test_generate_defaults():
    key = generate_key(seed=0)
    assert key.l == 256
    assert key.latent_shape == (4, 64, 64)
    assert key.ring_radius == 4
    assert len(key.cipher.cipher_key) == 32
    assert len(key.cipher.nonce) == 12


def test_generate_deterministic():
    a = generate_key(seed=42)
    b = generate_key(seed=42)
    assert np.array_equal(a.bits, b.bits)
    assert a.cipher == b.cipher
    assert a.freq_seed == b.freq_seed


def test_generate_capacity_error():
    with pytest.raises(CapacityError):
        generate_key(l=2**14 + 1, latent_shape=(4, 64, 64), seed=0)


def test_key_file_round_trip(tmp_path):
    key = generate_key(seed=1, l=100, latent_shape=(2, 16, 16), ring_radius=3)
    p = tmp_path / "key.json"
    save_key(key, p)
    back = load_key(p)
    assert np.array_equal(back.bits, key.bits)
    assert back.cipher == key.cipher
    assert back.latent_shape == key.latent_shape
    assert back.ring_radius == key.ring_radius
    assert back.freq_seed == key.freq_seed


def test_key_file_fields(tmp_path):
    key = generate_key(seed=2)
    p = tmp_path / "key.json"
    save_key(key, p)
    doc = json.loads(p.read_text())
    assert doc["version"] == 1
    assert doc["l"] == 256
    assert doc["latent_shape"] == [4, 64, 64]
    assert doc["ring_radius"] == 4
    assert len(doc["cipher_key_hex"]) == 64
    assert len(doc["nonce_hex"]) == 24
    assert len(doc["watermark_bits_hex"]) == 64


def test_key_file_bad_version(tmp_path):
    key = generate_key(seed=3)
    p = tmp_path / "key.json"
    save_key(key, p)
    doc = json.loads(p.read_text())
    doc["version"] = 99
    p.write_text(json.dumps(doc))
    with pytest.raises(BadVersionError):
        load_key(p)


def test_key_file_not_json(tmp_path):
    p = tmp_path / "key.json"
    p.write_text("not json at all{")
    with pytest.raises(FormatError):
        load_key(p)


def test_key_file_missing_field(tmp_path):
    key = generate_key(seed=4)
    p = tmp_path / "key.json"
    save_key(key, p)
    doc = json.loads(p.read_text())
    del doc["nonce_hex"]
    p.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_key(p)


def test_xor_bits():
    a = np.array([1, 0, 1, 0], dtype=np.uint8)
    b = np.array([1, 1, 0, 0], dtype=np.uint8)
    assert xor_bits(a, b).tolist() == [0, 1, 1, 0]
    with pytest.raises(ValueError):
        xor_bits(a, np.zeros(3, dtype=np.uint8))


def test_with_bits():
    key = generate_key(seed=5)
    kappa = np.ones(256, dtype=np.uint8)
    user_key = key.with_bits(xor_bits(key.bits, kappa))
    assert np.array_equal(user_key.bits, key.bits ^ 1)
    assert user_key.cipher == key.cipher
