"""Smoke test for the mdiqrng extension module.

Build with `maturin develop -m crates/py/Cargo.toml`, or
`cargo build --release -p mdi-qrng-py --features extension-module` and copy
target/release/libmdiqrng.so to mdiqrng.so somewhere on PYTHONPATH.
"""
import json
import math
import os
import tempfile

import mdiqrng


def check_certificate():
    p_g = mdiqrng.guessing_probability(0.97, 0.97)
    assert abs(mdiqrng.min_entropy(p_g) + math.log2(p_g)) < 1e-12
    cert = mdiqrng.certify(0.992, 0.948)
    assert abs(cert.h_min - 0.7153) < 1e-3, cert
    oracle = mdiqrng.oracle_guessing_probability(0.992, 0.948, 64)
    assert abs(oracle - cert.p_g) < 1e-3
    try:
        mdiqrng.guessing_probability(1.5, 0.9)
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range probability accepted")
    print("certify:", cert)


def check_extract_and_tests():
    raw = os.urandom(50_000)
    h8 = mdiqrng.estimate_min_entropy_8(raw)
    assert 7.0 < h8 <= 8.0, h8
    out, nbits, m = mdiqrng.extract(raw)
    seed_len = 400 + m - 1
    assert nbits == ((len(raw) * 8 - seed_len) // 400) * m
    assert len(out) == (nbits + 7) // 8
    reports = mdiqrng.run_suite(out, nbits, block_size=10_000, tests=["monobit-frequency", "runs"])
    assert len(reports) == 2
    print("extract: h8 %.3f, m %d, %d bits; suite rows %d" % (h8, m, nbits, len(reports)))


def check_frames():
    frame = mdiqrng.encode_frame(7, "test_h", b"\xa5\x0f", 12)
    block_id, kind, payload, nbits = mdiqrng.decode_frame(frame)
    assert (block_id, kind, nbits) == (7, "test_h", 12)
    assert payload == b"\xa5\x00"
    corrupt = bytearray(frame)
    corrupt[-1] ^= 0xFF
    try:
        mdiqrng.decode_frame(bytes(corrupt))
    except ValueError as e:
        print("corrupt frame rejected:", e)
    else:
        raise AssertionError("corrupt frame accepted")


def check_pipeline():
    config = mdiqrng.default_config()
    config.update(blocks=40, seed=3, bias=0.8)
    with tempfile.TemporaryDirectory() as out_dir:
        summary = mdiqrng.run_pipeline(out_dir, json.dumps(config))
        assert 0.0 < summary["h_min"] < 1.0
        assert os.path.exists(os.path.join(out_dir, "summary.json"))
        with open(os.path.join(out_dir, "image.pgm"), "rb") as f:
            assert f.read(2) == b"P5"
    print("pipeline: h_min %.4f, raw rate %.0f bit/s" % (summary["h_min"], summary["raw_rate"]))


if __name__ == "__main__":
    check_certificate()
    check_extract_and_tests()
    check_frames()
    check_pipeline()
    print("ok")
