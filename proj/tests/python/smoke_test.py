"""Smoke tests for the pimba extension module.

Runs standalone (python smoke_test.py) or under pytest; ctest points
PYTHONPATH at the built module directory.
"""
import math
import sys

import pimba


def test_quantize_roundtrip():
    values = [float(i) / 7.0 - 1.0 for i in range(16)]
    g = pimba.quantize_mx(values)
    back = pimba.dequantize_mx(g)
    assert len(back) == 16
    for got, want in zip(back, values):
        assert abs(got - want) <= 2.0 ** (g.shared_exponent - 127 - 7) + 1e-12
    # wire format: 128 bits, byte 0 is the shared exponent
    raw = g.to_bytes()
    assert len(raw) == 16
    assert raw[0] == g.shared_exponent
    assert pimba.MXGroup.from_bytes(raw) == g


def test_mx_arithmetic():
    ones = pimba.quantize_mx([1.0] * 16)
    assert pimba.mx_dot(ones, ones) == 16.0
    twos = pimba.mx_add(ones, ones)
    assert pimba.dequantize_mx(twos) == [2.0] * 16
    prod = pimba.mx_multiply(twos, twos)
    assert pimba.dequantize_mx(prod) == [4.0] * 16


def test_stochastic_round_exact_values_stable():
    for seed in (1, 77, 4096):
        assert pimba.stochastic_round(1.5, 4, seed=seed) == 1.5


def test_state_update_step():
    S = [[0.0, 0.0], [0.0, 0.0]]
    d = [1.0, 1.0]
    q = [1.0, 0.0]
    k = [2.0, 3.0]
    v = [0.5, -1.0]
    S2, y = pimba.state_update_step(S, d, q, k, v)
    assert S2 == [[1.0, -2.0], [1.5, -3.0]]
    assert y == [1.0, -2.0]  # S'^T q with q selecting row 0


def test_simulate_matches_golden():
    out = pimba.simulate_state_update(batch=1, n_heads=2, dim_head=32, dim_state=4, seed=3)
    assert out["golden_match"] is True
    assert out["iterations"] > 0
    assert out["column_reads"] == out["column_writes"]


def test_run_drift_ordering():
    e4 = pimba.run_drift(16, 16, 512, "e4m3", "nearest", 1)[-1][0]
    m8 = pimba.run_drift(16, 16, 512, "mx8", "nearest", 1)[-1][0]
    assert e4 > m8


def test_validate_command_stream():
    ok = pimba.validate_command_stream("0 COMP 0 0\n4 COMP 0 0\n")
    assert ok == []
    bad = pimba.validate_command_stream("0 COMP 0 0\n3 COMP 0 0\n")
    assert any("tCCD_L" in v for v in bad)


def test_estimate_generation():
    gpu = pimba.estimate_generation("retnet", "gpu", batch=64, in_len=512, out_len=8)
    pim = pimba.estimate_generation("retnet", "pimba", batch=64, in_len=512, out_len=8)
    assert pim["state_update_s"] < gpu["state_update_s"]
    assert pim["tokens_per_s"] > gpu["tokens_per_s"]
    total = sum(gpu[k] for k in
                ("projections_ffn_s", "state_update_s", "attention_s", "other_s"))
    assert math.isfinite(total) and total > 0


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for t in tests:
        t()
        print(f"ok {t.__name__}")
    print(f"{len(tests)} smoke tests passed")


if __name__ == "__main__":
    sys.exit(main())
