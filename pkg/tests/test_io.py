import json

import numpy as np
import pytest

from relu_fim import DomainError, KernelMatrix, generate_weights
from relu_fim.io import load_kernel, load_weights, matrix_to_csv, save_kernel, save_weights, sidecar_path


def test_weights_round_trip(tmp_path):
    W = generate_weights(3, 5, seed=2**63 + 5)
    path = save_weights(W, tmp_path / "w.bin")
    back = load_weights(path)
    assert back == W and back.seed == 2**63 + 5
    meta = json.loads(sidecar_path(path).read_text())
    assert meta["d"] == 3 and meta["p"] == 5 and meta["kind"] == "weights"


def test_kernel_round_trip(tmp_path):
    K = KernelMatrix(np.array([[2.0, 1.0], [1.0, 3.0]]), "series", {"truncation": 64, "tail_bound": 1e-6}, d=4, seed=None)
    path = save_kernel(K, tmp_path / "k.bin")
    back = load_kernel(path)
    np.testing.assert_array_equal(back.values, K.values)
    assert back.provenance == "series" and back.d == 4 and back.seed is None
    assert back.params == {"truncation": 64, "tail_bound": 1e-6}


def test_header_checks(tmp_path):
    W = generate_weights(2, 2)
    path = save_weights(W, tmp_path / "w.bin")
    with pytest.raises(DomainError, match="kernel"):
        load_kernel(path)
    raw = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"X" + raw[1:])
    with pytest.raises(DomainError, match="magic"):
        load_weights(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(DomainError, match="truncated"):
        load_weights(tmp_path / "short.bin")
    with pytest.raises(DomainError):
        load_weights(tmp_path / "missing.bin")


def test_matrix_csv():
    assert matrix_to_csv(np.array([[1.0, 0.5]])) == "1.0,0.5\n"
