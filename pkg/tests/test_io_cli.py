import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cprank.cli import main
from cprank.io import (TensorFileError, file_digest, read_factors, read_manifest, read_tensor,
                       synth, write_manifest, write_tensor)
from cprank.metrics import rel_err
from cprank.tensor import reconstruct


@given(arrays(np.float64, st.tuples(*[st.integers(1, 4)] * 3)))
def test_binary_round_trip_bit_exact(t):
    import tempfile, os
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "x.ten")
        write_tensor(p, t, "bin")
        back = read_tensor(p)
    assert back.shape == t.shape
    assert back.tobytes(order="F") == np.asarray(t).tobytes(order="F")


@given(arrays(np.float64, st.tuples(*[st.integers(1, 3)] * 3),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_text_round_trip_value_exact(t):
    import tempfile, os
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "x.ten")
        write_tensor(p, t, "txt")
        back = read_tensor(p)
    np.testing.assert_array_equal(back, t)


def test_text_payload_layout(tmp_path):
    t = np.arange(8, dtype=float).reshape((2, 2, 2), order="F")
    write_tensor(tmp_path / "a.ten", t, "txt")
    lines = (tmp_path / "a.ten").read_text().splitlines()
    assert lines[0] == "CPTENSOR 1 txt 3 2 2 2"
    assert [float(x) for x in lines[1:]] == list(range(8))


def test_handwritten_fixture(tmp_path):
    p = tmp_path / "h.ten"
    p.write_text("CPTENSOR 1 txt 3 1 2 2\n1\n2\n3\n4.5\n")
    t = read_tensor(p)
    assert t[0, 1, 1] == 4.5 and t[0, 1, 0] == 2.0


@pytest.mark.parametrize("content", [
    b"NOTATENSOR 1 bin 3 1 1 1\n",
    b"CPTENSOR 2 bin 3 1 1 1\n" + b"\0" * 8,
    b"CPTENSOR 1 bin 3 1 1\n",
    b"CPTENSOR 1 bin 3 1 1 2\n" + b"\0" * 8,
    b"CPTENSOR 1 txt 3 1 1 2\n1.0\n",
    b"CPTENSOR 1 txt 3 1 1 1\nabc\n",
    b"CPTENSOR 1 zip 3 1 1 1\n",
])
def test_malformed_files(tmp_path, content):
    p = tmp_path / "bad.ten"
    p.write_bytes(content)
    with pytest.raises(TensorFileError):
        read_tensor(p)


def test_synth_noiseless():
    X, truth = synth((20, 20, 20), 3, (1.0, 2.0), 0.0, seed=0)
    assert rel_err(X, truth) == 0.0
    for a in truth[:-1]:
        np.testing.assert_allclose(np.linalg.norm(a, axis=0), 1.0, atol=1e-15)
    w = np.linalg.norm(truth[2], axis=0)
    assert np.all((w >= 1.0) & (w <= 2.0))


def test_synth_noise_level():
    X, truth = synth((20, 20, 20), 3, (1.0, 2.0), 0.01, seed=1)
    S = reconstruct(truth)
    assert abs(np.linalg.norm(X - S) / np.linalg.norm(S) - 0.01) < 1e-12


def test_synth_deterministic(tmp_path):
    for name in ("a", "b"):
        X, _ = synth((5, 4, 3), 2, (1.0, 2.0), 0.05, seed=4)
        write_tensor(tmp_path / f"{name}.ten", X)
    assert file_digest(tmp_path / "a.ten") == file_digest(tmp_path / "b.ten")


def test_synth_errors():
    with pytest.raises(ValueError):
        synth((5, 0, 3), 2)
    with pytest.raises(ValueError):
        synth((5, 4), 2)
    with pytest.raises(ValueError):
        synth((5, 4, 3), 2, (0.0, 1.0))
    with pytest.raises(ValueError):
        synth((5, 4, 3), 2, (1.0, 2.0), -0.1)
    with pytest.warns(UserWarning):
        synth((3, 4, 5), 4)


def test_manifest_checks_references(tmp_path):
    with pytest.raises(FileNotFoundError):
        write_manifest(tmp_path / "m.json", {"factors": ["missing.ten"]})


# -- CLI -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--shape", "20", "20", "20", "--rank", "3", "--seed", "1003",
                 "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def gsu_run(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("gsu")
    assert main(["decompose", str(dataset / "tensor.ten"), "--variant", "gsu",
                 "--rank-init", "7", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_cli_synth_outputs(dataset):
    index = read_manifest(dataset / "synth.json")
    assert index["factors"] == ["factor_1.ten", "factor_2.ten", "factor_3.ten"]
    X = read_tensor(dataset / "tensor.ten")
    truth = read_factors([dataset / f for f in index["factors"]])
    assert rel_err(X, truth) == 0.0


def test_cli_gsu_manifest(gsu_run, dataset):
    m = read_manifest(gsu_run / "manifest.json")
    assert m["variant"] == "gsu" and m["seed"] == 3
    assert m["input"]["sha256"] == file_digest(dataset / "tensor.ten")
    assert m["metrics"]["support_size"] == 3
    assert m["metrics"]["rel_err"] < 1e-4
    for f in m["factors"] + [m["trace"]]:
        assert (gsu_run / f).exists()
    header = (gsu_run / "trace.tsv").read_text().splitlines()[0]
    assert header == "k\tF\tRelErr\tlambda\tw_k\tsupport_size\tsafeguard_used"


def test_cli_rerun_from_manifest(gsu_run, dataset, tmp_path):
    assert main(["decompose", str(dataset / "tensor.ten"), "--config",
                 str(gsu_run / "manifest.json"), "--out", str(tmp_path)]) == 0
    a = read_manifest(gsu_run / "manifest.json")
    b = read_manifest(tmp_path / "manifest.json")
    assert a["metrics"]["rel_err"] == b["metrics"]["rel_err"]
    assert (gsu_run / "trace.tsv").read_bytes() == (tmp_path / "trace.tsv").read_bytes()


def test_cli_als(dataset, tmp_path):
    assert main(["decompose", str(dataset / "tensor.ten"), "--variant", "als",
                 "--rank-init", "3", "--out", str(tmp_path)]) == 0
    assert read_manifest(tmp_path / "manifest.json")["metrics"]["rel_err"] < 1e-6


def test_cli_eval(gsu_run, dataset, capsys, tmp_path):
    assert main(["eval", str(gsu_run), str(dataset), "--profiles", str(tmp_path / "p.tsv")]) == 0
    out = capsys.readouterr().out
    kv = dict(line.split("=", 1) for line in out.splitlines() if "=" in line and " " not in line)
    assert kv["matched_rank"] == "3"
    assert float(kv["rmsep"]) < 1e-3
    prof = np.loadtxt(tmp_path / "p.tsv", skiprows=1)
    assert prof.shape == (20, 6)
    np.testing.assert_allclose(np.max(np.abs(prof[:, 3:]), axis=0), 1.0)


def test_cli_eval_self(dataset, capsys):
    assert main(["eval", str(dataset), str(dataset)]) == 0
    out = capsys.readouterr().out
    assert "rmsep=0.0" in out and "matched_rank=3" in out


def test_cli_eval_collapsed(dataset, tmp_path, capsys):
    index = read_manifest(dataset / "synth.json")
    truth = read_factors([dataset / f for f in index["factors"]])
    for i, a in enumerate(truth, start=1):
        write_tensor(tmp_path / f"factor_{i}.ten", a[:, :1])
    assert main(["eval", str(tmp_path), str(dataset)]) == 0
    out = capsys.readouterr().out
    assert "rmsep=-" in out and "matched_rank=1" in out


def test_cli_eval_dimension_mismatch(dataset, tmp_path):
    for i, n in enumerate((20, 20, 19), start=1):
        write_tensor(tmp_path / f"factor_{i}.ten", np.ones((n, 3)))
    assert main(["eval", str(tmp_path), str(dataset)]) == 4


def test_cli_unknown_variant(dataset, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["decompose", str(dataset / "tensor.ten"), "--variant", "foo", "--out", str(tmp_path)])
    assert exc.value.code == 3


def test_cli_missing_input(tmp_path):
    assert main(["decompose", str(tmp_path / "nope.ten"), "--out", str(tmp_path)]) == 2


def test_cli_bad_config(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert main(["decompose", str(dataset / "tensor.ten"), "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == 4
    cfg.write_text(json.dumps({"kappa": 2.0}))
    assert main(["decompose", str(dataset / "tensor.ten"), "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == 4


def test_cli_matrix_input(tmp_path):
    write_tensor(tmp_path / "m.ten", np.ones((3, 3)))
    assert main(["decompose", str(tmp_path / "m.ten"), "--out", str(tmp_path / "o")]) == 4


def test_cli_bad_synth_shape(tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert main(["synth", "--shape", "4", "0", "3", "--out", str(tmp_path)]) == 3


def test_cli_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 3
