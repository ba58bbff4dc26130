import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wvae import artifacts as art
from wvae.vae import LossBreakdown, RunLog


def test_params_round_trip(tmp_path):
    arrays_in = [np.arange(6.0).reshape(2, 3), np.array([[np.pi]])]
    art.write_params(tmp_path / "p", arrays_in)
    raw = (tmp_path / "p").read_bytes()
    assert raw[:4] == b"WVAE"
    assert raw[4:12] == bytes([1, 0, 0, 0, 2, 0, 0, 0])
    back = art.read_params(tmp_path / "p")
    assert [a.tobytes() for a in back] == [a.tobytes() for a in arrays_in]


@pytest.mark.parametrize(
    "mutate",
    [lambda b: b"XVAE" + b[4:], lambda b: b[:4] + b"\x02" + b[5:], lambda b: b[:-3], lambda b: b + b"\x00", lambda b: b[:6]],
)
def test_params_corruption(tmp_path, mutate):
    good = art.params_bytes([np.ones((2, 2))])
    (tmp_path / "p").write_bytes(mutate(good))
    with pytest.raises(art.ParamsFormatError):
        art.read_params(tmp_path / "p")


def test_pgm_format(tmp_path):
    image = np.linspace(0, 1, 784)
    data = art.pgm_bytes(image)
    assert data.startswith(b"P5\n28 28\n255\n")
    assert len(data) == len(b"P5\n28 28\n255\n") + 784
    body = data[len(b"P5\n28 28\n255\n"):]
    assert body[0] == 0 and body[-1] == 255
    assert body[392] == round(image[392] * 255)
    art.write_pgm(tmp_path / "x.pgm", image)
    np.testing.assert_array_equal(art.read_pgm(tmp_path / "x.pgm"), np.round(image * 255) / 255)


def test_pgm_quantisation_rule():
    probs = np.array([0.0, 0.5, 1.0, 0.2, 0.999, 0.001] + [0.0] * 778)
    body = art.pgm_bytes(probs)[13:19]
    assert list(body) == [round(p * 255) for p in probs[:6]]


def _log():
    rows = [LossBreakdown(1, 500.0, 3.0, 2.0, -1.5, 1.0, 502.0, None, None),
            LossBreakdown(2, 400.25, 2.5, 1.5, -1.0, 1.025, 401.78, -0.9, 0.48)]
    return RunLog(rows)


def test_runlog_csv(tmp_path):
    art.write_runlog(tmp_path / "r.csv", _log(), {"config": {"seed": 0}, "dataset_sha256": "ab"})
    text = (tmp_path / "r.csv").read_text()
    assert text.splitlines()[0] == "# schema: wvae-runlog/1"
    assert "iteration,recon,kl,w2sq,t,t_hat,beta,lambda,total" in text
    meta, rows = art.read_runlog(tmp_path / "r.csv")
    assert meta["config"] == {"seed": 0}
    assert rows[0]["t_hat"] is None
    assert rows[1]["lambda"] == 1.025


def test_schema_mismatch(tmp_path):
    art.write_runlog(tmp_path / "r.csv", _log(), {})
    text = (tmp_path / "r.csv").read_text().replace("wvae-runlog/1", "wvae-runlog/2")
    (tmp_path / "r.csv").write_text(text)
    with pytest.raises(art.SchemaVersionError):
        art.read_runlog(tmp_path / "r.csv")
    art.write_runlog(tmp_path / "r.csv", _log(), {})
    with pytest.raises(art.SchemaVersionError):
        art.read_trace(tmp_path / "r.csv")


def test_trace_extraction(tmp_path):
    art.write_runlog(tmp_path / "r.csv", _log(), {"config": {"lam": 1.0}})
    art.write_trace(tmp_path / "t.csv", tmp_path / "r.csv")
    meta, rows = art.read_trace(tmp_path / "t.csv")
    assert list(rows[0]) == ["iteration", "T", "T_hat", "beta", "lambda"]
    assert rows[1] == {"iteration": 2.0, "T": -1.0, "T_hat": -0.9, "beta": 0.48, "lambda": 1.025}
    assert meta["source_sha256"] == art.file_hash(tmp_path / "r.csv")


DEFAULTS = {"epochs": 15, "lam": 1.0, "scheduler": False, "variant": "ELBO_W", "sizes": (1, 2)}


def test_config_parsing():
    text = "# comment\nepochs = 3\nlam=0.5  # trailing\nscheduler = yes\nsizes = 10, 20\n\n"
    cfg = art.parse_config_text(text, DEFAULTS)
    assert cfg == {"epochs": 3, "lam": 0.5, "scheduler": True, "sizes": (10, 20)}


@pytest.mark.parametrize("text", ["bogus = 1", "epochs = three", "lam = nan", "scheduler = maybe", "no equals sign"])
def test_config_errors(text):
    with pytest.raises(art.ConfigError):
        art.parse_config_text(text, DEFAULTS)


def test_config_precedence(tmp_path):
    (tmp_path / "c.cfg").write_text("epochs = 3\nlam = 0.5\n")
    cfg = art.resolve_config(DEFAULTS, tmp_path / "c.cfg", {"lam": "2.0"})
    assert cfg["epochs"] == 3 and cfg["lam"] == 2.0 and cfg["variant"] == "ELBO_W"
    with pytest.raises(art.ConfigError):
        art.resolve_config(DEFAULTS, None, {"nope": 1})


def test_canonical_json_stable():
    a = art.canonical_json({"b": 1, "a": [1.5, None]})
    assert a == art.canonical_json(json.loads(a))
    assert a.index('"a"') < a.index('"b"')


@settings(max_examples=50, deadline=None)
@given(st.lists(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
                       elements=st.floats(allow_nan=False)), max_size=4))
def test_params_bytes_round_trip(arrs):
    with tempfile.TemporaryDirectory() as d:
        art.write_params(Path(d) / "p", arrs)
        back = art.read_params(Path(d) / "p")
    assert [a.tobytes() for a in back] == [np.asarray(a, "<f8").tobytes() for a in arrs]
