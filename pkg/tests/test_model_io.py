"""Round trips and format guards for the binary model container."""

import numpy as np
import pytest

from salience.features import FeatureStack
from salience.model_io import (
    MAGIC,
    SCHEME_TAGS,
    ModelFormatError,
    load_model,
    save_model,
)
from salience.pipeline import METHODS, ModelBundle, predict_map, train_model
from salience.samples import SampleSet


def toy_samples(seed=0, n=60):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1, (n, 6))
    y = np.where(x[:, 0] + x[:, 3] >= 0, 1.0, -1.0)
    x[:, 0] += 0.5 * y
    x[:, 3] += 0.5 * y
    return SampleSet(x=x, y=y, groups={"a": (0, 3), "b": (3, 6)})


def samples_as_stack(s, h, w):
    planes = np.ascontiguousarray(s.x.T).reshape(s.d, h, w)
    return FeatureStack(planes=planes, groups=s.groups)


def trained(method, seed=0):
    params = {"gating": "a"} if method == "lmkl" else None
    return train_model(method, toy_samples(seed), params)


class TestRoundTrip:
    @pytest.mark.parametrize("method", METHODS)
    def test_predictions_survive(self, method, tmp_path):
        bundle = trained(method)
        path = tmp_path / "m.salm"
        save_model(path, bundle)
        back = load_model(path)
        assert back.method == method
        assert back.groups == bundle.groups
        stack = samples_as_stack(toy_samples(0), 6, 10)
        assert np.array_equal(predict_map(bundle, stack), predict_map(back, stack))

    @pytest.mark.parametrize("method", METHODS)
    def test_bytes_deterministic(self, method, tmp_path):
        save_model(tmp_path / "a.salm", trained(method))
        save_model(tmp_path / "b.salm", trained(method))
        a = (tmp_path / "a.salm").read_bytes()
        assert a == (tmp_path / "b.salm").read_bytes()
        # a reloaded model writes the same bytes again
        save_model(tmp_path / "c.salm", load_model(tmp_path / "a.salm"))
        assert a == (tmp_path / "c.salm").read_bytes()

    def test_header_layout(self, tmp_path):
        path = tmp_path / "m.salm"
        save_model(path, trained("nlmkl"))
        raw = path.read_bytes()
        assert raw[:4] == MAGIC
        assert raw[4:8] == b"\x01\x00\x00\x00"
        assert raw[8] == SCHEME_TAGS["nlmkl"]

    def test_nlmkl_keeps_eta(self, tmp_path):
        bundle = trained("nlmkl")
        save_model(tmp_path / "m.salm", bundle)
        back = load_model(tmp_path / "m.salm")
        assert np.array_equal(back.mkl.eta, bundle.mkl.eta)
        assert back.mkl.degree == bundle.mkl.degree

    def test_lmkl_keeps_gating(self, tmp_path):
        bundle = trained("lmkl")
        save_model(tmp_path / "m.salm", bundle)
        back = load_model(tmp_path / "m.salm")
        assert back.gating_group == "a"
        assert np.array_equal(back.mkl.gate_v, bundle.mkl.gate_v)
        assert np.array_equal(back.mkl.eta_support, bundle.mkl.eta_support)


class TestGuards:
    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.salm"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ModelFormatError):
            load_model(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "x.salm"
        save_model(p, trained("linear-svm"))
        raw = bytearray(p.read_bytes())
        raw[4] = 9
        p.write_bytes(bytes(raw))
        with pytest.raises(ModelFormatError, match="version"):
            load_model(p)

    def test_bad_tag(self, tmp_path):
        p = tmp_path / "x.salm"
        save_model(p, trained("linear-svm"))
        raw = bytearray(p.read_bytes())
        raw[8] = 97
        p.write_bytes(bytes(raw))
        with pytest.raises(ModelFormatError, match="tag"):
            load_model(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "x.salm"
        save_model(p, trained("adaboost"))
        raw = p.read_bytes()
        p.write_bytes(raw[: len(raw) - 7])
        with pytest.raises(ModelFormatError, match="truncated"):
            load_model(p)

    def test_trailing_garbage(self, tmp_path):
        p = tmp_path / "x.salm"
        save_model(p, trained("rbmkl"))
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(ModelFormatError, match="trailing"):
            load_model(p)

    def test_save_inconsistent_bundle(self, tmp_path):
        hollow = ModelBundle(method="rbmkl", groups={"a": (0, 3)})
        with pytest.raises(ValueError):
            save_model(tmp_path / "x.salm", hollow)
        with pytest.raises(ValueError):
            save_model(tmp_path / "x.salm",
                       ModelBundle(method="unknown", groups={"a": (0, 3)}))
