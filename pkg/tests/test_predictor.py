import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlstm.data import LABEL_NAMES, MONOTONE_ATTRS, fit_encoding
from mtlstm.lstm import GroupSchedule, LstmParams, NumericError, TrainConfig, forward_sequence, train_mapper
from mtlstm.predictor import Forecast, forecast, map_labels, read_forecasts, rollout, snap_categoricals, write_forecasts
from mtlstm.sim import MissionConfig, run_mission
from oracles import random_params
from test_data import make_series


@pytest.fixture(scope="module")
def spec():
    return fit_encoding([make_series(40, seed=9)])


@pytest.fixture(scope="module")
def model(spec):
    rng = np.random.default_rng(0)
    D = spec.dim
    return random_params(rng, D, 12, D, scale=0.3), GroupSchedule((4, 4, 4), (1, 5, 25))


@pytest.fixture(scope="module")
def window(spec):
    return spec.encode_series(make_series(60, seed=10))


class TestSnap:
    def _spec1(self, spec):
        off, w = spec.categorical_blocks()[2]  # role, width 3
        return off, w

    def test_argmax_and_ties(self, spec):
        off, _ = self._spec1(spec)
        v = np.zeros(spec.dim)
        v[off : off + 3] = [0.2, 0.5, 0.3]
        np.testing.assert_array_equal(snap_categoricals(v, spec)[off : off + 3], [0, 1, 0])
        v[off : off + 3] = [0.4, 0.4, 0.2]
        np.testing.assert_array_equal(snap_categoricals(v, spec)[off : off + 3], [1, 0, 0])

    def test_numeric_untouched_and_idempotent(self, spec):
        rng = np.random.default_rng(1)
        v = rng.normal(size=spec.dim)
        s = snap_categoricals(v, spec)
        num = np.ones(spec.dim, bool)
        for off, w in spec.categorical_blocks():
            num[off : off + w] = False
            assert s[off : off + w].sum() == 1.0
            assert np.argmax(s[off : off + w]) == np.argmax(v[off : off + w])
        np.testing.assert_array_equal(s[num], v[num])
        np.testing.assert_array_equal(snap_categoricals(s, spec), s)
        assert not np.shares_memory(s, v)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_batch_property(self, seed):
        spec = fit_encoding([make_series(5)])
        V = np.random.default_rng(seed).normal(size=(4, 3, spec.dim))
        S = snap_categoricals(V, spec)
        for off, w in spec.categorical_blocks():
            np.testing.assert_array_equal(S[..., off : off + w].sum(-1), 1.0)
        np.testing.assert_array_equal(snap_categoricals(S, spec), S)


class TestRollout:
    def test_constant_model(self, spec):
        D = spec.dim
        v = np.linspace(-1, 1, D)
        p = LstmParams(np.random.default_rng(2).normal(size=(4 * 5, D + 5)), np.zeros(20), np.zeros((D, 5)), v.copy())
        out = rollout(p, GroupSchedule.standard(5), np.zeros((7, D)), 9)
        assert out.shape == (9, D)
        np.testing.assert_array_equal(out, np.tile(v, (9, 1)))

    def test_horizon_one(self, model, spec, window):
        p, s = model
        y, _ = forward_sequence(window, p, s)
        expect = snap_categoricals(y[-1], spec)
        for a in MONOTONE_ATTRS:
            i = spec.index_of(a)
            expect[i] = max(expect[i], window[-1, i])
        np.testing.assert_array_equal(rollout(p, s, window, 1, spec), expect[None])
        np.testing.assert_array_equal(rollout(p, s, window, 1, spec, refeed="literal"), expect[None])

    def test_horizon_300_valid_one_hots(self, model, spec, window):
        p, s = model
        out = rollout(p, s, window, 300, spec)
        assert out.shape == (300, spec.dim)
        for off, w in spec.categorical_blocks():
            blk = out[:, off : off + w]
            assert set(np.unique(blk)) <= {0.0, 1.0}
            np.testing.assert_array_equal(blk.sum(1), 1.0)

    def test_monotone_floor(self, model, spec, window):
        p, s = model
        out = rollout(p, s, window, 40, spec)
        for a in MONOTONE_ATTRS:
            i = spec.index_of(a)
            seq = np.r_[window[-1, i], out[:, i]]
            assert (np.diff(seq) >= 0).all()

    @pytest.mark.parametrize("refeed", ["carry", "literal"])
    def test_prefix_consistency(self, model, spec, window, refeed):
        p, s = model
        full = rollout(p, s, window[:30], 17, spec, refeed=refeed)
        for a in (1, 5, 9, 16):
            assert rollout(p, s, window[:30], a, spec, refeed=refeed).tobytes() == full[:a].tobytes()

    def test_batch_matches_single(self, model, spec, window):
        p, s = model
        W = np.stack([window[:40], window[10:50], window[20:60]])
        out = rollout(p, s, W, 12, spec)
        for b in range(3):
            np.testing.assert_allclose(out[b], rollout(p, s, W[b], 12, spec), atol=1e-12)

    def test_carry_equals_manual_feed(self, model, spec, window):
        p, s = model
        out = rollout(p, s, window[:30], 3, spec)
        seq = np.concatenate([window[:30], out[:2]])
        y, _ = forward_sequence(seq, p, s)
        np.testing.assert_allclose(snap_categoricals(y[-1], spec)[~_mono_mask(spec)], out[2][~_mono_mask(spec)], atol=1e-12)

    def test_non_finite(self, spec):
        D = spec.dim
        p = LstmParams(np.zeros((8, D + 2)), np.zeros(8), np.zeros((D, 2)), np.full(D, np.inf))
        with pytest.raises(NumericError):
            rollout(p, GroupSchedule.standard(2), np.zeros((3, D)), 4)

    def test_errors(self, model, window):
        p, s = model
        with pytest.raises(ValueError):
            rollout(p, s, window, 0)
        with pytest.raises(ValueError):
            rollout(p, s, window, 2, refeed="sideways")


def _mono_mask(spec):
    m = np.zeros(spec.dim, bool)
    for a in MONOTONE_ATTRS:
        m[spec.index_of(a)] = True
    return m


class TestMapper:
    def test_shapes_and_probabilities(self, spec, window):
        mp = LstmParams.init(spec.dim, 8, 11, 0)
        labels, P = map_labels(mp, window[:25])
        assert labels.shape == (25,) and P.shape == (25, 11)
        np.testing.assert_allclose(P.sum(1), 1.0, atol=1e-12)
        with pytest.raises(ValueError):
            map_labels(mp, window[:, :5])

    def test_overfit_one_window(self):
        series = run_mission(MissionConfig(seed=0, team=0, mission=0, sampling_ms=1000)).series[0]
        window = fit_encoding([series]).encode_series(series)[100:160]
        labels = series.labels[100:160]
        assert len(set(labels.tolist())) >= 4
        res = train_mapper(window[None], labels[None], TrainConfig(epochs=300, batch_size=1, lr=0.01), hidden_size=16)
        pred, _ = map_labels(res.params, window)
        np.testing.assert_array_equal(pred, labels)


def test_forecast_files_and_determinism(tmp_path, model, spec, window):
    p, s = model
    mp = LstmParams.init(spec.dim, 8, 11, 1)
    W = np.stack([window[:40], window[20:60]])
    a = forecast(p, s, mp, W, 10, spec, ["w0", "w1"])
    b = forecast(p, s, mp, W, 10, spec, ["w0", "w1"])
    assert all(x.labels.tobytes() == y.labels.tobytes() for x, y in zip(a, b))
    assert [f.horizon for f in a] == [10, 10] and a[0].vectors.shape == (10, spec.dim)
    write_forecasts(a, tmp_path / "f.jsonl", with_vectors=True)
    write_forecasts(b, tmp_path / "g.jsonl", with_vectors=True)
    assert (tmp_path / "f.jsonl").read_bytes() == (tmp_path / "g.jsonl").read_bytes()
    rows = read_forecasts(tmp_path / "f.jsonl")
    assert rows[1]["window_id"] == "w1" and rows[1]["horizon"] == 10
    assert all(l in LABEL_NAMES for l in rows[0]["labels"])
    np.testing.assert_array_equal(np.array(rows[0]["vectors"]), a[0].vectors)
    short = json.loads(Forecast("x", a[0].vectors, a[0].labels).to_json())
    assert "vectors" not in short
