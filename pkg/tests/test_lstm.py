import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlstm import kernels
from mtlstm.lstm import (
    CellState,
    Checkpoint,
    GroupSchedule,
    LstmParams,
    ScheduleError,
    ShapeError,
    TrainConfig,
    TrainingError,
    active_groups,
    bptt,
    forward_sequence,
    label_probabilities,
    load_checkpoint,
    lstm_step,
    mts_step,
    save_checkpoint,
    train,
    train_mapper,
)
from oracles import composed_outputs, finite_difference, max_rel_error, random_params, scripted_step


class TestSchedule:
    def test_active_groups(self):
        s = GroupSchedule.split(64, (1, 10, 100))
        assert active_groups(0, s) == {0, 1, 2}
        assert active_groups(5, s) == {0}
        assert active_groups(100, s) == {0, 1, 2}
        assert active_groups(30, s) == {0, 1}

    def test_default_split(self):
        s = GroupSchedule.split(64, (1, 10, 100))
        assert s.sizes == (22, 21, 21) and s.hidden_size == 64 and s.k == 3

    @pytest.mark.parametrize(
        "sizes, periods, msg",
        [
            ((2, 2), (10, 1), "non-decreasing"),
            ((2, 2), (2, 4), "first period must be 1"),
            ((2, 0), (1, 2), "positive"),
            ((2,), (1, 2), "same length"),
            ((), (), "at least one group"),
        ],
    )
    def test_invalid(self, sizes, periods, msg):
        with pytest.raises(ScheduleError, match=msg):
            GroupSchedule(sizes, periods)


class TestStep:
    def test_scripted_oracle(self):
        rng = np.random.default_rng(0)
        D, H = 3, 6
        p = random_params(rng, D, H, D)
        s = GroupSchedule((3, 3), (1, 2))
        st_ = CellState(rng.normal(size=H), rng.normal(size=H), 0)
        for t in range(5):
            x = rng.normal(size=D)
            ref_h, ref_c = scripted_step(x, st_.h, st_.c, p.W, p.b, s.periods, s.sizes, t)
            st_ = mts_step(x, st_, p, s)
            np.testing.assert_allclose(st_.h, ref_h, rtol=0, atol=1e-10)
            np.testing.assert_allclose(st_.c, ref_c, rtol=0, atol=1e-10)
            assert st_.t == t + 1

    def test_inactive_slices_bitwise_unchanged(self):
        rng = np.random.default_rng(1)
        p = random_params(rng, 4, 9, 4)
        s = GroupSchedule((3, 3, 3), (1, 10, 100))
        prev = CellState(rng.normal(size=9), rng.normal(size=9), 5)
        nxt = mts_step(rng.normal(size=4), prev, p, s)
        assert nxt.h[3:].tobytes() == prev.h[3:].tobytes()
        assert nxt.c[3:].tobytes() == prev.c[3:].tobytes()
        assert not np.array_equal(nxt.h[:3], prev.h[:3])

    @settings(max_examples=150, deadline=None)
    @given(
        st.lists(st.integers(1, 4), min_size=1, max_size=4),
        st.lists(st.integers(1, 12), min_size=3, max_size=3),
        st.integers(0, 2000),
        st.integers(0, 2**31 - 1),
        st.sampled_from(["full", "clockwork"]),
    )
    def test_inactivity_property(self, sizes, raw_periods, t, seed, conn):
        k = len(sizes)
        periods = tuple(sorted([1] + raw_periods[: k - 1]))
        s = GroupSchedule(tuple(sizes), periods)
        rng = np.random.default_rng(seed)
        p = random_params(rng, 3, s.hidden_size, 3)
        prev = CellState(rng.normal(size=s.hidden_size), rng.normal(size=s.hidden_size), t)
        nxt = mts_step(rng.normal(size=3), prev, p, s, conn)
        inactive = ~s.unit_mask(t)
        assert nxt.h[inactive].tobytes() == prev.h[inactive].tobytes()
        assert nxt.c[inactive].tobytes() == prev.c[inactive].tobytes()

    def test_degenerate_schedule_is_standard_lstm(self):
        rng = np.random.default_rng(2)
        p = random_params(rng, 3, 6, 3)
        h, c = rng.normal(size=6), rng.normal(size=6)
        x = rng.normal(size=3)
        ref_h, ref_c = lstm_step(x, h, c, p)
        out = mts_step(x, CellState(h, c, 7), p, GroupSchedule((2, 2, 2), (1, 1, 1)))
        np.testing.assert_allclose(out.h, ref_h, atol=1e-12, rtol=0)
        np.testing.assert_allclose(out.c, ref_c, atol=1e-12, rtol=0)

    def test_errors(self):
        p = LstmParams.init(3, 4, 3)
        s = GroupSchedule.standard(4)
        with pytest.raises(ShapeError):
            mts_step(np.zeros(2), CellState.zeros(4), p, s)
        with pytest.raises(ShapeError):
            mts_step(np.zeros(3), CellState.zeros(4), p, GroupSchedule.standard(5))
        from mtlstm.tensor import NumericError

        with pytest.raises(NumericError):
            mts_step(np.zeros(3), CellState(np.full(4, np.nan), np.zeros(4)), p, s)


class TestParams:
    def test_init(self):
        p = LstmParams.init(33, 64, 33, seed=3)
        assert p.W.shape == (256, 97) and p.Wy.shape == (33, 64)
        assert np.all(np.abs(p.W) <= 1 / 8)
        np.testing.assert_array_equal(p.b_f, 1.0)
        for b in (p.b_i, p.b_o, p.b_g, p.by):
            np.testing.assert_array_equal(b, 0.0)
        assert LstmParams.init(33, 64, 33, seed=3).W.tobytes() == p.W.tobytes()

    def test_same_parameter_count(self):
        # grouping partitions the hidden layer; it never adds weights
        p = LstmParams.init(33, 64, 33)
        assert p.n_params() == 4 * 64 * (33 + 64) + 4 * 64 + 33 * 64 + 33

    def test_named_tensor_round_trip(self):
        p = random_params(np.random.default_rng(4), 3, 5, 2)
        q = LstmParams.from_named_tensors(p.named_tensors())
        for k in LstmParams.NAMES:
            np.testing.assert_array_equal(getattr(p, k), getattr(q, k))


class TestForward:
    def test_length_one(self):
        rng = np.random.default_rng(5)
        p = random_params(rng, 3, 6, 3)
        s = GroupSchedule((3, 3), (1, 4))
        x = rng.normal(size=(1, 3))
        Y, _ = forward_sequence(x, p, s)
        st_ = mts_step(x[0], CellState.zeros(6), p, s)
        np.testing.assert_allclose(Y[0], p.Wy @ st_.h + p.by, atol=1e-14)

    @pytest.mark.parametrize("conn", ["full", "clockwork"])
    @pytest.mark.parametrize("use_numba", [False, True])
    def test_matches_step_composition(self, conn, use_numba):
        rng = np.random.default_rng(6)
        p = random_params(rng, 3, 7, 3)
        s = GroupSchedule((3, 2, 2), (1, 2, 5))
        xs = rng.normal(size=(12, 3))
        Y, cache = forward_sequence(xs, p, s, conn, use_numba=use_numba)
        assert Y.shape == (12, 3)
        np.testing.assert_allclose(Y, composed_outputs(xs, p, s, conn), atol=1e-12, rtol=0)

    def test_batch_equals_single(self):
        rng = np.random.default_rng(7)
        p = random_params(rng, 3, 6, 3)
        s = GroupSchedule((3, 3), (1, 3))
        X = rng.normal(size=(9, 4, 3))
        Yb, _ = forward_sequence(X, p, s)
        for b in range(4):
            np.testing.assert_allclose(Yb[:, b], forward_sequence(X[:, b], p, s)[0], atol=1e-13)

    def test_state_and_offset_continue_sequence(self):
        rng = np.random.default_rng(8)
        p = random_params(rng, 2, 6, 2)
        s = GroupSchedule((2, 2, 2), (1, 3, 7))
        xs = rng.normal(size=(20, 2))
        full, _ = forward_sequence(xs, p, s)
        a, ca = forward_sequence(xs[:11], p, s)
        b, _ = forward_sequence(xs[11:], p, s, t0=11, state=ca.final_state)
        np.testing.assert_allclose(np.concatenate([a, b]), full, atol=1e-13)

    def test_shape_errors(self):
        p = LstmParams.init(3, 4, 3)
        with pytest.raises(ShapeError):
            forward_sequence(np.zeros((5, 2)), p, GroupSchedule.standard(4))
        with pytest.raises(ShapeError):
            forward_sequence(np.zeros((0, 3)), p, GroupSchedule.standard(4))


class TestKernels:
    def test_backends_agree(self):
        rng = np.random.default_rng(9)
        p = random_params(rng, 5, 12, 5, scale=0.3)
        s = GroupSchedule((4, 4, 4), (1, 3, 9))
        X = rng.normal(size=(30, 6, 5))
        T = rng.normal(size=(30, 6, 5))
        ya, _ = forward_sequence(X, p, s, use_numba=False)
        yb, _ = forward_sequence(X, p, s, use_numba=True)
        np.testing.assert_allclose(ya, yb, atol=1e-13, rtol=0)
        la, ga = bptt(X, T, p, s, use_numba=False)
        lb, gb = bptt(X, T, p, s, use_numba=True)
        assert la == pytest.approx(lb, abs=1e-14)
        for k in ga:
            np.testing.assert_allclose(ga[k], gb[k], atol=1e-13, rtol=0)

    def test_backend_name(self):
        assert kernels.backend() in ("numba", "numpy")


class TestBptt:
    @pytest.mark.parametrize("conn", ["full", "clockwork"])
    def test_finite_differences(self, conn):
        rng = np.random.default_rng(10)
        p = random_params(rng, 3, 6, 3)
        s = GroupSchedule((3, 3), (1, 3))
        xs, tg = rng.normal(size=(12, 3)), rng.normal(size=(12, 3))
        _, g = bptt(xs, tg, p, s, "rmse", conn)
        assert max_rel_error(g, finite_difference(xs, tg, p, s, "rmse", conn)) < 1e-4

    def test_finite_differences_cross_entropy(self):
        rng = np.random.default_rng(11)
        p = random_params(rng, 3, 6, 11)
        s = GroupSchedule((2, 2, 2), (1, 2, 4))
        xs, tg = rng.normal(size=(10, 3)), rng.integers(0, 11, size=10)
        _, g = bptt(xs, tg, p, s, "cross_entropy")
        assert max_rel_error(g, finite_difference(xs, tg, p, s, "cross_entropy")) < 1e-4

    def test_zero_model_zero_gradient(self):
        p = LstmParams(np.zeros((24, 9)), np.zeros(24), np.zeros((3, 6)), np.zeros(3))
        loss, g = bptt(np.zeros((8, 3)), np.zeros((8, 3)), p, GroupSchedule((3, 3), (1, 2)))
        assert loss == 0.0
        for v in g.values():
            assert not v.any()

    def test_degenerate_gradients_equal_standard(self):
        rng = np.random.default_rng(12)
        p = random_params(rng, 3, 6, 3)
        xs, tg = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
        _, g1 = bptt(xs, tg, p, GroupSchedule((2, 2, 2), (1, 1, 1)))
        _, g2 = bptt(xs, tg, p, GroupSchedule.standard(6))
        for k in g1:
            np.testing.assert_allclose(g1[k], g2[k], atol=1e-10, rtol=0)

    def test_clockwork_mask_zeroes_fast_to_slow(self):
        rng = np.random.default_rng(13)
        p = random_params(rng, 2, 4, 2)
        s = GroupSchedule((2, 2), (1, 4))
        _, g = bptt(rng.normal(size=(8, 2)), rng.normal(size=(8, 2)), p, s, connectivity="clockwork")
        # rows of the slow group (units 2,3) must not read the fast group (h columns 0,1)
        for k in range(4):
            assert not g["W"][k * 4 + 2 : k * 4 + 4, 2:4].any()


class TestTraining:
    def _toy(self, seed, n=10, L=8, D=3):
        rng = np.random.default_rng(seed)
        t = np.arange(L)[None, :, None]
        phase = rng.uniform(0, 2 * np.pi, size=(n, 1, D))
        return np.sin(0.6 * t + phase)

    def test_loss_decreases(self):
        # empirical: first five epoch losses non-increasing in >= 9 of 10 seeds
        ok = 0
        for seed in range(10):
            S = self._toy(seed)
            p = LstmParams.init(3, 8, 3, seed)
            res = train(S, p, GroupSchedule((4, 4), (1, 2)), TrainConfig(epochs=5, batch_size=4, lr=0.01, seed=seed))
            ok += all(b <= a for a, b in zip(res.history, res.history[1:]))
        assert ok >= 9

    def test_zero_learning_rate(self):
        S = self._toy(0)
        p = LstmParams.init(3, 6, 3, 0)
        res = train(S, p, GroupSchedule.standard(6), TrainConfig(epochs=3, batch_size=4, lr=0.0))
        for k in LstmParams.NAMES:
            np.testing.assert_array_equal(getattr(res.params, k), getattr(p, k))

    def test_deterministic(self):
        S = self._toy(1)
        runs = [train(S, LstmParams.init(3, 6, 3, 5), GroupSchedule((3, 3), (1, 2)), TrainConfig(epochs=3, batch_size=3, seed=5)) for _ in range(2)]
        for k in LstmParams.NAMES:
            assert getattr(runs[0].params, k).tobytes() == getattr(runs[1].params, k).tobytes()
        assert runs[0].history == runs[1].history

    def test_errors(self):
        p = LstmParams.init(3, 4, 3)
        with pytest.raises(TrainingError):
            train(np.zeros((0, 5, 3)), p, GroupSchedule.standard(4))
        with pytest.raises(ShapeError):
            train(np.zeros((2, 5, 4)), p, GroupSchedule.standard(4))
        with pytest.raises(IndexError):
            train_mapper(np.zeros((2, 5, 3)), np.full((2, 5), 11))

    def test_mapper_single_class(self):
        rng = np.random.default_rng(14)
        F = rng.normal(size=(8, 6, 4))
        res = train_mapper(F, np.full((8, 6), 2), TrainConfig(epochs=60, batch_size=32, lr=0.05), hidden_size=8)
        P = label_probabilities(res.params, F[0])
        assert (P.argmax(axis=1) == 2).all()
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    p = random_params(np.random.default_rng(15), 3, 6, 3)
    s = GroupSchedule((3, 3), (1, 5))
    ck = Checkpoint(p, s, "clockwork", 7, "linear", {"note": "x"})
    save_checkpoint(tmp_path / "a.ckpt", ck)
    save_checkpoint(tmp_path / "b.ckpt", ck)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert back.schedule == s and back.connectivity == "clockwork" and back.seed == 7 and back.meta == {"note": "x"}
    for k in LstmParams.NAMES:
        assert getattr(back.params, k).tobytes() == getattr(p, k).tobytes()
    raw = (tmp_path / "a.ckpt").read_bytes()
    assert raw[:8] == b"MTLSTMCK"
    (tmp_path / "bad.ckpt").write_bytes(raw + b"\0")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")
