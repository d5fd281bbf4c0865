import numpy as np
import pytest

from risloc import autodiff as ad
from risloc.autodiff import Tensor
from risloc.dataset import make_batch
from risloc.models import ModelMismatch, load_model, save_model
from risloc.policy import network as net
from risloc.policy import train
from risloc.scene import PilotParams, desk_scene, paper_scene
from risloc.training import TrainConfig


def small_policy(n=4, mode="pilot", seed=0, zero=False, hidden=8, head=8, layers=4):
    return net.init_policy(n, mode, seed, hidden=hidden, head_width=head, head_layers=layers, zero=zero)


def ref_lstm(s, c, x, w):
    """Straight-line LSTM update from the gate equations."""
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    g = {k: x @ w[f"u_{k}"].data + s @ w[f"w_{k}"].data + w[f"bias_{k}"].data for k in "cfio"}
    c_new = sig(g["f"]) * c + sig(g["i"]) * np.tanh(g["c"])
    return sig(g["o"]) * np.tanh(c_new), c_new


class TestLstmStep:
    def test_zero_weights_zero_state(self):
        w = small_policy(zero=True)
        st = net.lstm_step(net.LSTMState.zeros(3, 8), np.ones((3, 2)), w)
        assert np.array_equal(st.c.data, np.zeros((3, 8))) and np.array_equal(st.s.data, np.zeros((3, 8)))

    def test_zero_weights_halve_cell(self):
        w = small_policy(zero=True)
        c0 = np.linspace(-2, 2, 8)[None]
        st = net.lstm_step(net.LSTMState(Tensor(np.zeros((1, 8))), Tensor(c0)), np.ones((1, 2)), w)
        assert np.allclose(st.c.data, 0.5 * c0)
        assert np.allclose(st.s.data, 0.5 * np.tanh(0.5 * c0))

    def test_matches_reference(self):
        w = small_policy(seed=3)
        gen = np.random.default_rng(0)
        s0, c0, x = gen.normal(size=(5, 8)), gen.normal(size=(5, 8)), gen.normal(size=(5, 2))
        st = net.lstm_step(net.LSTMState(Tensor(s0), Tensor(c0)), x, w)
        s_ref, c_ref = ref_lstm(s0, c0, x, w)
        assert np.allclose(st.s.data, s_ref, atol=1e-13) and np.allclose(st.c.data, c_ref, atol=1e-13)
        assert np.all(np.abs(st.s.data) < 1)

    def test_feature_mode_mismatch(self):
        with pytest.raises(ad.ShapeError):
            net.lstm_step(net.LSTMState.zeros(2, 8), np.ones((2, 1)), small_policy(mode="pilot"))


class TestHeads:
    def test_ris_head_unit_modulus(self):
        w = small_policy(seed=1)
        re, im = net.ris_head(Tensor(np.random.default_rng(0).normal(size=(6, 8))), w)
        assert np.max(np.abs(np.hypot(re.data, im.data) - 1)) <= 1e-9

    def test_ris_head_bias_only(self):
        w = small_policy(zero=True)
        w.params["b_4"].data[:] = 1.0
        re, im = net.ris_head(Tensor(np.zeros((1, 8))), w)
        theta = re.data + 1j * im.data
        assert np.allclose(theta, (1 + 1j) / np.sqrt(2) * np.ones((1, 4)))

    def test_position_head_zero(self):
        assert np.array_equal(net.position_head(np.zeros((1, 8)), small_policy()).data, np.zeros((1, 3)))

    def test_position_head_selector(self):
        w = small_policy()
        w.params["ell_p"].data[:] = 0.0
        w.params["ell_p"].data[[0, 1, 2], [0, 1, 2]] = 1.0
        c = np.zeros((1, 8))
        c[0, :3] = [1, 2, 3]
        assert np.allclose(net.position_head(c, w).data, [[1, 2, 3]])

    def test_position_head_loops(self):
        w = small_policy(seed=2)
        c = np.random.default_rng(1).normal(size=(1, 8))
        ell = w["ell_p"].data
        ref = [sum(c[0, k] * ell[k, j] for k in range(8)) for j in range(3)]
        assert np.allclose(net.position_head(c, w).data[0], ref, atol=1e-14)

    def test_table_dimensions(self):
        shapes = net.policy_shapes(64, 2)
        assert shapes["u_c"] == (2, 512) and shapes["w_f"] == (512, 512)
        assert shapes["A_1"] == (512, 1024) and shapes["A_2"] == shapes["A_3"] == (1024, 1024)
        assert shapes["A_4"] == (1024, 128) and shapes["b_4"] == (128,) and shapes["ell_p"] == (512, 3)


SCENE = desk_scene(ris_rows=2, ris_cols=2)


def batch(n=6, frames=3, seed=0, noise_free=False):
    b = make_batch(SCENE, seed, np.arange(n), frames)
    if noise_free:
        b.noise[:] = 0
    return b


class TestEpisode:
    def test_single_frame_has_no_design_step(self, monkeypatch):
        w = small_policy(seed=1)

        def boom(*a, **k):
            raise AssertionError("ris_head must not run for T=1")

        monkeypatch.setattr(net, "ris_head", boom)
        tr = net.run_episodes(w, batch(frames=1), 100.0, SCENE.noise_power)
        assert tr.frames == 1 and tr.estimates.shape == (6, 1, 3)

    def test_dead_network(self):
        w = small_policy(zero=True)
        tr = net.run_episodes(w, batch(noise_free=True), 100.0, 0.0)
        assert np.array_equal(tr.estimates, np.zeros_like(tr.estimates))
        assert np.array_equal(tr.thetas, np.ones_like(tr.thetas))

    def test_deterministic_and_adaptive(self):
        w = small_policy(seed=4)
        b = batch(n=1, noise_free=True)
        a1 = net.run_episodes(w, b, 100.0, 0.0)
        a2 = net.run_episodes(w, b, 100.0, 0.0)
        assert np.array_equal(a1.thetas, a2.thetas) and np.array_equal(a1.estimates, a2.estimates)
        offsets = np.zeros((1, 3), complex)
        offsets[0, 1] = 0.5 * abs(a1.ys[0, 1]) + 1e-4
        p = net.run_episodes(w, b, 100.0, 0.0, offsets=offsets)
        assert np.array_equal(p.thetas[:, :2], a1.thetas[:, :2])
        assert not np.allclose(p.thetas[:, 2], a1.thetas[:, 2])

    def test_causality_under_future_noise(self):
        w = small_policy(seed=5)
        b = batch(n=4, frames=4)
        base = net.run_episodes(w, b, 100.0, SCENE.noise_power)
        b2 = b.subset(np.arange(4))
        b2.noise = b.noise.copy()
        b2.noise[:, 2:] = np.random.default_rng(9).normal(size=(4, 2))
        pert = net.run_episodes(w, b2, 100.0, SCENE.noise_power)
        for t in range(2):
            assert np.array_equal(pert.estimates[:, t], base.estimates[:, t])
            assert np.array_equal(pert.thetas[:, t + 1], base.thetas[:, t + 1])
        assert not np.allclose(pert.estimates[:, 3], base.estimates[:, 3])

    def test_every_theta_feasible(self):
        w = small_policy(seed=6)
        tr = net.run_episodes(w, batch(n=50, frames=4), 100.0, SCENE.noise_power)
        assert np.max(np.abs(np.abs(tr.thetas) - 1)) <= 1e-9

    def test_single_episode_wrapper_matches_batch(self):
        from risloc.channel import sample_channel
        from risloc.rng import stream

        w = small_policy(seed=7)
        b = batch(n=3, noise_free=True)
        ch = sample_channel(SCENE, b.positions[1], stream(0, 1, "channel"))
        one = net.run_episode(SCENE, ch, PilotParams(100.0, 3), w)
        full = net.run_episodes(w, b, 100.0, 0.0)
        assert np.allclose(one.estimates[0], full.estimates[1], atol=1e-12)


class TestLosses:
    def est(self, arrs):
        return [Tensor(np.asarray(a, float)) for a in arrs]

    def test_exact_is_zero(self):
        p = np.array([[1.0, 2.0, 3.0]])
        assert float(net.loss_final(self.est([p]), p).data) == 0.0
        assert float(net.loss_average(self.est([p, p]), p).data) == 0.0

    def test_unit_offsets(self):
        assert float(net.loss_final(self.est([[[1, 1, 1]]]), np.zeros((1, 3))).data) == 3.0

    def test_batch_loop_oracle(self):
        gen = np.random.default_rng(0)
        e, p = gen.normal(size=(4, 3)), gen.normal(size=(4, 3))
        ref = 0.0
        for i in range(4):
            ref += sum((e[i, j] - p[i, j]) ** 2 for j in range(3))
        assert float(net.loss_final(self.est([e]), p).data) == pytest.approx(ref / 4, rel=1e-14)

    def test_average_of_frames(self):
        p = np.zeros((1, 3))
        e1 = np.array([[1.0, 1.0, 0.0]])
        e2 = np.array([[2.0, 0.0, 0.0]])
        assert float(net.loss_average(self.est([e1, e2]), p).data) == pytest.approx(3.0)

    def test_average_equals_final_for_one_frame(self):
        gen = np.random.default_rng(2)
        e, p = gen.normal(size=(5, 3)), gen.normal(size=(5, 3))
        assert float(net.loss_average(self.est([e]), p).data) == float(net.loss_final(self.est([e]), p).data)

    def test_permutation_consistency(self):
        w = small_policy(seed=8)
        b = batch(n=8, frames=2)
        tr = net.run_episodes(w, b, 100.0, SCENE.noise_power)
        perm = np.random.default_rng(1).permutation(8)
        trp = net.run_episodes(w, b.subset(perm), 100.0, SCENE.noise_power)
        per = np.sum((tr.final_estimate - b.positions) ** 2, axis=1)
        perp = np.sum((trp.final_estimate - b.positions[perm]) ** 2, axis=1)
        assert np.allclose(perp, per[perm], atol=1e-12)
        l1 = float(net.loss_final([Tensor(tr.final_estimate)], b.positions).data)
        l2 = float(net.loss_final([Tensor(trp.final_estimate)], b.positions[perm]).data)
        assert abs(l1 - l2) <= 1e-12


def test_end_to_end_gradient_matches_fd():
    w = small_policy(n=4, seed=11)
    w.feature_shift[:] = 0.0
    b = make_batch(SCENE, 3, np.arange(3), 2)
    power, noise = 100.0, SCENE.noise_power
    # bring measurements to O(1) so the finite differences are well conditioned
    w.feature_scale[:] = np.sqrt(power) * np.abs(b.h_d).mean()

    def build():
        r = net.rollout(w, b, power, noise)
        return net.loss_final(r.estimates, b.positions) + net.loss_average(r.estimates, b.positions)

    rep = ad.grad_check(build, w.params, max_entries=12, h=1e-5)
    assert rep.max_rel_error <= 1e-4, rep.per_param


class TestTrain:
    def test_zero_steps_returns_initial(self):
        pilot = PilotParams(100.0, 2)
        cfg = TrainConfig(steps=0, warmup_samples=100)
        w0 = net.init_policy(4, "pilot", 1, hidden=8, head_width=8)
        w, log = train(SCENE, pilot, cfg, weights=w0.copy())
        assert len(log) == 0
        for k in w0.params:
            assert np.array_equal(w0[k].data, w[k].data)

    def test_short_run_improves_validation(self):
        scene = desk_scene()
        pilot = PilotParams(100.0, 4)
        cfg = TrainConfig(steps=200, batch_size=256, steps_per_epoch=20, val_size=256, warmup_samples=2000)
        w, log = train(scene, pilot, cfg, hidden=64, head_width=128)
        assert len(log) == 10 == len(log.epochs)
        assert log.best_val_mse < log.initial_val_mse
        assert log.steps_run == 200

    def test_divergence_aborts(self):
        from risloc.training import TrainingDiverged

        pilot = PilotParams(100.0, 2)
        w0 = net.init_policy(4, "pilot", 1, hidden=8, head_width=8)
        w0.params["ell_p"].data[:] = np.nan
        with pytest.raises(TrainingDiverged):
            train(SCENE, pilot, TrainConfig(steps=2, val_size=8, batch_size=8), weights=w0)


def test_checkpoint_round_trip_and_guards(tmp_path):
    w = small_policy(n=4, seed=3)
    w.feature_shift[:] = [0.1, 0.2]
    path = tmp_path / "policy.ckpt"
    save_model(path, w, SCENE, frames=3, extra={"loss": "final"})
    w2, meta = load_model(path, n_elements=4, feature_mode="pilot", scene=SCENE)
    assert meta["frames"] == 3 and meta["loss"] == "final"
    assert np.array_equal(w2.feature_shift, w.feature_shift)
    for k in w.params:
        assert np.array_equal(w2[k].data, w[k].data)
    with pytest.raises(ModelMismatch):
        load_model(path, n_elements=16)
    with pytest.raises(ModelMismatch):
        load_model(path, feature_mode="rss")
    with pytest.raises(ModelMismatch):
        load_model(path, scene=paper_scene())


def test_rss_mode_runs():
    w = small_policy(mode="rss", seed=2)
    tr = net.run_episodes(w, batch(n=3), 100.0, SCENE.noise_power)
    assert tr.features.shape == (3, 3, 1)
    assert np.all(np.abs(tr.ys) ** 2 >= 0)
