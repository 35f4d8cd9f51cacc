import math
import time
from dataclasses import replace

import numpy as np
import pytest

from online_gpssm import benchmark as bm
from online_gpssm.identification import (
    IdentState,
    InitConfig,
    init,
    load_checkpoint,
    reset_particles,
    run_sequence,
    run_trajectory,
    save_checkpoint,
    step,
)
from online_gpssm.particle_filter import InitialDistribution, MeasurementModel, ParticleSet, filter_step
from online_gpssm.svsgp import kl_q_p, pack_params


def small_cfg(**kw):
    base = dict(n_particles=200, n_inducing=10)
    base.update(kw)
    return InitConfig(**base)


# ---------------------------------------------------------------------------
# config and init


def test_config_validation():
    with pytest.raises(ValueError):
        InitConfig(n_particles=1)
    with pytest.raises(ValueError):
        InitConfig(resample="residual")
    with pytest.raises(ValueError):
        InitConfig(mean="quadratic")
    with pytest.raises(ValueError):
        InitConfig(noise_var=0.0)
    with pytest.raises(ValueError):
        InitConfig(p0=InitialDistribution("uniform", 1.0, 0.0))


def test_config_dict_roundtrip():
    cfg = InitConfig(p0=InitialDistribution("gaussian", 0.0, 2.0), n_inducing=7, lengthscale=0.3, inner_steps=2)
    assert InitConfig.from_dict(cfg.to_dict()) == cfg


def test_default_lengthscale_is_tenth_of_span():
    model = InitConfig(grid_lo=-2.0, grid_hi=3.0).initial_model()
    assert model.kernel.lengthscale == pytest.approx(0.5)


def test_init_uniform(rng):
    s = init(InitConfig(), rng)
    p = s.particles
    assert len(p) == 500
    assert np.all((p.x_curr >= 0) & (p.x_curr <= 1))
    np.testing.assert_array_equal(p.x_prev, p.x_curr)
    np.testing.assert_array_equal(p.weights, np.full(500, 1 / 500))
    assert s.t == 0
    assert abs(kl_q_p(s.dyn)) < 1e-9


def test_init_point_mass(rng):
    s = init(InitConfig(p0=InitialDistribution("gaussian", 0.0, 0.0)), rng)
    assert np.max(np.abs(s.particles.x_curr)) < 1e-4


# ---------------------------------------------------------------------------
# a single step


def test_step_counts(rng):
    s = init(small_cfg(), rng)
    s2 = step(s, 0.4, rng)
    assert s2.t == 1
    assert len(s2.particles) == len(s.particles)
    assert s2.opt.step_count == 1
    assert len(s2.info.batch) == 200


def test_step_with_sharp_measurement(rng):
    nu = 1e-6
    s = init(small_cfg(meas_noise_var=nu), rng)
    s = step(s, 0.5, rng)
    assert abs(s.info.estimate - 0.5) < 3 * math.sqrt(nu)


def test_step_rejects_nonfinite_measurement(rng):
    s = init(small_cfg(), rng)
    before = pack_params(s.dyn)
    with pytest.raises(ValueError):
        step(s, np.nan, rng)
    np.testing.assert_array_equal(pack_params(s.dyn), before)
    assert s.t == 0


def test_training_pairs_are_resampled_particles(rng):
    s = step(init(small_cfg(), rng), 0.3, rng)
    np.testing.assert_array_equal(s.info.batch.inputs, s.particles.x_prev)
    np.testing.assert_array_equal(s.info.batch.targets, s.particles.x_curr)
    np.testing.assert_array_equal(s.particles.weights, np.full(200, 1 / 200))


def test_learning_disabled_equals_plain_filter():
    cfg = small_cfg(learn=False)
    zs = np.random.default_rng(1).uniform(0, 1, 30)
    rng_a, rng_b = np.random.default_rng(99), np.random.default_rng(99)
    s = init(cfg, rng_a)
    dyn = s.dyn
    ps = ParticleSet.from_states(cfg.p0.sample(rng_b, cfg.n_particles))
    mm = MeasurementModel(cfg.meas_noise_var)
    for z in zs:
        s = step(s, z, rng_a)
        out = filter_step(ps, z, dyn, mm, rng_b, cfg.ess_threshold, cfg.resample)
        ps = out.particles
        assert s.info.estimate == out.estimate
        np.testing.assert_array_equal(s.particles.x_curr, ps.x_curr)
        np.testing.assert_array_equal(s.particles.x_prev, ps.x_prev)
    assert s.dyn is dyn


def test_model_snapshot_constant_within_step(rng):
    s = init(small_cfg(), rng)
    before = pack_params(s.dyn)
    s2 = step(s, 0.7, rng)
    # input state is untouched; only the returned state carries the update
    np.testing.assert_array_equal(pack_params(s.dyn), before)
    assert not np.array_equal(pack_params(s2.dyn), before)


def test_inner_steps_take_several_updates(rng):
    s = step(init(small_cfg(inner_steps=4), rng), 0.5, rng)
    assert s.opt.step_count == 4


def test_invariants_hold_along_a_run(rng):
    s = init(small_cfg(hyper_rate_mult=1.0), rng)
    for z in rng.uniform(0, 1, 60):
        s = step(s, z, rng)
        assert s.dyn.noise_var > 0
        assert s.dyn.kernel.signal_variance > 0 and s.dyn.kernel.lengthscale > 0
        assert np.min(np.linalg.eigvalsh(s.dyn.q.S)) > 0


# ---------------------------------------------------------------------------
# trajectories


def test_empty_trajectory_is_noop(rng):
    s = init(small_cfg(), rng)
    s2, est, elbos = run_trajectory(s, [], rng)
    assert s2 is s
    assert est.size == 0 and elbos.size == 0


def test_trajectory_resets_particles_but_keeps_model(rng):
    s = init(small_cfg(), rng)
    s, _, _ = run_trajectory(s, [0.2, 0.3, 0.35], rng)
    model, opt = s.dyn, s.opt
    r = reset_particles(s, rng)
    assert r.dyn is model and r.opt == opt
    np.testing.assert_array_equal(r.particles.x_prev, r.particles.x_curr)
    s2, est, elbos = run_trajectory(s, [0.8, 0.82], rng)
    assert s2.t == 5
    assert s2.opt.step_count == 5
    assert est.shape == elbos.shape == (2,)


def test_trajectory_deterministic():
    def go():
        rng = np.random.default_rng(42)
        s = init(small_cfg(), rng)
        s, est, elbos = run_trajectory(s, np.linspace(0.1, 0.6, 15), rng)
        return est, elbos, pack_params(s.dyn)

    for a, b in zip(go(), go()):
        np.testing.assert_array_equal(a, b)


def test_sequence_continues_cloud(rng):
    s = init(small_cfg(), rng)
    s, _, _ = run_sequence(s, [0.1, 0.2], rng)
    s2, est, _ = run_sequence(s, [], rng)
    assert s2 is s and est.size == 0


def test_learning_reduces_prediction_error():
    rng = np.random.default_rng(3)
    spec = bm.SystemSpec("testfunc", 1.0, 0.1, InitialDistribution("gaussian", 0.0, 1.0))
    train = bm.simulate(spec, 200, rng)
    test = bm.simulate(spec, 2000, rng)
    cfg = InitConfig(
        p0=InitialDistribution("gaussian", 0.0, 1.0),
        grid_lo=-12.0,
        grid_hi=10.0,
        n_inducing=20,
        signal_variance=10.0,
        lengthscale=5.0,
        noise_var=1.0,
        base_rate=1.0,
        decay=200.0,
        hyper_rate_mult=0.0,
        meas_noise_var=0.1,
    )
    s = init(cfg, rng)
    before = bm.test_mse(s.dyn, test.pairs)
    s, _, _ = run_sequence(s, train.measurements, rng)
    assert bm.test_mse(s.dyn, test.pairs) < 0.5 * before


def test_step_cost_does_not_grow(rng):
    s = init(small_cfg(), rng)
    zs = rng.uniform(0, 1, 400)

    def timed(seq):
        nonlocal s
        t0 = time.perf_counter()
        for z in seq:
            s = step(s, z, rng)
        return time.perf_counter() - t0

    timed(zs[:20])  # warm-up
    early = timed(zs[20:120])
    late = timed(zs[300:400])
    assert late < 3 * early


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_resume_is_deterministic(tmp_path):
    rng = np.random.default_rng(8)
    s = init(small_cfg(), rng)
    zs = np.random.default_rng(9).uniform(0, 1, 20)
    s, _, _ = run_sequence(s, zs[:10], rng)
    save_checkpoint(tmp_path / "ck.json", s, rng)
    cont, est_a, _ = run_sequence(s, zs[10:], rng)

    s2, rng2 = load_checkpoint(tmp_path / "ck.json")
    assert s2.t == 10
    resumed, est_b, _ = run_sequence(s2, zs[10:], rng2)
    np.testing.assert_array_equal(est_a, est_b)
    np.testing.assert_array_equal(pack_params(cont.dyn), pack_params(resumed.dyn))


def test_checkpoint_rejects_custom_measurement(tmp_path, rng):
    s = init(small_cfg(), rng)
    s = replace(s, mm=MeasurementModel(0.1, g=np.sin))
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "ck.json", s, rng)


def test_state_type():
    assert IdentState.__dataclass_params__.frozen
