import dataclasses

import numpy as np
import pytest

from dualspace.gan import build_gan, gan_step_flops
from dualspace.nn import Activation, chain_specs, init_params
from dualspace.pipeline import (
    ExperimentReport, PhaseError, build_dataset, compare, default_config, run_direct, run_dual_space,
)
from dualspace.training import flops_estimate, forward_flops
from oracles import OpCounter, analytic_gan_step, layer_dims


def tiny(kind="shapes", seed=0):
    cfg = default_config(kind)
    cfg.seed = seed
    cfg.data.n = 256
    cfg.data.holdout = "theta_deg:60:120" if kind == "shapes" else "none"
    cfg.ae = dataclasses.replace(cfg.ae, epochs=2, hidden=(32,))
    cfg.gan = dataclasses.replace(cfg.gan, epochs=2, g_hidden=(32,), d_hidden=(32,))
    cfg.eval = dataclasses.replace(cfg.eval, n_samples=60, mmd_rows=60, n_holdout_refs=30)
    return cfg


@pytest.fixture(scope="module")
def tiny_pair():
    cfg = tiny()
    d = build_dataset(cfg.data, cfg.seed)
    return cfg, d, run_dual_space(cfg, d), run_direct(cfg, d)


# ---------------------------------------------------------------- FLOP accounting


def test_flops_estimate_examples():
    m = init_params(chain_specs([2, 1], Activation.IDENTITY, Activation.IDENTITY), 0)
    assert flops_estimate(m, 1, 1, backward=False) == 4
    assert flops_estimate(m, 1, 1) == 12
    assert flops_estimate(m, 8, 0) == 0


def test_flops_match_instrumented_counter():
    m = init_params(chain_specs([3, 4, 2], Activation.LEAKY_RELU, Activation.IDENTITY), 0)
    batch = 5
    x = np.random.default_rng(0).standard_normal((batch, 3)).tolist()
    fwd = OpCounter()
    acts = [x]
    for i in range(len(m.layers)):
        acts.append(fwd.dense(acts[-1], m.weight(i).data.tolist(), m.bias(i).data.tolist()))
    assert fwd.flops == forward_flops(m, batch) == flops_estimate(m, batch, 1, backward=False)
    bwd = OpCounter()
    g = [[1.0] * 2 for _ in range(batch)]
    for i in reversed(range(len(m.layers))):
        g, _ = bwd.dense_backward(acts[i], m.weight(i).data.tolist(), g)
    assert fwd.flops + bwd.flops == flops_estimate(m, batch, 1)


def test_latent_gan_step_is_cheaper_for_default_shapes():
    cfg = default_config("shapes")
    direct = build_gan(256, cfg.gan)
    dual = build_gan(cfg.ae.latent_dim, cfg.gan)
    b, k = cfg.gan.batch_size, cfg.gan.d_steps_per_g_step
    fd = gan_step_flops(direct.generator, direct.discriminator, b, k)
    fl = gan_step_flops(dual.generator, dual.discriminator, b, k)
    assert fd == analytic_gan_step(layer_dims(direct.generator), layer_dims(direct.discriminator), b, k)
    assert fl == analytic_gan_step(layer_dims(dual.generator), layer_dims(dual.discriminator), b, k)
    assert fl < fd and fd / fl > 5


# ---------------------------------------------------------------- arms


def test_dual_arm_contract(tiny_pair):
    cfg, d, dual, _ = tiny_pair
    assert dual.samples.shape == (cfg.eval.n_samples, d.dim)
    assert dual.latent_samples.shape == (cfg.eval.n_samples, cfg.ae.latent_dim)
    r = dual.report
    for phase in ("ae_train", "gan_train", "decode"):
        assert r.phase_seconds[phase] > 0
    assert r.space_dim == cfg.ae.latent_dim
    assert r.metrics["holdout_applicable"] and r.metrics["reconstruction"]["mse_heldout"] is not None


def test_direct_arm_contract(tiny_pair):
    cfg, d, _, direct = tiny_pair
    assert direct.samples.shape == (cfg.eval.n_samples, d.dim)
    r = direct.report
    assert "ae_train" not in r.phase_seconds and "decode" not in r.phase_seconds
    assert direct.autoencoder is None
    # pixel-space generator ends in a sigmoid
    assert direct.samples.min() >= 0 and direct.samples.max() <= 1


def test_report_flops_equal_formula_times_steps(tiny_pair):
    cfg, d, dual, direct = tiny_pair
    for res in (dual, direct):
        g = res.gan
        per = analytic_gan_step(layer_dims(g.generator), layer_dims(g.discriminator), cfg.gan.batch_size,
                                cfg.gan.d_steps_per_g_step)
        assert res.report.flops_per_step["gan_train"] == per
        assert res.report.phase_flops["gan_train"] == per * res.report.steps["gan_train"]
        assert all(v >= 0 for v in res.report.phase_seconds.values())
    n_train = d.train_indices().size
    assert direct.report.steps["gan_train"] == dual.report.steps["gan_train"] == 2 * (n_train // 64)


def test_arms_consume_identical_sample_streams():
    cfg = tiny()
    d = build_dataset(cfg.data, cfg.seed)
    streams = {"dual": [], "direct": []}
    run_dual_space(cfg, d, batch_audit=lambda ph, ids: ph == "gan" and streams["dual"].append(ids.copy()))
    run_direct(cfg, d, batch_audit=lambda ph, ids: ph == "gan" and streams["direct"].append(ids.copy()))
    assert len(streams["dual"]) == len(streams["direct"]) > 0
    for a, b in zip(streams["dual"], streams["direct"]):
        assert np.array_equal(a, b)


def test_end_to_end_determinism(tiny_pair):
    cfg, d, dual, direct = tiny_pair
    again_dual, again_direct = run_dual_space(cfg, d), run_direct(cfg, d)
    assert np.array_equal(dual.samples, again_dual.samples)
    assert np.array_equal(direct.samples, again_direct.samples)
    assert dual.report.losses == again_dual.report.losses
    assert dual.report.phase_flops == again_dual.report.phase_flops


def test_phase_failure_is_tagged():
    cfg = tiny()
    cfg.ae = dataclasses.replace(cfg.ae, latent_dim=256)
    with pytest.raises(PhaseError) as info:
        run_dual_space(cfg)
    assert info.value.phase == "ae_train" and info.value.arm == "dual_space"


# ---------------------------------------------------------------- compare


def test_compare_reports_both_accountings(tiny_pair):
    _, _, dual, direct = tiny_pair
    s = compare([direct.report, dual.report])
    assert s["baseline_arm"] == "direct" and s["candidate_arm"] == "dual_space"
    assert set(s["speedup"]) == {"gan_phase", "total_with_ae"}
    gp = s["speedup"]["gan_phase"]
    assert gp["flops_ratio"] == direct.report.phase_flops["gan_train"] / dual.report.phase_flops["gan_train"]
    for key in ("mode_coverage", "holdout_recall", "mmd"):
        assert key in s["metric_deltas"]
    assert s["metric_deltas"]["holdout_recall"] == (dual.report.metrics["holdout_recall"]
                                                    - direct.report.metrics["holdout_recall"])
    # order of the pair does not matter
    assert compare([dual.report, direct.report]) == s


def test_compare_identical_reports_gives_unit_ratios(tiny_pair):
    _, _, dual, _ = tiny_pair
    s = compare([dual.report, dual.report])
    for acc in s["speedup"].values():
        for v in acc.values():
            assert v == 1.0


def test_compare_rejects_mismatched_configs(tiny_pair):
    _, _, dual, direct = tiny_pair
    other = ExperimentReport.from_dict(direct.report.to_dict())
    other.config = dict(other.config, gan=dict(other.config["gan"], epochs=99))
    with pytest.raises(ValueError, match="different configs"):
        compare([other, dual.report])
    other = ExperimentReport.from_dict(direct.report.to_dict())
    other.seed = 42
    with pytest.raises(ValueError):
        compare([other, dual.report])


def test_report_dict_roundtrip(tiny_pair):
    _, _, dual, _ = tiny_pair
    back = ExperimentReport.from_dict(dual.report.to_dict())
    assert back.to_dict() == dual.report.to_dict()
