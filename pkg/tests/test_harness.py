import numpy as np
import pytest

from distsa import config as Cf
from distsa import engines as E
from distsa import harness as H


def small(name, **kw):
    return Cf.parse_config(Cf.load_preset(name), **kw)


def test_single_agent_trivial_consensus():
    exp = small("single_agent_fixed", horizon=2000, trials=4)
    res = H.run_experiment(exp)
    ce, _ = res.ensemble.column("consensus_error")
    assert np.all(ce == 0.0)
    assert res.report["fingerprint"] == exp.fingerprint


def test_trial_order_invariance():
    exp = small("doubly_stochastic_baseline", horizon=300, trials=12)
    an = H.analyze(exp)
    seeds = exp.seeds()
    a = H.run_ensemble(exp, an, seeds=seeds)
    rng = np.random.default_rng(0)
    b = H.run_ensemble(exp, an, seeds=[seeds[i] for i in rng.permutation(len(seeds))])
    assert np.allclose(a.metric_mean, b.metric_mean, rtol=1e-12, atol=1e-15)
    c = H.run_ensemble(exp, an, seeds=seeds, workers=4)
    assert np.array_equal(a.metric_mean, c.metric_mean)


def test_verify_doubly_stochastic_push_is_exact():
    raw = Cf.load_preset("doubly_stochastic_baseline")
    raw.update(engine="push", weights={"rule": "push"}, steps={"kind": "harmonic", "alpha0": 1.0},
               bounds={"enabled": False}, horizon=400)
    checks = {c["name"]: c for c in H.verify_suite(Cf.parse_config(raw), decay_trials=2)}
    for name in ("push-product-identity", "push-ratio-identity", "push-weight-mass"):
        assert checks[name]["value"] == 0.0, name


def test_verify_directed_push():
    exp = small("push_directed_n4", horizon=400)
    checks = {c["name"]: c for c in H.verify_suite(exp, decay_trials=2)}
    assert checks["push-product-identity"]["value"] <= 1e-8
    assert checks["push-ratio-identity"]["value"] <= 1e-8
    assert checks["push-average-replay"]["status"] == "pass"
    assert checks["push-mass-conservation"]["status"] == "pass"


def test_adversarial_flags_pi_limit_but_consensus_decays():
    exp = small("adversarial_periodic")
    checks = {c["name"]: c for c in H.verify_suite(exp)}
    assert checks["pi-limit"]["status"] == "flagged"
    assert checks["consensus-decay"]["status"] == "pass"


def test_adversarial_refuses_bounds_with_assumption_name():
    raw = Cf.load_preset("adversarial_periodic")
    raw["bounds"] = {"enabled": True}
    exp = Cf.parse_config(raw)
    an = H.analyze(exp)
    with pytest.raises(H.BoundsRefused) as exc:
        H.prepare_bounds(exp, an)
    assert exc.value.assumption == "pi-limit"
    assert "[pi-limit]" in str(exc.value)


def test_horizon_refusal_names_condition():
    exp = small("fixed_left_eigenvector", horizon=100, trials=2)
    res = H.run_experiment(exp)
    assert res.bound is None
    assert res.bound_error[0] == "horizon"
    assert res.report["bound"]["status"] == "refused"


def test_kushner_report_has_no_bound():
    raw = Cf.load_preset("doubly_stochastic_baseline")
    raw.update(engine="kushner", horizon=200, trials=2)
    res = H.run_experiment(Cf.parse_config(raw))
    assert res.report["bound"]["status"] == "n/a"
    assert "reason" in res.report["bound"]


def test_td_demo_runs_and_targets_uniform_average():
    exp = small("td_demo", horizon=3000, trials=4)
    res = H.run_experiment(exp)
    assert res.analysis.weighting == "uniform"
    assert res.ensemble.mass_residual <= 1e-10
    mse, _ = res.ensemble.column("mse")
    assert mse[-1] < mse[10]


def test_report_verdict_recomputable(tmp_path):
    exp = small("single_agent_fixed", horizon=20000, trials=8)
    res = H.run_experiment(exp)
    H.write_outputs(tmp_path, exp, res.analysis, res.ensemble, res.report, res.bound)
    table = res.report["bound"]["table"]
    ok = [r["mean"] + 2 * r["stderr"] <= r["rhs"] for r in table]
    assert res.report["bound"]["verdict"] == pytest.approx(sum(ok) / len(ok))
    again = H.render_report(tmp_path)
    assert again["bound"]["verdict"] == pytest.approx(res.report["bound"]["verdict"])
    assert again["fingerprint"] == exp.fingerprint


def test_replay_residual_helpers_detect_tampering():
    exp = small("doubly_stochastic_baseline", horizon=50)
    an = H.analyze(exp)
    tr = E.run(exp.engine, exp.weights, exp.noise, exp.steps, 50, exp.seeds()[0], record_times=np.arange(51),
               theta_star=an.theta_star, pi=an.pi[:51])
    assert H.consensus_replay_residual(tr, an.pi, exp.noise, exp.steps) <= 1e-9
    tr.theta[20, 0, 0] += 1e-3
    assert H.consensus_replay_residual(tr, an.pi, exp.noise, exp.steps) > 1e-5
