import math

import numpy as np
import pytest

from daedisc.dsl import SymbolScope, parse
from daedisc.evaluator import SampleBatch
from daedisc.fitting import (
    SENTINEL_SCORE,
    FitConfig,
    ScoredSkeleton,
    cosine_lr,
    derived_fit_config,
    fit_and_score,
    score_of,
)

SCOPE = SymbolScope(states=("x",))


def test_linear_recovery():
    x = np.linspace(1.0, 2.0, 50)
    batch = SampleBatch.from_columns({"x": x, "dx_dt": 3.0 * x})
    sk = parse("dx/dt = p0*x", SCOPE, ["x"], kind="de")
    scored = fit_and_score(sk, batch, ["dx_dt"], FitConfig(seed=3))
    assert abs(scored.params[0] - 3.0) < 1e-3
    assert scored.score >= -1e-6


def test_constant_on_zero_targets():
    batch = SampleBatch.from_columns({"x": np.linspace(0, 1, 40), "dx_dt": np.zeros(40)})
    sk = parse("dx/dt = p0", SCOPE, ["x"], kind="de")
    scored = fit_and_score(sk, batch, ["dx_dt"], FitConfig(seed=1))
    assert abs(scored.params[0]) < 1e-4
    assert scored.score > -1e-6


def test_cosine_schedule_endpoints():
    assert abs(cosine_lr(0, 0.05, 2000) - 0.05) < 1e-12
    assert abs(cosine_lr(2000, 0.05, 2000)) < 1e-12


def test_monotone_restart_selection():
    x = np.linspace(0.5, 2.0, 30)
    batch = SampleBatch.from_columns({"x": x, "dx_dt": np.sin(2.0 * x)})
    sk = parse("dx/dt = sin(p0*x)", SCOPE, ["x"], kind="de")
    scored = fit_and_score(sk, batch, ["dx_dt"], FitConfig(steps=400, restarts=4, seed=9))
    assert len(scored.restart_losses) == 4
    assert -scored.score <= min(scored.restart_losses) + 1e-15


def test_score_sign_and_sentinel():
    assert score_of(0.0) == 0.0
    assert score_of(1.5) == -1.5
    assert score_of(float("nan")) == SENTINEL_SCORE
    assert score_of(float("inf")) == SENTINEL_SCORE


def test_determinism_bit_identical():
    rng = np.random.default_rng(5)
    x = rng.uniform(0.5, 2.0, 40)
    batch = SampleBatch.from_columns({"x": x, "dx_dt": 1.3 * x - 0.2})
    sk = parse("dx/dt = p0*x + p1", SCOPE, ["x"], kind="de")
    cfg = FitConfig(steps=300, seed=11)
    a = fit_and_score(sk, batch, ["dx_dt"], cfg)
    b = fit_and_score(sk, batch, ["dx_dt"], cfg)
    assert np.array_equal(a.params, b.params)
    assert a.score == b.score


def test_domain_fault_poisons_candidate():
    batch = SampleBatch.from_columns({"x": np.array([-1.0, 1.0]), "dx_dt": np.zeros(2)})
    sk = parse("dx/dt = log(x)", SCOPE, ["x"], kind="de")
    scored = fit_and_score(sk, batch, ["dx_dt"], FitConfig(seed=0))
    assert scored.poisoned
    assert scored.score == SENTINEL_SCORE


def test_no_parameter_skeleton():
    x = np.linspace(0.5, 1.5, 20)
    batch = SampleBatch.from_columns({"x": x, "dx_dt": x})
    sk = parse("dx/dt = x", SCOPE, ["x"], kind="de")
    scored = fit_and_score(sk, batch, ["dx_dt"], FitConfig(seed=0))
    assert scored.score == 0.0


def test_derived_fit_config_deterministic():
    cfg = FitConfig(seed=7)
    a = derived_fit_config(cfg, 1, 2)
    b = derived_fit_config(cfg, 1, 2)
    c = derived_fit_config(cfg, 1, 3)
    assert a.seed == b.seed
    assert a.seed != c.seed


def test_swing_structure_fit_reproduces_derivatives():
    # Data from the classical second-order machine; the fitted right-hand side
    # must reproduce the derivative function even though individual parameters
    # carry a scale redundancy.
    from daedisc.benchmarks import ScenarioConfig, Disturbance, get_model, simulate

    model = get_model("swing2")
    scen = ScenarioConfig(
        total_time=5.0, dt=0.01, noise_sigma=0.0, seed=0,
        disturbance=Disturbance(kind="state_kick", magnitude=1.0,
                                offsets=(("delta", 0.5), ("omega", 0.004))))
    record = simulate(model, scen)
    delta = record.columns["delta"]
    omega = record.columns["omega"]
    # exact derivatives from the model equations
    pe = model.params["e_prime"] * model.params["v_bus"] / model.params["x_total"] * np.sin(
        delta - model.params["theta_bus"])
    true_domega = (record.columns["P_m"] - pe
                   - model.params["damping"] * (omega - 1.0)) / (2.0 * model.params["inertia"])
    batch = SampleBatch.from_columns({"delta": delta, "omega": omega, "domega_dt": true_domega})
    scope = SymbolScope(states=("delta", "omega"))
    sk = parse("domega/dt = (p0 - p1*sin(delta) - p2*(omega - 1))/p3", scope,
               ["omega"], kind="de")
    scored = fit_and_score(sk, batch, ["domega_dt"], FitConfig(steps=2000, restarts=3, seed=2))
    from daedisc.evaluator import evaluate

    res = evaluate(scored.skeleton, scored.params, batch)
    pred = res.outputs[0]
    scale = np.max(np.abs(true_domega))
    mape_like = np.mean(np.abs(pred - true_domega)) / scale * 100.0
    assert mape_like < 1.0
