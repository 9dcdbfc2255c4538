import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lsl.dists import DistributionSpec, parse_scheme
from lsl.forward import InputSpec, forward, make_input
from lsl.mc import (
    CSV_COLUMNS, EnsembleStats, Moments, TrialPlan, conditional_step_stats, merge, run_ensemble,
    run_sharded, trial_lengths,
)
from lsl.netgen import ConvArch, ConvLayer, FCArch, ResidualArch, sample_net
from lsl.rng import input_stream, trial_stream

HE = parse_scheme("he-normal")


@settings(max_examples=60, deadline=None)
@given(data=st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), cut=st.integers(0, 60))
def test_moment_merge_matches_batch(data, cut):
    x = np.array(data)[:, None]
    cut = min(cut, len(data))
    m = Moments.from_samples(x[:cut]).merge(Moments.from_samples(x[cut:]))
    ref = Moments.from_samples(x)
    scale = 1 + np.max(np.abs(x))
    np.testing.assert_allclose(m.mean, x.mean(0), rtol=1e-9, atol=1e-9 * scale)
    np.testing.assert_allclose(m.variance(), x.var(0, ddof=1), rtol=1e-7, atol=1e-7 * scale**2)
    np.testing.assert_allclose(m.m4, ref.m4, rtol=1e-6, atol=1e-6 * scale**4)


def test_moments_skip_nonfinite():
    m = Moments.from_samples(np.array([[1.0], [np.inf], [3.0]]))
    assert m.count[0] == 2 and m.mean[0] == 2.0


def test_trial_matches_forward():
    # a trial of the ensemble is exactly sample_net + forward on its own stream
    arch = FCArch((5, 6, 6))
    plan = TrialPlan(arch, HE, InputSpec("sphere"), trials=3, master_seed=42)
    x = make_input(plan.input, (5,), input_stream(42))
    got = trial_lengths(plan, 0, 3, x)
    for t in range(3):
        net = sample_net(arch, HE, trial_stream(42, t))
        np.testing.assert_allclose(got[t], forward(net, x).m, rtol=1e-14)


def test_deterministic_across_workers_and_shards():
    plan = TrialPlan(FCArch((8,) * 6), HE, trials=1500, master_seed=7)
    a = run_ensemble(plan, workers=1)
    b = run_ensemble(plan, workers=4)
    assert a.to_csv() == b.to_csv()
    s = run_sharded(plan, 8)
    np.testing.assert_allclose(s.mean, a.mean, rtol=1e-10)
    np.testing.assert_allclose(s.var, a.var, rtol=1e-10)
    assert s.trials == a.trials == 1500


def test_merge_rejects_mismatch():
    a = run_ensemble(TrialPlan(FCArch((3, 3)), HE, trials=10, master_seed=1))
    b = run_ensemble(TrialPlan(FCArch((3, 3)), HE, trials=10, master_seed=2))
    with pytest.raises(ValueError):
        merge(a, b)


def test_se_scaling():
    arch = FCArch((10,) * 6)
    small = run_ensemble(TrialPlan(arch, HE, trials=4000, master_seed=3))
    big = run_ensemble(TrialPlan(arch, HE, trials=8000, master_seed=4))
    ratio = small.se_mean[-1] / big.se_mean[-1]
    assert abs(ratio / math.sqrt(2) - 1) <= 0.2


def test_projected_agrees_with_full():
    arch = FCArch((6, 12, 12, 12, 12))
    scheme = parse_scheme("he-normal", DistributionSpec("normal", 0.2))
    full = run_ensemble(TrialPlan(arch, scheme, trials=8000, master_seed=5))
    proj = run_ensemble(TrialPlan(arch, scheme, trials=8000, master_seed=6, sampler="projected"))
    z = np.abs(full.mean - proj.mean)[1:] / np.hypot(full.se_mean, proj.se_mean)[1:]
    assert np.all(z <= 5)
    with pytest.raises(ValueError):
        TrialPlan(arch, parse_scheme("he-uniform"), sampler="projected")


def test_outputs_format():
    plan = TrialPlan(ConvArch((3, 3, 1), (ConvLayer(2),)), HE, InputSpec("constant"), trials=20, master_seed=0)
    st_ = run_ensemble(plan)
    text = st_.to_csv()
    lines = text.split("\n")
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert text.endswith("\n") and not text.endswith("\n\n")
    assert len(lines) == 2 + 2
    doc = json.loads(st_.to_json())
    again = EnsembleStats.from_dict(doc)
    assert again.to_csv() == text


def test_overflow_counted():
    plan = TrialPlan(FCArch((50,) * 251), parse_scheme("scaled:2"), InputSpec("ones"), trials=4,
                     master_seed=0, precision="f32")
    st_ = run_ensemble(plan)
    assert st_.overflow[-1] == 4


def test_resample_input_changes_result():
    arch = ResidualArch(3, (0.5,) * 3)
    spec = InputSpec("sphere", nonnegative=True)
    a = run_ensemble(TrialPlan(arch, HE, spec, trials=50, master_seed=1))
    b = run_ensemble(TrialPlan(arch, HE, spec, trials=50, master_seed=1, resample_input=True))
    assert a.mean[-1] != b.mean[-1]


@pytest.mark.parametrize("bad", [dict(trials=0), dict(master_seed=-1), dict(master_seed=2**64),
                                 dict(precision="f16"), dict(sampler="fast")])
def test_plan_validation(bad):
    with pytest.raises(ValueError):
        TrialPlan(FCArch((3, 3)), HE, **bad)


def test_conditional_step_martingale():
    a = np.abs(np.random.default_rng(0).standard_normal(7))
    m = float(a @ a / 7)
    st_ = conditional_step_stats(a, 5, HE, 100_000, seed=3)
    assert abs(st_.mean - m) / st_.se_mean <= 4
    assert abs(st_.var - 5 * m * m / 5) / st_.se_var <= 4
