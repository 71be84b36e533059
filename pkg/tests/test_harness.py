import numpy as np
import pytest

from trajtrunc.errors import ContractError, ParameterError, StageError
from trajtrunc.harness import (
    Family,
    SamplerConfig,
    ScheduleConfig,
    SyntheticSpec,
    TruncationConfig,
    flatten_config,
    generate,
    gmm_spec_for,
    run_pipeline,
    split_config,
)
from trajtrunc.io import read_binary_matrix, read_json
from trajtrunc.stats import Modality, center, compute_stats


def test_single_component_gmm_variance():
    spec = SyntheticSpec(family=Family.GMM, n=100_000, d=100, weights=(1.0,), component_var=0.5)
    st = compute_stats(center(generate(spec)))
    assert st.avg_var == pytest.approx(0.5, rel=0.02)
    # divisor-d oracle
    assert st.avg_var == pytest.approx(0.5 * 99 / 100, rel=0.005)


def test_gmm_means_balance():
    g = gmm_spec_for(SyntheticSpec(weights=(0.5, 0.3, 0.2), d=6))
    np.testing.assert_allclose(g.weights @ g.means, 0.0, atol=1e-15)
    np.testing.assert_allclose(g.means.sum(axis=1), 0.0, atol=1e-15)
    with pytest.raises(ParameterError):
        gmm_spec_for(SyntheticSpec(d=5))


def test_onehot_frequencies():
    spec = SyntheticSpec(family=Family.ONEHOT, n=100_000, d=3, frequencies=(0.5, 0.3, 0.2))
    ds = generate(spec)
    assert ds.modality is Modality.ONEHOT
    np.testing.assert_allclose(ds.data.mean(axis=0), [0.5, 0.3, 0.2], atol=0.01)
    with pytest.raises(ParameterError):
        generate(SyntheticSpec(family=Family.ONEHOT, d=3, frequencies=(0.5, 0.5)))


def test_point_cloud_centering():
    ds = generate(SyntheticSpec(family=Family.POINT_CLOUD, n=500, d=15))
    clouds = center(ds).data.reshape(500, 5, 3)
    assert np.max(np.abs(clouds.mean(axis=1))) <= 1e-12
    with pytest.raises(ParameterError):
        generate(SyntheticSpec(family=Family.POINT_CLOUD, d=10))


def test_smooth_field_is_correlated():
    x = center(generate(SyntheticSpec(family=Family.SMOOTH_FIELD, n=5_000, d=16))).data
    assert np.corrcoef(x[:, 7], x[:, 8])[0, 1] > 0.5
    with pytest.raises(ParameterError):
        generate(SyntheticSpec(family=Family.SMOOTH_FIELD, nonlinearity="relu"))


@pytest.mark.parametrize("family", list(Family))
def test_generate_is_deterministic(family):
    spec = SyntheticSpec(family=family, n=200, d=12, seed=3)
    assert np.array_equal(generate(spec).data, generate(spec).data)
    assert not np.array_equal(generate(spec).data, generate(SyntheticSpec(family=family, n=200, d=12, seed=4)).data)


def test_spec_validation():
    with pytest.raises(ParameterError):
        SyntheticSpec(n=1)
    with pytest.raises(ValueError):
        SyntheticSpec(family="images")


def test_config_split_round_trip():
    flat = flatten_config(SyntheticSpec(d=6), ScheduleConfig(T=500), TruncationConfig(tau=10), SamplerConfig())
    spec, sched, trunc, samp = split_config(flat)
    assert spec.d == 6 and sched.T == 500 and trunc.tau == 10
    with pytest.raises(ParameterError):
        split_config({**flat, "bogus": 1})
    with pytest.raises(ParameterError):
        split_config({**flat, "n": 1})


SMALL = dict(
    schedule_cfg=ScheduleConfig(),
    trunc_cfg=TruncationConfig(max_samples=3_000),
    sampler_cfg=SamplerConfig(n_samples=1_000, timing_repeats=1),
)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    spec = SyntheticSpec(family=Family.GMM, n=3_000, d=4, seed=1)
    return spec, out, run_pipeline(spec, out_dir=out, **SMALL)


def test_pipeline_report_integrity(small_run):
    spec, out, rep = small_run
    doc = rep.to_dict()
    assert doc["provenance"]["schedule_fingerprint"] == doc["decision"]["schedule_fingerprint"]
    assert rep.speedup > 0
    assert doc["steps"] == {"full": 1000, "truncated": rep.decision.t_star}
    assert rep.comparison.truncated.provenance["n_steps"] == rep.decision.t_star
    assert rep.weight_recovery is not None
    for name in ("dataset_centered.bin", "schedule.json", "stats.json", "variance_path.json", "decision.json",
                 "samples_full.bin", "samples_truncated.bin", "samples_full.json", "report.json"):
        assert (out / name).exists(), name
    assert read_binary_matrix(out / "samples_truncated.bin").shape == (1_000, 4)
    assert read_json(out / "decision.json")["config"]["seed"] == 1


def test_pipeline_determinism(small_run):
    spec, _, rep = small_run
    again = run_pipeline(spec, **SMALL)
    assert again.to_dict(include_timing=False) == rep.to_dict(include_timing=False)


def test_pipeline_stage_error_for_tiny_dataset():
    spec = SyntheticSpec(family=Family.GMM, n=40, d=4)
    with pytest.raises(StageError) as info:
        run_pipeline(spec, **SMALL)
    assert info.value.stage == "tstar"
    assert isinstance(info.value.cause, ContractError)
    assert info.value.exit_code == 3
    assert "[tstar]" in str(info.value)


def test_pipeline_linear_denoiser_on_onehot():
    spec = SyntheticSpec(family=Family.ONEHOT, n=3_000, d=6, seed=2)
    rep = run_pipeline(spec, sampler_cfg=SamplerConfig(n_samples=500, timing_repeats=1, fit_pairs=5_000),
                       trunc_cfg=TruncationConfig(max_samples=3_000))
    assert rep.denoiser_id.startswith("linear-per-step")
    assert rep.weight_recovery is None
