import numpy as np
import pytest
from conftest import random_epoch, random_state

from fegut.ekf import EkfConfig, Mode, ekf_partial_update, ekf_predict, ekf_update, initial_state
from fegut.errors import ColdStartError, ContractViolation, DatasetParseError, NumericalError
from fegut.hybrid import (
    FeedbackMode,
    FeGutPipeline,
    PipelineConfig,
    cold_start,
    read_trace,
    run_baseline_ekf,
    run_fegut,
    write_trace,
)
from fegut.models import N_DYN
from fegut.scene import EpochKind, NoiseSpec


def test_cold_start_noise_free_is_exact():
    rng = np.random.default_rng(0)
    x = random_state(rng)
    ep = random_epoch(rng, x, n_sats=8, noise=0.0)
    x0 = cold_start(ep)
    assert np.linalg.norm(x0[:3] - x[:3]) < 1e-6
    assert x0[9] == pytest.approx(x[9], abs=1e-6)
    # the linear velocity solve ignores nothing for exact data
    np.testing.assert_allclose(x0[3:6], x[3:6], atol=1e-6)
    assert np.all(x0[6:9] == 0) and x0[11] == 0


def test_cold_start_noisy_error_bound():
    rng = np.random.default_rng(1)
    errs = []
    for _ in range(50):
        x = random_state(rng)
        ep = random_epoch(rng, x, n_sats=8, noise=0.0)
        ep.pseudoranges = ep.pseudoranges + rng.normal(0, 2.0, 8)
        errs.append(np.linalg.norm(cold_start(ep)[:3] - x[:3]))
    assert np.median(errs) < 5.0


def test_cold_start_needs_four_satellites():
    rng = np.random.default_rng(2)
    x = random_state(rng)
    with pytest.raises(ColdStartError):
        cold_start(random_epoch(rng, x, n_sats=3))


def test_one_output_per_epoch_in_order(short_run_scene):
    epochs = short_run_scene.dataset.epochs
    outputs, pipe = run_fegut(epochs)
    assert len(outputs) == len(epochs)
    assert [o.t for o in outputs] == [e.t for e in epochs]
    assert pipe.ekf.mode == Mode.NAIVE and pipe.ekf.mean.shape == (N_DYN,)
    sources = {o.source for o, e in zip(outputs, epochs) if e.kind == EpochKind.UWB_ONLY}
    assert sources == {"ekf"}
    assert {o.source for o, e in zip(outputs, epochs) if e.has_gnss} == {"fgo"}


def test_uwb_only_epoch_keeps_time_offset(short_run_scene):
    epochs = short_run_scene.dataset.epochs
    outputs, _ = run_fegut(epochs[:25])
    for prev, cur, ep in zip(outputs, outputs[1:], epochs[1:25]):
        if ep.kind == EpochKind.UWB_ONLY:
            assert cur.td == prev.td


def test_every_solve_feedback_copies_graph_offset(short_run_scene):
    epochs = short_run_scene.dataset.epochs
    pipe = FeGutPipeline()
    pipe.initialize(epochs[0])
    fed = 0
    for ep in epochs:
        out = pipe.step(ep)
        if out.source == "fgo" and out.diagnostics["td_observable"]:
            assert pipe.ekf.external_td == pipe.graph.td
            fed += 1
    assert fed > 0


def test_damped_feedback_moves_partially(short_run_scene):
    epochs = short_run_scene.dataset.epochs
    cfg = PipelineConfig(feedback=FeedbackMode.DAMPED, alpha=0.5)
    pipe = FeGutPipeline(cfg)
    pipe.initialize(epochs[0])
    checked = False
    for ep in epochs:
        before = pipe.ekf.external_td
        out = pipe.step(ep)
        if out.source == "fgo" and out.diagnostics["td_observable"]:
            assert pipe.ekf.external_td == pytest.approx(before + 0.5 * (pipe.graph.td - before), abs=1e-15)
            checked = True
    assert checked
    with pytest.raises(ContractViolation):
        PipelineConfig(feedback=FeedbackMode.DAMPED, alpha=0.0).validate()


def test_graph_failure_degrades_to_ekf(short_run_scene, monkeypatch):
    epochs = short_run_scene.dataset.epochs[:40]
    pipe = FeGutPipeline()
    pipe.initialize(epochs[0])
    outputs = [pipe.step(e) for e in epochs[:20]]
    graph_before = pipe.graph

    def boom():
        raise NumericalError("forced failure")

    monkeypatch.setattr(graph_before, "solve", boom)
    out = pipe.step(epochs[20])
    assert out.source == "ekf" and "forced failure" in out.diagnostics["fgo_error"]
    assert pipe.graph is not graph_before
    outputs += [out] + [pipe.step(e) for e in epochs[21:]]
    assert len(outputs) == len(epochs)
    assert outputs[30].source == "fgo"


def test_identical_runs_are_identical(short_run_scene):
    epochs = short_run_scene.dataset.epochs
    a, _ = run_fegut(epochs)
    b, _ = run_fegut(epochs)
    for u, v in zip(a, b):
        assert u.t == v.t and u.td == v.td and np.array_equal(u.r, v.r) and np.array_equal(u.v, v.v)


def test_contracts(short_run_scene):
    epochs = short_run_scene.dataset.epochs
    pipe = FeGutPipeline()
    with pytest.raises(ContractViolation):
        pipe.step(epochs[0])
    with pytest.raises(ColdStartError):
        run_fegut(epochs[1:])
    with pytest.raises(ColdStartError):
        run_baseline_ekf(epochs[1:])
    pipe.initialize(epochs[10])
    with pytest.raises(ContractViolation):
        pipe.step(epochs[0])


def test_baseline_matches_manual_filter(short_run_scene):
    epochs = short_run_scene.dataset.epochs[:35]
    cfg = EkfConfig()
    outputs = run_baseline_ekf(epochs, cfg)
    st = initial_state(epochs[0].t, cold_start(epochs[0]), cfg, Mode.FULL)
    for ep, out in zip(epochs, outputs):
        if ep.t > st.t:
            st = ekf_predict(st, ep.t - st.t, cfg)
        st = (ekf_partial_update if ep.kind == EpochKind.UWB_ONLY else ekf_update)(st, ep, cfg)[0]
        assert np.array_equal(out.r, st.mean[:3]) and out.td == st.mean[11]


def test_baseline_noise_free_zero_offset_small_errors():
    from fegut.config import ExperimentConfig, build_scenario

    cfg = ExperimentConfig.from_dict({
        "scenario": {"trajectory": {"duration": 30.0, "table_rate": 200.0}, "td": 0.0,
                     "noise": {"pseudorange": 0.0, "doppler": 0.0, "uwb": 0.0},
                     "clock": {"bias_psd": 0.0, "drift_psd": 0.0}},
        "estimator": {"noise": {"pseudorange": 0.01, "doppler": 0.001, "uwb": 0.001}},
    })
    sc = build_scenario(cfg, 0)
    outputs = run_baseline_ekf(sc.dataset.epochs, cfg.ekf_config())
    late = [o for o in outputs if o.t >= 10.0]
    err = max(np.linalg.norm(o.r - sc.table.sample(o.t).r) for o in late)
    assert err < 0.01
    assert max(abs(o.td) for o in late) < 1e-3


def test_trace_round_trip(tmp_path, short_run_scene):
    epochs = short_run_scene.dataset.epochs[:30]
    outputs, _ = run_fegut(epochs)
    path = tmp_path / "trace.csv"
    write_trace(path, outputs, short_run_scene.table.frame)
    back = read_trace(path)
    assert len(back) == len(outputs)
    for u, v in zip(outputs, back):
        assert u.t == v.t and np.array_equal(u.r, v.r) and u.td == v.td and u.source == v.source
    path.write_text("t,wrong\n")
    with pytest.raises(DatasetParseError):
        read_trace(path)
