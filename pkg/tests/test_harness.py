import json

import numpy as np
import pytest

from mdncontrol import harness, mdn, plants
from mdncontrol.config import RunConfig
from mdncontrol.dual_models import output_pdf
from mdncontrol.trace import read_trace, summarize, write_trace


def small(example=1, **kw):
    base = dict(example=example, seed=3, pretrain_length=600, pretrain_iters=60,
                run_length=60, window=30, stability_period=5)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module", params=[1, 2])
def setup(request):
    cfg = small(request.param)
    return cfg, harness.pretrain(cfg)


def output_noise_sd(cfg):
    nm = harness.noise_mixture(cfg).as_mixture()
    sd = float(np.sqrt(mdn.moments(nm)[1]))
    return sd if cfg.example == 1 else 29 / 40 * sd


def test_pretrain_metrics(setup):
    cfg, models = setup
    m = models.metrics
    assert m["nll_final"] < m["nll_initial"]
    assert m["rmse_heldout"] < 3 * output_noise_sd(cfg)
    assert len(models.replay["X"]) == cfg.buffer_size


def test_snapshot_round_trip(setup, tmp_path):
    cfg, models = setup
    harness.save_models(models, tmp_path)
    back = harness.load_models(cfg, tmp_path)
    x = np.array([0.3, 0.1])
    assert output_pdf(back.fm, x[:1], x[1]).mu.tobytes() == output_pdf(models.fm, x[:1], x[1]).mu.tobytes()
    assert back.ic.net.params.tobytes() == models.ic.net.params.tobytes()
    assert back.bp.controller.params.tobytes() == models.bp.controller.params.tobytes()
    assert back.metrics == pytest.approx(models.metrics)


def test_snapshot_tag_mismatch(setup, tmp_path):
    cfg, models = setup
    harness.save_models(models, tmp_path)
    (tmp_path / "forward.bin").write_bytes((tmp_path / "controller.bin").read_bytes())
    with pytest.raises(ValueError):
        harness.load_models(cfg, tmp_path)


def test_run_trace_invariants(setup):
    cfg, models = setup
    for method in ("mdn", "baseline"):
        t = harness.run_online(cfg, models, method)
        assert t.failure is None and len(t) == cfg.run_length
        assert np.array_equal(t.column("e"), t.column("y") - t.column("yd"))
        assert np.array_equal(t.column("k"), np.arange(cfg.run_length))
        assert np.all(np.abs(t.column("u")) <= cfg.u_max)
    t = harness.run_online(cfg, models, "mdn")
    checked = ~np.isnan(t.column("spectral_radius"))
    assert 0 < checked.sum() <= cfg.run_length // cfg.stability_period + 1


def test_online_run_does_not_mutate_snapshot(setup):
    cfg, models = setup
    before = models.fm.net.params.copy()
    harness.run_online(cfg, models, "mdn")
    assert np.array_equal(before, models.fm.net.params)


def test_no_lookahead(setup):
    """Perturbing noise and reference from step K on leaves rows before K unchanged."""
    cfg, models = setup
    K = 25
    s = harness.run_streams(cfg)
    eps2, r2 = s.eps.copy(), s.r.copy()
    eps2[K:] += 0.7
    r2[K:] -= 0.4
    for method in ("mdn", "baseline"):
        a = harness.run_online(cfg, models, method, s)
        b = harness.run_online(cfg, models, method, harness.Streams(eps2, r2))
        assert a.rows[:K] == b.rows[:K]
        assert a.rows[K] != b.rows[K]


def test_compare_outputs_and_summary(setup, tmp_path):
    cfg, models = setup
    cmp = harness.compare(cfg, models, tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    for method in ("mdn", "baseline"):
        t = read_trace(tmp_path / f"trace_{method}.csv")
        assert summarize(t, cfg.window) == summary[method]
    # identical streams: both runs see the same reference
    assert np.array_equal(cmp.traces["mdn"].column("yd"), cmp.traces["baseline"].column("yd"))


def test_compare_deterministic(tmp_path):
    cfg = small(2, run_length=40)
    harness.compare(cfg, out_dir=tmp_path / "a")
    harness.compare(cfg, out_dir=tmp_path / "b")
    for name in ("trace_mdn.csv", "trace_baseline.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_nan_halts_with_partial_trace(setup, tmp_path):
    cfg, models = setup
    s = harness.run_streams(cfg)
    eps = s.eps.copy()
    eps[10] = np.nan
    t = harness.run_online(cfg, models, "baseline", harness.Streams(eps, s.r))
    assert t.failure is not None and len(t) == 10
    path = write_trace(tmp_path / "t.csv", t)
    assert path.read_text().splitlines()[-1].startswith("# halted")
    assert read_trace(path).failure == t.failure


def test_example_streams():
    cfg = small(1)
    s = harness.run_streams(cfg)
    assert s.r.shape == (cfg.run_length,) and s.eps.size >= cfg.run_length
    assert harness.EXAMPLES[1].delay == 0 and harness.EXAMPLES[2].delay == 1
    assert harness.noise_mixture(cfg) == plants.EXAMPLE1_NOISE
    with pytest.raises(ValueError):
        harness.make_policy("pid", None, cfg)
