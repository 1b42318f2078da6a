import numpy as np
import pytest

from roughslip import dataset as ds
from roughslip.errors import MetricError
from roughslip.fno import geo_fno_eval
from roughslip.hmm import HmmConfig, make_wall, naive_solution, run_hmm
from roughslip.macro_channel import top_data
from roughslip.metrics import ErrorReport, check_ratio_lemma, check_slip_error_bound, error_family, normalized_error
from roughslip.reference import solve_full
from roughslip.stokes_bie import weighted_inner

# -- normalized error ------------------------------------------------------------------


def test_normalized_error_examples():
    t = 2 * np.pi * np.arange(256) / 256
    v = np.stack([np.cos(t), np.sin(2 * t)], axis=1)
    assert normalized_error(v, v) == 0.0
    assert normalized_error(2 * v, v) == pytest.approx(1.0, abs=1e-15)
    # orthogonal on the curve with equal norm
    w = np.stack([np.sin(t), np.cos(2 * t)], axis=1)
    assert normalized_error(v + w, v) == pytest.approx(1.0, abs=1e-14)


def test_normalized_error_rejects_zero_reference():
    with pytest.raises(MetricError):
        normalized_error(np.ones(8), np.zeros(8))
    with pytest.raises(ValueError):
        normalized_error(np.ones(8), np.ones(9))


# -- error family ----------------------------------------------------------------------


def field(scale=1.0, shift=0.0):
    return lambda p: np.stack([scale * (np.sin(2 * np.pi * p[:, 0]) + p[:, 1]) + shift, 0 * p[:, 0] + 0.1], axis=1)


def test_identical_backends_give_zero_coupling_error():
    rep = error_family({"fno": field(), "bie": field(), "naive": field(1.2), "ref": field(1.1)}, [0.08], 0.16, 0.04)
    assert rep.get("e_cpl", 0.08) == 0.0
    assert rep.get("e_tot", 0.08) == pytest.approx(rep.get("e_mdl", 0.08), abs=1e-15)
    assert rep.gaps == []


def test_naive_equal_to_reference_gives_zero_e_hi():
    rep = error_family({"naive": field(), "ref": field()}, [0.08], 0.16, 0.04)
    assert rep.get("e_hi", 0.08) == 0.0


def test_missing_sources_leave_gaps():
    rep = error_family({"bie": field(), "ref": field(1.1)}, [0.08, 0.16], 0.16, 0.04)
    assert set(rep.gaps) == {"e_cpl", "e_tot", "e_hi"}
    assert rep.get("e_mdl", 0.16) > 0


def test_report_round_trip():
    rep = error_family({"fno": field(1.01), "bie": field(), "naive": field(1.2), "ref": field(1.1)},
                       [0.08, 0.16], 0.16, 0.04, meta={"backend": "bie"})
    back = ErrorReport.from_lines(rep.to_lines())
    assert back.offsets == rep.offsets
    assert back.values == rep.values
    assert all(rep.triangle_ok())


def test_sine_channel_ordering():
    cfg = HmmConfig()
    ref = solve_full(make_wall(cfg), top_data, cfg.epsilon, Nx=128, Ny=256)
    res = run_hmm(cfg)
    offsets = [2 * cfg.epsilon, 4 * cfg.epsilon, 8 * cfg.epsilon]
    rep = error_family({"bie": res.field.velocity, "naive": naive_solution(cfg).velocity, "ref": ref.velocity},
                       offsets, cfg.y0, cfg.epsilon)
    e_hi = rep.values["e_hi"]
    assert e_hi[0] > e_hi[1] > e_hi[2]
    d = offsets[0]
    assert rep.get("e_lo", d) <= rep.get("e_mdl", d) <= rep.get("e_hi", d)


# -- ratio lemma -------------------------------------------------------------------------


def test_ratio_lemma_exact_pair():
    r = check_ratio_lemma(0.0, 0.0, trials=10_000)
    assert r.estimate == 0.0 and r.passed


@pytest.mark.parametrize("d1, d2", [(0.01, 0.01), (0.0, 0.1)])
def test_ratio_lemma_bound(d1, d2):
    r = check_ratio_lemma(d1, d2, 1.0, trials=1_000_000, seed=0)
    assert r.bound == pytest.approx(d1 + d2 + d1 * d2)
    assert r.passed
    assert r.to_dict()["upper99"] <= r.bound


# -- slip error bound ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def held_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("held_out")
    ds.generate_dataset(ds.DatasetConfig(K=20, J=128, seed=21), out)
    return ds.load_dataset(out)[0]


def test_exact_representors_have_zero_slip_error(held_out):
    rep = check_slip_error_bound(lambda s: (s.r1, s.r2), held_out)
    assert rep["mean_slip_error"] == 0.0
    assert rep["passed"]


def test_orthogonal_noise_within_bound(held_out):
    rng = np.random.default_rng(3)

    def noisy(s):
        out = []
        for r in (s.r1, s.r2):
            v = rng.standard_normal(r.shape)
            v -= weighted_inner(s.curve, v, r) / weighted_inner(s.curve, r, r) * r
            out.append(r + 0.01 * np.sqrt(weighted_inner(s.curve, r, r) / weighted_inner(s.curve, v, v)) * v)
        return tuple(out)

    rep = check_slip_error_bound(noisy, held_out, seed=1)
    assert 0 < rep["mean_slip_error"] <= rep["bound"]
    assert rep["delta"] == pytest.approx(0.01, rel=1e-6)
    assert rep["per_sample_fraction"] >= 0.99


@pytest.mark.slow
def test_trained_model_slip_bound(gp_artifacts):
    samples, man = ds.load_dataset(gp_artifacts.path)
    test = [samples[i] for i in man["split"]["test"]]
    model = gp_artifacts.model
    rep = check_slip_error_bound(lambda s: geo_fno_eval(model, s.curve, s.rt1, s.rt2), test)
    print(rep)
    assert rep["per_sample_fraction"] >= 0.99
    assert rep["passed"]
