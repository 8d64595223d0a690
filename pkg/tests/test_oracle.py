import math

import numpy as np
import pytest

from anadesign.dataset import load_jsonl, save_jsonl
from anadesign.oracle import ORACLE_CODES, generate_dataset, oracle_families
from anadesign.perf import METRIC_INDEX
from anadesign.topology import load_registry


@pytest.fixture(scope="module")
def families():
    return oracle_families(load_registry())


def test_three_families_registered(families):
    assert set(families) == set(ORACLE_CODES) == {"rc_amp", "lc_osc", "rdiv_att"}


def test_rc_amp_gain(families):
    pv = families["rc_amp"].eval({"W": 10e-6, "R": 1000.0, "C": 2e-13})
    assert pv.values[METRIC_INDEX["VGain"]] == pytest.approx(20.0)


def test_rc_amp_bandwidth(families):
    pv = families["rc_amp"].eval({"W": 10e-6, "R": 1000.0, "C": 159.155e-15})
    assert pv.values[METRIC_INDEX["BW"]] == pytest.approx(1.0e9, rel=1e-4)


def test_lc_osc_frequency(families):
    pv = families["lc_osc"].eval({"L": 1e-9, "C": 1e-12, "W": 10e-6})
    assert pv.values[METRIC_INDEX["OscF"]] == pytest.approx(5.0329e9, rel=1e-4)


def test_rdiv_attenuation(families):
    pv = families["rdiv_att"].eval({"R1": 1000.0, "R2": 1000.0})
    assert pv.values[METRIC_INDEX["VGain"]] == pytest.approx(20 * math.log10(0.5))


def test_out_of_bounds_rejected(families):
    with pytest.raises(ValueError, match="outside"):
        families["rc_amp"].eval({"W": 1.0, "R": 1000.0, "C": 2e-13})


def test_masks_constant_and_match_spec(families):
    for fam in families.values():
        recs = generate_dataset([fam], 20, seed=0)
        masks = {tuple(r.performance().mask) for r in recs}
        assert len(masks) == 1
        assert masks.pop() == tuple(fam.spec.metric_mask)


def test_dataset_deterministic_bytes(tmp_path, families):
    fams = list(families.values())
    a = generate_dataset(fams, 50, seed=9)
    b = generate_dataset(fams, 50, seed=9)
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_jsonl(a, pa)
    save_jsonl(b, pb)
    assert pa.read_bytes() == pb.read_bytes()
    c = generate_dataset(fams, 50, seed=10)
    assert a[0].params != c[0].params


def test_records_reevaluate_exactly(families):
    recs = generate_dataset(list(families.values()), 100, seed=3)
    for rec in recs:
        pv = families[rec.topology_id].eval(rec.params)
        stored = rec.performance()
        np.testing.assert_array_equal(pv.values, stored.values)
        np.testing.assert_array_equal(pv.mask, stored.mask)


def test_jsonl_roundtrip(tmp_path, families):
    recs = generate_dataset([families["rc_amp"]], 10, seed=1)
    path = tmp_path / "data.jsonl"
    save_jsonl(recs, path)
    again = load_jsonl(path)
    assert len(again) == 10
    assert again[0].params == recs[0].params
    assert again[0].metrics == {k: recs[0].metrics.get(k) for k in again[0].metrics}


def test_metrics_smooth_on_box(families):
    # central-difference smoothness scan: no jumps or NaNs on the open box
    rng = np.random.default_rng(4)
    for fam in families.values():
        lo, hi = fam.spec.bounds()
        for _ in range(50):
            x = rng.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo))
            base = fam.eval(dict(zip(fam.spec.param_names, x))).values
            assert np.all(np.isfinite(base))
            for j, name in enumerate(fam.spec.param_names):
                h = 1e-6 * (hi[j] - lo[j])
                xp, xm = x.copy(), x.copy()
                xp[j] += h
                xm[j] -= h
                fp = fam.eval(dict(zip(fam.spec.param_names, xp))).values
                fm = fam.eval(dict(zip(fam.spec.param_names, xm))).values
                deriv = (fp - fm) / (2 * h)
                assert np.all(np.isfinite(deriv))
