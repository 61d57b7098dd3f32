import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tgcn.metrics import (au_pr, au_roc, au_roc_trapezoid, best_f1, metric_report,
                          sensitivity_at_specificity)

from oracles import ap_sweep, auc_pairs, f1_sweep, sens_at_spec_sweep


def random_set(rng, n):
    labels = (rng.random(n) < rng.uniform(0.2, 0.8)).astype(int)
    labels[0], labels[-1] = 0, 1
    # coarse rounding forces ties
    scores = np.round(rng.standard_normal(n), int(rng.integers(0, 3)))
    return scores, labels


def test_trivial_cases():
    s, y = [0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]
    assert au_roc(s, y) == 1.0 and au_pr(s, y) == 1.0 and best_f1(s, y)[0] == 1.0
    assert sensitivity_at_specificity(s, y, 0.99) == 1.0
    assert au_roc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5
    assert au_pr([0.3, 0.1], [1, 1]) == 1.0
    assert sensitivity_at_specificity([0.9, 0.8, 0.1, 0.2], [0, 0, 1, 1], 0.97) == 0.0
    f1, _ = best_f1([0.5] * 4, [1, 0, 1, 0])
    assert f1 == pytest.approx(2 / 3)


def test_errors():
    with pytest.raises(ValueError):
        au_roc([1, 2], [1, 1])
    with pytest.raises(ValueError):
        au_pr([1, 2], [0, 0])
    with pytest.raises(ValueError):
        best_f1([1, 2], [0, 0])
    with pytest.raises(ValueError):
        au_roc([1, 2, 3], [0, 1])
    with pytest.raises(ValueError):
        au_roc([1, 2], [0, 2])


def test_six_element_pairwise():
    s, y = [0.3, 0.7, 0.7, 0.1, 0.9, 0.3], [0, 1, 0, 0, 1, 1]
    assert au_roc(s, y) == pytest.approx(auc_pairs(s, y), abs=1e-12)
    assert au_pr(s, y) == pytest.approx(ap_sweep(s, y), abs=1e-12)


def test_f1_eight_elements_threshold():
    s = [0.1, 0.4, 0.35, 0.8, 0.8, 0.65, 0.2, 0.9]
    y = [0, 0, 1, 1, 0, 1, 0, 1]
    f1, cut = best_f1(s, y)
    ref_f1, ref_cut = f1_sweep(s, y)
    assert f1 == pytest.approx(ref_f1, abs=1e-12) and cut == pytest.approx(ref_cut, abs=1e-12)


@pytest.mark.parametrize("seed", range(50))
def test_all_metrics_against_sweeps(seed):
    rng = np.random.default_rng(seed)
    for n in (2, 3, 7, 31, 200):
        s, y = random_set(rng, n)
        s_l, y_l = s.tolist(), y.tolist()
        assert abs(au_roc(s, y) - auc_pairs(s_l, y_l)) <= 1e-12
        assert abs(au_roc_trapezoid(s, y) - auc_pairs(s_l, y_l)) <= 1e-12
        assert abs(au_pr(s, y) - ap_sweep(s_l, y_l)) <= 1e-12
        f1, cut = best_f1(s, y)
        rf1, rcut = f1_sweep(s_l, y_l)
        assert abs(f1 - rf1) <= 1e-12 and abs(cut - rcut) <= 1e-12
        for target in (0.97, 0.99):
            assert abs(sensitivity_at_specificity(s, y, target)
                       - sens_at_spec_sweep(s_l, y_l, target)) <= 1e-12


def test_against_sklearn():
    sk = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(7)
    for _ in range(20):
        s, y = random_set(rng, 150)
        assert au_roc(s, y) == pytest.approx(sk.roc_auc_score(y, s), abs=1e-12)
        assert au_pr(s, y) == pytest.approx(sk.average_precision_score(y, s), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-800, 800), st.integers(0, 1)), min_size=2, max_size=60))
def test_properties(pairs):
    # a 1/8 grid keeps the monotone transform below strictly monotone in floating point
    s = np.array([p[0] / 8.0 for p in pairs])
    y = np.array([p[1] for p in pairs])
    if y.min() == y.max():
        return
    auc = au_roc(s, y)
    assert au_roc(np.exp(s / 50.0) * 3 - 1, y) == pytest.approx(auc, abs=1e-12)
    if len(np.unique(s)) == len(s):
        assert au_roc(s, 1 - y) == pytest.approx(1 - auc, abs=1e-12)
    assert sensitivity_at_specificity(s, y, 0.99) <= sensitivity_at_specificity(s, y, 0.97)
    assert 0 <= au_pr(s, y) <= 1


def test_report_single_class():
    rep = metric_report([0.1, 0.5, 0.3], [0, 0, 0])
    assert all(rep[k] is None for k in ("auroc", "aupr", "f1", "sens_at_97", "sens_at_99"))
    rep = metric_report([0.1, 0.5, 0.3], [1, 1, 1])
    assert rep["auroc"] is None and rep["f1"] == 1.0
    rep = metric_report([0.1, 0.5, 0.3, 0.9], [0, 1, 0, 1])
    assert rep["auroc"] == 1.0 and rep["diagnostics"]["n_pos"] == 2
