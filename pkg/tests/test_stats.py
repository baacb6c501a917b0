import itertools

import mpmath
import numpy as np
import pytest
from scipy import stats as sps

from mammopipe.stats import (
    chi2_sf,
    dunn_bonferroni,
    kruskal_wallis,
    midranks,
    normal_sf,
    normal_two_sided_p,
    significance_table,
)

THREE = [[1, 2, 3], [4, 5, 6], [7, 8, 9]]


def dunn_oracle(groups):
    """Tie-corrected Dunn z and Bonferroni p from scipy ranks and normal tail."""
    pooled = np.concatenate(groups)
    ranks = sps.rankdata(pooled)
    n = len(pooled)
    _, t = np.unique(pooled, return_counts=True)
    var = n * (n + 1) / 12 - np.sum(t**3 - t) / (12 * (n - 1))
    bounds = np.cumsum([0] + [len(g) for g in groups])
    means = [ranks[bounds[i] : bounds[i + 1]].mean() for i in range(len(groups))]
    m = len(groups) * (len(groups) - 1) / 2
    out = []
    for i, j in itertools.combinations(range(len(groups)), 2):
        z = (means[i] - means[j]) / np.sqrt(var * (1 / len(groups[i]) + 1 / len(groups[j])))
        out.append((z, min(1.0, 2 * sps.norm.sf(abs(z)) * m)))
    return out


def test_kruskal_wallis_hand_example():
    h, p = kruskal_wallis(THREE)
    assert abs(h - 7.2) <= 1e-9
    assert p == pytest.approx(np.exp(-3.6), rel=1e-12)  # chi2 with 2 dof


def test_kruskal_wallis_identical_and_ties():
    assert kruskal_wallis([[3, 3, 3], [3, 3]]) == (0.0, 1.0)
    h, p = kruskal_wallis([[1, 2, 3], [1, 2, 3]])
    assert h == 0 and p == pytest.approx(1.0)
    # frozen from scipy.stats.kruskal
    h, p = kruskal_wallis([[1, 1, 2], [1, 2, 2]])
    assert h == pytest.approx(0.5555555555555536, rel=1e-12)
    assert p == pytest.approx(0.4560565402502569, rel=1e-9)


def test_kruskal_wallis_errors():
    with pytest.raises(ValueError):
        kruskal_wallis([[1, 2, 3]])
    with pytest.raises(ValueError):
        kruskal_wallis([[1], [2]])


def test_dunn_hand_example():
    pairs = dunn_bonferroni(THREE)
    p02 = pairs[1]
    assert abs(p02.z - (-2.683)) <= 1e-3
    assert p02.p == pytest.approx(0.0073, abs=5e-5)
    assert p02.p_adjusted == pytest.approx(0.0219, abs=5e-5)
    assert p02.significant
    assert not pairs[0].significant and not pairs[2].significant


def test_dunn_identical_and_swapped():
    same = dunn_bonferroni([[1, 2, 3], [1, 2, 3]])[0]
    assert same.z == 0 and same.p_adjusted == 1 and not same.significant
    a = dunn_bonferroni([[1, 5, 2], [7, 3, 9]])[0]
    b = dunn_bonferroni([[7, 3, 9], [1, 5, 2]])[0]
    assert a.z == -b.z and a.p == b.p


def test_random_datasets_match_oracles():
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(2, 6))
        groups = [rng.integers(0, 12, size=int(rng.integers(2, 15))).astype(float) + rng.integers(0, 3)
                  for _ in range(k)]
        h, p = kruskal_wallis(groups)
        ref = sps.kruskal(*groups)
        assert h == pytest.approx(ref.statistic, rel=1e-9, abs=1e-12)
        assert abs(p - ref.pvalue) <= 1e-6
        for d, (z, padj) in zip(dunn_bonferroni(groups), dunn_oracle(groups)):
            assert d.z == pytest.approx(z, rel=1e-9, abs=1e-12)
            assert abs(d.p_adjusted - padj) <= 1e-6
            assert d.p <= d.p_adjusted <= 1


def test_monotone_transform_invariance():
    rng = np.random.default_rng(1)
    groups = [rng.normal(size=8) for _ in range(3)]
    h1, _ = kruskal_wallis(groups)
    h2, _ = kruskal_wallis([np.exp(3 * g) + 7 for g in groups])
    assert h1 == pytest.approx(h2, rel=1e-12)


def test_midranks():
    assert midranks(np.array([10, 20, 10, 30])).tolist() == [1.5, 3, 1.5, 4]


def test_tails_match_high_precision():
    mpmath.mp.dps = 40
    for z in np.linspace(-8, 8, 81):
        ref = float(mpmath.ncdf(-z))
        assert normal_sf(z) == pytest.approx(ref, rel=1e-10)
        assert normal_two_sided_p(z) == pytest.approx(float(2 * mpmath.ncdf(-abs(z))), rel=1e-10)
    for df in range(1, 11):
        for x in [0.01, 0.1, 0.5, 1, 2, 3.5, 5, 7.2, 10, 20, 40, 80, 150]:
            ref = float(mpmath.gammainc(df / 2, x / 2, mpmath.inf, regularized=True))
            assert chi2_sf(x, df) == pytest.approx(ref, rel=1e-10)


def _table(values_by_method):
    return {m: {("iou", "Nipple"): {f"img{i}": v for i, v in enumerate(vals)}}
            for m, vals in values_by_method.items()}


def test_significance_table_cases():
    base = list(np.linspace(0.5, 0.6, 10))
    same = significance_table(_table({m: base for m in "ABCD"}))
    assert same.significant_pairs("iou", "Nipple") == []
    shifted = significance_table(_table({"A": base, "B": [v + 10 for v in base]}))
    assert shifted.significant_pairs("iou", "Nipple") == [("A", "B")]
    # alpha = 1 keeps every pair once the groups are separated enough that p_adj < 1
    spread = {m: [v + 10 * k for v in base] for k, m in enumerate("ABC")}
    allpairs = significance_table(_table(spread), alpha=1.0)
    assert len(allpairs.significant_pairs("iou", "Nipple")) == 3


def test_significance_labels_permute():
    rng = np.random.default_rng(2)
    vals = {m: list(rng.normal(k, 0.3, size=12)) for k, m in enumerate("ABC")}
    fwd = significance_table(_table(vals))
    rev = significance_table(_table(dict(reversed(list(vals.items())))))
    unordered = [{frozenset(p) for p in r.significant_pairs("iou", "Nipple")} for r in (fwd, rev)]
    assert unordered[0] == unordered[1]
    assert fwd.significant_pairs("iou", "Nipple")


def test_significance_table_rejects_misaligned_ids():
    data = _table({"A": [1, 2, 3], "B": [4, 5, 6]})
    data["B"][("iou", "Nipple")]["extra"] = 7
    with pytest.raises(ValueError):
        significance_table(data)
