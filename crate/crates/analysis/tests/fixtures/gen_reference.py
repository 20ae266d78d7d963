"""Regenerates reference.json from scipy / statsmodels / pingouin.

    python3 gen_reference.py > reference.json
"""
import itertools
import json
import sys

import numpy as np
import pandas as pd
import pingouin as pg
from scipy import stats
from statsmodels.stats.anova import AnovaRM


def long_form(data):
    rows = []
    n, a, b = data.shape
    for s, i, j in itertools.product(range(n), range(a), range(b)):
        rows.append({"s": s, "A": f"a{i}", "B": f"b{j}", "y": float(data[s, i, j])})
    return pd.DataFrame(rows)


def mauchly_out(sp, extra=None):
    # pingouin adds a second-order (omega2) term to the p-value when there
    # are 3+ contrasts; the plain chi-square tail is what we report.
    out = {"W": float(sp.W), "chi2": float(sp.chi2), "dof": float(sp.dof),
           "p": float(stats.chi2.sf(sp.chi2, sp.dof)), "p_pingouin": float(sp.pval)}
    out.update(extra or {})
    return out


def rm_case(name, data):
    df = long_form(data)
    n, a, b = data.shape
    sm = AnovaRM(df, "y", "s", within=["A", "B"]).fit().anova_table
    pgt = pg.rm_anova(df, dv="y", within=["A", "B"], subject="s", detailed=True, effsize="np2")
    out = {"name": name, "data": data.tolist(), "effects": {}}
    for key, label in (("A", "A"), ("B", "B"), ("AB", "A:B")):
        sm_row = sm.loc[label]
        pg_row = pgt[pgt["Source"] == ("A * B" if key == "AB" else key)].iloc[0]
        out["effects"][key] = {
            "F": float(sm_row["F Value"]),
            "df1": float(sm_row["Num DF"]),
            "df2": float(sm_row["Den DF"]),
            "p": float(sm_row["Pr > F"]),
            "ss": float(pg_row["SS"]),
            "np2": float(pg_row["np2"]),
        }
    # sphericity on marginal means (A averaged over B) and the interaction
    marg = df.groupby(["s", "A"], as_index=False)["y"].mean()
    if a > 2:
        sp = pg.sphericity(marg, dv="y", within="A", subject="s")
        gg = pg.epsilon(marg, dv="y", within="A", subject="s", correction="gg")
        out["mauchly_A"] = mauchly_out(sp, {"gg_epsilon": float(gg)})
    if b == 2 and a > 2:
        sp = pg.sphericity(df, dv="y", within=["A", "B"], subject="s")
        out["mauchly_AB"] = mauchly_out(sp)
    # Bonferroni pairwise paired t on marginal means of A
    pairs = []
    levels = [f"a{i}" for i in range(a)]
    m = len(levels) * (len(levels) - 1) // 2
    wide = marg.pivot(index="s", columns="A", values="y")
    for x, y in itertools.combinations(levels, 2):
        t = stats.ttest_rel(wide[x], wide[y])
        pairs.append({"i": int(x[1:]), "j": int(y[1:]), "t": float(t.statistic), "p": float(t.pvalue), "p_bonf": float(min(1.0, t.pvalue * m))})
    pw = pg.pairwise_tests(df, dv="y", within=["A", "B"], subject="s", padjust="bonf")
    pw = pw[pw["Contrast"] == "A"]
    for row, ref in zip(pw.itertuples(), pairs):
        assert abs(row._asdict()["p_corr"] - ref["p_bonf"]) < 1e-12, (row, ref)
    out["bonferroni_A"] = pairs
    return out


def t_case(name, x, y):
    pooled = stats.ttest_ind(x, y, equal_var=True)
    welch = stats.ttest_ind(x, y, equal_var=False)
    return {
        "name": name, "x": list(map(float, x)), "y": list(map(float, y)),
        "pooled": {"t": float(pooled.statistic), "df": float(pooled.df), "p": float(pooled.pvalue)},
        "welch": {"t": float(welch.statistic), "df": float(welch.df), "p": float(welch.pvalue)},
    }


def w_case(name, x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    r = stats.wilcoxon(x, y, zero_method="wilcox", correction=False, method="approx")
    d = x - y
    d = d[d != 0]
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    n = len(d)
    # scipy reports z for min(W+, W-); sign it by W+ relative to its mean
    z = abs(float(r.zstatistic)) * (1 if w_plus > n * (n + 1) / 4 else -1)
    return {"name": name, "x": x.tolist(), "y": y.tolist(), "w_plus": w_plus, "n": n, "z": z, "p": float(r.pvalue)}


rng = np.random.default_rng(20240607)
rm = []
d = rng.normal(40, 12, size=(12, 3, 2))
d[:, 1, :] += 8
d += rng.normal(0, 6, size=(12, 1, 1))
rm.append(rm_case("twelve_by_3x2", np.round(d, 2)))
d = rng.integers(0, 10, size=(6, 3, 2)).astype(float)
rm.append(rm_case("six_by_3x2_integers", d))
d = rng.normal(0, 1, size=(9, 4, 2))
d[:, :, 1] += 0.7
d[:, 3, :] -= 1.0
rm.append(rm_case("nine_by_4x2", np.round(d, 3)))
d = rng.gamma(2.0, 3.0, size=(8, 3, 3))
rm.append(rm_case("eight_by_3x3", np.round(d, 3)))

tt = [
    t_case("paper_like_rates", [33.1, 41.0, 12.5, 58.2, 27.7, 36.0, 19.4, 44.8], [49.9, 61.2, 35.5, 70.1, 38.4, 52.3, 44.0, 57.7]),
    t_case("unequal_sizes", rng.normal(5, 2, 7).round(3).tolist(), rng.normal(6.5, 4, 11).round(3).tolist()),
    t_case("integers", [3, 4, 4, 5, 7, 2, 6], [1, 2, 2, 3, 3, 4]),
]

wx = [
    w_case("eight_ratings", [5, 6, 4, 7, 6, 5, 7, 6], [3, 4, 4, 5, 2, 3, 6, 4]),
    w_case("ties_and_zero", [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12], [2, 2, 1, 2, 7, 3, 5, 6, 4, 13, 8, 8]),
    w_case("continuous", rng.normal(0, 1, 15).round(4).tolist(), rng.normal(0.6, 1, 15).round(4).tolist()),
]

json.dump({"generator": "scipy %s, statsmodels, pingouin %s" % (stats.__name__ and __import__("scipy").__version__, pg.__version__),
           "rm_anova": rm, "unpaired_t": tt, "wilcoxon": wx}, sys.stdout, indent=1)
