"""Ratio of the radial integral to its claimed profile, with band widths."""
from vlasovlab.verify import appendix_b_check

for alpha, beta, n in ((3, 2, 2), (3, 1, 2), (4, 2, 3)):
    rep = appendix_b_check(alpha, beta, n)
    print(f"(alpha, beta, n) = ({alpha}, {beta}, {n})")
    for t, r in list(zip(rep.t, rep.ratio))[::5]:
        print(f"  t = {t:9.2f}   ratio = {r:.4f}")
    print(f"  band on [1, 1e3] = {rep.band:.3f}, on [10, 1e3] = {rep.late_band:.3f}")
