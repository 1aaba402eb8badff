"""Decay of int f dv/v0 at x = 0 for free massive transport with Gaussian data on H_1."""
import numpy as np

from vlasovlab.kinetic import DistributionField, Law, make_datum
from vlasovlab.verify import average_series, decay_fit

F = DistributionField(make_datum("gaussian-xv", 3), Law.free(1.0), "H1")
times = np.geomspace(1.5, 100.0, 12)
vals = average_series(F, times)
for t, v in zip(times, vals):
    print(f"t = {t:8.3f}   int f dv/v0 = {v:.6e}")

rep = decay_fit(list(zip(times, vals)), window=(20.0, 100.0), predicted=-3)
print(f"fitted exponent on [20, 100]: {rep.exponent:.4f} (predicted -3)")
print(f"normalized sup t^3 * average: {rep.sup_normalized:.4f}")
