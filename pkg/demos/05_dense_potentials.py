"""Operator decay for a dense family of smooth potentials on the tripling map."""
import numpy as np

from rpflab import GridFunction, fit_decay, k_fold, measure_operator_decay, rpf_triple

rng = np.random.default_rng(3)
m = k_fold(3)
n = 2048
f = GridFunction.from_callable(lambda x: np.cos(2 * np.pi * x) + 0.5 * np.sin(6 * np.pi * x), n)
for i in range(4):
    c = rng.normal(scale=0.3, size=3)
    A = GridFunction.from_callable(
        lambda x, c=c: sum(ck * np.cos(2 * np.pi * (k + 1) * x) for k, ck in enumerate(c)), n)
    d = rpf_triple(m, A)
    tr = measure_operator_decay(m, d, f, t_max=40)
    fit = fit_decay(tr, "exponential")
    print(f"potential {i}: coefficients {np.round(c, 3)}  1-delta={1 - fit.params['delta']:.3f}")
