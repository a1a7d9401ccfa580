"""Decay of W_omega between pushed-forward Dirac masses under the doubling map."""
from rpflab import GridFunction, choose_r0, k_fold, measure_wasserstein_decays
from rpflab import rpf_triple

m = k_fold(2)
A = GridFunction.from_callable(lambda x: 0.0 * x, 1024)
d = rpf_triple(m, A)
spec = choose_r0(0.5, 0.0)
for tr in measure_wasserstein_decays(m, d.normalized_potential, [(0.1, 0.3), (0.2, 0.7)],
                                     spec, t_max=30):
    steps = tr.values[1:8] / tr.values[:7]
    print(f"pair ({tr.meta['x']}, {tr.meta['y']}): W_0={tr.values[0]:.4f}"
          f" W_5={tr.values[5]:.3e}  one-step ratios {steps.round(3)}")
