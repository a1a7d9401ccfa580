"""Pressure, eigenfunction range and invariance residuals across the PM family."""
import numpy as np

from rpflab import GridFunction, circle_distance, pomeau_manneville, rpf_triple

n = 4096
for q in (0.25, 0.5, 0.75):
    m = pomeau_manneville(q)
    A = GridFunction.from_callable(lambda x: 0.3 * circle_distance(x, 0.5) ** 0.5, n)
    d = rpf_triple(m, A)
    print(f"q={q}: log rho={np.log(d.rho):.6f}  h in [{d.diagnostics['h_min']:.3f},"
          f" {d.diagnostics['h_max']:.3f}]  residuals {d.diagnostics['eigen_residual']:.1e}"
          f" / {d.diagnostics['normalized_residual']:.1e}  atoms {d.mu.positions.size}")
