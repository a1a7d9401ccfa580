"""Series flatness certificates on both sides of the alpha_A = q boundary for PM(q)."""
from rpflab import choose_r0, flatness_series, pomeau_manneville

m = pomeau_manneville(0.5)
target = choose_r0(0.2, 0.0)
for alpha_a in (1.0, 0.8, 0.6, 0.5, 0.4):
    cert = flatness_series(m, choose_r0(alpha_a, 0.0), target)
    print(f"alpha_A={alpha_a}: {cert.status:>12}  constant={cert.constant:.4g}")
