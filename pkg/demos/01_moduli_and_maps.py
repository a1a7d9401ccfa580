"""Moduli of continuity and the inverse-branch contractions of the built-in maps."""
import numpy as np

from rpflab import choose_r0, eval_modulus, half_ratio, k_fold, pm_log, pomeau_manneville
from rpflab import verify_branch_contraction

for alpha, beta in [(1.0, 0.0), (0.5, 0.0), (0.0, 2.0), (0.2, 1.0)]:
    w = choose_r0(alpha, beta)
    r = np.array([1e-6, 1e-3, 0.1, 0.5])
    print(f"omega(alpha={alpha}, beta={beta}) r0={w.r0:.3g} values={eval_modulus(w, r)}"
          f" half_ratio={half_ratio(w) if alpha else float('nan'):.4f}")

maps = {"pm(0.5)": pomeau_manneville(0.5), "pm(1)": pomeau_manneville(1.0),
        "pm_log(1)": pm_log(1.0), "k_fold(3)": k_fold(3)}
for label, m in maps.items():
    rep = verify_branch_contraction(m)
    c = m.contraction()
    print(f"{label:>10}: contraction {c.form} {c.params}"
          f" verified={rep.passed} c(0.1)={float(c(0.1)):.5f}")
