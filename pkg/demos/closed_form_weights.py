# Worst-case group weights over a chi-square ball, closed form vs brute force.
import numpy as np

from fairdro import best_response, best_response_nonneg, chi2_divergence, oracle_max, worst_case_objective

np.set_printoptions(precision=4, suppress=True)

# zero-one losses of three groups within one class
losses = np.array([0.30, 0.10, 0.05])

for rho in [0.1, 1.0, 4.0]:
    q = best_response(losses, rho)
    q_grid, v_grid = oracle_max(losses, rho)
    print(f"rho={rho:4}  q={q}  chi2={chi2_divergence(q):.4f}")
    print(f"          closed-form value {q @ losses:.6f}, mean+sqrt(rho*var) {worst_case_objective(losses, rho):.6f}, grid {v_grid:.6f}")

# at rho=4 the best group gets a negative weight: its loss is pushed *up*
# in the training objective, which is what drags its accuracy toward the others
q = best_response(losses, 4.0)
print("negative weights:", q[q < 0])

# restricting to q >= 0 clamps those entries and gives a smaller objective
q_pos = best_response_nonneg(losses, 4.0)
print("non-negative variant:", q_pos, "value", round(float(q_pos @ losses), 6))
