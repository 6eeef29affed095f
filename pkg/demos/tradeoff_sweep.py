# Sweep the ball radius, draw the accuracy/DCA trade-off and pick a model
# with the 95%-of-scratch-accuracy rule.
from fairdro import DEFAULT_RHO_GRID, TrainConfig, pareto_envelope, select_model, sweep

seeds = (0, 1, 2, 3)
scratch = sweep(TrainConfig(variant="scratch"), None, seeds).entries[0].mean
print(f"scratch: acc {scratch.balanced_accuracy:.4f}  dca {scratch.dca:.4f}")

results = {}
for variant in ["fairdro", "fairdro_no_classwise", "fairdro_nonneg"]:
    results[variant] = sweep(TrainConfig(variant=variant), DEFAULT_RHO_GRID, seeds)
for variant, lams in [("var_reg", [0.1, 1, 10, 100]), ("gap_reg", [0.1, 1, 10, 100])]:
    results[variant] = sweep(TrainConfig(variant=variant), lams, seeds)

for variant, res in results.items():
    print(variant)
    for e in res.entries:
        print(f"  {e.hyperparameter:9.3g}  acc {e.mean.balanced_accuracy:.4f} +- {e.std['balanced_acc']:.4f}"
              f"  dca {e.mean.dca:.4f} +- {e.std['dca']:.4f}")
    frontier, hull = pareto_envelope([(e.mean.dca, e.mean.balanced_accuracy) for e in res.entries])
    sel = select_model(res, scratch.balanced_accuracy)
    print("  hull:", [(round(d, 4), round(a, 4)) for d, a in hull])
    print(f"  selected {sel.entry.hyperparameter:.3g} (feasible={sel.feasible}):"
          f" acc {sel.entry.mean.balanced_accuracy:.4f} dca {sel.entry.mean.dca:.4f}")
