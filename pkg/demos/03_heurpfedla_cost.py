# %% [markdown]
# # Retaining top-k layers locally: accuracy vs. down-link cost
#
# With k retained layers, each client keeps the k layers on which it puts
# the most self-weight. The server stops sending those layers, so the
# server-to-client traffic shrinks. The upload still carries the full model.

# %%
import numpy as np

from pfedla.experiments import paired_toy, toy_config
from pfedla.metrics_io import total_cost
from pfedla.orchestrator import run_experiment

rows = []
for k in (0, 1, 2):
    accs, downs, ups = [], [], []
    for seed in (0, 1, 2):
        res = run_experiment(toy_config("heurpfedla", seed, k=k), paired_toy(seed))
        cost = total_cost(res.logs)
        accs.append(res.logs[-1].mean_accuracy)
        downs.append(cost["mbytes_down"])
        ups.append(cost["mbytes_up"])
    rows.append((k, np.mean(accs), np.mean(downs), np.mean(ups)))

print(" k   accuracy   down MB   up MB")
for k, acc, down, up in rows:
    print(f"{k:2d}   {acc:.4f}    {down:7.3f}  {up:7.3f}")

# %% which layers get retained? (seed 0, k = 1, last round)
res = run_experiment(toy_config("heurpfedla", 0, k=1), paired_toy(0))
print(res.logs[-1].retained)
