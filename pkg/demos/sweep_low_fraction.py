"""
How much of the spectrum belongs in the low branch
==================================================

Sweeps the fraction of eigenvectors assigned to the low-frequency branch
for the exact variant. The eigendecomposition is computed once and reused
for every fraction.
"""

from spgat.graph import sbm_dataset
from spgat.model import ModelConfig
from spgat.train import sweep_csv, sweep_d

ds = sbm_dataset([50, 50], p_in=0.2, p_out=0.01, seed=7)
rows = sweep_d(ModelConfig(), ds, [0.02, 0.05, 0.1, 0.3, 0.5, 0.9], seeds=range(3))
for r in rows:
    print(f"fraction {r.fraction:<5} d={r.d:<3} accuracy {r.mean:.3f} +/- {r.std:.3f}")

###############################################################################
# The CSV written by ``spgat sweep-d`` has the same content:

print(sweep_csv(rows))
