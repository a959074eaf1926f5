"""
Finding common deletions from genotypes alone
=============================================

A hemizygous deletion makes a heterozygote look homozygous, so a deleted
region shows a run of markers with too few heterozygotes.  Parents and
children also disagree in a tell-tale way when one parent carries the
deletion.
"""

import numpy as np

from cnvgwas.core import make_panel
from cnvgwas.genotype_scan import (
    deletion_genotype_freq,
    estimate_deletion_freq,
    nmi_flags,
    scan_hwe,
    scan_nmi_runs,
)
from cnvgwas.simulator import DeletionModel, simulate_population, simulate_trios

panel = make_panel(2000, n_chrom=2, maf=(0.1, 0.5), seed=1)
deletions = [DeletionModel(300, 320, 0.2), DeletionModel(1500, 1530, 0.1)]

# With alleles A, B, D at frequencies p, q, d the observed genotype classes
# are a closed form, and d comes back exactly from the observed counts.
freqs = deletion_genotype_freq(0.5, 0.3, 0.2)
print("AA AB BB:", np.round(freqs, 4), "-> d =", round(estimate_deletion_freq(*freqs), 6))

# Population scan: windows rich in homozygote-excess markers.
pop = simulate_population(panel, deletions, n_samples=1000, seed=2)
for r in scan_hwe(pop.genotypes):
    print(f"HWE region markers {r.start}-{r.end}  d_hat {r.d_hat:.3f}  ({r.n_significant} significant)")

# Family scan: runs of non-Mendelian inheritance in the children.
fam = simulate_trios(panel, deletions, n_trios=300, seed=3)
calls = scan_nmi_runs(nmi_flags(fam.genotypes, fam.trios), panel)
print(f"{len(calls)} NMI runs; first few:")
for c in calls[:5]:
    print(f"  {c.sample_id}: markers {c.start}-{c.end}  confidence {c.confidence:.2f}")
