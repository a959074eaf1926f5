"""
Planning a CNV association study
================================

Imperfect CNV calls cost power.  The inflation factor is how many more
samples a study needs to match error-free calls.  For rare de novo CNVs in
trios, the threshold on the busiest hotspot comes from the maximum of k
Poisson counts.
"""

from cnvgwas.association import ErrorModel, inflation_factor, table1_report
from cnvgwas.design import DesignScenario, case_control_sample_size, critical_value, denovo_power, table2_report

f, r2 = inflation_factor(0.05, ErrorModel(p_call_given_minor=0.8, p_call_given_major=0.01))
print(f"80% sensitivity, 1% false calls, CNV frequency 5%: IF {f:.2f} (like tagging at r^2 {r2:.2f})")
print(table1_report().to_tsv())

s = DesignScenario(k=500, n=1000, p_case=0.005)
cv = critical_value(s)
print(f"k=500 hotspots, 1000 trios: call a hotspot at >= {cv} events; power {denovo_power(s, cv):.2f}")
print(table2_report().to_tsv())

for p in (0.01, 0.005):
    print(f"case-control, carrier rate {p}: {case_control_sample_size(p)} samples in total")
