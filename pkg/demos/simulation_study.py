"""
A small version of the Simulation 1 study
=========================================

Runs every (interference x error dependence) scenario of the calibrated
preset and prints bias, standard deviation, RMSE, power and coverage in
percent. The acceptance suite runs the same study with 2000 replicates;
pass a smaller number on the command line for a quick look::

    python3 demos/simulation_study.py 200
"""

import sys

from hiertmle.simulation import calibrated, replicate, scenarios, true_ate

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
null = len(sys.argv) > 2 and sys.argv[2] == "null"

for cfg in scenarios(calibrated(J=100, seed=1), null_effect=null):
    truth = true_ate(cfg, 10_000)
    report = replicate(cfg, reps, truth=truth)
    print(f"\n{cfg.label}: truth {100 * truth.value:.2f}%")
    print(report.table())
