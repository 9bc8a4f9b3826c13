"""
Temperature, lasso and time bounds side by side
===============================================

Runs one campaign per protocol variant and prints the report tables.
Pass a scenario count to go bigger: ``python3 demos/campaign_tables.py 1000``.
"""
import sys

from hotstuff_liveness.campaign import CampaignConfig, calibrate, run_campaign

count = int(sys.argv[1]) if len(sys.argv) > 1 else 200

###############################################################################
# Time bounds come from failure-free runs.  Every failure-free view takes
# the same number of message hops, so the spread is zero and the three
# bounds coincide.

for kind in ("hotstuff", "2phase", "sync"):
    c = calibrate(kind, rounds=10, count=10)
    print(f"{kind:>8}: T_mean={c.mean:.0f} ms T_std={c.std:.0f} ms -> {c.bounds}")
print()

###############################################################################
# Basic HotStuff: temperature and lasso stay silent, the time bound flags
# nearly everything and all of it is a false positive.

print(run_campaign(CampaignConfig("hotstuff", scenario_count=count)).to_table())

###############################################################################
# 2-Phase HotStuff over 20 rounds, three temperature thresholds.

print(run_campaign(CampaignConfig("2phase", scenario_count=count, rounds=20, thresholds=(5, 10, 15))).to_table())

###############################################################################
# Early Sync HotStuff with delay injection: agreement breaks often, and a
# few runs also deadlock.

report = run_campaign(CampaignConfig("sync", scenario_count=count))
print(report.to_table())
print(report.to_csv())
