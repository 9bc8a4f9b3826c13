"""
One graph for many executions
=============================

Lasso detection merges the round-by-round states of every execution in a
campaign into one graph keyed by state hash.  A hot cycle there is a loop
the system could repeat forever without progress.
"""
import networkx as nx

from hotstuff_liveness.campaign import CampaignConfig, run_campaign
from hotstuff_liveness.scenarios import fixture_deadlock

report = run_campaign(CampaignConfig("2phase", scenario_count=300, extra=(fixture_deadlock(),), time_bounds={}))
g = report.graph
print(f"{len(g)} distinct states, {g.edge_count} transitions, "
      f"{sum(g.hot_flags.values())} hot states")

###############################################################################
# Hot states only, as a networkx graph.  Self-loops are the common case:
# a deadlocked system reproduces the same partial state round after round.

hot = g.to_networkx(hot_only=True)
print("hot self-loops:", nx.number_of_selfloops(hot))
for v in report.lassos[:5]:
    print("lasso through", [h[:10] for h in v.witness])

###############################################################################
# The plain-text export is what ``hotstuff-liveness replay --graph`` reads.

print("".join(g.export().splitlines(keepends=True)[:5]))
print("flagged by lasso:", report.row("Lasso").flagged)
