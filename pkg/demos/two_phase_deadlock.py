"""
The 2-Phase HotStuff deadlock, step by step
===========================================

Four replicas, one of them (index 0) twinned into instances 0A and 0B.
Two rounds of carefully timed partitions leave the correct replicas locked
on two conflicting blocks, after which no leader can gather a quorum.

Run it with ``python3 demos/two_phase_deadlock.py``.
"""
from hotstuff_liveness.campaign import replay
from hotstuff_liveness.monitor import classify_false_positive
from hotstuff_liveness.scenarios import dumps, fixture_deadlock, with_kind

scenario = fixture_deadlock()
print(dumps(scenario))

###############################################################################
# Each line below is one round boundary.  The cells read
# ``replica=prepared/lock/executed`` (digest prefixes).  After round 2 the
# correct replicas hold two conflicting locks and the state stops changing.

result = replay(scenario, temperature=5)
print(result.render())

###############################################################################
# The final locks conflict, so the verdict is a real violation.

print("false positive:", classify_false_positive(result.execution))

###############################################################################
# The same adversary on Basic HotStuff.  Its extra phase means a replica
# only locks once a quorum has already prepared, so conflicting locks never
# form and nothing is flagged.

basic = replay(with_kind(scenario, "hotstuff"), temperature=5)
print(basic.render())
