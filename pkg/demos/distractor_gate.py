"""Why ungated empowerment sets the register and the gated planner inspects.

The register offers 2^m reachable values, which a pure control bonus rewards.
The relevance gate asks whether forcing the register changes what the agent
can learn about Q. It does not, so the register earns no credit.
"""

from bridgegap.bench import distractor_empowerment, make_settable_distractor
from bridgegap.planner import Planner

inst = make_settable_distractor(n=4, m=8)
print(f"register empowerment: {distractor_empowerment(inst):.1f} bits")

p = Planner(inst.model, inst.weights())
root = p.root()
terms = p.potential(root)
gate = terms.gates["D"]
print(f"root potential: ambiguity={terms.ambiguity:.3f} distractor={terms.distractor:.3f}")
print(f"gate on D: open={gate.open} delta_q={gate.delta_q:.3f} delta_r={gate.delta_r:.3f}")

for objective in ("empowerment_ungated", "bgp"):
    res = inst.plan(objective)
    success, residual = inst.evaluate(res)
    print(f"{objective:<20} success {success}  residual {residual:.3f} bits")
