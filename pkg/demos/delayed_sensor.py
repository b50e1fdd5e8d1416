"""A sensor that pays off only one step after entering it.

One-step information gain sees zero gain for every first action, so the
lowest-index tie-break decides. The exact planner looks through the delay.
"""

from bridgegap.bench import make_delayed_sensor
from bridgegap.planner import Planner

for stay in (0, 1):
    inst = make_delayed_sensor(4, stay_index=stay)
    p = Planner(inst.model, inst.weights())
    gains, _, _ = p.action_gains(p.root())
    greedy = inst.evaluate(inst.plan("ig_one_step"))
    exact = inst.evaluate(inst.plan("bgp"))
    print(f"stay index {stay}: first-step gains {gains.tolist()}  greedy {greedy}  exact {exact}")
