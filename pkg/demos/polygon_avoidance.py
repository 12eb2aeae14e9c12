"""
Moving a square past adversarial obstacles
===========================================

The leader shifts a square to the right.  Each obstacle is steered by an
adversary that tries to shrink the gap, and an expansion node measures that
gap as the smallest uniform growth at which the two shapes touch.
"""
import sys

import numpy as np

from qpnet.equilibrium import find_equilibrium, verify_equilibrium
from qpnet.experiments import (avoidance_initial_point, avoidance_layout, build_avoidance_qpn,
                               default_avoidance_instance)

M = int(sys.argv[1]) if len(sys.argv) > 1 else 2
inst = default_avoidance_instance(M)
net = build_avoidance_qpn(inst)
lay = avoidance_layout(M)
print("layers:", [[i + 1 for i in layer] for layer in net.depth_mapping.layers])

x0 = avoidance_initial_point(inst)
x, trace = find_equilibrium(net, x0)
print("termination:", trace.termination.value, "after", len(trace.iterates), "iterates")

# the leader's move, each obstacle's move and the remaining clearance
print("leader delta:", x[lay["u_e"]])
for i in range(M):
    print(f"obstacle {i + 1}: delta {x[lay[f'u_o{i}']]}, clearance {x[lay[f'eps{i}']][0]:.4f}")

print("verified:", verify_equilibrium(net, x).ok)

# the iterates trace the leader's path; handy for external plotting
path = np.array([np.asarray(p)[lay["u_e"]] for p in trace.iterates])
print(np.unique(path.round(6), axis=0))
