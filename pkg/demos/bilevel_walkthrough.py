"""
A two-node leader/follower network, step by step
=================================================

The leader owns x3 and wants it close to x1, the follower owns x4 and wants
it close to x3 while staying nonnegative.  x1 and x2 belong to nobody.
"""
import numpy as np

from qpnet.equilibrium import find_equilibrium
from qpnet.experiments import build_bilevel_example
from qpnet.problem_file import trace_lines
from qpnet.solution_graph import check_qp_solution, local_node_graph

net = build_bilevel_example()
print(net.N, "nodes on", net.n, "variables; parameters:", [i + 1 for i in net.parameter_indices])

# Start away from equilibrium and let the search run.
x, trace = find_equilibrium(net, [0, 0, -3, 4.0])
for line in trace_lines(trace):
    print(line)
print("termination:", trace.termination.value, "at", x)

# At the intermediate point the follower is optimal with its bound active.
follower = net.nodes[1]
chk = check_qp_solution(follower.cost, follower.feasible, net.controlled[1], [0, 0, -3, 0.0])
print("follower verdict:", chk.verdict.value, "multiplier:", chk.multipliers)

# At the origin the follower's bound is weakly active, so its local
# graph splits in two, and the leader inherits three pieces.
origin = np.zeros(4)
child = local_node_graph(follower.cost, follower.feasible, net.controlled[1], origin, [], node=1)
leader = net.nodes[0]
top = local_node_graph(leader.cost, leader.feasible, net.controlled[0], origin, [child.pieces], node=0)
for name, G in (("follower", child), ("leader", top)):
    print(f"{name}: {len(G)} pieces")
    for P in G.pieces:
        print(P.to_text())
        print()
