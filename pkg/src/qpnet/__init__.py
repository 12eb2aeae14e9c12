"""Equilibrium search for networks of quadratic programs."""
from .polyhedra import (EQ, GE, GT, Halfspace, Kind, NncPolyhedron, PolyUnion, VRep, closure,
                        complement_of_closure, contains, hrep_from_vrep, intersect,
                        intersect_unions, project, vertex_enumerate)
from .qp_kernel import QpSolveResult, QpStatus, QuadCost, is_empty, nnls_certificate, solve_qp
from .lmcp import Lmcp, LmcpSolution, LmcpStatus, solve_lmcp
from .network import DepthMapping, QpNetwork, QpNode, depth_mapping, descendant_sets, validate
from .solution_graph import (LocalGraph, Verdict, check_qp_solution, local_node_graph,
                             local_qp_graph)
from .equilibrium import (EquilibriumTrace, LayerNashProblem, SearchOptions, Termination,
                          assemble_lmcp, find_equilibrium, solve_layer_nash, verify_equilibrium)

__version__ = "0.1.0"
