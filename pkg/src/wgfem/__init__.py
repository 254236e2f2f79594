"""Weak Galerkin and HDG finite element methods on polygonal meshes.

Solves -div(a grad u) = f on a polygon with u = 0 on the boundary using the
primal, primal-mixed, mixed and hybridized mixed weak Galerkin methods and
two HDG formulations, with tools to compare their discrete solutions.
"""
from .mesh import MeshError, PolygonalMesh, build_mesh, generate_grid, generate_polygonal, load_mesh, save_mesh
from .polybasis import CoefficientField
from .schemes import (
    SCHEMES, AssemblyError, SchemeConfig, SolverError, assemble, condense, run_scheme, solve,
)
from .verify import (
    ManufacturedProblem, check_equivalence, check_wg_rewrite, get_problem, paper_example_8, run_convergence,
    single_element_example,
)

__all__ = [
    "MeshError", "PolygonalMesh", "build_mesh", "generate_grid", "generate_polygonal", "load_mesh",
    "save_mesh", "CoefficientField", "SCHEMES", "AssemblyError", "SchemeConfig", "SolverError",
    "assemble", "condense", "run_scheme", "solve", "ManufacturedProblem", "check_equivalence",
    "check_wg_rewrite", "get_problem", "paper_example_8", "run_convergence",
    "single_element_example",
]
__version__ = "0.1.0"
