"""Reference elements, quadrature and degree-of-freedom maps."""
from .dofmap import DofMap, build_dofmap, interior_dofs_of_coarse_cell
from .elements import ElementError, ElementSpec, eval_basis, reference_element
from .quadrature import QuadratureRule, simplex_rule

__all__ = ["DofMap", "build_dofmap", "interior_dofs_of_coarse_cell", "ElementError",
           "ElementSpec", "eval_basis", "reference_element", "QuadratureRule", "simplex_rule"]
