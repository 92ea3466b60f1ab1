"""P1 finite elements on uniform triangulations of the unit square.

The unit square is split into ``m x m`` squares, each cut into two
triangles by the diagonal from the lower-left to the upper-right
corner.  Homogeneous Dirichlet conditions are eliminated, so the
unknowns are the ``(m-1)^2`` interior nodes; node ``(i, j)`` sits at
``(i*h, j*h)`` and gets index ``(j-1)*(m-1) + (i-1)``.

The diffusion coefficient is constant per element (evaluated at the
element barycenter), either globally constant or jumping on the two
diagonal quadrants ``(0,1/2)^2`` and ``(1/2,1)^2``.  The right-hand
side is fixed at ``f = 1``.

Coarse operators come from the Galerkin product with the nested P1
interpolation, not from reassembly; the two coincide exactly here and
the tests pin that down.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import SparseMatrix, cholesky_factor, triple_product
from .multigrid import Hierarchy, SmootherSpec

__all__ = [
    "MeshLevel",
    "Coefficient",
    "ProblemSpec",
    "element_stiffness",
    "assemble_stiffness",
    "assemble_load",
    "build_prolongation",
    "build_hierarchy",
]


@dataclass(frozen=True)
class MeshLevel:
    """Uniform ``m x m`` grid on the unit square."""

    m: int

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("mesh needs m >= 2 (no interior nodes otherwise)")

    @property
    def h(self):
        return 1.0 / self.m

    @property
    def n_interior(self):
        return (self.m - 1) ** 2


@dataclass(frozen=True)
class Coefficient:
    """Piecewise-constant diffusion coefficient.

    ``constant``: the same value everywhere.  ``quadrant_jump``: the
    value on the lower-left and upper-right quadrants, 1 elsewhere.
    """

    kind: str
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "quadrant_jump"):
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        if self.value <= 0.0:
            raise ValueError("coefficient value must be positive")

    @classmethod
    def constant(cls, value=1.0):
        return cls("constant", value)

    @classmethod
    def quadrant_jump(cls, high):
        return cls("quadrant_jump", high)

    def value_at(self, x, y):
        """Coefficient value at points (x, y); arrays broadcast."""
        if self.kind == "constant":
            return np.full_like(np.asarray(x, dtype=np.float64), self.value)
        inside = ((x < 0.5) & (y < 0.5)) | ((x > 0.5) & (y > 0.5))
        return np.where(inside, self.value, 1.0)


@dataclass(frozen=True)
class ProblemSpec:
    """One of the two model problems at a given hierarchy size.

    ``levels`` counts grids including the coarsest; ``coarsest_m`` must
    be even so the coefficient interfaces stay mesh-aligned on every
    level.
    """

    kind: str  # 'poisson' or 'jump'
    levels: int
    coarsest_m: int
    k_high: float = 1024.0

    def __post_init__(self):
        if self.kind not in ("poisson", "jump"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.levels < 2:
            raise ValueError("need at least 2 levels")
        if self.coarsest_m < 2 or self.coarsest_m % 2:
            raise ValueError("coarsest_m must be even and >= 2")

    @property
    def coefficient(self):
        if self.kind == "poisson":
            return Coefficient.constant(1.0)
        return Coefficient.quadrant_jump(self.k_high)

    @property
    def meshes(self):
        return [MeshLevel(self.coarsest_m * 2**j) for j in range(self.levels)]


# Stiffness matrix of the reference right triangle with unit legs and
# the right angle at the first vertex, for coefficient 1.
_K_REF = 0.5 * np.array(
    [[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]
)
# Local matrices for the two triangle shapes in vertex order
# (lower-left, lower-right, upper-right) and (lower-left, upper-right,
# upper-left): permutations of the reference matrix moving the right
# angle to the vertex that actually carries it.
_K_LOWER = _K_REF[np.ix_([1, 0, 2], [1, 0, 2])]
_K_UPPER = _K_REF[np.ix_([1, 2, 0], [1, 2, 0])]


def element_stiffness(k=1.0):
    """Local stiffness of the reference right triangle with coefficient k."""
    return k * _K_REF.copy()


def _interior_index(i, j, m):
    return (j - 1) * (m - 1) + (i - 1)


def assemble_stiffness(m, coeff):
    """Assemble the interior stiffness matrix on the ``m x m`` grid.

    Element contributions are accumulated per triangle; rows and
    columns belonging to boundary nodes are dropped.  The 9-point
    pattern is kept even where entries are exactly zero, so constant
    and jump coefficients share a sparsity structure.

    Returns
    -------
    SparseMatrix of dimension ``(m-1)^2``.
    """
    if m < 2:
        raise ValueError("assemble_stiffness needs m >= 2")
    if coeff.kind == "quadrant_jump" and m % 2:
        raise ValueError("jump coefficient needs even m so the interface is mesh-aligned")
    h = 1.0 / m
    a, b = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    a = a.ravel()
    b = b.ravel()

    # vertex (i, j) index pairs per triangle shape, in local order
    lower = ((a, b), (a + 1, b), (a + 1, b + 1))
    upper = ((a, b), (a + 1, b + 1), (a, b + 1))
    rows, cols, vals = [], [], []
    for verts, K in ((lower, _K_LOWER), (upper, _K_UPPER)):
        bx = (verts[0][0] + verts[1][0] + verts[2][0]) * (h / 3.0)
        by = (verts[0][1] + verts[1][1] + verts[2][1]) * (h / 3.0)
        k = coeff.value_at(bx, by)
        interior = [
            (1 <= vi) & (vi <= m - 1) & (1 <= vj) & (vj <= m - 1)
            for vi, vj in verts
        ]
        for l in range(3):
            for c in range(3):
                keep = interior[l] & interior[c]
                if not keep.any():
                    continue
                rows.append(_interior_index(verts[l][0][keep], verts[l][1][keep], m))
                cols.append(_interior_index(verts[c][0][keep], verts[c][1][keep], m))
                vals.append(K[l, c] * k[keep])
    return SparseMatrix.from_coo(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
        (m - 1) ** 2, (m - 1) ** 2,
    )


def assemble_load(m):
    """Load vector for ``f = 1``: every interior node gets ``h^2``.

    Each vertex of a triangle receives area/3; interior nodes touch six
    triangles of area ``h^2/2``, which sums to exactly ``h^2``.
    """
    if m < 2:
        raise ValueError("assemble_load needs m >= 2")
    h = 1.0 / m
    return np.full((m - 1) ** 2, h * h)


def build_prolongation(coarse_m):
    """Interpolation from the ``coarse_m`` grid to the ``2*coarse_m`` grid.

    Each coarse interior node maps with weight 1 to the coincident fine
    node and with weight 1/2 to its six edge-midpoint neighbours, all
    of which are interior on the fine grid.  Fine nodes that are not on
    a coarse node or a coarse edge get empty rows.
    """
    mc = coarse_m
    if mc < 2:
        raise ValueError("build_prolongation needs coarse_m >= 2")
    mf = 2 * mc
    ic, jc = np.meshgrid(np.arange(1, mc), np.arange(1, mc), indexing="ij")
    ic = ic.ravel()
    jc = jc.ravel()
    col = _interior_index(ic, jc, mc)
    fi = 2 * ic
    fj = 2 * jc
    stencil = [
        (0, 0, 1.0),
        (1, 0, 0.5), (-1, 0, 0.5), (0, 1, 0.5), (0, -1, 0.5),
        (1, 1, 0.5), (-1, -1, 0.5),
    ]
    rows = np.concatenate([_interior_index(fi + di, fj + dj, mf) for di, dj, _ in stencil])
    cols = np.concatenate([col] * len(stencil))
    vals = np.concatenate([np.full(col.shape, w) for _, _, w in stencil])
    return SparseMatrix.from_coo(rows, cols, vals, (mf - 1) ** 2, (mc - 1) ** 2)


def build_hierarchy(spec, smoother=None, direct_cap=20000, factorize=True):
    """Assemble the full level hierarchy for a problem.

    The finest matrix is assembled from elements; every coarser one is
    the Galerkin product through the nested interpolation.  The
    coarsest matrix is densified and Cholesky-factorized unless
    ``factorize`` is off.

    Parameters
    ----------
    spec : ProblemSpec
    smoother : SmootherSpec, optional
        Pre- and post-smoother for every level above the coarsest;
        defaults to one symmetric Gauss-Seidel sweep.
    direct_cap : int
        Largest coarsest-level dimension accepted for dense factorization.
    factorize : bool
        Skip the coarse factorization (solvers that need it will fail).

    Returns
    -------
    Hierarchy
    """
    if smoother is None:
        smoother = SmootherSpec()
    meshes = spec.meshes
    coeff = spec.coefficient
    matrices = [None] * spec.levels
    prolongations = [None] * spec.levels
    matrices[-1] = assemble_stiffness(meshes[-1].m, coeff)
    for j in range(spec.levels - 1, 0, -1):
        prolongations[j] = build_prolongation(meshes[j - 1].m)
        matrices[j - 1] = triple_product(prolongations[j], matrices[j])
    chol = cholesky_factor(matrices[0], max_dim=direct_cap) if factorize else None
    n_levels = spec.levels
    return Hierarchy(
        matrices=matrices,
        prolongations=prolongations,
        pre_smoothers=[None] + [smoother] * (n_levels - 1),
        post_smoothers=[None] + [smoother] * (n_levels - 1),
        coarse_factorization=chol,
        meshes=meshes,
    )
