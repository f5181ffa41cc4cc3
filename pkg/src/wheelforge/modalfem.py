"""Free-free modal analysis on hexahedral voxel meshes.

One trilinear 8-node brick per occupied voxel, isotropic linear elasticity
(2x2x2 Gauss, exact for cube elements), consistent mass, and a shift-invert
generalized eigensolve with a negative shift so the six rigid-body modes of
an unconstrained connected solid come out as numerical zeros. The spoke
lateral mode is identified from the axial kinetic energy concentrated in the
disc region; an equivalent stiffness follows from k = (2 pi f)^2 m.

Units: mm, tonne, s (E in MPa, density in tonne/mm^3, frequencies in Hz,
masses reported in kg).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .designspace import ValidationError
from .solidmodel import VoxelSolid

HEX_CORNERS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
])
_XI = 2.0 * HEX_CORNERS - 1.0          # local corner coordinates


class StructuralError(RuntimeError):
    pass


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class Material:
    e: float                           # Young's modulus, MPa
    nu: float
    rho: float                         # tonne/mm^3

    def __post_init__(self):
        if self.e <= 0 or not (0.0 < self.nu < 0.5) or self.rho <= 0:
            raise ValidationError("material constants out of range")

    @property
    def shear_modulus(self) -> float:
        return self.e / (2.0 * (1.0 + self.nu))


# reference aluminum wheel alloy
ALUMINUM = Material(e=73500.0, nu=0.33, rho=2.692e-9)


def hex_element_matrices(h: float, material: Material,
                         incompatible: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Stiffness (24x24) and consistent mass for a cube of side h.

    With `incompatible` the three Wilson bubble modes per displacement
    component are added and statically condensed (C3D8I style), which removes
    the parasitic bending stiffness of the plain trilinear brick. On cube
    elements this passes the patch test and leaves the rigid-body null space
    exact; the bubbles carry no mass. Integration is 2x2x2 Gauss, exact for
    every term on a cube.
    """
    lam = material.e * material.nu / ((1 + material.nu) * (1 - 2 * material.nu))
    mu = material.shear_modulus
    d = np.zeros((6, 6))
    d[:3, :3] = lam
    d[np.arange(3), np.arange(3)] += 2 * mu
    d[3:, 3:] = np.eye(3) * mu

    g = 1.0 / np.sqrt(3.0)
    kcc = np.zeros((24, 24))
    kca = np.zeros((24, 9))
    kaa = np.zeros((9, 9))
    me = np.zeros((24, 24))
    for gx in (-g, g):
        for gy in (-g, g):
            for gz in (-g, g):
                xi = np.array([gx, gy, gz])
                n = np.prod(1.0 + _XI * xi, axis=1) / 8.0
                dn = np.empty((3, 8))
                for a in range(3):
                    others = [b for b in range(3) if b != a]
                    dn[a] = (_XI[:, a] / 8.0
                             * (1.0 + _XI[:, others[0]] * xi[others[0]])
                             * (1.0 + _XI[:, others[1]] * xi[others[1]]))
                dndx = dn * (2.0 / h)
                detj = (h / 2.0) ** 3
                b = np.zeros((6, 24))
                b[0, 0::3] = dndx[0]
                b[1, 1::3] = dndx[1]
                b[2, 2::3] = dndx[2]
                b[3, 0::3] = dndx[1]
                b[3, 1::3] = dndx[0]
                b[4, 1::3] = dndx[2]
                b[4, 2::3] = dndx[1]
                b[5, 0::3] = dndx[2]
                b[5, 2::3] = dndx[0]
                kcc += b.T @ d @ b * detj
                # bubble shapes P_k = 1 - xi_k^2; dP_k/dx_k = -2 xi_k * 2/h
                dp = -2.0 * xi * (2.0 / h)
                ba = np.zeros((6, 9))
                for comp in range(3):           # displacement component
                    for k in range(3):          # bubble direction
                        col = 3 * k + comp
                        grad = np.zeros(3)
                        grad[k] = dp[k]
                        ba[comp, col] = grad[comp]
                        ba[3, col] += grad[1] if comp == 0 else (grad[0] if comp == 1 else 0.0)
                        ba[4, col] += grad[2] if comp == 1 else (grad[1] if comp == 2 else 0.0)
                        ba[5, col] += grad[2] if comp == 0 else (grad[0] if comp == 2 else 0.0)
                kca += b.T @ d @ ba * detj
                kaa += ba.T @ d @ ba * detj
                nm = np.zeros((3, 24))
                nm[0, 0::3] = n
                nm[1, 1::3] = n
                nm[2, 2::3] = n
                me += material.rho * nm.T @ nm * detj
    if incompatible:
        ke = kcc - kca @ np.linalg.solve(kaa, kca.T)
    else:
        ke = kcc
    return 0.5 * (ke + ke.T), 0.5 * (me + me.T)


@dataclass
class HexMesh:
    nodes: np.ndarray                  # (N, 3) mm
    elements: np.ndarray               # (M, 8) node ids
    material: Material
    pitch: float

    @property
    def n_dofs(self) -> int:
        return 3 * len(self.nodes)

    @property
    def volume(self) -> float:
        return len(self.elements) * self.pitch**3

    @property
    def mass_kg(self) -> float:
        return self.volume * self.material.rho * 1000.0

    def node_radii(self) -> np.ndarray:
        return np.hypot(self.nodes[:, 0], self.nodes[:, 1])


def mesh_from_voxels(solid: VoxelSolid, material: Material) -> HexMesh:
    """One hexahedron per occupied voxel with shared nodes deduplicated and
    numbered lexicographically by (ix, iy, iz)."""
    occ = solid.occupancy
    if not occ.any():
        raise StructuralError("empty solid")
    labels, n_comp = _label(occ)
    if n_comp != 1:
        sizes = sorted((int((labels == i).sum()) for i in range(1, n_comp + 1)),
                       reverse=True)
        raise StructuralError(
            f"solid has {n_comp} connected components (sizes {sizes})")
    vox = np.argwhere(occ)
    corners = vox[:, None, :] + HEX_CORNERS[None, :, :]    # (M, 8, 3) lattice
    shape = np.array(occ.shape) + 1
    keys = (corners[..., 0] * shape[1] + corners[..., 1]) * shape[2] + corners[..., 2]
    uniq, inverse = np.unique(keys, return_inverse=True)
    elements = inverse.reshape(-1, 8)
    iz = uniq % shape[2]
    iy = (uniq // shape[2]) % shape[1]
    ix = uniq // (shape[1] * shape[2])
    nodes = solid.origin[None, :] + np.column_stack([ix, iy, iz]) * solid.pitch
    return HexMesh(nodes=nodes, elements=elements.astype(np.int64),
                   material=material, pitch=solid.pitch)


def _label(occ):
    from scipy import ndimage
    return ndimage.label(occ)


def assemble(mesh: HexMesh) -> tuple[sp.csc_matrix, sp.csc_matrix]:
    """Global stiffness and consistent mass (sparse, exactly symmetric)."""
    ke, me = hex_element_matrices(mesh.pitch, mesh.material)
    edof = np.empty((len(mesh.elements), 24), dtype=np.int64)
    edof[:, 0::3] = 3 * mesh.elements
    edof[:, 1::3] = 3 * mesh.elements + 1
    edof[:, 2::3] = 3 * mesh.elements + 2
    ik = np.repeat(edof, 24, axis=1).ravel()
    jk = np.tile(edof, (1, 24)).ravel()
    n = mesh.n_dofs
    k = sp.coo_matrix((np.tile(ke.ravel(), len(mesh.elements)), (ik, jk)),
                      shape=(n, n)).tocsc()
    m = sp.coo_matrix((np.tile(me.ravel(), len(mesh.elements)), (ik, jk)),
                      shape=(n, n)).tocsc()
    return 0.5 * (k + k.T), 0.5 * (m + m.T)


@dataclass
class ModalResult:
    frequencies: np.ndarray            # Hz, ascending
    mode_shapes: np.ndarray            # (n_dofs, n_modes), mass-normalized
    n_rigid: int
    mass: float                        # kg
    lateral_index: int | None = None
    labels: list = field(default_factory=list)
    axial_fractions: np.ndarray | None = None

    @property
    def lateral_frequency(self) -> float | None:
        if self.lateral_index is None:
            return None
        return float(self.frequencies[self.lateral_index])


RIGID_TOL = 1e-3


def solve_free_free(k: sp.csc_matrix, m: sp.csc_matrix, n_modes: int,
                    mass_kg: float | None = None, seed: int = 0) -> ModalResult:
    """Lowest `n_modes` of K phi = omega^2 M phi by shift-invert with a
    negative shift (K - sigma M stays positive definite despite the rigid
    null space). A mode is rigid when its frequency is below 1e-3 times the
    first elastic estimate."""
    if n_modes < 8:
        raise ValidationError("need n_modes >= 8 to see past the rigid modes")
    n = k.shape[0]
    if n_modes >= n:
        raise ValidationError("mesh too small for the requested mode count")
    sigma = -1e-4 * (k.diagonal().sum() / m.diagonal().sum())
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    try:
        vals, vecs = spla.eigsh(k, k=n_modes, M=m, sigma=sigma, which="LM", v0=v0)
    except RuntimeError as exc:
        raise NumericError(
            f"shift-invert factorization failed (sigma={sigma:.3e}); "
            f"try a smaller magnitude shift") from exc
    order = np.argsort(vals)
    vals = vals[order]
    vecs = vecs[:, order]
    # mass-normalize
    for j in range(vecs.shape[1]):
        nrm = np.sqrt(vecs[:, j] @ (m @ vecs[:, j]))
        vecs[:, j] /= nrm
    freqs = np.sqrt(np.clip(vals, 0.0, None)) / (2.0 * np.pi)
    f_elastic = freqs[6] if len(freqs) > 6 else freqs[-1]
    n_rigid = int((freqs < RIGID_TOL * max(f_elastic, 1e-300)).sum())
    return ModalResult(frequencies=freqs, mode_shapes=vecs, n_rigid=n_rigid,
                       mass=mass_kg if mass_kg is not None else float("nan"))


def classify_modes(result: ModalResult, mesh: HexMesh,
                   disc_radius: float | None = None) -> ModalResult:
    """Label elastic modes by the axial kinetic energy concentrated in the
    disc region (nodes with radius below the rim inner radius).

    For mass-normalized shapes the score sum_disc m_i u_z,i^2 is the axial
    in-disc share of the unit modal kinetic energy, so rim-dominated modes
    score low. Higher axial harmonics can score above the fundamental, so the
    lateral label goes to the lowest-frequency mode scoring at least 80% of
    the best. When the two lowest candidates are distinct in frequency yet
    score within 5% of each other, the criterion is ambiguous and the 11th
    overall mode is labeled instead (degenerate pairs of one mode family are
    not ambiguity; the lower index is taken).
    """
    if len(result.frequencies) < 15:
        raise ValidationError("classify_modes needs >= 15 computed modes")
    radii = mesh.node_radii()
    if disc_radius is None:
        disc_radius = 0.8 * radii.max()
    nodal_mass = np.zeros(len(mesh.nodes))
    per_node = mesh.material.rho * mesh.pitch**3 / 8.0
    np.add.at(nodal_mass, mesh.elements.ravel(),
              np.full(mesh.elements.size, per_node))
    in_disc = radii < disc_radius

    n_modes = result.mode_shapes.shape[1]
    fractions = np.zeros(n_modes)
    for j in range(result.n_rigid, n_modes):
        u = result.mode_shapes[:, j].reshape(-1, 3)
        fractions[j] = float((nodal_mass[in_disc] * u[in_disc, 2] ** 2).sum())
    elastic = np.arange(result.n_rigid, n_modes)
    best = fractions[elastic].max()
    candidates = elastic[fractions[elastic] >= 0.8 * best]
    lateral = int(candidates[0])
    if len(candidates) > 1:
        a, b = candidates[0], candidates[1]
        degenerate = abs(result.frequencies[b] - result.frequencies[a]) \
            <= 0.01 * max(result.frequencies[a], 1e-300)
        close_scores = abs(fractions[b] - fractions[a]) <= 0.05 * fractions[a]
        if close_scores and not degenerate:
            lateral = min(10, n_modes - 1)      # 11th overall mode fallback
    labels = ["rigid"] * result.n_rigid + ["elastic"] * (n_modes - result.n_rigid)
    labels[lateral] = "lateral"
    result.lateral_index = lateral
    result.labels = labels
    result.axial_fractions = fractions
    return result


def stiffness_from(f: float, m: float) -> float:
    """Equivalent single-DOF stiffness k = (2 pi f)^2 m."""
    if m <= 0:
        raise ValidationError("mass must be positive")
    if f < 0:
        raise ValidationError("frequency must be >= 0")
    return (2.0 * np.pi * f) ** 2 * m


def modal_analysis(solid: VoxelSolid, material: Material = ALUMINUM,
                   n_modes: int = 16, disc_radius: float | None = None,
                   seed: int = 0) -> ModalResult:
    """Mesh, assemble, solve, and classify in one call."""
    mesh = mesh_from_voxels(solid, material)
    k, m = assemble(mesh)
    result = solve_free_free(k, m, n_modes, mass_kg=mesh.mass_kg, seed=seed)
    if n_modes >= 15:
        result = classify_modes(result, mesh, disc_radius)
    return result
