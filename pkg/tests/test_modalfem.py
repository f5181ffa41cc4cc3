import numpy as np
import pytest

from wheelforge import designspace as ds
from wheelforge import modalfem as mf
from wheelforge import solidmodel as sm


def box_solid(nx, ny, nz, pitch=1.0):
    return sm.VoxelSolid(np.ones((nx, ny, nz), dtype=bool), pitch,
                         np.zeros(3))


UNIT = mf.Material(e=1.0, nu=0.3, rho=1.0)


# ---------------------------------------------------------------------------
# element matrix oracle: independent 3x3x3 Gauss integration

def hex_stiffness_oracle(h, material):
    """3x3x3 Gauss integration of the compatible + Wilson-bubble element,
    built with explicit per-node loops, then static condensation."""
    lam = material.e * material.nu / ((1 + material.nu) * (1 - 2 * material.nu))
    mu = material.e / (2 * (1 + material.nu))
    gp = np.array([-np.sqrt(3 / 5), 0.0, np.sqrt(3 / 5)])
    gw = np.array([5 / 9, 8 / 9, 5 / 9])
    signs = mf.HEX_CORNERS * 2 - 1
    kcc = np.zeros((24, 24))
    kca = np.zeros((24, 9))
    kaa = np.zeros((9, 9))
    for ix, wx in zip(gp, gw):
        for iy, wy in zip(gp, gw):
            for iz, wz in zip(gp, gw):
                dndx = np.zeros((8, 3))
                for a in range(8):
                    sx, sy, sz = signs[a]
                    dndx[a, 0] = sx * (1 + sy * iy) * (1 + sz * iz) / 8 * 2 / h
                    dndx[a, 1] = sy * (1 + sx * ix) * (1 + sz * iz) / 8 * 2 / h
                    dndx[a, 2] = sz * (1 + sx * ix) * (1 + sy * iy) / 8 * 2 / h
                b = np.zeros((6, 24))
                for a in range(8):
                    dx, dy, dz = dndx[a]
                    b[0, 3 * a] = dx
                    b[1, 3 * a + 1] = dy
                    b[2, 3 * a + 2] = dz
                    b[3, 3 * a] = dy
                    b[3, 3 * a + 1] = dx
                    b[4, 3 * a + 1] = dz
                    b[4, 3 * a + 2] = dy
                    b[5, 3 * a] = dz
                    b[5, 3 * a + 2] = dx
                # bubble gradients: d/dx_k (1 - xi_k^2) = -2 xi_k * 2/h
                dp = np.array([-2 * ix, -2 * iy, -2 * iz]) * 2 / h
                ba = np.zeros((6, 9))
                for k in range(3):
                    for comp in range(3):
                        col = 3 * k + comp
                        g = np.zeros(3)
                        g[k] = dp[k]
                        # engineering strain of the field P_k(x_k) * e_comp
                        eps = np.zeros(6)
                        eps[comp] = g[comp]
                        eps[3] = (g[1] if comp == 0 else 0) + (g[0] if comp == 1 else 0)
                        eps[4] = (g[2] if comp == 1 else 0) + (g[1] if comp == 2 else 0)
                        eps[5] = (g[2] if comp == 0 else 0) + (g[0] if comp == 2 else 0)
                        ba[:, col] = eps
                d = np.zeros((6, 6))
                d[:3, :3] = lam
                d[np.arange(3), np.arange(3)] += 2 * mu
                d[3:, 3:] = np.eye(3) * mu
                w = wx * wy * wz * (h / 2) ** 3
                kcc += w * b.T @ d @ b
                kca += w * b.T @ d @ ba
                kaa += w * ba.T @ d @ ba
    return kcc - kca @ np.linalg.inv(kaa) @ kca.T


def test_element_stiffness_matches_independent_oracle():
    mat = mf.Material(e=73500.0, nu=0.33, rho=2.692e-9)
    h = 3.5
    ke, _ = mf.hex_element_matrices(h, mat)
    ref = hex_stiffness_oracle(h, mat)
    assert np.abs(ke - ref).max() <= 1e-12 * np.abs(ref).max()


# ---------------------------------------------------------------------------
# meshing

def test_mesh_counts():
    mesh1 = mf.mesh_from_voxels(box_solid(1, 1, 1), UNIT)
    assert len(mesh1.nodes) == 8 and len(mesh1.elements) == 1
    mesh2 = mf.mesh_from_voxels(box_solid(2, 1, 1), UNIT)
    assert len(mesh2.nodes) == 12
    n = 3
    mesh3 = mf.mesh_from_voxels(box_solid(n, n, n), UNIT)
    assert len(mesh3.nodes) == (n + 1) ** 3
    assert len(mesh3.elements) == n ** 3


def test_mesh_disconnected_raises_with_sizes():
    occ = np.zeros((5, 1, 1), dtype=bool)
    occ[0] = occ[3] = occ[4] = True
    with pytest.raises(mf.StructuralError, match=r"2 connected components.*\[2, 1\]"):
        mf.mesh_from_voxels(sm.VoxelSolid(occ, 1.0, np.zeros(3)), UNIT)


def test_mesh_node_numbering_deterministic():
    a = mf.mesh_from_voxels(box_solid(3, 2, 2), UNIT)
    b = mf.mesh_from_voxels(box_solid(3, 2, 2), UNIT)
    assert np.array_equal(a.nodes, b.nodes)
    assert np.array_equal(a.elements, b.elements)
    # lexicographic ordering of node coordinates
    keys = [tuple(row) for row in a.nodes]
    assert keys == sorted(keys)


# ---------------------------------------------------------------------------
# assembly

def test_rigid_translation_in_null_space():
    mesh = mf.mesh_from_voxels(box_solid(3, 2, 2, pitch=2.0),
                               mf.Material(e=100.0, nu=0.3, rho=1e-6))
    k, _ = mf.assemble(mesh)
    for axis in range(3):
        u = np.zeros(mesh.n_dofs)
        u[axis::3] = 1.0
        r = np.abs(k @ u).max()
        assert r <= 1e-9 * np.abs(k.data).max()


def test_total_mass_from_consistent_matrix():
    mat = mf.Material(e=100.0, nu=0.3, rho=7.8e-9)
    mesh = mf.mesh_from_voxels(box_solid(4, 3, 2, pitch=2.5), mat)
    _, m = mf.assemble(mesh)
    one_x = np.zeros(mesh.n_dofs)
    one_x[0::3] = 1.0
    total = one_x @ (m @ one_x)
    assert total == pytest.approx(mat.rho * mesh.volume, rel=1e-9)


def test_assembled_matrices_symmetric():
    mesh = mf.mesh_from_voxels(box_solid(3, 3, 3), UNIT)
    k, m = mf.assemble(mesh)
    dk = (k - k.T).tocoo()
    dm = (m - m.T).tocoo()
    assert len(dk.data) == 0 or np.abs(dk.data).max() == 0.0
    assert len(dm.data) == 0 or np.abs(dm.data).max() == 0.0


# ---------------------------------------------------------------------------
# free-free eigensolve

@pytest.fixture(scope="module")
def rod():
    # 40 elements along the length, unit material
    solid = box_solid(40, 1, 1, pitch=1.0)
    mat = mf.Material(e=1.0, nu=0.33, rho=1.0)
    mesh = mf.mesh_from_voxels(solid, mat)
    k, m = mf.assemble(mesh)
    return mesh, k, m


def first_longitudinal(mesh, result):
    """Lowest elastic mode whose kinetic energy is mostly along the rod."""
    nodal_mass = np.zeros(len(mesh.nodes))
    np.add.at(nodal_mass, mesh.elements.ravel(),
              np.full(mesh.elements.size, mesh.material.rho * mesh.pitch**3 / 8))
    for j in range(result.n_rigid, len(result.frequencies)):
        u = result.mode_shapes[:, j].reshape(-1, 3)
        axial = (nodal_mass * u[:, 0] ** 2).sum()
        total = (nodal_mass * (u ** 2).sum(axis=1)).sum()
        if axial / total > 0.5:
            return j
    raise AssertionError("no longitudinal mode found")


def test_rod_longitudinal_frequency_analytic(rod):
    mesh, k, m = rod
    res = mf.solve_free_free(k, m, n_modes=45, mass_kg=mesh.mass_kg)
    j = first_longitudinal(mesh, res)
    length = 40.0
    f_analytic = (1.0 / (2.0 * length)) * np.sqrt(mesh.material.e / mesh.material.rho)
    assert res.frequencies[j] == pytest.approx(f_analytic, rel=0.02)


def test_exactly_six_rigid_modes(rod):
    mesh, k, m = rod
    res = mf.solve_free_free(k, m, n_modes=12)
    assert res.n_rigid == 6
    f6, f7 = res.frequencies[5], res.frequencies[6]
    assert f6 / f7 < 1e-3


def test_density_scaling_halves_frequencies(rod):
    mesh, k, m = rod
    res1 = mf.solve_free_free(k, m, n_modes=10)
    res4 = mf.solve_free_free(k, 4.0 * m, n_modes=10)
    el1 = res1.frequencies[6:]
    el4 = res4.frequencies[6:]
    assert np.allclose(el4, 0.5 * el1, rtol=1e-9)


def test_modulus_scaling_doubles_frequencies(rod):
    mesh, k, m = rod
    res1 = mf.solve_free_free(k, m, n_modes=10)
    res4 = mf.solve_free_free(4.0 * k, m, n_modes=10)
    assert np.allclose(res4.frequencies[6:], 2.0 * res1.frequencies[6:], rtol=1e-9)


def test_spectrum_invariant_under_rigid_translation():
    mat = mf.Material(e=210.0, nu=0.3, rho=7.8e-9)
    solid = box_solid(6, 3, 2, pitch=2.0)
    mesh_a = mf.mesh_from_voxels(solid, mat)
    shifted = sm.VoxelSolid(solid.occupancy, solid.pitch,
                            np.array([123.4, -55.0, 9.9]))
    mesh_b = mf.mesh_from_voxels(shifted, mat)
    ka, ma = mf.assemble(mesh_a)
    kb, mb = mf.assemble(mesh_b)
    ra = mf.solve_free_free(ka, ma, n_modes=10)
    rb = mf.solve_free_free(kb, mb, n_modes=10)
    el_a, el_b = ra.frequencies[6:], rb.frequencies[6:]
    assert np.allclose(el_a, el_b, rtol=1e-9)


def test_mode_shapes_mass_orthonormal(rod):
    mesh, k, m = rod
    res = mf.solve_free_free(k, m, n_modes=12)
    gram = res.mode_shapes.T @ (m @ res.mode_shapes)
    assert np.abs(gram - np.eye(12)).max() < 1e-8


def test_n_modes_validation(rod):
    _, k, m = rod
    with pytest.raises(ds.ValidationError):
        mf.solve_free_free(k, m, n_modes=4)


# ---------------------------------------------------------------------------
# classification

def disc_solid(radius=24.0, thickness=3.0, pitch=1.0):
    n = int(2 * radius / pitch) + 4
    nz = int(thickness / pitch)
    c = (np.arange(n) + 0.5) * pitch - n * pitch / 2
    xx, yy = np.meshgrid(c, c, indexing="ij")
    occ = np.zeros((n, n, nz), dtype=bool)
    occ[np.hypot(xx, yy) <= radius, :] = True
    origin = np.array([-n * pitch / 2, -n * pitch / 2, 0.0])
    return sm.VoxelSolid(occ, pitch, origin)


def test_axial_fraction_trivial_vectors():
    mat = mf.Material(e=70000.0, nu=0.33, rho=2.7e-9)
    mesh = mf.mesh_from_voxels(disc_solid(radius=8.0, thickness=2.0), mat)
    nodal_mass = np.zeros(len(mesh.nodes))
    np.add.at(nodal_mass, mesh.elements.ravel(),
              np.full(mesh.elements.size, mat.rho * mesh.pitch**3 / 8))
    u_axial = np.zeros(mesh.n_dofs)
    u_axial[2::3] = 1.0
    u_axial /= np.sqrt((nodal_mass * 1.0).sum())
    # axial unit vector: all kinetic energy is axial
    u = u_axial.reshape(-1, 3)
    frac = (nodal_mass * u[:, 2] ** 2).sum() / (nodal_mass * (u**2).sum(1)).sum()
    assert frac == pytest.approx(1.0)
    radii = mesh.node_radii()
    ur = mesh.nodes[:, :2] / np.maximum(radii, 1e-12)[:, None]
    u_radial = np.zeros(mesh.n_dofs)
    u_radial[0::3] = ur[:, 0]
    u_radial[1::3] = ur[:, 1]
    u = u_radial.reshape(-1, 3)
    frac = (nodal_mass * u[:, 2] ** 2).sum() / (nodal_mass * (u**2).sum(1)).sum()
    assert frac == pytest.approx(0.0, abs=1e-12)


def test_flat_disc_umbrella_mode_identified():
    mat = mf.Material(e=70000.0, nu=0.33, rho=2.7e-9)
    solid = disc_solid(radius=24.0, thickness=3.0, pitch=1.5)
    res = mf.modal_analysis(solid, mat, n_modes=16)
    assert res.n_rigid == 6
    j = res.lateral_index
    assert res.labels[j] == "lateral"
    # nodal-pattern oracle: the umbrella mode is axisymmetric, so u_z has no
    # sign changes around a mid-radius ring; plate modes with nodal diameters
    # have at least four
    mesh = mf.mesh_from_voxels(solid, mat)
    radii = mesh.node_radii()
    ring = np.flatnonzero((np.abs(radii - 12.0) < 1.0)
                          & (np.abs(mesh.nodes[:, 2]) < 0.1))
    theta = np.arctan2(mesh.nodes[ring, 1], mesh.nodes[ring, 0])
    order = np.argsort(theta)

    def ring_sign_changes(mode_idx):
        uz = res.mode_shapes[:, mode_idx].reshape(-1, 3)[ring, 2][order]
        scale = np.abs(uz).max()
        signs = np.sign(uz[np.abs(uz) > 0.05 * scale])
        return int((np.diff(signs) != 0).sum())

    assert ring_sign_changes(j) == 0
    # the first elastic pair are two-nodal-diameter plate modes
    assert ring_sign_changes(6) >= 4


# ---------------------------------------------------------------------------
# stiffness recovery

def test_stiffness_from_eq4():
    assert mf.stiffness_from(1.0 / (2 * np.pi), 1.0) == pytest.approx(1.0, rel=1e-12)
    assert mf.stiffness_from(0.0, 2.0) == 0.0
    k = mf.stiffness_from(123.4, 5.6)
    f_back = np.sqrt(k / 5.6) / (2 * np.pi)
    assert f_back == pytest.approx(123.4, rel=1e-12)
    with pytest.raises(ds.ValidationError):
        mf.stiffness_from(1.0, 0.0)


def test_wheel_modal_pitch_convergence():
    # refining the reference wheel mesh from 6 mm to 3 mm moves the lateral
    # frequency by less than 5%. The refinement splits each voxel 2x2x2 so
    # both meshes discretize the same geometry (h-convergence, not geometry
    # requantization), and every member is at least three voxels thick at
    # 6 mm, matching the resolved regime the pitch bound is meant for.
    from wheelforge import contour as ct

    im = ds.synth_reference(
        ds.ReferenceParams(n_spokes=4, spoke_width=0.30, spiral_angle=10.0), 64)
    spec = sm.WheelBuildSpec(
        rim_diameter=144.0, rim_width=48.0, rim_width_code="conv",
        lug_circle_radius=18.0, lug_hole_radius=3.0, voxel_pitch=6.0,
        bore_radius=11.0, hub_radius=26.0)
    spoke = sm.CrossSection(points=np.array(
        [[11.0, 24.0], [66.0, 24.0], [66.0, 48.0], [11.0, 48.0]]))
    rim = sm.CrossSection(points=np.array(
        [[54.0, 0.0], [72.0, 0.0], [72.0, 48.0], [54.0, 48.0]]))
    cfg = ct.ContourConfig(mm_per_pixel=spec.rim_diameter / (0.96 * 64 * 4))
    sketch = ct.design_to_contours(im.pixels, cfg)
    built = sm.build_wheel(sketch, spec, spoke_cs=spoke, rim_cs=rim)
    coarse = built.solid
    fine = sm.VoxelSolid(
        np.repeat(np.repeat(np.repeat(coarse.occupancy, 2, 0), 2, 1), 2, 2),
        3.0, coarse.origin)
    freqs = {}
    for pitch, solid in ((6.0, coarse), (3.0, fine)):
        res = mf.modal_analysis(solid, mf.ALUMINUM, n_modes=16,
                                disc_radius=0.42 * spec.rim_diameter)
        freqs[pitch] = res.lateral_frequency
    rel = abs(freqs[3.0] - freqs[6.0]) / freqs[3.0]
    print("lateral frequency 6mm vs 3mm:", freqs, "rel change", rel)
    assert rel < 0.05
