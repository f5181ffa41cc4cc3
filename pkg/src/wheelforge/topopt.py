"""2D plane-stress SIMP topology optimization with a reference-similarity term.

The objective is compliance plus a weighted pixelwise L1 distance between the
physical densities and a binarized reference design. Densities pass through a
cone density filter and a tanh Heaviside projection with beta continuation.
The update is projected gradient descent on raw densities with a bisection on
the volume multiplier each iteration (the L1 term makes sensitivities
sign-indefinite, which rules out the classical optimality-criteria update).

The wheel domain is a disc on an n x n element lattice: a solid non-design rim
annulus carrying the loads, a solid hub disc whose nodes are fixed, a void
center bore, and a design annulus for the spokes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .designspace import DesignImage, DesignSet, ValidationError

MASK_OUTSIDE, MASK_VOID, MASK_DESIGN, MASK_RIM, MASK_HUB = 0, 1, 2, 3, 4


class StructuralError(RuntimeError):
    """FEM model is ill-posed (e.g. no supports)."""


class NumericError(RuntimeError):
    """Linear solve failed or diverged."""


def element_stiffness_q4(nu: float = 0.3) -> np.ndarray:
    """8x8 stiffness of a unit-square bilinear quad, plane stress, E = 1,
    unit thickness. Node order (0,0),(1,0),(1,1),(0,1) in an (x, y-down)
    frame; 2x2 Gauss quadrature is exact for this integrand."""
    D = np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]])
    D /= (1.0 - nu**2)
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    g = 1.0 / np.sqrt(3.0)
    ke = np.zeros((8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            dn = 0.25 * np.array([
                [-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)],
                [-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)],
            ])
            jac = dn @ coords
            dndx = np.linalg.solve(jac, dn)
            b = np.zeros((3, 8))
            b[0, 0::2] = dndx[0]
            b[1, 1::2] = dndx[1]
            b[2, 0::2] = dndx[1]
            b[2, 1::2] = dndx[0]
            ke += b.T @ D @ b * np.linalg.det(jac)
    return 0.5 * (ke + ke.T)           # exact symmetry at machine precision


@dataclass
class WheelDomain:
    """Element lattice with masks, supports, and loads.

    `mask` is an n x n int grid (outside / void / design / rim / hub);
    elements with mask >= 1 enter the FEM model. Loads are nodal forces on
    the (n+1) x (n+1) node grid.
    """

    mask: np.ndarray
    fixed_nodes: np.ndarray            # node ids with both dofs fixed
    loads: np.ndarray                  # (n+1)^2 x 2 nodal force array
    nu: float = 0.3

    def __post_init__(self):
        self.n = self.mask.shape[0]
        if self.mask.shape != (self.n, self.n):
            raise ValidationError("mask must be square")
        self.active = np.flatnonzero(self.mask.ravel() >= MASK_VOID)
        rows, cols = np.divmod(self.active, self.n)
        nn = self.n + 1
        n1 = rows * nn + cols
        self.edof = np.empty((len(self.active), 8), dtype=np.int64)
        corners = np.stack([n1, n1 + 1, n1 + nn + 1, n1 + nn], axis=1)
        self.edof[:, 0::2] = 2 * corners
        self.edof[:, 1::2] = 2 * corners + 1
        self.elem_mask = self.mask.ravel()[self.active]
        self.design = self.elem_mask == MASK_DESIGN
        self.ke = element_stiffness_q4(self.nu)
        # reduced system over dofs of active elements minus fixed dofs
        used = np.unique(self.edof)
        fixed_dofs = np.concatenate([2 * self.fixed_nodes, 2 * self.fixed_nodes + 1])
        self.free_dofs = np.setdiff1d(used, fixed_dofs)
        self._dof_map = -np.ones(2 * nn * nn, dtype=np.int64)
        self._dof_map[self.free_dofs] = np.arange(len(self.free_dofs))
        self.f_free = self.loads.ravel()[self.free_dofs]
        ed = self._dof_map[self.edof]
        self._ik = np.repeat(ed, 8, axis=1).ravel()
        self._jk = np.tile(ed, (1, 8)).ravel()
        self._inside = (self._ik >= 0) & (self._jk >= 0)

    @property
    def n_active(self) -> int:
        return len(self.active)

    @property
    def n_design(self) -> int:
        return int(self.design.sum())

    def pinned_values(self) -> np.ndarray:
        """Fixed density values for non-design active elements (nan = free)."""
        vals = np.full(self.n_active, np.nan)
        vals[self.elem_mask == MASK_VOID] = 0.0
        vals[self.elem_mask == MASK_RIM] = 1.0
        vals[self.elem_mask == MASK_HUB] = 1.0
        return vals

    def to_grid(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        grid = np.full(self.n * self.n, fill)
        grid[self.active] = values
        return grid.reshape(self.n, self.n)

    def from_image(self, image: DesignImage | np.ndarray) -> np.ndarray:
        """Binarize an image onto the active elements (>= 0.5 is material)."""
        px = image.pixels if isinstance(image, DesignImage) else np.asarray(image)
        if px.shape != (self.n, self.n):
            raise ValidationError("image resolution must match the element grid")
        return (px.ravel()[self.active] >= 0.5).astype(np.float64)


def rectangle_domain(nelx: int, nely: int, fixed_nodes, loads,
                     mask: np.ndarray | None = None, nu: float = 0.3,
                     pad_to: int | None = None) -> WheelDomain:
    """Rectangular test domain embedded in a square grid (all design space by
    default). `loads` is a list of (node_id, fx, fy); node ids live on the
    (n+1) x (n+1) grid of the embedding square n = max(nelx, nely)."""
    n = pad_to or max(nelx, nely)
    m = np.full((n, n), MASK_OUTSIDE, dtype=int)
    if mask is None:
        m[:nely, :nelx] = MASK_DESIGN
    else:
        m[:nely, :nelx] = mask
    f = np.zeros(((n + 1) * (n + 1), 2))
    for node, fx, fy in loads:
        f[node, 0] += fx
        f[node, 1] += fy
    return WheelDomain(mask=m, fixed_nodes=np.asarray(fixed_nodes, dtype=np.int64),
                       loads=f, nu=nu)


@dataclass(frozen=True)
class WheelGeometry:
    """Template for wheel optimization domains."""

    n: int = 64
    hub_radius_frac: float = 0.24
    rim_inner_radius_frac: float = 0.82
    bore_radius_frac: float = 0.10
    normal_magnitude: float = 10.0     # total radial load spread over rim nodes
    nu: float = 0.3

    def domain(self, shear_ratio: float = 0.0) -> WheelDomain:
        n = self.n
        c = np.arange(n) + 0.5 - n / 2.0
        x, y = np.meshgrid(c, c)
        r = np.hypot(x, y)
        r_out = 0.48 * n
        r_rim = self.rim_inner_radius_frac * r_out
        r_hub = self.hub_radius_frac * r_out
        r_bore = self.bore_radius_frac * r_out

        mask = np.full((n, n), MASK_OUTSIDE, dtype=int)
        mask[r <= r_out] = MASK_DESIGN
        mask[(r <= r_out) & (r >= r_rim)] = MASK_RIM
        mask[r <= r_hub] = MASK_HUB
        mask[r <= r_bore] = MASK_VOID

        nn = n + 1
        cn = np.arange(nn) - n / 2.0
        xn, yn = np.meshgrid(cn, cn)
        rn = np.hypot(xn, yn).ravel()
        # hub support: every node of a hub element
        hub_elems = np.flatnonzero(mask.ravel() == MASK_HUB)
        hr, hc = np.divmod(hub_elems, n)
        n1 = hr * nn + hc
        fixed = np.unique(np.concatenate([n1, n1 + 1, n1 + nn, n1 + nn + 1]))

        # loaded ring: outermost nodes of rim elements
        rim_elems = np.flatnonzero(mask.ravel() == MASK_RIM)
        rr, rc = np.divmod(rim_elems, n)
        n1 = rr * nn + rc
        rim_nodes = np.unique(np.concatenate([n1, n1 + 1, n1 + nn, n1 + nn + 1]))
        ring = rim_nodes[rn[rim_nodes] >= r_out - 1.0]
        loads = np.zeros((nn * nn, 2))
        if len(ring):
            ux = xn.ravel()[ring] / np.maximum(rn[ring], 1e-12)
            uy = yn.ravel()[ring] / np.maximum(rn[ring], 1e-12)
            per = self.normal_magnitude / len(ring)
            loads[ring, 0] = -per * ux + shear_ratio * per * (-uy)
            loads[ring, 1] = -per * uy + shear_ratio * per * ux
        return WheelDomain(mask=mask, fixed_nodes=fixed, loads=loads, nu=self.nu)


# ---------------------------------------------------------------------------
# densities: filter + projection

class DensityFilter:
    """Cone density filter over active elements, weights w = max(0, r_min - d),
    rows normalized over the active neighborhood."""

    def __init__(self, domain: WheelDomain, r_min: float):
        if r_min < 1.0:
            raise ValidationError("r_min must be >= 1 element")
        self.r_min = r_min
        n = domain.n
        rows, cols = np.divmod(domain.active, n)
        reach = int(np.ceil(r_min)) - 1
        offs = range(-reach, reach + 1)
        grid_index = -np.ones(n * n, dtype=np.int64)
        grid_index[domain.active] = np.arange(len(domain.active))
        ii, jj, ww = [], [], []
        for dr in offs:
            for dc in offs:
                w = r_min - np.hypot(dr, dc)
                if w <= 0:
                    continue
                rr, cc = rows + dr, cols + dc
                ok = (rr >= 0) & (rr < n) & (cc >= 0) & (cc < n)
                nb = grid_index[rr[ok] * n + cc[ok]]
                ok2 = nb >= 0
                ii.append(np.flatnonzero(ok)[ok2])
                jj.append(nb[ok2])
                ww.append(np.full(ok2.sum(), w))
        i = np.concatenate(ii)
        j = np.concatenate(jj)
        w = np.concatenate(ww)
        h = sp.coo_matrix((w, (i, j)), shape=(domain.n_active, domain.n_active)).tocsr()
        norm = np.asarray(h.sum(axis=1)).ravel()
        self.h = sp.diags(1.0 / norm) @ h
        self.ht = self.h.T.tocsr()

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.h @ x

    def chain(self, grad: np.ndarray) -> np.ndarray:
        return self.ht @ grad


def projection(x_tilde: np.ndarray, beta: float, eta: float = 0.5) -> np.ndarray:
    """Tanh Heaviside projection; identity-like for beta -> 0, step for
    beta -> inf. Monotone, maps [0,1] to [0,1]."""
    den = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return (np.tanh(beta * eta) + np.tanh(beta * (x_tilde - eta))) / den


def projection_derivative(x_tilde: np.ndarray, beta: float, eta: float = 0.5) -> np.ndarray:
    den = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return beta * (1.0 - np.tanh(beta * (x_tilde - eta)) ** 2) / den


@dataclass
class DensityField:
    """Raw, filtered, and projected (physical) densities over active elements."""

    raw: np.ndarray
    filtered: np.ndarray
    physical: np.ndarray

    def __post_init__(self):
        for arr in (self.raw, self.filtered, self.physical):
            if arr.min() < -1e-12 or arr.max() > 1.0 + 1e-12:
                raise ValidationError("densities must lie in [0, 1]")


def filter_and_project(domain: WheelDomain, raw: np.ndarray, r_min: float,
                       beta: float, eta: float = 0.5,
                       filt: DensityFilter | None = None) -> DensityField:
    """Cone filter then Heaviside projection; non-design elements are pinned
    afterwards (rim/hub to 1, void to 0)."""
    if beta < 0:
        raise ValidationError("beta must be >= 0")
    filt = filt or DensityFilter(domain, r_min)
    pinned = domain.pinned_values()
    x = np.where(np.isnan(pinned), raw, pinned)
    xt = filt.apply(x)
    xp = projection(xt, beta, eta) if beta > 0 else xt.copy()
    xp = np.where(np.isnan(pinned), xp, pinned)
    return DensityField(raw=x, filtered=xt, physical=np.clip(xp, 0.0, 1.0))


# ---------------------------------------------------------------------------
# FEM

@dataclass
class FemState2D:
    u: np.ndarray              # free-dof displacement vector
    k: sp.csc_matrix           # reduced stiffness (free dofs)
    f: np.ndarray              # reduced load vector
    u_full: np.ndarray         # displacements on the full node grid (2 per node)
    free_dofs: np.ndarray


def assemble_system(domain: WheelDomain, physical: np.ndarray, e0: float,
                    emin: float, penal: float) -> sp.csc_matrix:
    e = emin + physical**penal * (e0 - emin)
    vals = (e[:, None] * domain.ke.ravel()[None, :]).ravel()
    keep = domain._inside
    k = sp.coo_matrix((vals[keep], (domain._ik[keep], domain._jk[keep])),
                      shape=(len(domain.free_dofs), len(domain.free_dofs))).tocsc()
    # scipy's duplicate summation is not order-symmetric; a+b commutes exactly
    return 0.5 * (k + k.T)


def assemble_and_solve(domain: WheelDomain, densities: DensityField | np.ndarray,
                       e0: float = 1.0, emin: float = 1e-9, penal: float = 3.0,
                       ) -> tuple[FemState2D, float]:
    """Solve K(x) U = F with SIMP interpolation E = emin + x^p (e0 - emin).

    Returns the FEM state and the compliance U^T K U = F . U.
    """
    if len(domain.fixed_nodes) == 0:
        raise StructuralError("no fixed nodes: the system is singular")
    xphys = densities.physical if isinstance(densities, DensityField) else np.asarray(densities)
    k = assemble_system(domain, xphys, e0, emin, penal)
    if not np.any(domain.f_free):
        u = np.zeros(len(domain.free_dofs))
    else:
        try:
            lu = spla.splu(k)
            u = lu.solve(domain.f_free)
        except RuntimeError as exc:
            raise NumericError(f"sparse factorization failed: {exc}") from exc
        if not np.isfinite(u).all():
            raise NumericError("solver produced non-finite displacements")
        residual = np.abs(k @ u - domain.f_free).max()
        scale = max(np.abs(domain.f_free).max(), 1.0)
        if residual > 1e-6 * scale:
            raise NumericError(f"solver residual too large: {residual:.3e}")
    nn = domain.n + 1
    u_full = np.zeros(2 * nn * nn)
    u_full[domain.free_dofs] = u
    compliance = float(domain.f_free @ u)
    return FemState2D(u=u, k=k, f=domain.f_free, u_full=u_full,
                      free_dofs=domain.free_dofs), compliance


def element_energies(domain: WheelDomain, u_full: np.ndarray) -> np.ndarray:
    """Unit-modulus strain energy u_e^T k0 u_e per active element."""
    ue = u_full[domain.edof]
    return np.einsum("ij,jk,ik->i", ue, domain.ke, ue)


# ---------------------------------------------------------------------------
# problem + objective

@dataclass
class TopOptProblem:
    domain: WheelDomain
    x_r: np.ndarray                    # binarized reference over active elements
    lam: float = 0.0
    vol_frac: float = 0.5              # target mean physical density over design elems
    penal: float = 3.0
    e0: float = 1.0
    emin: float | None = None          # default 1e-9 * e0
    r_min: float = 1.5
    max_iter: int = 100
    move: float = 0.2
    beta_schedule: object = None       # callable it -> beta; default doubling in 5 steps
    move_tol: float = 1e-2

    def __post_init__(self):
        if self.vol_frac <= 0:
            raise ValidationError("vol_frac must be positive")
        if self.vol_frac > 1.0 + 1e-12:
            raise ValidationError("volume target exceeds design-space capacity")
        if self.lam < 0:
            raise ValidationError("lambda must be >= 0")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.emin is None:
            self.emin = 1e-9 * self.e0
        if self.beta_schedule is None:
            stage = max(1, self.max_iter // 5)
            self.beta_schedule = lambda it: float(2 ** min(4, (it - 1) // stage))
        self.x_r = np.asarray(self.x_r, dtype=np.float64)
        if self.x_r.shape != (self.domain.n_active,):
            raise ValidationError("x_r must be given per active element")


def objective_and_sensitivity(problem: TopOptProblem, raw: np.ndarray,
                              beta: float = 1.0,
                              filt: DensityFilter | None = None,
                              ) -> tuple[float, np.ndarray]:
    """Objective value and its gradient with respect to the raw densities.

    value = compliance + lambda * sum |x_r - x_physical| over active elements.
    The gradient combines the SIMP compliance sensitivity with the L1
    subgradient (0 where physical equals the reference) and back-propagates
    through projection and filter; entries of non-design elements are zero.
    """
    dom = problem.domain
    filt = filt or DensityFilter(dom, problem.r_min)
    dens = filter_and_project(dom, raw, problem.r_min, beta, filt=filt)
    state, compliance = assemble_and_solve(dom, dens, problem.e0, problem.emin,
                                           problem.penal)
    value = compliance + problem.lam * np.abs(problem.x_r - dens.physical).sum()

    ce = element_energies(dom, state.u_full)
    dc = -problem.penal * dens.physical ** (problem.penal - 1.0) \
        * (problem.e0 - problem.emin) * ce
    dl1 = -problem.lam * np.sign(problem.x_r - dens.physical)
    dphys = dc + dl1
    dphys[~dom.design] = 0.0           # pinned elements do not move
    grad = filt.chain(dphys * projection_derivative(dens.filtered, beta))
    grad[~dom.design] = 0.0
    return value, grad


def _volume_gradient(problem: TopOptProblem, filtered: np.ndarray, beta: float,
                     filt: DensityFilter) -> np.ndarray:
    dom = problem.domain
    dv = np.zeros(dom.n_active)
    dv[dom.design] = 1.0 / dom.n_design
    g = filt.chain(dv * projection_derivative(filtered, beta))
    g[~dom.design] = 0.0
    return g


def optimize(problem: TopOptProblem) -> "TopOptResult":
    """Run the projected-gradient SIMP loop with per-iteration volume bisection.

    The returned iterate satisfies |V(x_phys)/V0 - vol_frac| <= 1e-3 on the
    design elements.
    """
    dom = problem.domain
    filt = DensityFilter(dom, problem.r_min)
    free = dom.design
    if not free.any():
        raise ValidationError("domain has no design elements")

    x = np.full(dom.n_active, problem.vol_frac)
    comp_hist, obj_hist, vol_hist = [], [], []
    x_phys_prev = None
    converged = False
    iterations = 0

    for it in range(1, problem.max_iter + 1):
        iterations = it
        beta = float(problem.beta_schedule(it))
        dens = filter_and_project(dom, x, problem.r_min, beta, filt=filt)
        state, compliance = assemble_and_solve(dom, dens, problem.e0,
                                               problem.emin, problem.penal)
        value = compliance + problem.lam * np.abs(problem.x_r - dens.physical).sum()
        ce = element_energies(dom, state.u_full)
        dc = -problem.penal * dens.physical ** (problem.penal - 1.0) \
            * (problem.e0 - problem.emin) * ce
        dl1 = -problem.lam * np.sign(problem.x_r - dens.physical)
        dphys = dc + dl1
        dphys[~free] = 0.0
        grad = filt.chain(dphys * projection_derivative(dens.filtered, beta))
        grad[~free] = 0.0
        gvol = _volume_gradient(problem, dens.filtered, beta, filt)

        step = problem.move / max(np.abs(grad[free]).max(), 1e-12)
        x = _volume_constrained_step(problem, x, grad, gvol, step, beta, filt)

        dens_new = filter_and_project(dom, x, problem.r_min, beta, filt=filt)
        vol = dens_new.physical[free].mean()
        comp_hist.append(compliance)
        obj_hist.append(value)
        vol_hist.append(float(vol))

        if x_phys_prev is not None:
            delta = np.abs(dens_new.physical - x_phys_prev).max()
            # only call it converged once beta has reached its final stage
            if delta < problem.move_tol and beta >= problem.beta_schedule(problem.max_iter):
                converged = True
        x_phys_prev = dens_new.physical
        if converged:
            break

    beta = float(problem.beta_schedule(iterations))
    # volume clean-up: pure constraint steps until within tolerance
    for _ in range(25):
        dens = filter_and_project(dom, x, problem.r_min, beta, filt=filt)
        if abs(dens.physical[free].mean() - problem.vol_frac) <= 5e-4:
            break
        gvol = _volume_gradient(problem, dens.filtered, beta, filt)
        x = _volume_constrained_step(problem, x, np.zeros_like(x), gvol, 1.0,
                                     beta, filt)
    dens = filter_and_project(dom, x, problem.r_min, beta, filt=filt)
    state, compliance = assemble_and_solve(dom, dens, problem.e0, problem.emin,
                                           problem.penal)
    value = compliance + problem.lam * np.abs(problem.x_r - dens.physical).sum()
    vol = float(dens.physical[free].mean())
    if abs(vol - problem.vol_frac) > 1e-3:
        raise ValidationError(
            f"volume target {problem.vol_frac:.4f} unreachable (got {vol:.4f})")
    comp_hist.append(compliance)
    obj_hist.append(value)
    vol_hist.append(vol)
    return TopOptResult(density=dens, compliance_history=np.array(comp_hist),
                        objective_history=np.array(obj_hist),
                        volume_history=np.array(vol_hist), converged=converged,
                        iterations_used=iterations, problem=problem)


def _volume_constrained_step(problem: TopOptProblem, x: np.ndarray,
                             grad: np.ndarray, gvol: np.ndarray, step: float,
                             beta: float, filt: DensityFilter) -> np.ndarray:
    """One projected step x - step*(grad + mu*gvol) with mu bisected so the
    physical design-element volume hits the target (monotone in mu)."""
    dom = problem.domain
    free = dom.design
    lo = np.where(free, np.clip(x - problem.move, 0.0, 1.0), x)
    hi = np.where(free, np.clip(x + problem.move, 0.0, 1.0), x)
    gscale = max(np.abs(gvol[free]).max(), 1e-12)

    def candidate(mu):
        xn = np.clip(x - step * (grad + mu * gvol), lo, hi)
        return np.where(free, xn, x)

    def excess(mu):
        dens = filter_and_project(dom, candidate(mu), problem.r_min, beta, filt=filt)
        return dens.physical[free].mean() - problem.vol_frac

    span = problem.move / (step * gscale)
    mu_lo, mu_hi = -span, span
    for _ in range(60):
        if excess(mu_lo) >= 0:
            break
        mu_lo *= 2.0
    for _ in range(60):
        if excess(mu_hi) <= 0:
            break
        mu_hi *= 2.0
    if excess(mu_lo) < 0:              # target below reachable band
        return candidate(mu_lo)
    if excess(mu_hi) > 0:              # target above reachable band
        return candidate(mu_hi)
    for _ in range(80):
        mu = 0.5 * (mu_lo + mu_hi)
        e = excess(mu)
        if abs(e) <= 2e-5:
            return candidate(mu)
        if e > 0:
            mu_lo = mu
        else:
            mu_hi = mu
    return candidate(0.5 * (mu_lo + mu_hi))


@dataclass
class TopOptResult:
    density: DensityField
    compliance_history: np.ndarray
    objective_history: np.ndarray
    volume_history: np.ndarray
    converged: bool
    iterations_used: int
    problem: TopOptProblem = field(repr=False, default=None)

    def __post_init__(self):
        n = len(self.compliance_history)
        if not (len(self.objective_history) == len(self.volume_history) == n):
            raise ValidationError("history lengths must match")

    def to_image(self, id: str, provenance: str = "topopt") -> DesignImage:
        grid = self.problem.domain.to_grid(self.density.physical, fill=0.0)
        return DesignImage(pixels=np.clip(grid, 0.0, 1.0), id=id,
                           provenance=provenance)

    def l1_to_reference(self) -> float:
        """Normalized L1 distance to the reference over design elements."""
        d = self.problem.domain.design
        return float(np.abs(self.problem.x_r[d] - self.density.physical[d]).mean())


# ---------------------------------------------------------------------------
# generative sweep

DEFAULT_LEVELS = {
    "lambda": [0.0005, 0.005, 0.05, 0.5, 5.0],
    "shear_ratio": [0.0, 0.1, 0.2, 0.3, 0.4],
    "vol_frac": [0.7, 0.8, 0.9, 1.0, 1.1],   # multipliers on the reference fraction
}


def sweep(reference: DesignImage, levels: dict | None = None,
          geometry: WheelGeometry | None = None, max_iter: int = 100,
          r_min: float = 1.5, lam_scale: float = 1.0) -> DesignSet:
    """One optimization per Cartesian combination of levels.

    Volume levels are multipliers on the reference design's material fraction
    over the design region, clipped to capacity. Failures are recorded in the
    manifest and the sweep continues.
    """
    levels = dict(DEFAULT_LEVELS, **(levels or {}))
    for key in ("lambda", "shear_ratio", "vol_frac"):
        if not levels[key]:
            raise ValidationError(f"level list {key!r} is empty")
    geometry = geometry or WheelGeometry(n=reference.resolution[0])
    items, manifest = [], {}
    domains = {}
    for shear in levels["shear_ratio"]:
        domains[shear] = geometry.domain(shear)
    ref_frac = None
    for shear in levels["shear_ratio"]:
        dom = domains[shear]
        x_r = dom.from_image(reference)
        if ref_frac is None:
            ref_frac = x_r[dom.design].mean()
        for lam in levels["lambda"]:
            for mult in levels["vol_frac"]:
                vf = float(np.clip(mult * ref_frac, 0.05, 1.0))
                name = f"{reference.id}/l{lam:g}-s{shear:g}-v{mult:g}"
                row = {"reference": reference.id, "lambda": lam,
                       "shear_ratio": shear, "vol_frac_mult": mult,
                       "vol_frac": vf, "error": None}
                t0 = time.perf_counter()
                try:
                    prob = TopOptProblem(domain=dom, x_r=x_r,
                                         lam=lam * lam_scale, vol_frac=vf,
                                         r_min=r_min, max_iter=max_iter)
                    res = optimize(prob)
                    items.append(res.to_image(name))
                    row.update(converged=bool(res.converged),
                               iterations=res.iterations_used,
                               compliance=float(res.compliance_history[-1]),
                               l1_to_reference=res.l1_to_reference())
                except (ValidationError, StructuralError, NumericError) as exc:
                    row["error"] = str(exc)
                row["wall_s"] = time.perf_counter() - t0
                manifest[name] = row
    return DesignSet(items=items, manifest=manifest)
