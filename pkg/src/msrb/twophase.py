"""IMPES two-phase flow on the reduced velocity model.

Pressure/velocity solves use the reduced space with the total mobility
folded in as a cellwise rescaling of 1/k; the saturation equation is an
explicit donor-cell finite-volume update on the fine grid with the
reconstructed velocity.  Because every multiscale basis function has
blockwise-constant divergence and the two-spot source is blockwise
constant, the reconstructed velocity is locally conservative on fine cells,
which keeps the explicit update inside the maximum principle under CFL.
Sign convention: v = -eta(S) k grad p.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError
from .linalg import solve_saddle
from .mixedfem import mass_matrix
from .separation import staomp


@dataclass
class TwoPhaseConfig:
    viscosity_ratio: float = 0.1      # mu_w / mu_o
    mu_oil: float = 1.0
    dt: float | None = None           # None: CFL-limited automatic step
    end_time: float = 100.0
    cfl_safety: float = 0.5
    pressure_update_interval: int = 10
    injection_block: int | None = None   # default: top-left coarse cell
    production_block: int | None = None  # default: bottom-right coarse cell

    @property
    def mu_water(self):
        return self.viscosity_ratio * self.mu_oil

    def __post_init__(self):
        if self.dt is not None and self.dt <= 0:
            raise ConfigurationError("dt must be positive")


@dataclass
class TwoPhaseState:
    S: np.ndarray
    v: np.ndarray
    t: float


@dataclass
class WaterCutSeries:
    times: np.ndarray
    values: np.ndarray


def _clip_saturation(S):
    S = np.asarray(S, dtype=float)
    if np.any(S < -1e-12) or np.any(S > 1 + 1e-12):
        warnings.warn("saturation outside [0,1] clipped", stacklevel=3)
    return np.clip(S, 0.0, 1.0)


def fractional_flow(S, ratio=0.1):
    """Water fraction of the total flux, S^2 / (S^2 + ratio (1-S)^2)."""
    S = _clip_saturation(S)
    return S**2 / (S**2 + ratio * (1.0 - S) ** 2)


def mobility(S, cfg=None):
    """Total mobility S^2/mu_w + (1-S)^2/mu_o."""
    cfg = cfg or TwoPhaseConfig()
    S = _clip_saturation(S)
    return S**2 / cfg.mu_water + (1.0 - S) ** 2 / cfg.mu_oil


def flux_slope_bound(cfg, n=4001):
    """sup over S of max(f_w(S)/S, (1-f_w(S))/(1-S)); CFL contraction factor."""
    S = np.linspace(1e-9, 1.0 - 1e-9, n)
    fw = fractional_flow(S, cfg.viscosity_ratio)
    return float(max(np.max(fw / S), np.max((1.0 - fw) / (1.0 - S)), 1.0))


def two_spot_source(grid, cfg=None):
    """Cellwise source: +1 on the injection coarse block, -1 on production."""
    cfg = cfg or TwoPhaseConfig()
    inj = (cfg.injection_block if cfg.injection_block is not None
           else (grid.ny_c - 1) * grid.nx_c)
    prod = (cfg.production_block if cfg.production_block is not None
            else grid.nx_c - 1)
    q = np.zeros(grid.n_cells)
    q[grid.fine_cell_to_coarse == inj] = 1.0
    q[grid.fine_cell_to_coarse == prod] = -1.0
    if abs(q.sum()) > 1e-12:
        raise ConfigurationError("two-spot source does not balance")
    return q


# ---------------------------------------------------------------------------
# mobility-coupled reduced pressure solve
# ---------------------------------------------------------------------------


class MobilityReducedModel:
    """Reduced velocity model with per-cell mobility reweighting.

    Precomputes Cholesky-factored per-cell contributions L^T Z_K so that
    the reduced mass for arbitrary cell weights is a single GEMM,
    sum_K w_K (L^T Z_K)^T (L^T Z_K).
    """

    def __init__(self, rs, ad, spaces, cfg=None):
        self.rs = rs
        self.ad = ad
        self.spaces = spaces
        self.cfg = cfg or TwoPhaseConfig()
        grid = rs.grid
        area = grid.cell_area
        local = area / 6.0 * np.array([
            [2.0, 1.0, 0.0, 0.0],
            [1.0, 2.0, 0.0, 0.0],
            [0.0, 0.0, 2.0, 1.0],
            [0.0, 0.0, 1.0, 2.0]])
        Lc = np.linalg.cholesky(local)
        ZC = rs.Z[grid.cell_edges]            # (n_cells, 4, n_rb)
        G = np.einsum("ab,kbr->kar", Lc.T, ZC)
        self._Gflat = G.reshape(-1, rs.n_rb)  # rows blocked per cell
        self._q = None

    def reduced_mass(self, w_cells):
        """Z^T M[w] Z via the precomputed per-cell factors."""
        w4 = np.repeat(np.asarray(w_cells, dtype=float), 4)
        return self._Gflat.T @ (w4[:, None] * self._Gflat)

    def reduced_mass_exact(self, w_cells):
        """Assembly-then-projection fallback validating the fast path."""
        M = mass_matrix(self.rs.grid, w_cells)
        return self.rs.Z.T @ (M @ self.rs.Z)

    def solve_pressure(self, mu, S, q_cells, tol=1e-9):
        """Reduced mixed solve with coefficient eta(S) k; returns fine v."""
        rs = self.rs
        w = self.ad.reconstruct(np.atleast_2d(mu))[0] / mobility(S, self.cfg)
        if np.any(w <= 0):
            raise NumericalError("mobility-scaled coefficient not positive")
        K = self.reduced_mass(w)
        F_N = rs.Qc.T @ (rs.grid.cell_area * q_cells)
        v_N, _ = solve_saddle(K, rs.B_N, np.zeros(rs.n_rb), F_N,
                              pressure_nullspace=True,
                              pressure_weights=rs.p_weights, tol=tol)
        return rs.Z @ v_N


# ---------------------------------------------------------------------------
# explicit donor-cell transport
# ---------------------------------------------------------------------------


def cfl_time_step(grid, v, q_cells, cfg, slope_bound=None):
    """Largest stable transport step: safety * |K| / (L_f * outflux)."""
    L_f = flux_slope_bound(cfg) if slope_bound is None else slope_bound
    out = outflux_per_cell(grid, v, q_cells)
    with np.errstate(divide="ignore"):
        limits = grid.cell_area / np.maximum(out, 1e-300)
    return cfg.cfl_safety * float(limits.min()) / L_f


def outflux_per_cell(grid, v, q_cells):
    """Total outgoing flux per cell, including the sink rate."""
    e = grid.cell_edges
    signed = grid.cell_edge_signs * v[e] * grid.cell_edge_lengths
    out = np.sum(np.maximum(signed, 0.0), axis=1)
    return out + np.maximum(-q_cells, 0.0) * grid.cell_area


def transport_step(grid, S, v, q_cells, dt, cfg, fw=None):
    """One explicit donor-cell update of the water saturation."""
    ratio = cfg.viscosity_ratio
    if fw is None:
        fw = lambda s: fractional_flow(s, ratio)
    neg, pos = grid.edge_cells[:, 0], grid.edge_cells[:, 1]
    donor = np.where(v >= 0.0, neg, pos)
    S_up = np.where(donor >= 0, S[np.maximum(donor, 0)], 0.0)
    phi = fw(S_up) * v * grid.edge_length      # water flux, +axis oriented
    div_w = np.zeros(grid.n_cells)
    ok = neg >= 0
    np.add.at(div_w, neg[ok], phi[ok])
    ok = pos >= 0
    np.subtract.at(div_w, pos[ok], phi[ok])
    q_s = np.maximum(q_cells, 0.0) + fw(S) * np.minimum(q_cells, 0.0)
    S_new = S - dt / grid.cell_area * div_w + dt * q_s
    return S_new, q_s


def impes_step(state, model, mu, q_cells, dt=None):
    """Pressure solve, fine-velocity reconstruction, one transport update."""
    grid = model.rs.grid
    cfg = model.cfg
    v = model.solve_pressure(mu, state.S, q_cells)
    limit = cfl_time_step(grid, v, q_cells, cfg)
    dt = cfg.dt if dt is None and cfg.dt is not None else dt
    if dt is None:
        dt = limit
    hard = cfg.cfl_safety * grid.cell_area / np.maximum(
        outflux_per_cell(grid, v, q_cells), 1e-300)
    if dt > hard.min() * (1 + 1e-12):
        cell = int(np.argmin(hard))
        raise ConfigurationError(
            f"time step {dt:.3e} violates the CFL limit "
            f"{hard.min():.3e} at cell {cell}")
    S_new, _ = transport_step(grid, state.S, v, q_cells, dt, cfg)
    return TwoPhaseState(S_new, v, state.t + dt)


def water_cut(grid, S, q_cells, cfg):
    """Fraction of water in the produced stream at the sink cells."""
    sink = q_cells < 0
    q_t = float(np.sum(-q_cells[sink]) * grid.cell_area)
    if q_t == 0.0:
        return 0.0
    fw = fractional_flow(S[sink], cfg.viscosity_ratio)
    q_w = float(np.sum(fw * (-q_cells[sink])) * grid.cell_area)
    return q_w / q_t


def simulate(model, mu, record_times, q_cells=None, progress=None):
    """March IMPES to the last recorded time.

    The reduced velocity space is built once (it enters through ``model``)
    and reused at every time level; the pressure is re-solved every
    ``pressure_update_interval`` transport steps.  Returns the saturation
    snapshots at the recorded times and the full water-cut series.
    """
    rs = model.rs
    grid = rs.grid
    cfg = model.cfg
    if q_cells is None:
        q_cells = two_spot_source(grid, cfg)
    record_times = np.sort(np.asarray(record_times, dtype=float))
    t_end = record_times[-1]
    slope = flux_slope_bound(cfg)

    S = np.zeros(grid.n_cells)
    t = 0.0
    v = model.solve_pressure(mu, S, q_cells)
    history = {}
    wc_t, wc_v = [0.0], [water_cut(grid, S, q_cells, cfg)]
    next_rec = 0
    steps = 0
    while t < t_end - 1e-12:
        if steps and steps % cfg.pressure_update_interval == 0:
            v = model.solve_pressure(mu, S, q_cells)
        dt = cfg.dt if cfg.dt is not None else cfl_time_step(
            grid, v, q_cells, cfg, slope_bound=slope)
        while next_rec < len(record_times) and \
                record_times[next_rec] <= t + 1e-12:
            history[record_times[next_rec]] = S.copy()
            next_rec += 1
        if next_rec < len(record_times):
            dt = min(dt, record_times[next_rec] - t)
        S, _ = transport_step(grid, S, v, q_cells, dt, cfg)
        if S.min() < -1e-10 or S.max() > 1 + 1e-10:
            raise NumericalError(
                f"saturation left [0,1] at t={t + dt:.4g}: "
                f"[{S.min():.3e}, {S.max():.3e}]")
        S = np.clip(S, 0.0, 1.0)
        t += dt
        steps += 1
        wc_t.append(t)
        wc_v.append(water_cut(grid, S, q_cells, cfg))
        if progress:
            progress(t, S)
    for tr in record_times[next_rec:]:
        if tr <= t + 1e-9:
            history[tr] = S.copy()
    return history, WaterCutSeries(np.array(wc_t), np.array(wc_v))


def ensemble_stats(fields):
    """Unbiased cellwise mean and variance over ensemble members."""
    fields = np.asarray(fields, dtype=float)
    if fields.shape[0] < 2:
        raise ValueError("variance needs at least two samples")
    return fields.mean(axis=0), fields.var(axis=0, ddof=1)


def mass_balance_residual(grid, S_old, S_new, dt, q_s):
    """| sum |K| dS - dt sum |K| q_s |; boundary is no-flow."""
    lhs = grid.cell_area * np.sum(S_new - S_old)
    rhs = dt * grid.cell_area * np.sum(q_s)
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# sparse surrogates of the transport outputs
# ---------------------------------------------------------------------------


def saturation_surrogate(saturations, mus, basis, x_indices, mu_indices,
                         eps_on, n_modes=4, max_terms=None):
    """Sparse tensor surrogate of S(x, t; mu) over flattened space-time.

    ``saturations``: (n_samples, n_times, n_cells); spatial modes live on
    the flattened (time, cell) axis and ``x_indices`` refers to it.
    """
    snaps = np.asarray(saturations, dtype=float)
    flat = snaps.reshape(snaps.shape[0], -1)
    return staomp(flat, mus, n_modes, basis, x_indices, mu_indices, eps_on,
                  max_terms=max_terms)


def watercut_surrogate(watercuts, mus, basis, t_indices, mu_indices, eps_on,
                       n_modes=6, max_terms=None):
    """Sparse tensor surrogate of the water-cut curves W(t; mu)."""
    W = np.asarray(watercuts, dtype=float)
    return staomp(W, mus, n_modes, basis, t_indices, mu_indices, eps_on,
                  max_terms=max_terms)
