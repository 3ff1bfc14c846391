"""Mean-field EM estimation of the kinetic Ising model from panels with missing entries.

The estimator alternates:

  E-step: solve the self-consistency fixed point for the posterior means m
          of hidden spins (damped Jacobi iteration of the tanh map);
  M-step: one accelerated gradient-ascent step on the Gaussian-corrected
          mean-field surrogate likelihood over (J, h, b), holding m fixed.

Surrogate objective, per transition t (targets at t+1):

    sum_obs  [ s_i(t+1) g_i(t) - log 2 cosh g_i(t) ]
  + sum_hid  [ m_a(t+1) g_a(t) - log 2 cosh g_a(t) ]
  + sum_hid  S(m_a(t+1))                       (binary entropy of the mean)
  - 1/2 sum_obs (1 - tanh^2 g_i) sum_hid_b J_ib^2 (1 - m_b^2(t))
  - 1/2 sum_hid (m_a^2(t+1) - tanh^2 g_a) sum_hid_b J_ab^2 (1 - m_b^2(t))

with g(t) = J u(t) + h + b r(t) and u(t) the observed sign where present,
m otherwise.  The self-consistency map and the analytic gradients below are
the exact stationarity conditions / partial derivatives of this objective,
so the two half-steps optimize the same function.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .model import ModelParams, ObservationPanel, log2cosh

__all__ = [
    "InferenceState",
    "FitConfig",
    "FitReport",
    "SelfConsistencyResult",
    "effective_fields",
    "approx_log_likelihood",
    "analytic_gradients",
    "self_consistency_step",
    "solve_self_consistency",
    "fit",
    "hidden_sign_estimate",
]

logger = logging.getLogger(__name__)

# posterior means are kept strictly inside (-1, 1); clipping events are logged
M_CLIP = 1.0 - 1e-12


def hidden_sign_estimate(m: np.ndarray) -> np.ndarray:
    """Sign estimator for opinions, with the tie rule sign(0) = +1."""
    return np.where(np.asarray(m) >= 0, 1, -1).astype(np.int8)


@dataclass
class InferenceState:
    """Posterior means m (T x N, equal to the observed sign where observed)
    and effective fields g (T x N; row t is the field computed from time t)."""

    m: np.ndarray
    g: np.ndarray


@dataclass
class SelfConsistencyResult:
    m: np.ndarray
    residual: float
    iterations: int
    converged: bool


@dataclass
class FitConfig:
    """Knobs for the EM fit; defaults follow the artifact-wide conventions."""

    learning_rate: float = None     # initial M-step size; default 1/T
    max_iter: int = 2000            # EM iterations
    tol_param: float = 1e-5         # max absolute parameter change
    tol_obj: float = 1e-9           # relative surrogate change
    tol_self: float = 1e-8          # self-consistency residual
    max_self_iter: int = 300
    damping: float = 0.7            # gamma for the self-consistency map
    zero_diagonal: bool = False     # constrain J_ii = 0 during the fit
    freeze_m: bool = False          # skip E-steps, hold m at its warm start
    min_observed_fraction: float = 0.0  # inference accepts any p_i > 0


@dataclass
class FitReport:
    params: ModelParams
    state: InferenceState
    loglik_trace: np.ndarray
    converged: bool
    iterations: int
    degenerate_columns: list = field(default_factory=list)
    self_consistency_converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def hidden_signs(self) -> np.ndarray:
        return hidden_sign_estimate(self.state.m)


# ---------------------------------------------------------------------------
# internal dense workspace
# ---------------------------------------------------------------------------

class _Panel:
    """Dense float views of a panel used by the inner loops."""

    def __init__(self, panel: ObservationPanel):
        self.S = panel.signs.astype(float)
        self.obs = panel.signs != 0
        self.hid = ~self.obs
        self.r = panel.regressor
        self.T, self.N = panel.signs.shape


def _initial_m(pdata: _Panel) -> np.ndarray:
    return np.where(pdata.obs, pdata.S, 0.0)


def _force_observed(pdata: _Panel, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float).copy()
    if m.shape != (pdata.T, pdata.N):
        raise ValueError("m must be a T x N matrix")
    if np.any(np.abs(m) > 1.0 + 1e-9):
        raise ValueError("posterior means must lie in [-1, 1]")
    np.clip(m, -1.0, 1.0, out=m)
    m[pdata.obs] = pdata.S[pdata.obs]
    return m


def _fields(params: ModelParams, pdata: _Panel, m: np.ndarray) -> np.ndarray:
    return m @ params.J.T + params.h[None, :] + np.outer(pdata.r, params.b)


def _core(params, pdata, m):
    """Shared intermediates for objective / gradients / self-consistency.

    Returns (G, Th, S2, V, C, A, E):
      G  T x N     fields from time t
      Th, S2       tanh(G), sech^2(G)
      V  T x N     (1 - m^2) on hidden entries, 0 on observed
      C  T x N     C[t,i] = sum_b J_ib^2 V[t,b]
      A  (T-1) x N transition weight: sech^2 for observed targets,
                   m^2(t+1) - tanh^2 for hidden targets
      E  (T-1) x N residual: m(t+1) - tanh G + tanh G sech^2 G * C
    """
    J2 = params.J * params.J
    G = _fields(params, pdata, m)
    Th = np.tanh(G)
    S2 = 1.0 - Th * Th
    V = np.where(pdata.hid, 1.0 - m * m, 0.0)
    C = V @ J2.T
    Thc, S2c, Cc = Th[:-1], S2[:-1], C[:-1]
    X = m[1:]
    A = np.where(pdata.obs[1:], S2c, X * X - Thc * Thc)
    E = X - Thc + Thc * S2c * Cc
    return G, Th, S2, V, C, A, E


def _objective(params, pdata, m, core=None):
    if core is None:
        core = _core(params, pdata, m)
    G, _, _, _, C, A, _ = core
    X = m[1:]
    val = np.sum(X * G[:-1] - log2cosh(G[:-1]))
    hid_t = pdata.hid[1:]
    if hid_t.any():
        mh = X[hid_t]
        val -= np.sum(xlogy(0.5 * (1.0 + mh), 0.5 * (1.0 + mh)))
        val -= np.sum(xlogy(0.5 * (1.0 - mh), 0.5 * (1.0 - mh)))
    val -= 0.5 * np.sum(A * C[:-1])
    return float(val)


def _gradients(params, pdata, m, core=None):
    if core is None:
        core = _core(params, pdata, m)
    _, _, _, V, _, A, E = core
    dh = E.sum(axis=0)
    db = E.T @ pdata.r[:-1]
    dJ = E.T @ m[:-1] - params.J * (A.T @ V[:-1])
    return dJ, dh, db


def _self_consistency_once(params, pdata, m):
    """One synchronous (Jacobi) application of the tanh map to hidden entries.

    Boundary convention: sums referencing t-1 at the first step and t+1 at
    the last step are empty.
    """
    G, _, _, V, _, A, E = _core(params, pdata, m)
    J2 = params.J * params.J
    phi = np.zeros_like(m)
    phi[1:] += G[:-1]                       # drive g_a(t-1)
    phi[:-1] += m[:-1] * (A @ J2)           # self-term, t+1 sums
    phi[1:] -= m[1:] * (V[:-1] @ J2.T)      # self-term, t-1 sum
    phi[:-1] += E @ params.J                # error feedback + curvature terms
    new = m.copy()
    upd = np.tanh(phi[pdata.hid])
    clipped = np.abs(upd) >= M_CLIP
    if clipped.any():
        logger.debug("clipping %d posterior means at +-(1-1e-12)", clipped.sum())
        upd = np.clip(upd, -M_CLIP, M_CLIP)
    new[pdata.hid] = upd
    return new


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def effective_fields(params: ModelParams, panel: ObservationPanel,
                     m: np.ndarray) -> np.ndarray:
    """T x N fields g[t, i] = sum_obs J_ij s_j(t) + sum_hid J_ib m_b(t) + h_i + b_i r(t)."""
    pdata = _Panel(panel)
    m = _force_observed(pdata, m)
    return _fields(params, pdata, m)


def approx_log_likelihood(params: ModelParams, panel: ObservationPanel,
                          m: np.ndarray) -> float:
    """Gaussian-corrected mean-field surrogate log-likelihood.

    Reduces exactly to the complete-data log-likelihood when the panel has
    no missing entries.
    """
    pdata = _Panel(panel)
    m = _force_observed(pdata, m)
    return _objective(params, pdata, m)


def analytic_gradients(params: ModelParams, panel: ObservationPanel,
                       m: np.ndarray):
    """Partial derivatives (dJ, dh, db) of the surrogate at fixed m
    (EM M-step convention: the fixed point is not differentiated through)."""
    pdata = _Panel(panel)
    m = _force_observed(pdata, m)
    return _gradients(params, pdata, m)


def self_consistency_step(params: ModelParams, panel: ObservationPanel,
                          m: np.ndarray) -> np.ndarray:
    """One synchronous update of all hidden posterior means; observed
    positions are returned untouched."""
    pdata = _Panel(panel)
    m = _force_observed(pdata, m)
    return _self_consistency_once(params, pdata, m)


def _solve_selfcon(params, pdata, m, tol, max_iter, damping):
    """Damped Jacobi iteration with stall detection.

    At strong coupling the synchronous map can 2-cycle (linearization
    eigenvalues below -1); when the residual stops improving the damping
    factor is halved, which always restores stability for small enough
    gamma.  The gamma actually used is returned so callers can reuse it.
    """
    if not pdata.hid.any():
        return SelfConsistencyResult(m, 0.0, 0, True), damping
    gamma = damping
    residual = np.inf
    best = np.inf
    stall = 0
    for it in range(1, max_iter + 1):
        stepped = _self_consistency_once(params, pdata, m)
        new = gamma * stepped + (1.0 - gamma) * m
        new[pdata.obs] = pdata.S[pdata.obs]
        residual = float(np.max(np.abs(new - m)))
        m = new
        if residual < tol:
            return SelfConsistencyResult(m, residual, it, True), gamma
        if residual < best:
            best = residual
            stall = 0
        else:
            stall += 1
            if stall >= 6 and gamma > 0.05:
                gamma = max(0.05, 0.5 * gamma)
                logger.debug("self-consistency stall, damping -> %.3f", gamma)
                best = residual
                stall = 0
    return SelfConsistencyResult(m, residual, max_iter, False), gamma


def solve_self_consistency(params: ModelParams, panel: ObservationPanel,
                           m0: np.ndarray = None, tol: float = 1e-8,
                           max_iter: int = 300,
                           damping: float = 0.7) -> SelfConsistencyResult:
    """Iterate the damped map (new = gamma*step + (1-gamma)*old) to a fixed point.

    Non-convergence is flagged, not fatal; the last iterate is returned.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not (0.0 < damping <= 1.0):
        raise ValueError("damping must lie in (0, 1]")
    pdata = _Panel(panel)
    m = _initial_m(pdata) if m0 is None else _force_observed(pdata, m0)
    result, _ = _solve_selfcon(params, pdata, m, tol, max_iter, damping)
    return result


def _init_params(pdata: _Panel, zero_diagonal: bool) -> ModelParams:
    params = ModelParams.zeros(pdata.N)
    n_obs = pdata.obs.sum(axis=0)
    means = np.divide(pdata.S.sum(axis=0), n_obs, out=np.zeros(pdata.N),
                      where=n_obs > 0)
    params.h = np.arctanh(np.clip(means, -0.999, 0.999))
    return params


def fit(panel: ObservationPanel, config: FitConfig = None,
        support_mask: np.ndarray = None, init_params: ModelParams = None,
        init_m: np.ndarray = None) -> FitReport:
    """Mean-field EM fit of (J, h, b) plus posterior means of hidden opinions.

    Parameters
    ----------
    panel : ObservationPanel
        T >= 10 rows; columns with no observation at all are rejected.
    config : FitConfig
    support_mask : bool (N, N), optional
        Restrict J to this support (used by decimation refits); masked-out
        entries are held at zero.
    init_params, init_m : optional warm starts.

    Returns a FitReport whose loglik_trace is the surrogate value after each
    EM iteration; the trace is non-decreasing up to 1e-6 relative tolerance.
    """
    config = config or FitConfig()
    pdata = _Panel(panel)
    if pdata.T < 10:
        raise ValueError("need at least 10 time steps to fit")
    p_i = pdata.obs.mean(axis=0)
    if np.any(p_i == 0):
        bad = [panel.trader_ids[i] for i in np.flatnonzero(p_i == 0)]
        raise ValueError(f"columns with no observations: {bad}")
    degenerate = []
    for i in range(pdata.N):
        col = pdata.S[pdata.obs[:, i], i]
        if col.size and np.all(col == col[0]):
            degenerate.append(panel.trader_ids[i])
    if degenerate:
        logger.warning("constant observed sign for columns %s", degenerate)

    mask = None
    if support_mask is not None:
        mask = np.asarray(support_mask, dtype=bool)
        if mask.shape != (pdata.N, pdata.N):
            raise ValueError("support_mask must be N x N")
    if config.zero_diagonal:
        diag_off = ~np.eye(pdata.N, dtype=bool)
        mask = diag_off if mask is None else (mask & diag_off)

    params = init_params.copy() if init_params is not None \
        else _init_params(pdata, config.zero_diagonal)
    if mask is not None:
        params.J = params.J * mask

    m = _initial_m(pdata) if init_m is None else _force_observed(pdata, init_m)
    gamma = config.damping
    sc_ok = True
    if not config.freeze_m:
        sc, gamma = _solve_selfcon(params, pdata, m, config.tol_self,
                                   config.max_self_iter, gamma)
        m = sc.m
        sc_ok = sc.converged
    obj = _objective(params, pdata, m)

    step = config.learning_rate if config.learning_rate is not None \
        else 1.0 / pdata.T
    # Nesterov-style momentum with objective-based restart, backtracking and a
    # trust region.  The Gaussian-corrected surrogate is a local expansion and
    # grows without bound for very large J, so candidates are kept within a
    # bounded move of the current iterate and must have a finite, improving
    # objective.
    trust = 0.25
    prev = (params.J.copy(), params.h.copy(), params.b.copy())
    t_mom = 1.0
    trace = []
    converged = False
    iterations = 0
    n_backtracks = 0

    def masked(dJ):
        return dJ * mask if mask is not None else dJ

    def capped(base, dJ, dh, db, s):
        gmax = max(np.max(np.abs(dJ)), np.max(np.abs(dh)), np.max(np.abs(db)))
        s = min(s, trust / gmax) if gmax > 0 else s
        return ModelParams(base[0] + s * masked(dJ), base[1] + s * dh,
                           base[2] + s * db)

    for iterations in range(1, config.max_iter + 1):
        J0, h0, b0 = params.J.copy(), params.h.copy(), params.b.copy()

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        beta = (t_mom - 1.0) / t_next
        dy = max(np.max(np.abs(J0 - prev[0])), np.max(np.abs(h0 - prev[1])),
                 np.max(np.abs(b0 - prev[2])))
        accepted = False
        if beta > 0 and dy <= trust:
            yJ = J0 + beta * (J0 - prev[0])
            yh = h0 + beta * (h0 - prev[1])
            yb = b0 + beta * (b0 - prev[2])
            look = ModelParams(yJ, yh, yb)
            dJ, dh, db = _gradients(look, pdata, m)
            cand = capped((yJ, yh, yb), dJ, dh, db, step)
            cand_obj = _objective(cand, pdata, m)
            if np.isfinite(cand_obj) and cand_obj >= obj:
                accepted = True
                t_mom = t_next
        if not accepted:
            # restart momentum, plain ascent with backtracking
            t_mom = 1.0
            dJ, dh, db = _gradients(params, pdata, m)
            for _ in range(60):
                cand = capped((J0, h0, b0), dJ, dh, db, step)
                cand_obj = _objective(cand, pdata, m)
                if np.isfinite(cand_obj) and cand_obj >= obj:
                    accepted = True
                    break
                step *= 0.5
                n_backtracks += 1
        if accepted:
            prev = (J0, h0, b0)
            params = cand
            step *= 1.25
            logger.debug("iter %d step %.3e", iterations, step)

        dparam = max(np.max(np.abs(params.J - J0)),
                     np.max(np.abs(params.h - h0)),
                     np.max(np.abs(params.b - b0)))
        if not config.freeze_m:
            # solve the E-step only as tightly as the current parameter
            # motion warrants; final iterations run at the full tol_self
            tol_e = min(1e-3, max(config.tol_self, 0.01 * dparam))
            sc, gamma = _solve_selfcon(params, pdata, m, tol_e,
                                       config.max_self_iter, gamma)
            m = sc.m
            sc_ok = sc.converged
        new_obj = _objective(params, pdata, m)
        trace.append(new_obj)

        if dparam < config.tol_param and \
                abs(new_obj - obj) <= config.tol_obj * (1.0 + abs(obj)):
            obj = new_obj
            converged = True
            break
        obj = new_obj

    if pdata.hid.any() and not config.freeze_m:
        sc, gamma = _solve_selfcon(params, pdata, m, config.tol_self,
                                   config.max_self_iter, gamma)
        m = sc.m
        sc_ok = sc.converged

    state = InferenceState(m=m, g=_fields(params, pdata, m))
    return FitReport(
        params=params,
        state=state,
        loglik_trace=np.asarray(trace),
        converged=converged,
        iterations=iterations,
        degenerate_columns=degenerate,
        self_consistency_converged=sc_ok,
        diagnostics={"final_step": step, "n_backtracks": n_backtracks},
    )
