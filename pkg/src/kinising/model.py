"""Kinetic Ising model: transition probabilities, simulation, complete-data likelihood.

The model is a discrete-time Markov chain over N spins y in {-1,+1}^N.
Conditional on the past, spins at t+1 are independent with

    P[y_i(t+1) | y(t)] = exp(y_i(t+1) g_i(t)) / (2 cosh g_i(t)),
    g_i(t) = sum_j J_ij y_j(t) + h_i + b_i r(t),

where r(t) is an external regressor series (e.g. lagged log-returns).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelParams",
    "SpinTrajectory",
    "ObservationPanel",
    "log2cosh",
    "transition_probability",
    "simulate",
    "mask_panel",
    "complete_log_likelihood",
]


def log2cosh(x):
    """Overflow-safe log(2 cosh(x)) = |x| + log(1 + exp(-2|x|))."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax))


@dataclass
class ModelParams:
    """Couplings J (row i = incoming influences on spin i), biases h, regressor loadings b.

    The diagonal of J (self-coupling, i.e. lag-1 autocorrelation) is a regular
    parameter and is never implicitly zeroed.
    """

    J: np.ndarray
    h: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        n = self.J.shape[0]
        if self.J.ndim != 2 or self.J.shape != (n, n):
            raise ValueError(f"J must be square, got shape {self.J.shape}")
        if self.h.shape != (n,) or self.b.shape != (n,):
            raise ValueError("h and b must be length-N vectors matching J")
        if not (np.all(np.isfinite(self.J)) and np.all(np.isfinite(self.h))
                and np.all(np.isfinite(self.b))):
            raise ValueError("model parameters must be finite")

    @property
    def n_spins(self) -> int:
        return self.J.shape[0]

    @classmethod
    def zeros(cls, n: int) -> "ModelParams":
        return cls(np.zeros((n, n)), np.zeros(n), np.zeros(n))

    def copy(self) -> "ModelParams":
        return ModelParams(self.J.copy(), self.h.copy(), self.b.copy())


@dataclass
class SpinTrajectory:
    """Fully observed T x N matrix of +-1 states."""

    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states)
        if self.states.ndim != 2:
            raise ValueError("states must be a T x N matrix")
        if not np.all(np.abs(self.states) == 1):
            raise ValueError("states must be +-1")
        self.states = self.states.astype(np.int8)

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]

    @property
    def n_spins(self) -> int:
        return self.states.shape[1]


def _default_ids(n: int) -> list:
    return [f"trader{i}" for i in range(n)]


@dataclass
class ObservationPanel:
    """Trade-sign panel with missing entries.

    signs: T x N int8 matrix over {-1, 0, +1}; 0 marks a missing observation
    (the trader was idle in that bar, opinion hidden).  regressor is the
    external series r(t) aligned with rows; timestamps are strictly
    increasing.  The observed/hidden partition at each time step stands in
    for the selector matrices of the underlying state-space formulation.
    """

    signs: np.ndarray
    regressor: np.ndarray = None
    timestamps: np.ndarray = None
    trader_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.signs = np.asarray(self.signs)
        if self.signs.ndim != 2:
            raise ValueError("signs must be a T x N matrix")
        vals = np.unique(self.signs)
        if not np.all(np.isin(vals, (-1, 0, 1))):
            raise ValueError("sign entries must be -1, +1 or 0 (missing)")
        self.signs = self.signs.astype(np.int8)
        t, n = self.signs.shape
        if self.regressor is None:
            self.regressor = np.zeros(t)
        self.regressor = np.asarray(self.regressor, dtype=float)
        if self.regressor.shape != (t,):
            raise ValueError("regressor must have length T")
        if not np.all(np.isfinite(self.regressor)):
            raise ValueError("regressor must be finite")
        if self.timestamps is None:
            self.timestamps = np.arange(t, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps)
        if self.timestamps.shape != (t,):
            raise ValueError("timestamps must have length T")
        if t > 1 and not np.all(np.diff(self.timestamps.astype(float)) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if not self.trader_ids:
            self.trader_ids = _default_ids(n)
        if len(self.trader_ids) != n:
            raise ValueError("trader_ids must have length N")

    @property
    def n_steps(self) -> int:
        return self.signs.shape[0]

    @property
    def n_traders(self) -> int:
        return self.signs.shape[1]

    @property
    def observed(self) -> np.ndarray:
        """Boolean T x N mask of observed entries."""
        return self.signs != 0

    @property
    def observed_fraction(self) -> np.ndarray:
        """Per-trader fraction of observed bars, p_i in [0, 1]."""
        return self.observed.mean(axis=0)


def _fields(params: ModelParams, state: np.ndarray, r: float) -> np.ndarray:
    return params.J @ state + params.h + params.b * r


def transition_probability(params: ModelParams, prev_state, r_prev: float,
                           next_state) -> float:
    """Exact one-step probability P[next_state | prev_state] under the model.

    Factorizes over spins: prod_i exp(y_i' g_i) / (2 cosh g_i) with
    g = J y + h + b r.  Always in (0, 1].
    """
    prev = np.asarray(prev_state, dtype=float)
    nxt = np.asarray(next_state, dtype=float)
    n = params.n_spins
    if prev.shape != (n,) or nxt.shape != (n,):
        raise ValueError("state vectors must have length N")
    if not (np.all(np.abs(prev) == 1) and np.all(np.abs(nxt) == 1)):
        raise ValueError("states must be +-1 vectors")
    if not np.isfinite(r_prev):
        raise ValueError("regressor value must be finite")
    g = _fields(params, prev, r_prev)
    return float(np.exp(np.sum(nxt * g - log2cosh(g))))


def simulate(params: ModelParams, regressor, initial_state=None,
             seed: int = 0) -> SpinTrajectory:
    """Simulate a length-T trajectory; T is the regressor length.

    P(y_i(t+1) = +1) = sigmoid(2 g_i(t)).  Bit-reproducible for a fixed seed.
    When no initial state is supplied it is drawn uniformly over {-1,+1}^N
    (maximum-entropy choice).
    """
    r = np.asarray(regressor, dtype=float)
    t_len = r.shape[0]
    if t_len < 2:
        raise ValueError("need T >= 2")
    n = params.n_spins
    rng = np.random.default_rng(seed)
    states = np.empty((t_len, n), dtype=np.int8)
    if initial_state is None:
        states[0] = rng.integers(0, 2, size=n) * 2 - 1
    else:
        init = np.asarray(initial_state)
        if init.shape != (n,) or not np.all(np.abs(init) == 1):
            raise ValueError("initial_state must be a +-1 vector of length N")
        states[0] = init
    y = states[0].astype(float)
    for t in range(t_len - 1):
        g = _fields(params, y, r[t])
        # P(+1) = e^g / (2 cosh g) = sigmoid(2g), via the stable tanh form
        p_up = 0.5 * (1.0 + np.tanh(g))
        y = np.where(rng.random(n) < p_up, 1.0, -1.0)
        states[t + 1] = y
    return SpinTrajectory(states)


def mask_panel(traj: SpinTrajectory, p, seed: int = 0, regressor=None,
               timestamps=None, trader_ids=None) -> ObservationPanel:
    """Hide each entry (t, i) independently with probability 1 - p_i.

    The caller keeps `traj` as ground truth for scoring reconstruction.
    """
    p = np.broadcast_to(np.asarray(p, dtype=float), (traj.n_spins,))
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("observation probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    keep = rng.random(traj.states.shape) < p[None, :]
    signs = np.where(keep, traj.states, 0).astype(np.int8)
    return ObservationPanel(signs, regressor=regressor, timestamps=timestamps,
                            trader_ids=trader_ids or [])


def complete_log_likelihood(params: ModelParams, traj: SpinTrajectory,
                            regressor=None) -> float:
    """Log-likelihood of a fully observed trajectory (no hidden spins).

    sum_t sum_i [ y_i(t+1) g_i(t) - log 2 cosh g_i(t) ], conditioning on
    the initial state.  Always <= 0.
    """
    y = traj.states.astype(float)
    t_len, n = y.shape
    if regressor is None:
        r = np.zeros(t_len)
    else:
        r = np.asarray(regressor, dtype=float)
        if r.shape != (t_len,):
            raise ValueError("regressor must have length T")
    if params.n_spins != n:
        raise ValueError("params dimension does not match trajectory")
    g = y[:-1] @ params.J.T + params.h[None, :] + np.outer(r[:-1], params.b)
    return float(np.sum(y[1:] * g - log2cosh(g)))
