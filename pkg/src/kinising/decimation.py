"""Tilted-likelihood decimation: prune J down to a sparse lead-lag network.

Couplings are zeroed in ascending |J_ij| batches; after each batch the
surviving parameters are re-maximized and the surrogate likelihood L(x) is
recorded as a function of the pruned fraction x.  The tilted likelihood

    L_tilted(x) = L(x) - ((1 - x) L_max + x L_1)

compares L(x) against the linear interpolation between the full model
(L_max) and the empty one (L_1, all J = 0 with h and b re-optimized); the
mask at the maximizing fraction x* defines the network.  h and b are never
pruned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .inference import FitConfig, FitReport, approx_log_likelihood, fit
from .model import ObservationPanel

__all__ = [
    "DecimationConfig",
    "DecimationTrace",
    "LeadLagNetwork",
    "tilted",
    "decimate",
]

logger = logging.getLogger(__name__)


def tilted(loglik_x: float, x: float, loglik_max: float, loglik_1: float) -> float:
    """Tilted log-likelihood L(x) - ((1-x) L_max + x L_1)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    return loglik_x - ((1.0 - x) * loglik_max + x * loglik_1)


@dataclass
class DecimationConfig:
    batch_fraction: float = 0.05   # fraction of N^2 pruned per round
    fast_mode: bool = False        # refit with M-steps only (m frozen)
    fit_config: FitConfig = field(default_factory=FitConfig)


@dataclass
class DecimationTrace:
    x_grid: np.ndarray
    loglik_at_x: np.ndarray
    tilted_at_x: np.ndarray
    selected_x: float
    pruned_mask: np.ndarray        # True where J_ij was pruned at x*


@dataclass
class LeadLagNetwork:
    """Sparse weighted directed network; adjacency A = J^T, so A_ij != 0
    means node i leads node j."""

    adjacency: np.ndarray
    node_ids: list
    month: str = None

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=float)
        n = len(self.node_ids)
        if self.adjacency.shape != (n, n):
            raise ValueError("adjacency must be N x N with N = len(node_ids)")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def edges(self):
        """Iterate (src, dst, weight) over nonzero links."""
        for i, j in zip(*np.nonzero(self.adjacency)):
            yield self.node_ids[i], self.node_ids[j], self.adjacency[i, j]


def decimate(panel: ObservationPanel, fit_report: FitReport,
             config: DecimationConfig = None, month: str = None):
    """Run the decimation path and select the tilted-likelihood maximizer.

    Returns (DecimationTrace, LeadLagNetwork).  Ties in the tilted maximum
    are broken toward larger x (the sparser network).
    """
    if fit_report is None:
        raise ValueError("decimate requires a FitReport")
    if panel.n_steps == 0:
        raise ValueError("empty panel")
    config = config or DecimationConfig()
    n = fit_report.params.n_spins
    n_total = n * n
    batch = max(1, int(round(config.batch_fraction * n_total)))

    refit_cfg = _with_freeze(config.fit_config, config.fast_mode)

    params = fit_report.params.copy()
    m = fit_report.state.m.copy()
    loglik_max = approx_log_likelihood(params, panel, m)

    support = np.ones((n, n), dtype=bool)
    xs = [0.0]
    logliks = [loglik_max]
    params_path = [params.copy()]
    masks = [support.copy()]

    while support.any():
        absj = np.abs(params.J)
        absj[~support] = np.inf
        order = np.argsort(absj, axis=None)
        kill = order[:min(batch, int(support.sum()))]
        support.flat[kill] = False
        report = fit(panel, refit_cfg, support_mask=support,
                     init_params=params, init_m=m)
        params, m = report.params, report.state.m
        x = 1.0 - support.sum() / n_total
        xs.append(x)
        logliks.append(approx_log_likelihood(params, panel, m))
        params_path.append(params.copy())
        masks.append(support.copy())
        logger.debug("decimation x=%.3f loglik=%.4f", x, logliks[-1])

    xs = np.asarray(xs)
    logliks = np.asarray(logliks)
    loglik_1 = logliks[-1]
    tilt = logliks - ((1.0 - xs) * loglik_max + xs * loglik_1)
    best = np.flatnonzero(tilt == tilt.max()).max()  # ties toward larger x
    selected = params_path[best]
    pruned_mask = ~masks[best]

    trace = DecimationTrace(x_grid=xs, loglik_at_x=logliks, tilted_at_x=tilt,
                            selected_x=float(xs[best]), pruned_mask=pruned_mask)
    net = LeadLagNetwork(adjacency=selected.J.T.copy(),
                         node_ids=list(panel.trader_ids), month=month)
    return trace, net


def _with_freeze(cfg: FitConfig, freeze: bool) -> FitConfig:
    out = FitConfig(**{f: getattr(cfg, f) for f in cfg.__dataclass_fields__})
    out.freeze_m = freeze
    return out
