"""Unsupervised background/target separation loop.

Every iteration rebuilds the loss graph from the current parameters,
back-propagates and takes one Adam step.  The target is never a free
variable: it is the soft-thresholded residual of the observation against the
represented background, so its loss gradient reaches the background through
the threshold's pass-through region.
"""

from __future__ import annotations

import contextlib
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from neurstt import autograd as ag
from neurstt import lrtf, tensor3
from neurstt.tensor3 import NumericError, TensorShapeError

log = logging.getLogger(__name__)

TARGET_MODES = ("st", "subtract")
BACKGROUND_LOSSES = ("nuc", "mse")


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.2
    phi: float = 5e-5
    kappa: float = 100.0
    rank_div: float = 4
    iters: int = 2000
    lr: float = 5e-4
    weight_decay: float = 0.01
    depth: int = 2
    init_scale: float = 5.0
    omega: float = 1.0
    core_range: float = 0.1
    grid: str = "index"
    activation: str = "sine"
    tv: str = "neural3d"
    target_mode: str = "st"
    background_loss: str = "nuc"
    detach_target: bool = False
    conv_window: int = 50
    conv_tol: float = 0.0
    k_sigma: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.phi < 0 or self.kappa < 0:
            raise ValueError("phi and kappa must be >= 0")
        if self.rank_div < 1:
            raise ValueError("rank_div must be >= 1")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.activation not in lrtf.ACTIVATIONS:
            raise ValueError(f"activation must be one of {lrtf.ACTIVATIONS}")
        if self.tv not in lrtf.TV_MODES:
            raise ValueError(f"tv must be one of {lrtf.TV_MODES}")
        if self.target_mode not in TARGET_MODES:
            raise ValueError(f"target_mode must be one of {TARGET_MODES}")
        if self.background_loss not in BACKGROUND_LOSSES:
            raise ValueError(f"background_loss must be one of {BACKGROUND_LOSSES}")
        if self.grid not in lrtf.COORD_GRIDS:
            raise ValueError(f"grid must be one of {lrtf.COORD_GRIDS}")
        if self.conv_window < 1 or self.conv_tol < 0:
            raise ValueError("conv_window must be >= 1 and conv_tol >= 0")

    @property
    def tv_config(self) -> lrtf.TvConfig:
        return lrtf.TvConfig(self.tv, self.kappa, self.phi)

    def ranks(self, dims):
        return tuple(max(1, math.ceil(n / self.rank_div)) for n in dims)

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class SolverDivergence(NumericError):
    def __init__(self, iteration, message):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


LOSS_COLUMNS = ("background", "target", "tv", "total")


@dataclass
class SeparationResult:
    background: np.ndarray
    target: np.ndarray
    masks: np.ndarray
    loss_history: np.ndarray
    iterations: int
    wall_time: float
    representation: lrtf.TuckerRepresentation = field(repr=False, default=None)


def soft_threshold(x, v):
    """``sign(x) * max(|x| - v, 0)`` elementwise."""
    if v < 0:
        raise ValueError(f"threshold level must be >= 0, got {v}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - v, 0.0)


def loss_nuclear(b) -> float:
    b = tensor3.as_tensor(b)
    return float(sum(tensor3.nuclear_norm(b[:, :, k]) for k in range(b.shape[2])))


def loss_target(t) -> float:
    return float(np.sum(np.abs(t)))


@dataclass
class LossTerms:
    total: ag.Node
    background: ag.Node
    target: ag.Node
    tv: ag.Node
    target_tensor: ag.Node
    graph: lrtf.RepresentationGraph

    def values(self):
        return tuple(float(n.value) for n in (self.background, self.target, self.tv, self.total))


def loss_total(d, rep: lrtf.TuckerRepresentation, cfg: SolverConfig, requires_grad=True) -> LossTerms:
    """Assemble background, target and TV losses for observation ``d``."""
    d = tensor3.as_tensor(d)
    if d.shape != rep.dims:
        raise TensorShapeError(f"observation dims {d.shape} do not match representation {rep.dims}")
    graph = lrtf.RepresentationGraph(rep, requires_grad)
    b = graph.background
    residual = ag.sub(ag.constant(d), b)
    if cfg.target_mode == "st":
        t = ag.soft_threshold(residual, cfg.lam / 2.0)
    else:
        t = residual
    if cfg.detach_target:
        t = ag.detach(t)

    if cfg.background_loss == "nuc":
        l_bg = ag.nuclear_norm_slices(b)
    else:
        l_bg = ag.squared_frobenius(ag.sub(residual, t))
    l_t = ag.abs_sum(t)

    tvc = cfg.tv_config
    if tvc.mode == "none":
        l_tv = ag.constant(0.0)
    elif tvc.mode == "discrete3d":
        l_tv = ag.scale(lrtf.discrete_3dtv_node(b), tvc.phi)
    else:
        l_tv = ag.scale(graph.neural_tv(tvc), tvc.phi)

    total = ag.add(ag.add(l_bg, l_t), l_tv)
    return LossTerms(total, l_bg, l_t, l_tv, t, graph)


def adaptive_threshold(t, k_sigma=3.0) -> np.ndarray:
    """Binary masks ``t >= min(1, mean + k_sigma * std)``; all-zero input gives no detections."""
    t = np.asarray(t, dtype=np.float64)
    if not np.any(t):
        return np.zeros(t.shape, dtype=np.uint8)
    tau = min(1.0, float(t.mean() + k_sigma * t.std()))
    return (t >= tau).astype(np.uint8)


def normalize_target(t) -> np.ndarray:
    """Min-max normalize ``|t|`` to [0, 1] over the whole sequence."""
    a = np.abs(np.asarray(t, dtype=np.float64))
    lo, hi = a.min(), a.max()
    if hi <= lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


@contextlib.contextmanager
def thread_limit(threads):
    if threads is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=int(threads)):
        yield


def _converged(history, window, tol):
    if tol <= 0 or len(history) < 2 * window:
        return False
    totals = [row[3] for row in history]
    now = float(np.mean(totals[-window:]))
    before = float(np.mean(totals[-2 * window:-window]))
    return abs(now - before) <= tol * max(abs(before), 1e-300)


def run(d, cfg: SolverConfig = SolverConfig(), threads=None, callback=None) -> SeparationResult:
    """Fit the representation to observation ``d`` and extract targets."""
    d = tensor3.as_tensor(d)
    if min(d.shape) < 2:
        raise TensorShapeError(f"sequence dims must all be >= 2, got {d.shape}")
    start = time.perf_counter()
    with thread_limit(threads):
        rep = lrtf.init_representation(
            d.shape, cfg.ranks(d.shape), cfg.depth, cfg.init_scale, cfg.activation,
            cfg.core_range, cfg.omega, cfg.seed, cfg.grid,
        )
        state = ag.AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
        history = []
        for k in range(1, cfg.iters + 1):
            try:
                terms = loss_total(d, rep, cfg)
            except NumericError as exc:
                raise SolverDivergence(k, str(exc)) from None
            values = terms.values()
            if not all(math.isfinite(v) for v in values):
                raise SolverDivergence(k, f"non-finite loss {values}")
            history.append(values)
            grads = ag.backward(terms.total).by_name()
            params = rep.parameters()
            # leaves untouched by the loss (e.g. detached paths) get zero gradient
            grads = {name: grads.get(name, np.zeros_like(p)) for name, p in params.items()}
            try:
                params, state = ag.adam_step(params, grads, state)
            except NumericError as exc:
                raise SolverDivergence(k, str(exc)) from None
            rep = rep.with_parameters(params)
            if callback is not None:
                callback(k, values)
            if k % 100 == 0:
                log.debug("iter %d loss %.6g", k, values[3])
            if _converged(history, cfg.conv_window, cfg.conv_tol):
                break

        final = loss_total(d, rep, cfg, requires_grad=False)
        b = final.graph.background.value
        t = final.target_tensor.value
    t_norm = normalize_target(t)
    masks = adaptive_threshold(t_norm, cfg.k_sigma)
    return SeparationResult(
        background=b,
        target=t_norm,
        masks=masks,
        loss_history=np.array(history, dtype=np.float64).reshape(-1, 4),
        iterations=len(history),
        wall_time=time.perf_counter() - start,
        representation=rep,
    )
