"""Low-rank tensor function representation of a sequence background.

Each axis (height, width, time) has a bias-free coordinate MLP mapping a
scalar coordinate to ``r`` factor values.  The background is the Tucker
product of a learnable core with the three factor matrices, and the
coordinate derivatives of the networks give an exact total-variation
penalty without extra parameters.

Networks use the row-vector convention: with coordinates stacked as an
``n x 1`` column ``x``, a depth-``d`` network computes
``sigma(...sigma(x @ H0) @ H1 ...) @ Hd``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from neurstt import autograd as ag
from neurstt import tensor3
from neurstt.tensor3 import NumericError, TensorShapeError

ACTIVATIONS = ("sine", "relu", "leakyrelu", "tanh")
TV_MODES = ("neural3d", "neural_spatial", "discrete3d", "none")
AXES = ("h", "w", "t")


@dataclass(frozen=True)
class FactorNetwork:
    weights: tuple
    activation: str = "sine"
    omega: float = 1.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        if len(ws) < 2 or ws[0].shape[0] != 1:
            raise TensorShapeError("a factor network needs H0 of shape (1, c) and at least one more layer")
        for a, b in zip(ws, ws[1:]):
            if a.shape[1] != b.shape[0]:
                raise TensorShapeError(f"weight chain broken: {a.shape} -> {b.shape}")
        object.__setattr__(self, "weights", ws)

    @property
    def depth(self) -> int:
        return len(self.weights) - 1

    @property
    def width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def rank(self) -> int:
        return self.weights[-1].shape[1]

    def n_params(self) -> int:
        return sum(w.size for w in self.weights)


@dataclass(frozen=True)
class TvConfig:
    mode: str = "neural3d"
    kappa: float = 100.0
    phi: float = 5e-5

    def __post_init__(self):
        if self.mode not in TV_MODES:
            raise ValueError(f"unknown tv mode {self.mode!r}; expected one of {TV_MODES}")
        if self.kappa < 0 or self.phi < 0:
            raise ValueError("kappa and phi must be nonnegative")


def make_coordinates(n: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """``n`` evenly spaced coordinates spanning ``[lo, hi]`` (the midpoint if ``n == 1``)."""
    if n < 1:
        raise ValueError(f"coordinate count must be >= 1, got {n}")
    if n == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, n)


COORD_GRIDS = ("index", "symmetric")


def coordinate_grid(n: int, kind: str = "index") -> np.ndarray:
    """Sampling grid for one axis.

    ``index`` gives pixel indices ``1..n``; ``symmetric`` gives ``[-1, 1]``.
    A bias-free sine or tanh network is odd, so on the symmetric grid every
    factor column sums to zero and the background cannot carry a mean level.
    """
    if kind == "index":
        if n < 1:
            raise ValueError(f"coordinate count must be >= 1, got {n}")
        return np.arange(1, n + 1, dtype=np.float64)
    if kind == "symmetric":
        return make_coordinates(n)
    raise ValueError(f"unknown coordinate grid {kind!r}; expected one of {COORD_GRIDS}")


def init_network(n, r, d=2, scale=5.0, activation="sine", seed=0, omega=1.0) -> FactorNetwork:
    """SIREN-style initialization with hidden width ``c = n``.

    ``H0 ~ U(-scale, scale)``; deeper layers ``~ U(-b, b)`` with
    ``b = sqrt(6 / c) / omega``.  ``seed`` may be an int or a Generator.
    """
    if r < 1 or d < 1 or n < 1:
        raise ValueError(f"need n, r, d >= 1 (got n={n}, r={r}, d={d})")
    rng = np.random.default_rng(seed)
    c = n
    bound = math.sqrt(6.0 / c) / omega
    weights = [rng.uniform(-scale, scale, size=(1, c))]
    for _ in range(d - 1):
        weights.append(rng.uniform(-bound, bound, size=(c, c)))
    weights.append(rng.uniform(-bound, bound, size=(c, r)))
    return FactorNetwork(tuple(weights), activation, omega)


# -- graph construction -------------------------------------------------------


def _activate(z, activation):
    if activation == "sine":
        return ag.sin(z)
    if activation == "tanh":
        return ag.tanh(z)
    if activation == "relu":
        return ag.relu(z)
    return ag.leaky_relu(z)


def _activation_slope(z, a, activation):
    """Node for sigma'(z) given pre-activation ``z`` and activation ``a``."""
    if activation == "sine":
        return ag.cos(z)
    if activation == "tanh":
        ones = ag.constant(np.ones(z.shape))
        return ag.sub(ones, ag.elementwise_mul(a, a))
    # piecewise-linear: slope is locally constant
    if activation == "relu":
        return ag.constant((z.value > 0).astype(np.float64))
    return ag.constant(np.where(z.value > 0, 1.0, ag.LEAKY_SLOPE))


class FactorGraph:
    """Forward (and lazily, coordinate-derivative) nodes of one network."""

    def __init__(self, weight_nodes, coords, activation="sine", omega=1.0):
        self.weights = list(weight_nodes)
        self.activation = activation
        self.omega = omega
        self.x = ag.constant(np.asarray(coords, dtype=np.float64).reshape(-1, 1))
        self.pre, self.act = [], []
        a = self.x
        for w in self.weights[:-1]:
            z = self._pre(ag.matmul(a, w))
            a = _activate(z, activation)
            self.pre.append(z)
            self.act.append(a)
        self.output = ag.matmul(a, self.weights[-1])
        self._deriv = None

    def _pre(self, z):
        return z if self.omega == 1.0 else ag.scale(z, self.omega)

    @property
    def derivative(self):
        """d(output)/d(coordinate), row by row, sharing the forward weights."""
        if self._deriv is None:
            n = self.x.shape[0]
            ones = ag.constant(np.ones((n, 1)))
            dz = self._pre(ag.matmul(ones, self.weights[0]))
            for layer, (z, a) in enumerate(zip(self.pre, self.act)):
                da = ag.elementwise_mul(_activation_slope(z, a, self.activation), dz)
                if layer + 1 < len(self.pre):
                    dz = self._pre(ag.matmul(da, self.weights[layer + 1]))
            self._deriv = ag.matmul(da, self.weights[-1])
        return self._deriv


def _network_graph(net: FactorNetwork, coords, requires_grad=False, prefix=""):
    nodes = [ag.leaf(w, requires_grad, name=f"{prefix}{i}") for i, w in enumerate(net.weights)]
    return FactorGraph(nodes, coords, net.activation, net.omega)


def factor_forward(net: FactorNetwork, coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    try:
        return _network_graph(net, coords).output.value
    except NumericError as exc:
        raise NumericError(f"factor_forward: {exc}") from None


def factor_derivative(net: FactorNetwork, coords) -> np.ndarray:
    return _network_graph(net, np.asarray(coords, dtype=np.float64)).derivative.value


# -- Tucker representation ----------------------------------------------------


@dataclass(frozen=True)
class TuckerRepresentation:
    core: np.ndarray
    nets: tuple
    coords: tuple = field(default=None)

    def __post_init__(self):
        core = tensor3.as_tensor(self.core)
        object.__setattr__(self, "core", core)
        if len(self.nets) != 3:
            raise TensorShapeError("need exactly three factor networks")
        ranks = tuple(net.rank for net in self.nets)
        if ranks != core.shape:
            raise TensorShapeError(f"network ranks {ranks} do not match core dims {core.shape}")
        if self.coords is None:
            coords = tuple(make_coordinates(net.width) for net in self.nets)
        else:
            coords = tuple(np.asarray(c, dtype=np.float64) for c in self.coords)
        object.__setattr__(self, "coords", coords)

    @property
    def dims(self):
        return tuple(len(c) for c in self.coords)

    @property
    def ranks(self):
        return self.core.shape

    def parameters(self) -> dict:
        params = {"core": self.core}
        for axis, net in zip(AXES, self.nets):
            for i, w in enumerate(net.weights):
                params[f"{axis}.{i}"] = w
        return params

    def with_parameters(self, params: dict) -> "TuckerRepresentation":
        nets = []
        for axis, net in zip(AXES, self.nets):
            ws = tuple(params[f"{axis}.{i}"] for i in range(len(net.weights)))
            nets.append(FactorNetwork(ws, net.activation, net.omega))
        return TuckerRepresentation(params["core"], tuple(nets), self.coords)

    def n_params(self) -> int:
        return self.core.size + sum(net.n_params() for net in self.nets)


def init_representation(dims, ranks, depth=2, scale=5.0, activation="sine",
                        core_range=0.1, omega=1.0, seed=0, grid="index") -> TuckerRepresentation:
    rng = np.random.default_rng(seed)
    core = rng.uniform(-core_range, core_range, size=tuple(ranks))
    nets = tuple(
        init_network(n, r, depth, scale, activation, rng, omega) for n, r in zip(dims, ranks)
    )
    coords = tuple(coordinate_grid(n, grid) for n in dims)
    return TuckerRepresentation(core, nets, coords)


def parameter_census(dims, ranks, depth) -> int:
    """Closed-form learnable parameter count (hidden width equals axis length)."""
    total = int(np.prod(ranks))
    for c, r in zip(dims, ranks):
        total += c + (depth - 1) * c * c + c * r
    return total


class RepresentationGraph:
    """Autograd view of a representation: leaves, factors, background."""

    def __init__(self, rep: TuckerRepresentation, requires_grad=True):
        self.rep = rep
        self.core = ag.leaf(rep.core, requires_grad, name="core")
        self.factors = [
            _network_graph(net, coords, requires_grad, prefix=f"{axis}.")
            for axis, net, coords in zip(AXES, rep.nets, rep.coords)
        ]
        self.leaves = {"core": self.core}
        for fg in self.factors:
            for w in fg.weights:
                self.leaves[w.name] = w
        fh, fw, ft = (fg.output for fg in self.factors)
        self._core_t = ag.mode_product(self.core, ft, 3)
        self._core_wt = ag.mode_product(self._core_t, fw, 2)
        self.background = ag.mode_product(self._core_wt, fh, 1)

    def derivative_tensors(self):
        """Nodes for dB/dh, dB/dw, dB/dt."""
        fh, fw, ft = (fg.output for fg in self.factors)
        dh, dw, dt = (fg.derivative for fg in self.factors)
        d_h = ag.mode_product(self._core_wt, dh, 1)
        d_w = ag.mode_product(ag.mode_product(self._core_t, dw, 2), fh, 1)
        core_hw = ag.mode_product(ag.mode_product(self.core, fh, 1), fw, 2)
        d_t = ag.mode_product(core_hw, dt, 3)
        return d_h, d_w, d_t

    def neural_tv(self, cfg: TvConfig):
        if cfg.mode not in ("neural3d", "neural_spatial"):
            raise ValueError(f"neural_tv needs a neural tv mode, got {cfg.mode!r}")
        d_h, d_w, d_t = self.derivative_tensors()
        psi = ag.add(ag.abs_sum(d_h), ag.abs_sum(d_w))
        if cfg.mode == "neural3d":
            psi = ag.add(psi, ag.scale(ag.abs_sum(d_t), cfg.kappa))
        return psi


def background(rep: TuckerRepresentation) -> np.ndarray:
    return RepresentationGraph(rep, requires_grad=False).background.value


def derivative_tensors(rep: TuckerRepresentation):
    return tuple(n.value for n in RepresentationGraph(rep, requires_grad=False).derivative_tensors())


def neural_tv(rep: TuckerRepresentation, cfg: TvConfig) -> float:
    return float(RepresentationGraph(rep, requires_grad=False).neural_tv(cfg).value)


def difference_matrix(n: int) -> np.ndarray:
    """Backward first difference; row 0 is zero (no predecessor)."""
    d = np.eye(n)
    d[0, 0] = 0.0
    d[np.arange(1, n), np.arange(n - 1)] = -1.0
    return d


def discrete_3dtv_node(b):
    """Graph version of :func:`discrete_3dtv` for a background node ``b``."""
    total = None
    for mode, n in enumerate(b.shape, start=1):
        term = ag.abs_sum(ag.mode_product(b, ag.constant(difference_matrix(n)), mode))
        total = term if total is None else ag.add(total, term)
    return total


def discrete_3dtv(b) -> float:
    b = tensor3.as_tensor(b)
    return float(sum(np.abs(np.diff(b, axis=ax)).sum() for ax in range(3)))
