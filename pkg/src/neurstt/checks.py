"""Seeded self-checks: finite-difference gradient checks, Tucker algebra
exactness and the soft-threshold proximal oracle.

Each check returns ``CheckResult``; ``run_checks`` executes all of them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from neurstt import autograd as ag
from neurstt import lrtf, solver, tensor3

GRAD_TOL = 1e-5
LOSS_GRAD_TOL = 1e-4
FD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def numeric_gradient(f, x, h=FD_STEP):
    """Central differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def _probe(build, x, weights=None):
    """Scalar ``sum(build(x) * weights)`` (or ``build(x)`` for scalar ops)."""
    def f(value):
        node = build(ag.leaf(value, name="x"))
        if weights is None:
            return node
        return ag.sum_(ag.elementwise_mul(node, ag.constant(weights)))
    return f


def _grad_check(name, build, x, weights, tol):
    f = _probe(build, x, weights)
    leaf = ag.leaf(x, name="x")
    root = build(leaf) if weights is None else ag.sum_(ag.elementwise_mul(build(leaf), ag.constant(weights)))
    analytic = ag.backward(root)[leaf]
    numeric = numeric_gradient(lambda v: float(f(v).value), x)
    err = relative_error(analytic, numeric)
    return CheckResult(f"gradient:{name}", err <= tol, f"relative error {err:.2e} (tol {tol:.0e})")


def primitive_checks(tol=GRAD_TOL, seed=0):
    rng = np.random.default_rng(seed)
    mat = rng.normal(size=(4, 3))
    other = rng.normal(size=(3, 5))
    cube = rng.normal(size=(4, 3, 2))
    fac = rng.normal(size=(5, 3))
    w43 = rng.normal(size=(4, 3))
    w45 = rng.normal(size=(4, 5))
    w532 = rng.normal(size=(4, 5, 2))
    # keep soft-threshold / abs inputs at least 1e-3 away from their kinks
    away = np.sign(mat) * (np.abs(mat) + 0.01)
    st_in = np.where(np.abs(away) < 0.4, np.sign(away) * (np.abs(away) + 0.3), away)
    # well-separated singular values for the nuclear norm
    u, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    v, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    spectra = [np.array([3.0, 2.0, 1.0]), np.array([2.5, 1.2, 0.4])]
    nuc_in = np.stack([u[:, :3] @ np.diag(s) @ v.T for s in spectra], axis=2)

    cases = [
        ("matmul(left)", lambda x: ag.matmul(x, ag.constant(other)), mat, w45),
        ("matmul(right)", lambda x: ag.matmul(ag.constant(mat), x), other, w45),
        ("mode_product(tensor)", lambda x: ag.mode_product(x, ag.constant(fac[:, :3]), 2), cube, w532),
        ("mode_product(matrix)", lambda x: ag.mode_product(ag.constant(cube), x, 2), fac, w532),
        ("add", lambda x: ag.add(x, ag.constant(mat)), mat, w43),
        ("scale", lambda x: ag.scale(x, -1.7), mat, w43),
        ("sin", ag.sin, mat, w43),
        ("cos", ag.cos, mat, w43),
        ("tanh", ag.tanh, mat, w43),
        ("relu", ag.relu, away, w43),
        ("leaky_relu", ag.leaky_relu, away, w43),
        ("elementwise_mul", lambda x: ag.elementwise_mul(x, ag.sin(x)), mat, w43),
        ("soft_threshold", lambda x: ag.soft_threshold(x, 0.25), st_in, w43),
        ("abs_sum", ag.abs_sum, away, None),
        ("squared_frobenius", ag.squared_frobenius, mat, None),
        ("sum", ag.sum_, mat, None),
        ("nuclear_norm_slices", ag.nuclear_norm_slices, nuc_in, None),
        ("composite", lambda x: ag.matmul(ag.sin(ag.matmul(ag.tanh(ag.matmul(x, ag.constant(other))),
                                                          ag.constant(other.T))), ag.constant(other)), mat, w45),
    ]
    return [_grad_check(name, build, x, w, tol) for name, build, x, w in cases]


def small_instance(seed=0, dims=(6, 6, 3)):
    rng = np.random.default_rng(seed)
    d = np.clip(0.3 + 0.1 * rng.normal(size=dims), 0.0, 1.0)
    d[2:4, 2:4, :] += 0.5
    return np.clip(d, 0.0, 1.0)


LOSS_VARIANTS = [
    dict(tv=tv, target_mode=tm, background_loss=bg)
    for tv, tm, bg in itertools.product(lrtf.TV_MODES, solver.TARGET_MODES, solver.BACKGROUND_LOSSES)
]


def loss_gradient_errors(cfg: solver.SolverConfig, seed=0):
    """Per-parameter relative error of the analytic loss gradient vs central differences."""
    d = small_instance(seed)
    rep = lrtf.init_representation(d.shape, cfg.ranks(d.shape), cfg.depth, cfg.init_scale,
                                   cfg.activation, cfg.core_range, cfg.omega, seed, cfg.grid)
    params = rep.parameters()
    grads = ag.backward(solver.loss_total(d, rep, cfg).total).by_name()
    errors = {}
    for name, value in params.items():
        def f(v, name=name):
            trial = dict(params)
            trial[name] = v
            return float(solver.loss_total(d, rep.with_parameters(trial), cfg, requires_grad=False).total.value)
        numeric = numeric_gradient(f, value)
        errors[name] = relative_error(grads.get(name, np.zeros_like(value)), numeric)
    return errors


def loss_checks(tol=LOSS_GRAD_TOL, seed=0):
    out = []
    for variant in LOSS_VARIANTS:
        cfg = solver.SolverConfig(**variant)
        errors = loss_gradient_errors(cfg, seed)
        worst = max(errors, key=errors.get)
        label = ",".join(f"{k}={v}" for k, v in variant.items())
        out.append(CheckResult(f"gradient:loss[{label}]", errors[worst] <= tol,
                               f"worst {worst} relative error {errors[worst]:.2e} (tol {tol:.0e})"))
    return out


def derivative_checks(tol=GRAD_TOL, seed=0):
    out = []
    for depth in (1, 2, 3):
        net = lrtf.init_network(8, 3, depth, scale=2.0, seed=seed)
        coords = lrtf.make_coordinates(8)
        analytic = lrtf.factor_derivative(net, coords)
        numeric = np.stack([
            (lrtf.factor_forward(net, [x + FD_STEP]) - lrtf.factor_forward(net, [x - FD_STEP]))[0] / (2 * FD_STEP)
            for x in coords
        ])
        err = relative_error(analytic, numeric)
        out.append(CheckResult(f"derivative:sine-d{depth}", err <= tol, f"relative error {err:.2e}"))
    return out


def tucker_checks(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for dims in itertools.product(range(1, 9), repeat=3):
        x = rng.normal(size=dims)
        for mode in (1, 2, 3):
            worst = max(worst, float(np.max(np.abs(tensor3.fold(tensor3.unfold(x, mode), mode, dims) - x))))
    out = [CheckResult("tucker:fold-unfold", worst == 0.0, f"max roundtrip error {worst:.1e}")]

    x = rng.normal(size=(3, 4, 5))
    worst = 0.0
    for mode in (1, 2, 3):
        m = rng.normal(size=(2, x.shape[mode - 1]))
        fast = tensor3.mode_product(x, m, mode)
        for idx in np.ndindex(fast.shape):
            ref = 0.0
            for a in range(x.shape[mode - 1]):
                src = list(idx)
                src[mode - 1] = a
                ref += m[idx[mode - 1], a] * x[tuple(src)]
            worst = max(worst, abs(fast[idx] - ref) / max(1.0, abs(ref)))
    out.append(CheckResult("tucker:mode-product", bool(worst <= 1e-12), f"max error {worst:.1e}"))

    worst = 0.0
    for trial in range(50):
        dims = tuple(int(v) for v in rng.integers(4, 10, size=3))
        ranks = tuple(int(v) for v in rng.integers(1, 4, size=3))
        rep = lrtf.init_representation(dims, ranks, seed=int(rng.integers(1 << 31)))
        b = lrtf.background(rep)
        for mode, r in zip((1, 2, 3), ranks):
            s = np.linalg.svd(tensor3.unfold(b, mode), compute_uv=False)
            if s.size > r and s[0] > 0:
                worst = max(worst, s[r] / s[0])
    out.append(CheckResult("tucker:f-rank", bool(worst <= 1e-8), f"max trailing singular ratio {worst:.1e}"))
    return out


def prox_checks(seed=0, trials=100):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.uniform(-2, 2)
        v = rng.uniform(0, 1)
        z = np.arange(-3.0, 3.0 + 1e-4, 1e-4)
        best = z[np.argmin(0.5 * (z - x) ** 2 + v * np.abs(z))]
        worst = max(worst, abs(float(solver.soft_threshold(x, v)) - best))
    return [CheckResult("prox:soft-threshold", bool(worst <= 1e-4), f"max deviation from grid argmin {worst:.1e}")]


def run_checks(tolerance=None, seed=0):
    grad_tol = GRAD_TOL if tolerance is None else tolerance
    loss_tol = LOSS_GRAD_TOL if tolerance is None else tolerance
    return (
        primitive_checks(grad_tol, seed)
        + derivative_checks(grad_tol, seed)
        + loss_checks(loss_tol, seed)
        + tucker_checks(seed)
        + prox_checks(seed)
    )
