"""Discrete verification of the variational inequality and its companions.

A candidate pair (Y, Z) with penalty density U is tested against smooth
test processes M_t = gamma - int N dQ + int R dB.  With
Gamma_r = sqrt(|M_r - Y_r|^2 + delta_q) the inequality checked on every
grid interval [t_i, t_j], path-averaged, is

    Gamma_i^q + q(q-1)/2 sum Gamma^{q-2} |R - Z|^2 dt
              + q sum Gamma^{q-2} Psi(r, Y) dQ
    <=  Gamma_j^q + q sum Gamma^{q-2} Psi(r, M) dQ
              + q sum Gamma^{q-2} <M - Y, N - H(r, Y, Z)> dQ
              - q sum Gamma^{q-2} <M - Y, (R - Z) dB>

for q = 2 and q = min(p, 2), delta in (0, 1].  For penalized solutions
the potential Psi is evaluated through its Moreau envelope at the
solver's eps: the penalized pair solves the smooth equation with that
envelope exactly, and the envelope increases to the true potential as
eps drops, so this is the finite-eps rendition of the same inequality.
Raw potentials are used when no penalization level is given.

Companion checks: the norm-power transformation identity along paths,
the weighted contraction between two solutions, and the a-priori bound
with a frozen fitted constant.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as rngmod
from .convex import ConvexSpec, envelope, potential_value
from .errors import DomainError, GridMismatch, InfinitePotential
from .generators import GeneratorSpec, combined_driver
from .paths import PathBundle, gamma_shift
from .solver import SmoothingConfig, SolutionField, smoothing_operator

# fitted once on the martingale reference scenarios (p in 1.5 .. 2.5,
# where the largest observed lhs/rhs ratios stay below 2.8 and 1.7),
# then frozen
APRIORI_C_FIT = 4.0
ENERGY_C_FIT = 4.0


@dataclass(frozen=True)
class TestProcess:
    """Smooth comparison process given by (gamma, N, R) per step.

    M is defined by the exact reconstruction
    M_0 = gamma, M_{i+1} = M_i - N_i dQ_i + R_i dB_i.
    """

    gamma: float
    N: np.ndarray
    R: np.ndarray
    label: str = "test"

    def materialize(self, bundle: PathBundle) -> np.ndarray:
        n = bundle.grid.steps
        if self.N.shape != bundle.dB.shape or self.R.shape != bundle.dB.shape:
            raise GridMismatch("test process arrays do not match the bundle's paths")
        m = np.empty((bundle.n_paths, n + 1))
        m[:, 0] = self.gamma
        steps = -self.N * bundle.dq + self.R * bundle.dB
        m[:, 1:] = self.gamma + np.cumsum(steps, axis=1)
        return m


@dataclass
class VerificationReport:
    name: str
    passed: bool
    worst_violation: float
    tolerance: float
    monitors: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "worst_violation": float(self.worst_violation),
            "tolerance": float(self.tolerance),
            "monitors": {k: float(v) for k, v in self.monitors.items()},
        }


def default_tolerance(bundle: PathBundle, c_dt: float = 5.0, c_mc: float = 5.0) -> float:
    """c_dt * max(dt) + c_mc / sqrt(paths): discretization plus sampling."""
    return float(c_dt * np.max(bundle.dt) + c_mc / np.sqrt(bundle.n_paths))


def _pair_max(a: np.ndarray) -> float:
    """max over i < j of a_i - a_j along the last axis."""
    suffix_min = np.minimum.accumulate(a[..., ::-1], axis=-1)[..., ::-1]
    return float(np.max(a[..., :-1] - suffix_min[..., 1:]))


def _pair_range(a: np.ndarray) -> float:
    """max over i < j of |a_i - a_j| along the last axis."""
    return float(np.max(np.max(a, axis=-1) - np.min(a, axis=-1)))


def _potential_on_paths(spec: ConvexSpec, x: np.ndarray, eps_pen: Optional[float]):
    if eps_pen is None:
        return potential_value(spec, x)
    return envelope(spec, eps_pen, x)


def _mixed_potential(phi, psi, alpha, x, eps_pen):
    """alpha phi(x) + (1 - alpha) psi(x) with 0 * inf treated as 0."""
    vp = _potential_on_paths(phi, x, eps_pen)
    vq = _potential_on_paths(psi, x, eps_pen)
    with np.errstate(invalid="ignore"):
        left = np.where(alpha > 0.0, alpha * vp, 0.0)
        right = np.where(alpha < 1.0, (1.0 - alpha) * vq, 0.0)
    return left + right


def check_variational_inequality(
    sol: SolutionField,
    tp: TestProcess,
    phi: ConvexSpec,
    psi: ConvexSpec,
    gen: GeneratorSpec,
    bundle: PathBundle,
    q: float,
    delta: float,
    tol: Optional[float] = None,
    penalization_eps: Optional[float] = None,
    name: Optional[str] = None,
) -> VerificationReport:
    """Worst interval residual of the variational inequality, path-averaged."""
    if not (1.0 < q <= 2.0):
        raise DomainError(f"q must lie in (1, 2], got {q}")
    dq_shift = gamma_shift(delta, q)
    tol = default_tolerance(bundle) if tol is None else float(tol)
    pw = sol.paths(bundle)
    y, z, h_used = pw["Y"], pw["Z"], pw["H"]
    m = tp.materialize(bundle)
    t = bundle.grid.nodes
    alpha = bundle.alpha
    dqs = bundle.dq
    dts = bundle.dt

    gamma = np.sqrt((m - y) ** 2 + dq_shift)
    g_nodes = gamma**q
    g_pow = gamma[:, :-1] ** (q - 2.0)

    psi_y = _mixed_potential(phi, psi, alpha, y[:, :-1], penalization_eps)
    psi_m = _mixed_potential(phi, psi, alpha, m[:, :-1], penalization_eps)
    if penalization_eps is None and np.any(np.isinf(psi_m)):
        raise InfinitePotential(
            "test process leaves the domain of the potential, inequality is vacuous"
        )

    h_fresh = np.empty_like(z)
    for r in range(bundle.grid.steps):
        h_fresh[:, r] = combined_driver(gen, alpha[r], t[r], y[:, r], z[:, r])

    diff = m[:, :-1] - y[:, :-1]
    incr = (
        0.5 * q * (q - 1.0) * g_pow * (tp.R - z) ** 2 * dts
        + q * g_pow * psi_y * dqs
        - q * g_pow * psi_m * dqs
        - q * g_pow * diff * (tp.N - h_fresh) * dqs
        + q * g_pow * diff * (tp.R - z) * bundle.dB
    )
    a = np.mean(g_nodes, axis=0).copy()
    a[1:] -= np.cumsum(np.mean(incr, axis=0))
    worst = _pair_max(a)

    monitors = {
        "gamma_floor_margin": float(np.min(gamma) - np.sqrt(dq_shift)),
        "terminal_gamma_sq_minus_shift": float(np.mean(gamma[:, -1] ** 2) - dq_shift),
        "driver_eval_gap": float(np.max(np.abs(h_used - h_fresh))),
    }
    return VerificationReport(
        name=name or f"variational[{tp.label}] q={q:g} delta={delta:g}",
        passed=bool(worst <= tol),
        worst_violation=worst,
        tolerance=tol,
        monitors=monitors,
    )


def check_ito_identity(
    y_paths: np.ndarray,
    drift_incr: np.ndarray,
    r_paths: np.ndarray,
    bundle: PathBundle,
    p: float,
    delta: float,
    tol: float,
    name: str = "ito-identity",
    pathwise: Optional[bool] = None,
) -> VerificationReport:
    """Residual of the norm-power transformation identity.

    The semimartingale is Y_{i+1} = Y_i - D_i + R_i dB_i with drift
    increments D_i playing the role of F dr.  The squared-variation
    integral is realized as sum R^2 dt and the stochastic integral as
    sum <Y, R dB>; on the binomial lattice (dB)^2 = dt makes the p = 2,
    delta = 0 form an algebraic identity per path, and pathwise mode is
    selected automatically.  Monte Carlo paths satisfy the identity only
    after averaging (dB^2 fluctuates around dt and regression values do
    not reconstruct exactly path by path), so there the residual is the
    worst interval gap of the path-averaged profile.
    """
    if p < 2.0 and delta <= 0.0:
        raise DomainError("delta > 0 is required for p < 2")
    if delta < 0.0:
        raise DomainError(f"delta must be >= 0, got {delta}")
    if pathwise is None:
        pathwise = bundle.kind in ("tree", "deterministic")
    n = bundle.grid.steps
    if y_paths.shape[1] != n + 1 or drift_incr.shape[1] != n or r_paths.shape[1] != n:
        raise GridMismatch("path arrays do not conform to the bundle's grid")
    yl = y_paths[:, :-1]
    base = yl * yl + delta
    v_nodes = (y_paths * y_paths + delta) ** (p / 2.0)
    if p == 2.0:
        quad = r_paths * r_paths * bundle.dt
        weight = np.ones_like(base)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            quad = (
                0.5
                * p
                * np.where(
                    base > 0.0,
                    base ** ((p - 4.0) / 2.0)
                    * ((p - 1.0) * r_paths**2 * yl**2 + delta * r_paths**2),
                    0.0,
                )
                * bundle.dt
            )
            weight = np.where(base > 0.0, base ** ((p - 2.0) / 2.0), 0.0)
    incr = quad - p * weight * yl * drift_incr + p * weight * yl * r_paths * bundle.dB
    a = v_nodes.copy()
    a[:, 1:] -= np.cumsum(incr, axis=1)
    if not pathwise:
        a = np.mean(a, axis=0, keepdims=True)
    worst = _pair_range(a)
    return VerificationReport(
        name=name,
        passed=bool(worst <= tol),
        worst_violation=worst,
        tolerance=float(tol),
        monitors={"mean_abs_residual": float(np.mean(np.abs(a - a[:, :1])))},
    )


def ito_report_from_solution(
    sol: SolutionField, bundle: PathBundle, p: float, delta: float, tol: float
) -> VerificationReport:
    pw = sol.paths(bundle)
    drift = (pw["H"] - pw["U"]) * bundle.dq
    return check_ito_identity(
        pw["Y"], drift, pw["Z"], bundle, p, delta, tol,
        name=f"ito-identity p={p:g} delta={delta:g}",
    )


def check_contraction(
    sol_a: SolutionField,
    sol_b: SolutionField,
    bundle: PathBundle,
    q: float,
    tol: float,
    name: str = "contraction",
) -> VerificationReport:
    """Backward submartingale test of the weighted gap.

    For two solutions of the same data the weighted gap
    mean[e^{qV_i} |Y^a_i - Y^b_i|^q] may not exceed its value at any
    later node by more than tol.  Identical inputs give gap 0; a pure
    terminal perturbation with zero drivers propagates unchanged.
    """
    if bundle.V is None:
        raise GridMismatch("bundle has no accumulated weights, call accumulate_weights")
    pa = sol_a.paths(bundle)["Y"]
    pb = sol_b.paths(bundle)["Y"]
    profile = np.mean(
        np.exp(q * bundle.V) * np.abs(pa - pb) ** q, axis=0
    )
    worst = _pair_max(profile)
    return VerificationReport(
        name=name,
        passed=bool(worst <= tol),
        worst_violation=worst,
        tolerance=float(tol),
        monitors={
            "initial_gap": float(np.abs(sol_a.y0 - sol_b.y0)),
            "terminal_gap": float(np.mean(np.abs(pa[:, -1] - pb[:, -1]))),
            # continuity diagnostic, reported but never gated
            "gap_ratio": float(
                np.abs(sol_a.y0 - sol_b.y0)
                / max(np.mean(np.abs(pa[:, -1] - pb[:, -1])), 1e-300)
            ),
        },
    )


def check_apriori_bound(
    sol: SolutionField,
    bundle: PathBundle,
    gen: GeneratorSpec,
    terminal_values: np.ndarray,
    p: float,
    c_fit: float = APRIORI_C_FIT,
    name: str = "apriori-bound",
) -> VerificationReport:
    """Path-averaged a-priori estimate with a frozen fitted constant.

    mean[max_i e^{pV_i}|Y_i|^p] + mean[(sum e^{2V}|Z|^2 dt)^{p/2}]
    <= c_fit * ( mean[e^{pV_N}|eta|^p]
                 + mean[(sum e^{V}(|F(t,0,0)| dt + |G(t,0)| dA))^p] ).
    """
    if bundle.V is None:
        raise GridMismatch("bundle has no accumulated weights, call accumulate_weights")
    pw = sol.paths(bundle)
    v = bundle.V
    t = bundle.grid.nodes
    lhs = float(
        np.mean(np.max(np.exp(p * v) * np.abs(pw["Y"]) ** p, axis=1))
        + np.mean(np.sum(np.exp(2.0 * v[:-1]) * pw["Z"] ** 2 * bundle.dt, axis=1) ** (p / 2.0))
    )
    f0 = np.array([np.abs(float(np.asarray(gen.F(t[i], 0.0, 0.0)))) for i in range(len(t) - 1)])
    g0 = np.array([np.abs(float(np.asarray(gen.G(t[i], 0.0)))) for i in range(len(t) - 1)])
    source = float(np.sum(np.exp(v[:-1]) * (f0 * bundle.dt + g0 * bundle.dA)) ** p)
    rhs = float(np.mean(np.exp(p * v[-1]) * np.abs(terminal_values) ** p) + source)
    margin = c_fit * rhs - lhs
    return VerificationReport(
        name=name,
        passed=bool(lhs <= c_fit * rhs * (1.0 + 1e-12) + 1e-12),
        worst_violation=float(lhs - c_fit * rhs),
        tolerance=0.0,
        monitors={"lhs": lhs, "rhs": rhs, "c_fit": float(c_fit), "margin": float(margin)},
    )


def check_energy_bound(
    sol: SolutionField,
    bundle: PathBundle,
    gen: GeneratorSpec,
    terminal_values: np.ndarray,
    c_fit: float = ENERGY_C_FIT,
    name: str = "energy-bound",
) -> VerificationReport:
    """Positive-part weighted energy estimate with a frozen fitted constant.

    mean[max_i e^{2Vplus_i}|Y_i|^2]
    <= c_fit * ( mean[e^{2Vplus_N}|eta|^2]
                 + mean[(sum e^{Vplus}(|F(t,0,0)| dt + |G(t,0)| dA))^2] ).
    """
    if bundle.Vplus is None:
        raise GridMismatch("bundle has no accumulated weights, call accumulate_weights")
    pw = sol.paths(bundle)
    v = bundle.Vplus
    t = bundle.grid.nodes
    lhs = float(np.mean(np.max(np.exp(2.0 * v) * pw["Y"] ** 2, axis=1)))
    f0 = np.array([np.abs(float(np.asarray(gen.F(t[i], 0.0, 0.0)))) for i in range(len(t) - 1)])
    g0 = np.array([np.abs(float(np.asarray(gen.G(t[i], 0.0)))) for i in range(len(t) - 1)])
    source = float(np.sum(np.exp(v[:-1]) * (f0 * bundle.dt + g0 * bundle.dA)) ** 2)
    rhs = float(np.mean(np.exp(2.0 * v[-1]) * terminal_values**2) + source)
    return VerificationReport(
        name=name,
        passed=bool(lhs <= c_fit * rhs * (1.0 + 1e-12) + 1e-12),
        worst_violation=float(lhs - c_fit * rhs),
        tolerance=0.0,
        monitors={"lhs": lhs, "rhs": rhs, "c_fit": float(c_fit)},
    )


def penalty_monotonicity(
    sol_a: SolutionField, sol_b: SolutionField, bundle: PathBundle
) -> float:
    """sum_i mean <Y^a - Y^b, U^a - U^b> dQ_i, near-nonnegative for a
    monotone penalty pair (up to the eps + eps' cross term)."""
    pa, pb = sol_a.paths(bundle), sol_b.paths(bundle)
    dy = pa["Y"][:, :-1] - pb["Y"][:, :-1]
    du = pa["U"] - pb["U"]
    return float(np.sum(np.mean(dy * du, axis=0) * bundle.dq))


def zero_process(bundle: PathBundle) -> TestProcess:
    shape = bundle.dB.shape
    return TestProcess(0.0, np.zeros(shape), np.zeros(shape), label="zero")


def reconstruction_process(sol: SolutionField, bundle: PathBundle) -> TestProcess:
    """The solution's own (terminal, driver-minus-penalty) reconstruction."""
    pw = sol.paths(bundle)
    return TestProcess(
        float(pw["Y"][0, 0]), pw["H"] - pw["U"], pw["Z"], label="reconstruction"
    )


def smoothed_midpoint_process(
    sol: SolutionField, bundle: PathBundle, backend, smooth_eps: float
) -> TestProcess:
    """Exponential smoothing of the solution itself as a test process."""
    sm = smoothing_operator(bundle, backend, sol.Y_levels, SmoothingConfig(smooth_eps))
    if bundle.node_index is not None:
        n_paths = bundle.on_paths(sm.N_levels)
        r_paths = bundle.on_paths(sm.R_levels)
    else:
        n_paths = np.stack(sm.N_levels, axis=1)
        r_paths = np.stack(sm.R_levels, axis=1)
    return TestProcess(sm.gamma, n_paths, r_paths, label="smoothed")


def random_step_process(
    bundle: PathBundle, seed: int, blocks: int = 8, scale: float = 1.0, index: int = 0
) -> TestProcess:
    """Piecewise-constant (N, R) with Gaussian block values, for probing."""
    gen = rngmod.aux_stream(seed, 1000 + index)
    n = bundle.grid.steps
    edges = np.linspace(0, n, blocks + 1).astype(int)
    nn = np.zeros(n)
    rr = np.zeros(n)
    for k in range(blocks):
        nn[edges[k]:edges[k + 1]] = scale * gen.standard_normal()
        rr[edges[k]:edges[k + 1]] = scale * gen.standard_normal()
    gamma = float(scale * gen.standard_normal())
    shape = bundle.dB.shape
    return TestProcess(
        gamma,
        np.broadcast_to(nn, shape).copy(),
        np.broadcast_to(rr, shape).copy(),
        label=f"random-step-{index}",
    )


def battery(
    sol: SolutionField,
    bundle: PathBundle,
    backend,
    phi: ConvexSpec,
    psi: ConvexSpec,
    gen: GeneratorSpec,
    p: float,
    deltas=(1.0, 0.1, 0.01),
    tol: Optional[float] = None,
    smooth_eps: Optional[float] = None,
    label: str = "",
) -> list:
    """Three-way test-process battery at q = 2 and q = min(p, 2).

    Processes: the zero process, the solution's own reconstruction, and
    the smoothing of the solution's midpoints.  Potentials are taken at
    the solution's penalization level.  Also reports the collapse of the
    reconstruction Gamma to the delta_q floor (the strong solution seen
    through the inequality).
    """
    tol = default_tolerance(bundle) if tol is None else float(tol)
    smooth_eps = smooth_eps if smooth_eps is not None else max(
        4.0 * float(np.max(bundle.dt)), 0.05 * bundle.grid.horizon
    )
    processes = [
        zero_process(bundle),
        reconstruction_process(sol, bundle),
        smoothed_midpoint_process(sol, bundle, backend, smooth_eps),
    ]
    q_values = sorted({2.0, min(float(p), 2.0)})
    reports = []
    for tp in processes:
        for q in q_values:
            for delta in deltas:
                reports.append(
                    check_variational_inequality(
                        sol, tp, phi, psi, gen, bundle, q, delta,
                        tol=tol, penalization_eps=sol.eps,
                        name=f"variational{label}[{tp.label}] q={q:g} delta={delta:g}",
                    )
                )
    recon = processes[1]
    m = recon.materialize(bundle)
    y = sol.paths(bundle)["Y"]
    collapse = float(np.max(np.mean((m - y) ** 2, axis=0)))
    reports.append(
        VerificationReport(
            name=f"reconstruction-collapse{label}",
            passed=bool(collapse <= tol),
            worst_violation=collapse,
            tolerance=tol,
            monitors={},
        )
    )
    return reports
