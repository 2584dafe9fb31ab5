"""Averaged objects of the slow/fast decomposition.

Everything here reduces to time averages along frozen-fast trajectories:
the fast equilibrium map lambda*(theta) (up to O(beta) ripple), the
effective slow field gbar0(theta), its root theta^beta, and the RK4
solution of the noiseless slow mean flow d/dt v = gbar(v, lambda*(v)).
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import integrate_frozen_fast
from .errors import ConfigError, NonConvergent, NonFinite, SingularJacobian
from .probing import ergodic_average

MAX_NEWTON_ITERATIONS = 100
MIN_NEWTON_STEP = 2.0**-10
MAX_JACOBIAN_COND = 1e12


@dataclass(frozen=True)
class StationaryEstimate:
    """Trailing-window time average, its ripple, and the horizon used."""

    value: np.ndarray
    osc_amplitude: float
    horizon: float


def _windowed_run(system, theta, beta, burn_in, window, lambda0):
    """Frozen-fast trajectory spanning a burn-in plus two averaging windows.

    Defaults: 20 fast time constants of burn-in, windows of 100 periods of
    the slowest probe tone.  Two windows are integrated so convergence can
    be judged by comparing their averages.
    """
    if burn_in is None:
        burn_in = 20.0 / beta
    if window is None:
        window = 100.0 / system.basis.min_omega
    if lambda0 is None:
        lambda0 = np.zeros(system.dim_fast)
    traj = integrate_frozen_fast(system, theta, lambda0, beta, burn_in + 2.0 * window)
    mid = burn_in + window
    m1 = (traj.t >= burn_in) & (traj.t < mid)
    m2 = traj.t >= mid
    return traj, m1, m2


def _two_window_estimate(series, m1, m2, tol, horizon, what):
    avg1 = series[m1].mean(axis=0)
    tail = series[m2]
    avg2 = tail.mean(axis=0)
    drift = float(np.max(np.abs(avg2 - avg1)))
    if drift > tol:
        raise NonConvergent(
            f"{what}: successive window averages differ by {drift:.3e} > {tol:.3e}"
        )
    osc = float(np.max(np.abs(tail - avg2)))
    return StationaryEstimate(value=avg2, osc_amplitude=osc, horizon=horizon)


def fast_equilibrium(
    system, theta, beta, tol=1e-3, *, burn_in=None, window=None, lambda0=None
):
    """Time average of the frozen-fast variable: the map lambda*(theta).

    The returned oscillation amplitude is the max deviation from the
    window mean, which bounds the probe-induced ripple around the
    equilibrium.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    traj, m1, m2 = _windowed_run(system, theta, beta, burn_in, window, lambda0)
    return _two_window_estimate(
        traj.lam, m1, m2, tol, float(traj.t[-1]), "fast equilibrium"
    )


def mean_field_g0(
    system, theta, beta, tol=1e-3, *, burn_in=None, window=None, lambda0=None
):
    """Stationary average of the slow field along the frozen-fast run.

    This realizes the integral of g against the joint invariant measure of
    (Lambda^theta, xi) by time averaging after burn-in.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    traj, m1, m2 = _windowed_run(system, theta, beta, burn_in, window, lambda0)
    keep = m1 | m2
    idx = np.nonzero(keep)[0]
    xi = system.probing(np.exp(2j * np.pi * traj.phases[:, idx]))
    series = np.zeros((idx.shape[0], system.dim_slow))
    for row, i in enumerate(idx):
        series[row] = system.analysis_g(theta, traj.lam[i], xi[:, row])
    return _two_window_estimate(
        series, m1[keep], m2[keep], tol, float(traj.t[-1]), "averaged slow field"
    )


def find_root_g0(
    system, theta_init, beta, tol=1e-3, *, avg_tol=None, burn_in=None, window=None
):
    """Damped Newton root of the averaged slow field: the point theta^beta.

    The Jacobian is a forward difference with step max(1e-4, 10*avg_tol),
    large enough to sit above the averaging noise floor.  Steps are halved
    until the field norm decreases (monotone acceptance), down to 2^-10.
    """
    avg_tol = tol if avg_tol is None else avg_tol
    fd_step = max(1e-4, 10.0 * avg_tol)

    def field(th):
        return mean_field_g0(
            system, th, beta, avg_tol, burn_in=burn_in, window=window
        ).value

    theta = np.atleast_1d(np.asarray(theta_init, dtype=float)).copy()
    d = theta.shape[0]
    fval = field(theta)
    fnorm = float(np.linalg.norm(fval))
    for _ in range(MAX_NEWTON_ITERATIONS):
        if fnorm < tol:
            return theta
        jac = np.zeros((d, d))
        for j in range(d):
            shifted = theta.copy()
            shifted[j] += fd_step
            jac[:, j] = (field(shifted) - fval) / fd_step
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.linalg.cond(jac)
        if not np.isfinite(cond) or cond > MAX_JACOBIAN_COND:
            raise SingularJacobian(
                f"averaged-field Jacobian condition {cond:.3e} exceeds 1e12"
            )
        direction = np.linalg.solve(jac, -fval)
        scale = 1.0
        while True:
            trial = theta + scale * direction
            trial_val = field(trial)
            trial_norm = float(np.linalg.norm(trial_val))
            if trial_norm < fnorm or scale <= MIN_NEWTON_STEP:
                break
            scale *= 0.5
        theta, fval, fnorm = trial, trial_val, trial_norm
    raise NonConvergent(
        f"no root of the averaged slow field after {MAX_NEWTON_ITERATIONS} "
        f"iterations (residual {fnorm:.3e})"
    )


@dataclass(frozen=True)
class MeanFlowPath:
    """RK4 samples of the noiseless slow mean flow."""

    t: np.ndarray
    theta: np.ndarray


def _gbar_evaluator(system, lam_of):
    """Probe-average of g at a frozen state, by the cheapest exact route."""
    if system.g_mean is not None:
        return lambda th: np.atleast_1d(
            np.asarray(system.g_mean(th, lam_of(th)), dtype=float)
        )
    if system.fourier is not None:

        def from_field(th):
            x = np.concatenate([th, lam_of(th)])
            return system.fourier.mean_value(x)[: system.dim_slow]

        return from_field

    def from_time_average(th):
        lam = lam_of(th)

        def u(_, xi):
            if xi.ndim == 1:
                return system.analysis_g(th, lam, xi)
            cols = [system.analysis_g(th, lam, xi[:, i]) for i in range(xi.shape[1])]
            return np.stack(cols, axis=-1)

        return ergodic_average(
            u, np.zeros(1), system.basis, system.probing, tol=1e-6
        ).value

    return from_time_average


def mean_flow_solve(
    system,
    theta0,
    horizon,
    *,
    step=0.02,
    beta=None,
    tol=1e-3,
    burn_in=None,
    window=None,
):
    """Integrate d/dt v = gbar(v, lambda*(v)) with RK4.

    lambda* comes from the system's closed form when available; otherwise
    each stage runs a frozen-fast average, which needs beta and is orders
    of magnitude slower (a warning flags that path).
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if horizon <= 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    if system.lambda_star is not None:
        lam_of = lambda th: np.atleast_1d(np.asarray(system.lambda_star(th), dtype=float))
    else:
        if beta is None:
            raise ConfigError(
                "system has no closed-form lambda*: pass beta to enable the "
                "per-stage frozen-fast path"
            )
        warnings.warn(
            "mean_flow_solve: no closed-form lambda*; every RK4 stage runs a "
            "frozen-fast average",
            stacklevel=2,
        )
        lam_of = lambda th: fast_equilibrium(
            system, th, beta, tol, burn_in=burn_in, window=window
        ).value
    gbar = _gbar_evaluator(system, lam_of)

    n_steps = max(1, int(np.ceil(horizon / step - 1e-12)))
    h = horizon / n_steps
    ts = np.zeros(n_steps + 1)
    vals = np.zeros((n_steps + 1, theta0.shape[0]))
    vals[0] = theta0
    th = theta0.copy()
    for i in range(n_steps):
        k1 = gbar(th)
        k2 = gbar(th + 0.5 * h * k1)
        k3 = gbar(th + 0.5 * h * k2)
        k4 = gbar(th + h * k3)
        th = th + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if not np.all(np.isfinite(th)):
            raise NonFinite((i + 1) * h)
        ts[i + 1] = (i + 1) * h
        vals[i + 1] = th
    return MeanFlowPath(t=ts, theta=vals)


def stationary_grid(system, thetas, beta, tol=1e-3, *, kind="lambda", jobs=1, **kwargs):
    """fast_equilibrium or mean_field_g0 over a grid of slow states.

    Points are independent, so jobs > 1 evaluates them in a thread pool;
    results keep grid order either way.
    """
    if kind == "lambda":
        op = fast_equilibrium
    elif kind == "g0":
        op = mean_field_g0
    else:
        raise ConfigError(f"kind must be 'lambda' or 'g0', got {kind!r}")
    thetas = [np.atleast_1d(np.asarray(th, dtype=float)) for th in thetas]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda th: op(system, th, beta, tol, **kwargs), thetas))
    return [op(system, th, beta, tol, **kwargs) for th in thetas]


def write_grid_csv(path, thetas, estimates):
    """CSV rows theta_1..d, value_1..p, osc_amplitude, T_used."""
    thetas = [np.atleast_1d(np.asarray(th, dtype=float)) for th in thetas]
    d = thetas[0].shape[0]
    p = np.atleast_1d(estimates[0].value).shape[0]
    names = [f"theta_{i + 1}" for i in range(d)]
    names += [f"value_{i + 1}" for i in range(p)]
    names += ["osc_amplitude", "T_used"]
    rows = np.zeros((len(thetas), d + p + 2))
    for i, (th, est) in enumerate(zip(thetas, estimates)):
        rows[i, :d] = th
        rows[i, d : d + p] = np.atleast_1d(est.value)
        rows[i, d + p] = est.osc_amplitude
        rows[i, d + p + 1] = est.horizon
    np.savetxt(
        path, rows, fmt="%.17g", delimiter=",", comments="", header=",".join(names)
    )
