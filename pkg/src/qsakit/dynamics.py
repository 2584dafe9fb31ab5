"""Gain schedules, coupled system definitions, and the RK4 integrator.

The integrator advances the slow/fast pair

    d/dt Theta = a_t * g(Theta, L, xi_t)
    d/dt Lambda = b_t * h(Theta, Lambda, xi_t)

where L is Lambda itself or, when a second-order filter is attached, the
filtered copy Lambda^F carried as two extra states per fast coordinate.
Probing phases are never integrated: they are recomputed from t at every
stage, so trajectories are reproducible bit for bit.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFinite
from .probing import clock_phases, identity_map

#: steps per precomputed probe/gain block inside the integrator
_CHUNK = 1 << 14

MODES = ("mixed", "constant", "vanishing")


@dataclass(frozen=True)
class GainSchedule:
    """Time profiles of the slow gain a_t and the fast gain b_t.

    mixed (the supported regime): a_t = (1+t)^-rho with rho in (1/2, 1)
    and constant fast gain b_t = beta.  The companion rate r_t = rho/(1+t)
    satisfies da/dt = -r_t a_t exactly.  constant pins a_t = alpha0 (r = 0);
    vanishing additionally decays the fast gain, b_t = beta (1+t)^(-rho/2).
    Both alternatives are reachable for exploration but carry no tuning
    guidance here.
    """

    rho: float
    beta: float
    mode: str = "mixed"
    alpha0: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.5 < self.rho < 1.0:
            raise ConfigError(f"rho must lie in (1/2, 1), got {self.rho}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.mode == "constant" and self.alpha0 <= 0:
            raise ConfigError(f"alpha0 must be positive, got {self.alpha0}")

    def gains_at(self, t):
        """(a_t, r_t) with da/dt = -r_t a_t."""
        if self.mode == "constant":
            return self.alpha0, 0.0
        u = 1.0 + t
        return u**-self.rho, self.rho / u

    def fast_gain_at(self, t):
        if self.mode == "vanishing":
            return self.beta * (1.0 + t) ** (-0.5 * self.rho)
        return self.beta

    def slow_gain_array(self, ts):
        if self.mode == "constant":
            return np.full(len(ts), self.alpha0)
        return (1.0 + ts) ** -self.rho

    def fast_gain_array(self, ts):
        if self.mode == "vanishing":
            return self.beta * (1.0 + ts) ** (-0.5 * self.rho)
        return np.full(len(ts), self.beta)


def gains_at(schedule, t):
    """Instantaneous gain triple (a_t, r_t, b_t) of a schedule."""
    a, r = schedule.gains_at(t)
    return a, r, schedule.fast_gain_at(t)


def _lattice(count, dim, lo=-1.0, hi=1.0):
    """Deterministic quasi-uniform points in [lo, hi]^dim (no RNG)."""
    i = np.arange(1, count + 1)[:, None]
    j = np.arange(1, dim + 1)[None, :]
    u = 0.5 + 0.5 * np.sin(2.39996322972865332 * i * j + 0.7 * j)
    return lo + (hi - lo) * u


class TwoTimescaleSystem:
    """Coupled slow/fast vector fields with their probing clock.

    g and h are callbacks (theta, lam, xi) -> array.  When an exact Fourier
    form of the stacked field [g; h] is supplied it is cross-checked against
    the callbacks on a deterministic grid at construction; the frequency-
    domain machinery then works from that form while integration always
    uses the callbacks.

    Optional structural extras: g_probe adds a_t-weighted probing feedback
    to the slow field (the slow rate becomes a_t * (g + a_t * g_probe));
    g_mean is a closed-form probe-average of g at a frozen state;
    dh_dlambda is an analytic fast Jacobian for sensitivity runs;
    lambda_star / theta_star record known equilibrium maps for diagnostics.
    """

    def __init__(
        self,
        dim_slow,
        dim_fast,
        g,
        h,
        basis,
        probing=None,
        *,
        fourier=None,
        g_probe=None,
        g_mean=None,
        dh_dlambda=None,
        lambda_star=None,
        theta_star=None,
        name=None,
    ):
        if dim_slow < 1 or dim_fast < 1:
            raise ConfigError("state dimensions must be positive")
        self.dim_slow = int(dim_slow)
        self.dim_fast = int(dim_fast)
        self.g = g
        self.h = h
        self.basis = basis
        self.probing = probing if probing is not None else identity_map(basis.size)
        self.fourier = fourier
        self.g_probe = g_probe
        self.g_mean = g_mean
        self.dh_dlambda = dh_dlambda
        self.lambda_star = lambda_star
        self.theta_star = theta_star
        self.name = name
        if fourier is not None:
            if fourier.dim_out != self.dim_slow + self.dim_fast:
                raise ConfigError(
                    "fourier form must stack [g; h]: expected dim_out "
                    f"{self.dim_slow + self.dim_fast}, got {fourier.dim_out}"
                )
            self._check_fourier_agreement()

    def analysis_g(self, theta, lam, xi):
        """Slow field with unit-weight probing feedback, used for averaging."""
        val = np.atleast_1d(np.asarray(self.g(theta, lam, xi), dtype=float))
        if self.g_probe is not None:
            val = val + np.asarray(self.g_probe(theta, lam, xi), dtype=float)
        return val

    def _check_fourier_agreement(self, count=24, tol=1e-10):
        pts = _lattice(count, self.dim_slow + self.dim_fast)
        ts = 0.37 * np.arange(count) + 0.11
        worst = 0.0
        for x, t in zip(pts, ts):
            phi = clock_phases(self.basis, float(t))
            z = np.exp(2j * math.pi * phi)
            xi = self.probing(z)
            theta, lam = x[: self.dim_slow], x[self.dim_slow :]
            direct = np.concatenate(
                [
                    np.atleast_1d(np.asarray(self.g(theta, lam, xi), dtype=float)),
                    np.atleast_1d(np.asarray(self.h(theta, lam, xi), dtype=float)),
                ]
            )
            worst = max(worst, float(np.max(np.abs(self.fourier.eval(x, z) - direct))))
        if worst > tol:
            raise ConfigError(
                f"fourier form disagrees with callbacks (max defect {worst:.3e})"
            )


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled integration output.

    phases holds the fractional clock phases (K, N), recomputed analytically
    from the sample times.  a and beta are the gain values at each sample.
    lam_filtered / dlam_filtered are present only for filtered runs.
    """

    t: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    a: np.ndarray
    beta: np.ndarray
    phases: np.ndarray
    lam_filtered: np.ndarray = None
    dlam_filtered: np.ndarray = None

    @property
    def n_samples(self):
        return self.t.shape[0]

    def to_csv(self, path):
        """Write samples as CSV with 17 significant digits per value."""
        cols = [self.t, self.a, self.beta]
        names = ["t", "a_t", "beta"]
        for i in range(self.theta.shape[1]):
            cols.append(self.theta[:, i])
            names.append(f"theta_{i + 1}")
        for i in range(self.lam.shape[1]):
            cols.append(self.lam[:, i])
            names.append(f"lambda_{i + 1}")
        if self.lam_filtered is not None:
            for i in range(self.lam_filtered.shape[1]):
                cols.append(self.lam_filtered[:, i])
                names.append(f"lambdaF_{i + 1}")
        for k in range(self.phases.shape[0]):
            cols.append(self.phases[k])
            names.append(f"phase_{k + 1}")
        data = np.column_stack(cols)
        np.savetxt(
            path, data, fmt="%.17g", delimiter=",", comments="",
            header=",".join(names),
        )


def step_bound(basis, beta):
    """Largest admissible RK4 step: resolves the fastest probe and the
    fast time constant (at least 40 steps per probe period, 20 per 1/beta)."""
    return min(1.0 / (40.0 * basis.max_omega), 0.05 / beta, 0.05)


def _resolve_step(basis, beta, horizon, step):
    if horizon <= 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    bound = step_bound(basis, beta)
    if step is None:
        h = bound
    else:
        if step <= 0:
            raise ConfigError(f"step must be positive, got {step}")
        if step > bound * (1.0 + 1e-12):
            raise ConfigError(
                f"step {step:.6g} exceeds the policy bound {bound:.6g}"
            )
        h = float(step)
    n_steps = max(1, math.ceil(horizon / h - 1e-12))
    return horizon / n_steps, n_steps


def _sample_count(n_steps, stride):
    n = n_steps // stride + 1
    if n_steps % stride:
        n += 1
    return n


def integrate(
    system,
    schedule,
    x0,
    horizon,
    *,
    step=None,
    filt=None,
    sample_stride=1,
    filter_init=None,
):
    """Integrate the coupled pair with RK4 on a uniform grid.

    x0 is the pair (theta0, lambda0).  With filt (a SecondOrderFilter) the
    state is extended by (Lambda^F, dLambda^F), initialized to (lambda0, 0)
    unless filter_init overrides them, and the slow field reads Lambda^F in
    place of Lambda.  Samples are stored every sample_stride steps plus the
    final time.  Raises NonFinite with the offending time on blow-up.
    """
    if sample_stride < 1:
        raise ConfigError(f"sample_stride must be >= 1, got {sample_stride}")
    theta = np.atleast_1d(np.asarray(x0[0], dtype=float)).copy()
    lam = np.atleast_1d(np.asarray(x0[1], dtype=float)).copy()
    if theta.shape != (system.dim_slow,) or lam.shape != (system.dim_fast,):
        raise ConfigError(
            f"x0 shapes {theta.shape}/{lam.shape} do not match system "
            f"dimensions {system.dim_slow}/{system.dim_fast}"
        )
    h, n_steps = _resolve_step(system.basis, schedule.beta, horizon, step)

    use_filter = filt is not None
    if use_filter:
        if filter_init is None:
            lam_f = lam.copy()
            vel_f = np.zeros_like(lam)
        else:
            lam_f = np.atleast_1d(np.asarray(filter_init[0], dtype=float)).copy()
            vel_f = np.atleast_1d(np.asarray(filter_init[1], dtype=float)).copy()
            if lam_f.shape != lam.shape or vel_f.shape != lam.shape:
                raise ConfigError("filter_init shapes must match lambda0")
        gamma2 = filt.gamma**2
        two_zg = 2.0 * filt.zeta * filt.gamma
    else:
        lam_f = vel_f = None

    g_cb, h_cb, gp_cb = system.g, system.h, system.g_probe
    pmap = system.probing
    basis = system.basis

    n_samp = _sample_count(n_steps, sample_stride)
    t_samp = np.zeros(n_samp)
    theta_samp = np.zeros((n_samp, theta.shape[0]))
    lam_samp = np.zeros((n_samp, lam.shape[0]))
    lamf_samp = np.zeros((n_samp, lam.shape[0])) if use_filter else None
    velf_samp = np.zeros((n_samp, lam.shape[0])) if use_filter else None
    cursor = 0

    def record(step_index):
        nonlocal cursor
        t_samp[cursor] = step_index * h
        theta_samp[cursor] = theta
        lam_samp[cursor] = lam
        if use_filter:
            lamf_samp[cursor] = lam_f
            velf_samp[cursor] = vel_f
        cursor += 1

    def deriv(th, la, lf, vf, xi, a, b):
        la_slow = lf if use_filter else la
        gv = np.asarray(g_cb(th, la_slow, xi), dtype=float)
        if gp_cb is not None:
            gv = gv + a * np.asarray(gp_cb(th, la_slow, xi), dtype=float)
        dth = a * gv
        dla = b * np.asarray(h_cb(th, la, xi), dtype=float)
        if use_filter:
            return dth, dla, vf, gamma2 * (la - lf) - two_zg * vf
        return dth, dla, None, None

    sixth = h / 6.0
    half = h * 0.5
    for chunk in range(0, n_steps, _CHUNK):
        m = min(_CHUNK, n_steps - chunk)
        # stage times for steps chunk..chunk+m-1: half-grid from chunk*h
        ts = (chunk + 0.5 * np.arange(2 * m + 1)) * h
        xi_all = pmap(np.exp(2j * math.pi * clock_phases(basis, ts)))
        a_all = schedule.slow_gain_array(ts)
        b_all = schedule.fast_gain_array(ts)
        for i in range(m):
            gi = chunk + i
            if gi % sample_stride == 0:
                record(gi)
            j = 2 * i
            xi0, xim, xi1 = xi_all[:, j], xi_all[:, j + 1], xi_all[:, j + 2]
            a0, am, a1 = a_all[j], a_all[j + 1], a_all[j + 2]
            b0, bm, b1 = b_all[j], b_all[j + 1], b_all[j + 2]

            k1 = deriv(theta, lam, lam_f, vel_f, xi0, a0, b0)
            if use_filter:
                k2 = deriv(
                    theta + half * k1[0], lam + half * k1[1],
                    lam_f + half * k1[2], vel_f + half * k1[3], xim, am, bm,
                )
                k3 = deriv(
                    theta + half * k2[0], lam + half * k2[1],
                    lam_f + half * k2[2], vel_f + half * k2[3], xim, am, bm,
                )
                k4 = deriv(
                    theta + h * k3[0], lam + h * k3[1],
                    lam_f + h * k3[2], vel_f + h * k3[3], xi1, a1, b1,
                )
                lam_f = lam_f + sixth * (k1[2] + 2.0 * (k2[2] + k3[2]) + k4[2])
                vel_f = vel_f + sixth * (k1[3] + 2.0 * (k2[3] + k3[3]) + k4[3])
            else:
                k2 = deriv(theta + half * k1[0], lam + half * k1[1], None, None, xim, am, bm)
                k3 = deriv(theta + half * k2[0], lam + half * k2[1], None, None, xim, am, bm)
                k4 = deriv(theta + h * k3[0], lam + h * k3[1], None, None, xi1, a1, b1)
            theta = theta + sixth * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0])
            lam = lam + sixth * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1])
            ok = np.all(np.isfinite(theta)) and np.all(np.isfinite(lam))
            if ok and use_filter:
                ok = np.all(np.isfinite(lam_f)) and np.all(np.isfinite(vel_f))
            if not ok:
                raise NonFinite((gi + 1) * h)
    record(n_steps)

    t_samp = t_samp[:cursor]
    return Trajectory(
        t=t_samp,
        theta=theta_samp[:cursor],
        lam=lam_samp[:cursor],
        a=schedule.slow_gain_array(t_samp),
        beta=schedule.fast_gain_array(t_samp),
        phases=clock_phases(basis, t_samp),
        lam_filtered=lamf_samp[:cursor] if use_filter else None,
        dlam_filtered=velf_samp[:cursor] if use_filter else None,
    )


def integrate_frozen_fast(
    system, theta, lambda0, beta, horizon, *, step=None, sample_stride=1
):
    """Integrate the fast variable alone with the slow one pinned:

        d/dt Lambda = beta * h(theta, Lambda, xi_t).

    Returns a Trajectory whose theta block repeats the frozen value and
    whose slow-gain column is zero.
    """
    if sample_stride < 1:
        raise ConfigError(f"sample_stride must be >= 1, got {sample_stride}")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    lam = np.atleast_1d(np.asarray(lambda0, dtype=float)).copy()
    if theta.shape != (system.dim_slow,) or lam.shape != (system.dim_fast,):
        raise ConfigError("frozen state shapes do not match system dimensions")
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    h, n_steps = _resolve_step(system.basis, beta, horizon, step)

    h_cb = system.h
    pmap = system.probing
    basis = system.basis

    n_samp = _sample_count(n_steps, sample_stride)
    t_samp = np.zeros(n_samp)
    lam_samp = np.zeros((n_samp, lam.shape[0]))
    cursor = 0

    sixth = h / 6.0
    half = h * 0.5
    for chunk in range(0, n_steps, _CHUNK):
        m = min(_CHUNK, n_steps - chunk)
        ts = (chunk + 0.5 * np.arange(2 * m + 1)) * h
        xi_all = pmap(np.exp(2j * math.pi * clock_phases(basis, ts)))
        for i in range(m):
            gi = chunk + i
            if gi % sample_stride == 0:
                t_samp[cursor] = gi * h
                lam_samp[cursor] = lam
                cursor += 1
            j = 2 * i
            xi0, xim, xi1 = xi_all[:, j], xi_all[:, j + 1], xi_all[:, j + 2]
            k1 = beta * np.asarray(h_cb(theta, lam, xi0), dtype=float)
            k2 = beta * np.asarray(h_cb(theta, lam + half * k1, xim), dtype=float)
            k3 = beta * np.asarray(h_cb(theta, lam + half * k2, xim), dtype=float)
            k4 = beta * np.asarray(h_cb(theta, lam + h * k3, xi1), dtype=float)
            lam = lam + sixth * (k1 + 2.0 * (k2 + k3) + k4)
            if not np.all(np.isfinite(lam)):
                raise NonFinite((gi + 1) * h)
    t_samp[cursor] = n_steps * h
    lam_samp[cursor] = lam
    cursor += 1

    t_samp = t_samp[:cursor]
    return Trajectory(
        t=t_samp,
        theta=np.tile(theta, (cursor, 1)),
        lam=lam_samp[:cursor],
        a=np.zeros(cursor),
        beta=np.full(cursor, float(beta)),
        phases=clock_phases(basis, t_samp),
    )
