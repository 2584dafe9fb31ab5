"""Gradient-free extremum seeking assembled as a slow/fast probing system.

The controller evaluates the objective at a probed point theta + eps(theta)*xi,
normalizes by the probing gain, washes the DC component out of the measurement
with a high-pass filter, and correlates the result with a filtered copy of the
probe.  The correlation is an averaged gradient read-out: writing M(s) for the
washout transfer function and Sigma for the covariance of the filtered probe,
the long-run average of the update is

    -(sigma (theta - theta_ctr) + Sigma grad(objective)) + O(eps^2).

Note the curvature matrix is Sigma alone.  The measurement and the probe pass
through the same filter, so the direct feedthrough J enters the state response
and the feedthrough term with opposite signs and cancels from the correlation:
per probe tone, 0.5 Re(M conj(M - J)) + 0.5 J Re(M) = 0.5 |M|^2.  The moment
M0 = J E[xi_check xi^T] therefore shows up only as a diagnostic (it shifts the
state-response and feedthrough channels individually, and Sigma + M0 is the
passivity read-out), never in the averaged field itself.

The fast state of the assembled system is the washout state driven by the
normalized measurement.  Filtered probe channels carry no state: the probes
are single tones, so their filtered copies are computed in closed form from
the clock phasors via the transfer function at each probe frequency.
"""

from __future__ import annotations

import logging
import math
import shlex
import subprocess
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import TwoTimescaleSystem
from .errors import ConfigError, NegativeObjective, NonHurwitz
from .filters import StateSpaceFilter, transfer, washout_filter
from .probing import DEFAULT_PAIRS, FrequencyBasis, ProbingMap, default_basis, ergodic_average

logger = logging.getLogger(__name__)

GAIN_KINDS = ("objective_scaled", "prior_scaled", "constant")

#: agreement tolerance for the probe-moment averages (fixed, not tunable:
#: the moments are constants of the basis/filter pair)
MOMENT_TOL = 1e-6


class Objective:
    """Callable objective with an optional analytic gradient attached.

    The function receives a (d,) float array and must return a scalar;
    the gradient, when present, is used for diagnostics only (the
    algorithm itself never differentiates).
    """

    def __init__(self, fn, grad=None, name=None):
        self._fn = fn
        self.grad = grad
        self.name = name

    def __call__(self, theta):
        return float(self._fn(np.atleast_1d(np.asarray(theta, dtype=float))))


def quadratic_objective(center=0.0, weights=1.0) -> Objective:
    """0.5 * sum_i w_i (theta_i - c_i)^2."""
    c = np.asarray(center, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ConfigError("quadratic weights must be positive")
    return Objective(
        fn=lambda th: 0.5 * float(np.sum(w * (th - c) ** 2)),
        grad=lambda th: w * (th - c),
        name="quadratic",
    )


def rosenbrock_objective(a=1.0, b=100.0) -> Objective:
    """(a - theta_1)^2 + b (theta_2 - theta_1^2)^2 on R^2."""

    def fn(th):
        if th.shape[0] != 2:
            raise ConfigError("rosenbrock objective is defined on R^2")
        return (a - th[0]) ** 2 + b * (th[1] - th[0] ** 2) ** 2

    def grad(th):
        gap = th[1] - th[0] ** 2
        return np.array([-2.0 * (a - th[0]) - 4.0 * b * th[0] * gap, 2.0 * b * gap])

    return Objective(fn=fn, grad=grad, name="rosenbrock")


def quartic_objective(scale=1.0) -> Objective:
    """scale * ||theta||^4."""
    s = float(scale)
    if s <= 0:
        raise ConfigError("quartic scale must be positive")
    return Objective(
        fn=lambda th: s * float(th @ th) ** 2,
        grad=lambda th: 4.0 * s * float(th @ th) * th,
        name="quartic",
    )


OBJECTIVES = {
    "quadratic": quadratic_objective,
    "rosenbrock": rosenbrock_objective,
    "quartic": quartic_objective,
}


def named_objective(name, **params) -> Objective:
    """Built-in objective by name with keyword parameters."""
    if name not in OBJECTIVES:
        raise ConfigError(
            f"unknown objective {name!r}; built-ins: {sorted(OBJECTIVES)}"
        )
    try:
        return OBJECTIVES[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for objective {name!r}: {exc}") from exc


class ProcessObjective:
    """Objective evaluated by an external command, one invocation per call.

    Protocol: the point is written to the command's standard input as one
    line of space-separated decimals; the command prints one decimal on
    standard output and exits.  Every evaluation is counted and the count
    is logged, since external evaluations are presumed expensive.
    """

    def __init__(self, command):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise ConfigError("objective command must be non-empty")
        self.evaluations = 0
        self.grad = None
        self.name = "process"

    def __call__(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        line = " ".join(format(v, ".17g") for v in theta) + "\n"
        try:
            proc = subprocess.run(
                self.argv, input=line, capture_output=True, text=True, check=True
            )
        except (OSError, subprocess.CalledProcessError) as exc:
            detail = getattr(exc, "stderr", "") or str(exc)
            raise ConfigError(f"objective command failed: {detail.strip()}") from exc
        self.evaluations += 1
        logger.debug("external objective evaluation %d", self.evaluations)
        try:
            return float(proc.stdout.strip())
        except ValueError as exc:
            raise ConfigError(
                f"objective command printed {proc.stdout.strip()!r}, not a decimal"
            ) from exc


@dataclass(frozen=True)
class EscConfig:
    """Extremum-seeking configuration.

    objective maps a (d,) point to a scalar; grad, when given (or attached
    to the objective), is used for diagnostics only.  The probe amplitude
    is eps(theta): the base epsilon, scaled per gain_kind.  theta_ctr and
    sigma_p parametrize the prior-scaled gain and the sigma regularization
    pull; the washout filter strips the DC component of the normalized
    measurement.  The fast gain of an assembled system is pinned to 1.
    """

    objective: Callable
    epsilon: float
    dim: int | None = None
    gain_kind: str = "constant"
    theta_ctr: np.ndarray | None = None
    sigma_p: float = 1.0
    sigma: float = 0.0
    washout: StateSpaceFilter | None = None
    probing: FrequencyBasis | None = None
    grad: Callable | None = None
    single_at: bool = False
    name: str | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.gain_kind not in GAIN_KINDS:
            raise ConfigError(
                f"gain_kind must be one of {GAIN_KINDS}, got {self.gain_kind!r}"
            )
        if self.sigma_p <= 0:
            raise ConfigError(f"sigma_p must be positive, got {self.sigma_p}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma}")

        dim = self.dim
        if dim is None:
            if self.theta_ctr is not None:
                dim = np.atleast_1d(np.asarray(self.theta_ctr)).shape[0]
            elif self.probing is not None:
                dim = self.probing.size
            else:
                dim = 1
        dim = int(dim)
        if dim < 1:
            raise ConfigError(f"dim must be positive, got {dim}")

        ctr = self.theta_ctr
        ctr = np.zeros(dim) if ctr is None else np.atleast_1d(np.asarray(ctr, dtype=float))
        if ctr.shape != (dim,):
            raise ConfigError(
                f"theta_ctr shape {ctr.shape} does not match dim {dim}"
            )

        basis = self.probing
        if basis is None:
            if dim > len(DEFAULT_PAIRS):
                raise ConfigError(
                    f"no default probing basis for dim {dim}; supply one"
                )
            basis = default_basis(dim)
        if basis.size != dim:
            raise ConfigError(
                f"probing basis has {basis.size} tones but dim is {dim}: "
                "each coordinate needs its own probe frequency"
            )

        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "theta_ctr", ctr)
        object.__setattr__(self, "probing", basis)
        if self.washout is None:
            object.__setattr__(self, "washout", washout_filter(1.0))


def _objective_value(config, point):
    """Objective at a point, guarding the sign assumption where it applies."""
    val = float(config.objective(point))
    if config.gain_kind == "objective_scaled" and val < 0:
        raise NegativeObjective(
            f"objective value {val:.6g} at {np.array2string(point, precision=6)}; "
            "the objective-scaled probing gain needs a nonnegative objective"
        )
    return val


def probing_gain(config, theta) -> float:
    """State-dependent probe amplitude eps(theta).

    objective_scaled: eps*sqrt(1 + objective); prior_scaled:
    eps*sqrt(1 + ||theta - theta_ctr||^2 / sigma_p^2); constant: eps.
    The state-dependent forms grow with the distance scale, which keeps
    the normalized measurement Lipschitz for fast-growing objectives.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if config.gain_kind == "objective_scaled":
        return config.epsilon * math.sqrt(1.0 + _objective_value(config, theta))
    if config.gain_kind == "prior_scaled":
        dev = theta - config.theta_ctr
        return config.epsilon * math.sqrt(1.0 + float(dev @ dev) / config.sigma_p**2)
    return config.epsilon


def normalized_observation(config, theta, xi) -> float:
    """Measured objective at the probed point, scaled by 1/eps(theta)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eps = probing_gain(config, theta)
    return _objective_value(config, theta + eps * xi) / eps


def objective_gradient(config) -> Callable[[np.ndarray], np.ndarray]:
    """Gradient callable: analytic when attached, else central differences.

    Diagnostics only; the FD step 1e-5 * max(1, ||theta||) sits well above
    roundoff for objective values of moderate dynamic range.
    """
    grad = config.grad if config.grad is not None else getattr(config.objective, "grad", None)
    if grad is not None:
        return lambda th: np.atleast_1d(
            np.asarray(grad(np.atleast_1d(np.asarray(th, dtype=float))), dtype=float)
        )
    fn = config.objective

    def by_difference(th):
        th = np.atleast_1d(np.asarray(th, dtype=float))
        delta = 1e-5 * max(1.0, float(np.linalg.norm(th)))
        out = np.zeros(th.shape[0])
        for j in range(th.shape[0]):
            up = th.copy()
            up[j] += delta
            dn = th.copy()
            dn[j] -= delta
            out[j] = (float(fn(up)) - float(fn(dn))) / (2.0 * delta)
        return out

    return by_difference


def _probe_transfer(config) -> np.ndarray:
    """Washout response at each probe frequency (rad/s = 2 pi omega_i)."""
    return np.array(
        [transfer(config.washout, 2j * math.pi * w) for w in config.probing.omegas]
    )


def extended_probe_map(config) -> ProbingMap:
    """Probe vector [xi; xi_check]: raw cosines and their filtered copies.

    The filtered copies are steady-state responses, read off the clock
    phasors: a tone Re(z) maps to Re(M(j w) z).  They are exact for all t,
    so no filter transient ever enters the probe channels.
    """
    gains = _probe_transfer(config)

    def g_state(z):
        z = np.asarray(z)
        w = gains if z.ndim == 1 else gains[:, None]
        return np.concatenate([z.real, (w * z).real], axis=0)

    return ProbingMap(m=2 * config.dim, g_state=g_state)


def esc_constants(config) -> tuple[np.ndarray, np.ndarray]:
    """Probe second moments: (Sigma, M0).

    Sigma = E[xi_check xi_check^T] is the filtered-probe covariance and the
    curvature matrix of the averaged update; M0 = J E[xi_check xi^T] is the
    feedthrough moment (diagnostic; Sigma + M0 is the passivity read-out).
    Both are constants of the basis/filter pair, computed by ergodic
    averaging of the outer products.
    """
    pmap = extended_probe_map(config)
    d = config.dim

    def u(_, xi):
        if xi.ndim == 1:
            xi = xi[:, None]
        raw, filt = xi[:d], xi[d:]
        ff = np.einsum("in,jn->ijn", filt, filt).reshape(d * d, -1)
        fr = np.einsum("in,jn->ijn", filt, raw).reshape(d * d, -1)
        return np.concatenate([ff, fr], axis=0)

    avg = ergodic_average(
        u, np.zeros(1), config.probing, pmap, tol=MOMENT_TOL
    ).value
    sigma = avg[: d * d].reshape(d, d)
    m0 = config.washout.J * avg[d * d :].reshape(d, d)
    return sigma, m0


def esc_meanflow_approx(config, theta, sigma_check, m0) -> np.ndarray:
    """Closed-form averaged update: -(sigma (theta - ctr) + Sigma grad).

    Accurate to O(eps^2) for smooth objectives.  m0 is accepted alongside
    sigma_check because the two moments are computed together, but it does
    not enter the field: the feedthrough contributions of the state
    response and the direct term cancel (see the module docstring).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    sigma_check = np.asarray(sigma_check, dtype=float)
    del m0
    grad = objective_gradient(config)(theta)
    return -(config.sigma * (theta - config.theta_ctr) + sigma_check @ grad)


def build_esc_system(config, *, theta_star=None) -> TwoTimescaleSystem:
    """Assemble the extremum seeker as a slow/fast system.

    Fast state: the washout state driven by the normalized measurement
    (affine in the state, so its top Lyapunov exponent is the filter's
    dominant eigenvalue).  Slow field: -sigma (theta - ctr) plus the probe
    correlation term; the correlation term is integrated with an extra
    factor a_t by default (g_probe mechanism), or folded into the plain
    slow field when config.single_at is set.  Run assembled systems with
    fast gain 1.
    """
    washout = config.washout
    eigs = np.linalg.eigvals(washout.F)
    if np.any(eigs.real >= 0):
        raise NonHurwitz(
            f"washout state matrix has eigenvalue {eigs[np.argmax(eigs.real)]:.6g} "
            "with nonnegative real part"
        )
    F, G, H, J = washout.F, washout.G, washout.H, washout.J
    d = config.dim
    sigma = config.sigma
    ctr = config.theta_ctr

    def observe(theta, xi_raw):
        eps = probing_gain(config, theta)
        return _objective_value(config, theta + eps * xi_raw) / eps

    def h_cb(theta, lam, xi):
        return F @ lam + G * observe(theta, xi[:d])

    def probe_term(theta, lam, xi):
        filtered = float(H @ lam) + J * observe(theta, xi[:d])
        return -xi[d:] * filtered

    if config.single_at:
        def g_cb(theta, lam, xi):
            return -sigma * (theta - ctr) + probe_term(theta, lam, xi)

        g_probe = None
    else:
        def g_cb(theta, lam, xi):
            return -sigma * (theta - ctr)

        g_probe = probe_term

    # solved once; the sign convention makes lambda_star = -F^{-1} G * mean input
    neg_finv_g = -np.linalg.solve(F, G)
    grad_cb = objective_gradient(config)
    moments = {}

    def curvature():
        if "sigma" not in moments:
            moments["sigma"], moments["m0"] = esc_constants(config)
        return moments["sigma"]

    def g_mean(theta, lam):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return -(sigma * (theta - ctr) + curvature() @ grad_cb(theta))

    def lambda_star(theta):
        # leading-order probe average of the fast state: the DC response
        # to objective/eps; exact only up to O(eps) Taylor terms
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return neg_finv_g * (
            _objective_value(config, theta) / probing_gain(config, theta)
        )

    return TwoTimescaleSystem(
        dim_slow=d,
        dim_fast=washout.order,
        g=g_cb,
        h=h_cb,
        basis=config.probing,
        probing=extended_probe_map(config),
        g_probe=g_probe,
        g_mean=g_mean,
        dh_dlambda=lambda theta, lam, xi: F,
        lambda_star=lambda_star,
        theta_star=theta_star,
        name=config.name,
    )
