"""Construction and interrogation of the residual-shifting sequence.

The diffusion clock is the monotone sequence eta_1 < ... < eta_T with
fixed endpoints

    eta_1 = min((0.04 / kappa)^2, 0.001),      eta_T = 0.999,

and a geometric interior law on sqrt(eta):

    sqrt(eta_t) = sqrt(eta_1) * b0^beta_t,     t = 2..T-1,
    beta_t      = ((t-1)/(T-1))^p * (T-1),
    b0          = exp[ ln(eta_T / eta_1) / (2 (T-1)) ].

The exponent p controls how fast the shift accelerates: beta_1 = 0 and
beta_T = T-1 always, so the endpoints are independent of p while small p
front-loads the growth.  Per-step increments alpha_t = eta_t - eta_{t-1}
(with eta_0 := 0, hence alpha_1 = eta_1) set both the mean shift and,
scaled by kappa^2, the per-step noise variance.

All arithmetic is 64-bit; construction fails loudly if rounding ever
breaks strict monotonicity because downstream kernels divide by alpha_t.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, StepError, UndefinedWeightError

#: Shared default configuration: 15 steps, p = 0.3, kappa = 2.0.
DEFAULT_T = 15
DEFAULT_P = 0.3
DEFAULT_KAPPA = 2.0

ETA_T_FINAL = 0.999


@dataclass(frozen=True)
class ScheduleParams:
    """Hyper-parameters (T, p, kappa) of the shifting sequence."""

    T: int = DEFAULT_T
    p: float = DEFAULT_P
    kappa: float = DEFAULT_KAPPA

    def validate(self) -> "ScheduleParams":
        if not isinstance(self.T, (int, np.integer)) or self.T < 2:
            raise InvalidParameterError(f"T must be an integer >= 2, got {self.T}")
        if not (self.p > 0 and math.isfinite(self.p)):
            raise InvalidParameterError(f"p must be a positive real, got {self.p}")
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise InvalidParameterError(f"kappa must be a positive real, got {self.kappa}")
        return self


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable eta/alpha tables; safe to share across threads.

    ``etas`` has length T+1 with etas[0] = 0 by convention so that
    alpha_1 = eta_1 and the posterior at t = 1 degenerates cleanly.
    ``alphas`` has length T+1 with alphas[0] = nan (never a valid step).
    """

    etas: np.ndarray
    alphas: np.ndarray
    kappa: float

    @property
    def T(self) -> int:
        return len(self.etas) - 1

    def eta(self, t: int) -> float:
        return float(self.etas[t])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t])


def eta_one(kappa: float) -> float:
    """Starting shift eta_1 = min((0.04/kappa)^2, 0.001).

    Chosen so the marginal noise floor kappa*sqrt(eta_1) stays at or
    below 0.04, keeping the first state nearly indistinguishable from
    the clean image.
    """
    if not (isinstance(kappa, (int, float, np.floating)) and kappa > 0 and math.isfinite(kappa)):
        raise InvalidParameterError(f"kappa must be a positive real, got {kappa}")
    return min((0.04 / kappa) ** 2, 0.001)


def build_schedule(params: ScheduleParams) -> NoiseSchedule:
    """Build the full eta/alpha tables for the given (T, p, kappa)."""
    params.validate()
    T, p, kappa = params.T, params.p, params.kappa

    e1 = eta_one(kappa)
    eT = ETA_T_FINAL
    etas = np.zeros(T + 1)
    etas[1] = e1
    etas[T] = eT
    if T > 2:
        t = np.arange(2, T)
        beta = ((t - 1.0) / (T - 1.0)) ** p * (T - 1.0)
        ln_b0 = math.log(eT / e1) / (2.0 * (T - 1.0))
        sqrt_eta = math.sqrt(e1) * np.exp(beta * ln_b0)
        etas[2:T] = sqrt_eta ** 2

    if np.any(np.diff(etas) <= 0.0):
        bad = int(np.argmax(np.diff(etas) <= 0.0)) + 1
        raise InvalidParameterError(
            f"schedule not strictly increasing at t={bad} for (T={T}, p={p}, kappa={kappa})"
        )

    alphas = np.empty(T + 1)
    alphas[0] = np.nan
    alphas[1:] = np.diff(etas)
    return NoiseSchedule(etas=etas, alphas=alphas, kappa=kappa)


def _check_step(schedule: NoiseSchedule, t: int) -> int:
    if not isinstance(t, (int, np.integer)) or not (1 <= t <= schedule.T):
        raise StepError(f"step t={t} outside 1..{schedule.T}")
    return int(t)


def loss_weight(schedule: NoiseSchedule, t: int) -> float:
    """Objective weight w_t = alpha_t / (2 kappa^2 eta_t eta_{t-1}), t >= 2.

    Undefined at t = 1 where eta_0 = 0; callers fall back to the
    unweighted loss there (unweighted is also the recommended default
    overall, as it trains noticeably better).
    """
    t = _check_step(schedule, t)
    if t == 1:
        raise UndefinedWeightError("w_1 is undefined (eta_0 = 0); use the unweighted loss at t=1")
    k2 = schedule.kappa ** 2
    return schedule.alpha(t) / (2.0 * k2 * schedule.eta(t) * schedule.eta(t - 1))


def relative_noise_curve(schedule: NoiseSchedule) -> list[tuple[int, float]]:
    """Marginal noise std kappa*sqrt(eta_t) for t = 1..T.

    For a unit-power signal this equals sqrt(1/SNR), the quantity used to
    compare shifting schedules against conventional diffusion corruption.
    """
    k = schedule.kappa
    return [(t, k * math.sqrt(schedule.eta(t))) for t in range(1, schedule.T + 1)]


def schedule_csv(schedule: NoiseSchedule) -> str:
    """Render the schedule as CSV: t,eta,alpha,rel_noise (17 significant digits, LF)."""
    buf = io.StringIO()
    buf.write("t,eta,alpha,rel_noise\n")
    rel = dict(relative_noise_curve(schedule))
    for t in range(1, schedule.T + 1):
        buf.write(
            f"{t},{schedule.eta(t):.17g},{schedule.alpha(t):.17g},{rel[t]:.17g}\n"
        )
    return buf.getvalue()
