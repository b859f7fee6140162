"""SGD baseline, scalar SAV scheme, and the elementwise relaxed VAV stepper.

The auxiliary variable r tracks sqrt(f + c) per coordinate and obeys an
exact per-step identity before relaxation:

    r_tilde_i^2 - r_i^2 + (r_tilde_i - r_i)^2 + dx_i^2 / eta = 0

which is the pathwise content of the energy-dissipation law. The relaxation
then mixes r_tilde with the observed next loss through the smallest weight
omega in [0, 1] keeping

    (r'_i)^2 - (r_tilde_i)^2 <= (psi / eta) * dx_i^2,

found analytically as a root of a quadratic. Both properties are enforced
by the checkers in :mod:`vavopt.diagnostics` and by the test suite.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import (
    Batch,
    ConfigError,
    DivergenceError,
    InternalConsistencyError,
    Objective,
    Vector,
    as_param_vector,
    evaluate,
)

logger = logging.getLogger("vavopt")

DEFAULT_PSI = 0.95
# |a| below this (times the problem scale) is treated as the exact a = 0 case,
# where the closed-form root is numerically meaningless.
A_NEAR_ZERO_RELTOL = 1e-14

EtaLike = Union[float, Vector]


@dataclass
class VavState:
    """Full mutable state of one elementwise relaxed (VAV) run."""

    x: Vector
    r: Vector
    eta: float
    psi: float = DEFAULT_PSI
    c: float = 0.0
    step: int = 0
    scheduler_enabled: bool = False

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        if self.r.shape != self.x.shape:
            raise ConfigError(
                f"r and x must have equal length, got {self.r.shape} vs {self.x.shape}"
            )
        _check_hyperparams(self.eta, self.psi, self.c)
        # r >= 0 is monitored, not enforced: negative excursions are possible
        # through floating-point underflow of the loss and are logged upstream.


@dataclass
class SavState:
    """State of the unrelaxed scalar scheme (one r for all coordinates)."""

    x: Vector
    r: float
    eta: float
    c: float = 0.0
    step: int = 0

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        self.r = float(self.r)
        if self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.c < 0:
            raise ConfigError(f"c must be nonnegative, got {self.c}")


def _check_hyperparams(eta: float, psi: float, c: float) -> None:
    if eta <= 0:
        raise ConfigError(f"eta must be positive, got {eta}")
    if not 0.0 < psi < 1.0:
        raise ConfigError(f"psi must lie in (0, 1), got {psi}")
    if c < 0:
        raise ConfigError(f"c must be nonnegative, got {c}")


@dataclass(frozen=True)
class OmegaInputs:
    """One relaxation solve: f_next already carries the +c offset."""

    f_next: float
    r_tilde: float
    dx: float
    psi: float
    eta: float

    def __post_init__(self) -> None:
        if self.f_next <= 0:
            raise ConfigError(f"f_next must be positive (offset included), got {self.f_next}")
        if self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if not 0.0 < self.psi < 1.0:
            raise ConfigError(f"psi must lie in (0, 1), got {self.psi}")

    def coefficients(self) -> tuple[float, float, float]:
        """Quadratic (a, b, const) with Q(w) = a w^2 + b w + const <= 0 feasible."""
        root_f = np.sqrt(self.f_next)
        a = (root_f - self.r_tilde) ** 2
        b = 2.0 * root_f * (self.r_tilde - root_f)
        const = self.f_next - self.r_tilde**2 - (self.psi / self.eta) * self.dx**2
        return float(a), float(b), float(const)


@dataclass
class StepDetail:
    """Per-coordinate arrays backing the invariant checkers.

    ``r_prev``/``r_new`` are scalars for the scalar scheme; ``r_tilde``,
    ``omega``, ``f_next`` and ``psi`` are ``None`` where no relaxation ran.
    """

    r_prev: Union[Vector, float]
    r_new: Union[Vector, float]
    dx: Vector
    grad: Vector
    eta_eff: EtaLike
    f_batch: float
    c: float
    r_tilde: Optional[Vector] = None
    f_next: Optional[float] = None
    psi: Optional[float] = None
    omega: Optional[Vector] = None


@dataclass
class StepRecord:
    """Per-iteration telemetry emitted by every stepper."""

    step: int
    batch_loss: float
    full_batch: bool
    grad_norm: float
    r_min: float
    r_max: float
    r_mean: float
    rho_min: float
    rho_max: float
    omega_min: float
    omega_max: float
    lr_min: float
    lr_max: float
    dissipation_residual: float
    detail: Optional[StepDetail] = None


def sgd_step(x: Vector, grad: Vector, eta: float) -> Vector:
    """Plain gradient step x' = x - eta * g."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise ConfigError(f"gradient shape {grad.shape} does not match x shape {x.shape}")
    if eta <= 0:
        raise ConfigError(f"eta must be positive, got {eta}")
    x_next = x - eta * grad
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError("sgd_step produced a non-finite iterate", where="sgd_step")
    return x_next


def sav_tilde_r(r: float, grad: Vector, f_batch: float, c: float, eta: float) -> float:
    """Closed-form solution of the coupled scalar update.

    Substituting the position equation into the auxiliary-variable equation
    gives r' = r / (1 + eta ||g||^2 / (2 (f + c))), the unique solution of
    the implicit pair.
    """
    fc = f_batch + c
    if fc <= 0:
        raise ConfigError(
            f"f_batch + c must be positive, got {fc}; raise the offset c"
        )
    g2 = float(np.dot(grad, grad))
    return float(r) / (1.0 + eta * g2 / (2.0 * fc))


def vav_tilde_r(r: Vector, grad: Vector, f_batch: float, c: float, eta: EtaLike) -> Vector:
    """Elementwise closed form: r_tilde_i = r_i / (1 + eta g_i^2 / (2 (f + c)))."""
    r = np.asarray(r, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != r.shape:
        raise ConfigError(f"gradient shape {grad.shape} does not match r shape {r.shape}")
    fc = f_batch + c
    if fc <= 0:
        raise ConfigError(
            f"f_batch + c must be positive, got {fc}; raise the offset c"
        )
    return r / (1.0 + eta * grad * grad / (2.0 * fc))


def vav_position_update(
    x: Vector,
    grad: Vector,
    r_tilde: Vector,
    f_batch: float,
    c: float,
    eta_effective: EtaLike,
) -> Vector:
    """x'_i = x_i - eta_i * (r_tilde_i / sqrt(f + c)) * g_i."""
    fc = f_batch + c
    if fc <= 0:
        raise ConfigError(f"f_batch + c must be positive, got {fc}")
    x_next = x - eta_effective * (r_tilde / np.sqrt(fc)) * grad
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(
            "position update produced a non-finite iterate", where="vav_position_update"
        )
    return x_next


def _slack_term(dx: Vector, psi: float, eta: EtaLike) -> Vector:
    """(psi / eta) * dx^2 with the eta_i = 0 scheduler edge mapped to 0.

    A fully annealed coordinate moves by exactly zero, and dx^2 / eta -> 0
    along the annealing limit, so zero is the consistent value.
    """
    if np.ndim(eta) == 0:
        return (psi / float(eta)) * dx * dx
    eta_arr = np.asarray(eta, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(dx == 0.0, 0.0, psi * dx * dx / eta_arr)


def _solve_omega_core(root_f: float, r_tilde: Vector, slack: Vector, f_next_offset: float) -> Vector:
    """Minimal feasible relaxation weight per coordinate (vectorized)."""
    a = (root_f - r_tilde) ** 2
    b = 2.0 * root_f * (r_tilde - root_f)
    const = f_next_offset - r_tilde * r_tilde - slack

    disc = b * b - 4.0 * a * const
    if np.min(disc) < 0.0:
        # Q(1) = -slack <= 0 guarantees disc >= 0 in exact arithmetic;
        # anything below rounding noise signals a broken caller.
        disc_scale = np.maximum(1.0, np.maximum(b * b, np.abs(4.0 * a * const)))
        bad = disc < -1e-9 * disc_scale
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise InternalConsistencyError(
                "negative discriminant beyond rounding in the relaxation solve: "
                f"disc={float(disc[i])!r} at coordinate {i} "
                f"(f_next={f_next_offset!r}, r_tilde={float(r_tilde[i])!r})"
            )
        disc = np.maximum(disc, 0.0)

    near_zero = a < A_NEAR_ZERO_RELTOL * max(1.0, f_next_offset)
    safe_a = np.where(near_zero, 1.0, a)
    omega = (-b - np.sqrt(disc)) / (2.0 * safe_a)
    omega[near_zero] = 0.0
    return np.clip(omega, 0.0, 1.0, out=omega)


def _solve_omega_array(
    f_next_offset: float, r_tilde: Vector, dx: Vector, psi: float, eta: EtaLike
) -> Vector:
    r_tilde = np.asarray(r_tilde, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    return _solve_omega_core(
        math.sqrt(f_next_offset), r_tilde, _slack_term(dx, psi, eta), f_next_offset
    )


def solve_omega(inputs: OmegaInputs) -> float:
    """Smallest omega in [0, 1] with a w^2 + b w + const <= 0.

    The exact a = 0 case and |a| below an absolute threshold of
    1e-14 * max(1, f_next) both map to omega = 0.
    """
    out = _solve_omega_array(
        inputs.f_next,
        np.array([inputs.r_tilde]),
        np.array([inputs.dx]),
        inputs.psi,
        inputs.eta,
    )
    return float(out[0])


def relax_r(r_tilde: Vector, f_next_loss: float, c: float, omega: Vector) -> Vector:
    """Convex combination r'_i = w_i r_tilde_i + (1 - w_i) sqrt(f_next + c)."""
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(omega < 0.0) or np.any(omega > 1.0):
        raise ConfigError(f"omega must lie in [0, 1], got range "
                          f"[{float(np.min(omega))}, {float(np.max(omega))}]")
    fc = f_next_loss + c
    if fc < 0:
        raise ConfigError(f"f_next + c must be nonnegative, got {fc}")
    return omega * np.asarray(r_tilde, dtype=np.float64) + (1.0 - omega) * np.sqrt(fc)


def scheduler_effective_lr(r: Union[Vector, float], c: float, eta_default: float):
    """Energy-based annealing: min(eta, sqrt(max(r^2 - c, 0))), per dimension."""
    if eta_default <= 0:
        raise ConfigError(f"eta_default must be positive, got {eta_default}")
    r = np.asarray(r, dtype=np.float64)
    d = np.sqrt(np.maximum(r * r - c, 0.0))
    out = np.minimum(eta_default, d)
    return float(out) if out.ndim == 0 else out


def identity_residual(
    r_prev: Union[Vector, float],
    r_tilde: Union[Vector, float],
    dx_squared: Union[Vector, float],
    eta: EtaLike,
) -> Union[Vector, float]:
    """Raw dissipation residual r~^2 - r^2 + (r~ - r)^2 + dx^2/eta (0 in exact math).

    ``dx_squared`` is ||dx||^2 for the scalar scheme and dx_i^2 elementwise
    for the vector scheme. Coordinates with eta_i = 0 move by exactly zero
    and contribute a zero last term.
    """
    r_prev = np.asarray(r_prev, dtype=np.float64)
    r_tilde = np.asarray(r_tilde, dtype=np.float64)
    dx_squared = np.asarray(dx_squared, dtype=np.float64)
    if np.ndim(eta) == 0:
        kinetic = dx_squared / float(eta)
    else:
        eta_arr = np.asarray(eta, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            kinetic = np.where(dx_squared == 0.0, 0.0, dx_squared / eta_arr)
    res = r_tilde**2 - r_prev**2 + (r_tilde - r_prev) ** 2 + kinetic
    return float(res) if res.ndim == 0 else res


def _scaled_residual_max(residual, r_prev) -> float:
    scale = np.maximum(1.0, np.asarray(r_prev, dtype=np.float64) ** 2)
    return float(np.max(np.abs(np.asarray(residual)) / scale))


def init_state(
    obj: Objective,
    x0,
    eta: float,
    psi: float = DEFAULT_PSI,
    c: float = 0.0,
    scheduler_enabled: bool = False,
    variant: str = "vav",
    batch: Optional[Batch] = None,
) -> Union[VavState, SavState]:
    """Initialize r^0 = sqrt(f(x^0) + c) * (1, ..., 1).

    Deterministic problems use the full objective; stochastic ones pass the
    first sampled batch so the same loss seeds r^0 and the first step.
    """
    x0 = as_param_vector(x0, name="x0")
    f0 = float(obj.value(x0, batch))
    fc = f0 + c
    if not np.isfinite(fc) or fc <= 0:
        raise ConfigError(
            f"f(x0) + c must be positive and finite to initialize r, got {fc}; "
            "raise the offset c"
        )
    r0 = float(np.sqrt(fc))
    if variant == "vav":
        return VavState(
            x=x0,
            r=np.full(x0.size, r0),
            eta=eta,
            psi=psi,
            c=c,
            scheduler_enabled=scheduler_enabled,
        )
    if variant == "sav":
        return SavState(x=x0, r=r0, eta=eta, c=c)
    raise ConfigError(f"unknown optimizer variant {variant!r} (expected 'vav' or 'sav')")


def vav_step(
    state: VavState,
    obj: Objective,
    batch_t: Optional[Batch] = None,
    batch_next: Optional[Batch] = None,
) -> tuple[VavState, StepRecord]:
    """One full elementwise relaxed step.

    Order: evaluate (loss, grad) at x on batch_t; per-dimension effective
    learning rate (scheduler on/off); r_tilde; position update; loss at x'
    on batch_next; relaxation weights; relaxed r. The effective learning
    rate enters the r_tilde, position, and relaxation formulas consistently
    so the per-coordinate dissipation identity holds exactly even when the
    scheduler shrinks individual coordinates.
    """
    try:
        loss, grad = evaluate(obj, state.x, batch_t)
    except DivergenceError as err:
        err.step = state.step
        raise
    fc = loss + state.c
    if fc <= 0:
        raise ConfigError(
            f"batch loss + c must stay positive, got {fc} at step {state.step}; "
            "raise the offset c"
        )

    if state.scheduler_enabled:
        eta_eff: EtaLike = scheduler_effective_lr(state.r, state.c, state.eta)
        lr_min, lr_max = float(np.min(eta_eff)), float(np.max(eta_eff))
    else:
        eta_eff = state.eta
        lr_min = lr_max = state.eta

    root_fc = math.sqrt(fc)
    r_tilde = state.r / (1.0 + eta_eff * grad * grad / (2.0 * fc))
    dx = -eta_eff * (r_tilde / root_fc) * grad
    x_next = state.x + dx
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(
            "position update produced a non-finite iterate",
            step=state.step,
            where="vav_step:position",
        )

    try:
        loss_next = float(obj.value(x_next, batch_next))
    except (OverflowError, FloatingPointError) as err:
        raise DivergenceError(
            f"objective overflowed after the position update: {err}",
            step=state.step,
            where="vav_step:next-loss",
        ) from err
    if not math.isfinite(loss_next):
        raise DivergenceError(
            f"objective value is non-finite ({loss_next!r}) after the position update",
            step=state.step,
            where="vav_step:next-loss",
        )
    f_next_offset = loss_next + state.c
    if f_next_offset <= 0:
        raise ConfigError(
            f"next loss + c must stay positive, got {f_next_offset} at step {state.step}; "
            "raise the offset c"
        )

    root_f_next = math.sqrt(f_next_offset)
    omega = _solve_omega_core(
        root_f_next, r_tilde, _slack_term(dx, state.psi, eta_eff), f_next_offset
    )
    r_next = omega * r_tilde + (1.0 - omega) * root_f_next

    r_min = float(np.min(r_next))
    if r_min < 0.0:
        logger.warning(
            "auxiliary variable went negative at step %d (min %.3e); "
            "raise the offset c to avoid precision loss near zero loss",
            state.step + 1,
            r_min,
        )

    residual = identity_residual(state.r, r_tilde, dx * dx, eta_eff)
    rho = r_tilde / root_fc
    record = StepRecord(
        step=state.step + 1,
        batch_loss=loss,
        full_batch=batch_t is None,
        grad_norm=math.sqrt(float(grad @ grad)),
        r_min=r_min,
        r_max=float(np.max(r_next)),
        r_mean=float(np.mean(r_next)),
        rho_min=float(np.min(rho)),
        rho_max=float(np.max(rho)),
        omega_min=float(np.min(omega)),
        omega_max=float(np.max(omega)),
        lr_min=lr_min,
        lr_max=lr_max,
        dissipation_residual=_scaled_residual_max(residual, state.r),
        detail=StepDetail(
            r_prev=state.r,
            r_new=r_next,
            dx=dx,
            grad=grad,
            eta_eff=eta_eff,
            f_batch=loss,
            c=state.c,
            r_tilde=r_tilde,
            f_next=loss_next,
            psi=state.psi,
            omega=omega,
        ),
    )
    state.x = x_next
    state.r = r_next
    state.step += 1
    return state, record


def sav_step(
    state: SavState, obj: Objective, batch_t: Optional[Batch] = None
) -> tuple[SavState, StepRecord]:
    """One unrelaxed scalar step; obeys the dissipation identity exactly."""
    try:
        loss, grad = evaluate(obj, state.x, batch_t)
    except DivergenceError as err:
        err.step = state.step
        raise
    fc = loss + state.c
    if fc <= 0:
        raise ConfigError(
            f"batch loss + c must stay positive, got {fc} at step {state.step}; "
            "raise the offset c"
        )
    r_next = sav_tilde_r(state.r, grad, loss, state.c, state.eta)
    rho = r_next / math.sqrt(fc)
    dx = -state.eta * rho * grad
    x_next = state.x + dx
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(
            "position update produced a non-finite iterate",
            step=state.step,
            where="sav_step",
        )

    if r_next < 0.0:
        logger.warning(
            "scalar auxiliary variable went negative at step %d (%.3e); "
            "raise the offset c",
            state.step + 1,
            r_next,
        )

    residual = identity_residual(state.r, r_next, float(dx @ dx), state.eta)
    record = StepRecord(
        step=state.step + 1,
        batch_loss=loss,
        full_batch=batch_t is None,
        grad_norm=math.sqrt(float(grad @ grad)),
        r_min=r_next,
        r_max=r_next,
        r_mean=r_next,
        rho_min=rho,
        rho_max=rho,
        # the unrelaxed scheme keeps r_tilde, i.e. the omega = 1 endpoint
        omega_min=1.0,
        omega_max=1.0,
        lr_min=state.eta,
        lr_max=state.eta,
        dissipation_residual=_scaled_residual_max(residual, state.r),
        detail=StepDetail(
            r_prev=state.r,
            r_new=r_next,
            dx=dx,
            grad=grad,
            eta_eff=state.eta,
            f_batch=loss,
            c=state.c,
        ),
    )
    state.x = x_next
    state.r = r_next
    state.step += 1
    return state, record
