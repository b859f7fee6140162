"""Runnable invariant checkers attached to any run.

Three auditors consume a run's step records after the fact:

* :func:`check_dissipation` -- the exact per-step identity of the unrelaxed
  update, per coordinate (or for the scalar scheme as a whole),
* :func:`audit_omega` -- range, feasibility, minimal-root and discriminant
  checks on every relaxation solve,
* :func:`track_lower_bound` -- the observed (unproven) property that r^2
  stays below the batch loss plus offset; violations are reported, never
  raised, because the property has no proof.

Checkers are pure observers: they read records and return reports; enabling
them cannot change a single bit of optimizer output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core import ConfigError
from .optim import OmegaInputs, StepRecord, identity_residual

# 64-bit arithmetic over <= 1e5 steps: identities hold to ~1e-12 relative,
# inequalities to rounding on the r^2 scale.
IDENTITY_RTOL = 1e-8
INEQUALITY_ATOL = 1e-9


@dataclass(frozen=True)
class InvariantReport:
    """Outcome of one check at one step; ``context`` names the coordinate."""

    name: str
    step: int
    observed: float
    bound: float
    passed: bool
    context: str = "scalar"


@dataclass(frozen=True)
class OmegaSolve:
    """One relaxation solve paired with its produced weight."""

    inputs: OmegaInputs
    omega: float
    step: int = 0
    context: str = "scalar"


@dataclass
class LowerBoundTrace:
    """Per-step record of r_max^2 against the loss it was relaxed toward."""

    steps: list[tuple[int, float, float, bool]]  # (step, loss + c, r^2 max, violated)

    @property
    def violation_fraction(self) -> float:
        if not self.steps:
            return 0.0
        return sum(1 for s in self.steps if s[3]) / len(self.steps)


def check_dissipation(
    records: Iterable[StepRecord], rtol: float = IDENTITY_RTOL
) -> list[InvariantReport]:
    """Audit the unrelaxed identity on every recorded step.

    Vector runs yield one report per step per coordinate; scalar runs one
    per step. Records must carry their detail arrays.
    """
    reports: list[InvariantReport] = []
    for rec in records:
        det = rec.detail
        if det is None:
            raise ConfigError(
                f"step {rec.step} record carries no detail; "
                "run with detail retention to audit the identity"
            )
        if det.r_tilde is None:
            # scalar scheme: r_new solves the pair directly, norm over dx
            res = identity_residual(
                det.r_prev, det.r_new, float(np.dot(det.dx, det.dx)), det.eta_eff
            )
            scale = max(1.0, float(det.r_prev) ** 2)
            observed = abs(float(res)) / scale
            reports.append(
                InvariantReport(
                    name="dissipation",
                    step=rec.step,
                    observed=observed,
                    bound=rtol,
                    passed=observed <= rtol,
                    context="scalar",
                )
            )
        else:
            res = identity_residual(det.r_prev, det.r_tilde, det.dx * det.dx, det.eta_eff)
            scale = np.maximum(1.0, np.asarray(det.r_prev) ** 2)
            observed = np.abs(res) / scale
            for i in range(observed.size):
                reports.append(
                    InvariantReport(
                        name="dissipation",
                        step=rec.step,
                        observed=float(observed[i]),
                        bound=rtol,
                        passed=bool(observed[i] <= rtol),
                        context=str(i),
                    )
                )
    return reports


def omega_solves_from_records(records: Iterable[StepRecord]) -> Iterator[OmegaSolve]:
    """Reconstruct every per-coordinate relaxation solve from step details."""
    for rec in records:
        det = rec.detail
        if det is None or det.omega is None or det.f_next is None:
            continue
        eta_arr = np.broadcast_to(
            np.asarray(det.eta_eff, dtype=np.float64), det.dx.shape
        )
        for i in range(det.dx.size):
            if eta_arr[i] <= 0.0:
                continue  # fully annealed coordinate: no solve ran
            yield OmegaSolve(
                inputs=OmegaInputs(
                    f_next=det.f_next + det.c,
                    r_tilde=float(det.r_tilde[i]),
                    dx=float(det.dx[i]),
                    psi=float(det.psi),
                    eta=float(eta_arr[i]),
                ),
                omega=float(det.omega[i]),
                step=rec.step,
                context=str(i),
            )


def audit_omega(
    solves: Iterable[OmegaSolve], atol: float = INEQUALITY_ATOL
) -> list[InvariantReport]:
    """Assert omega in [0, 1], Q(omega) <= tol, Q(1) <= tol, disc >= -tol.

    Tolerances are normalized to the r^2 scale of each solve (Q carries
    units of r^2, the discriminant units of r^4).
    """
    reports: list[InvariantReport] = []
    for solve in solves:
        a, b, const = solve.inputs.coefficients()
        w = solve.omega
        scale = max(1.0, solve.inputs.f_next, solve.inputs.r_tilde**2)

        reports.append(
            InvariantReport(
                name="omega_range",
                step=solve.step,
                observed=w,
                bound=1.0,
                passed=0.0 <= w <= 1.0,
                context=solve.context,
            )
        )
        q_w = (a * w + b) * w + const
        reports.append(
            InvariantReport(
                name="omega_feasible",
                step=solve.step,
                observed=q_w / scale,
                bound=atol,
                passed=q_w / scale <= atol,
                context=solve.context,
            )
        )
        q_one = a + b + const
        reports.append(
            InvariantReport(
                name="omega_q_at_one",
                step=solve.step,
                observed=q_one / scale,
                bound=atol,
                passed=q_one / scale <= atol,
                context=solve.context,
            )
        )
        disc = b * b - 4.0 * a * const
        reports.append(
            InvariantReport(
                name="omega_discriminant",
                step=solve.step,
                observed=disc / scale**2,
                bound=-atol,
                passed=disc / scale**2 >= -atol,
                context=solve.context,
            )
        )
    return reports


def track_lower_bound(
    records: Sequence[StepRecord], c: float, tol: float
) -> LowerBoundTrace:
    """Flag steps where max_i r_i^2 exceeds the loss (+ offset) it tracks.

    The post-step r of record t was relaxed toward sqrt(f_next + c); the
    comparison pairs them directly when details are present, and otherwise
    shifts to the following record's batch loss (identical by determinism,
    available whenever consecutive steps were recorded).
    """
    steps: list[tuple[int, float, float, bool]] = []
    records = list(records)
    for k, rec in enumerate(records):
        r2 = rec.r_max**2
        if rec.detail is not None and rec.detail.f_next is not None:
            loss = rec.detail.f_next
        elif k + 1 < len(records) and records[k + 1].step == rec.step + 1:
            loss = records[k + 1].batch_loss
        else:
            continue  # no comparable loss for the final/gapped record
        bound = loss + c
        steps.append((rec.step, bound, r2, bool(r2 > bound + tol)))
    return LowerBoundTrace(steps=steps)


def reports_summary(reports: Sequence[InvariantReport]) -> dict:
    """Aggregate counts per check name, for summaries and logs."""
    out: dict[str, dict[str, int]] = {}
    for rep in reports:
        slot = out.setdefault(rep.name, {"passed": 0, "failed": 0})
        slot["passed" if rep.passed else "failed"] += 1
    return out
