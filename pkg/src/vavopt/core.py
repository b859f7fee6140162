"""Objective/gradient contract, batching, deterministic RNG, and the
finite-difference gradient oracle.

Everything downstream (optimizers, problems, harness) builds on the small
set of contracts defined here:

* parameters are flat 1-D float64 vectors validated by :func:`as_param_vector`,
* objectives expose ``value`` / ``gradient`` over an optional :class:`Batch`,
* randomness flows through a single-owner, counter-based :class:`RngStream`,
* a non-finite loss, gradient, or iterate raises :class:`DivergenceError`,
  which callers treat as a result (status "diverged"), never as a crash.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Protocol, TypeAlias, runtime_checkable

import numpy as np
from numpy.typing import NDArray

Vector: TypeAlias = NDArray[np.float64]

logger = logging.getLogger("vavopt")


class ConfigError(Exception):
    """Invalid configuration or arguments, reported before any compute."""


class SchemaError(ConfigError):
    """A versioned file has an incompatible schema."""


class InternalConsistencyError(Exception):
    """A mathematically guaranteed invariant failed inside the library."""


class DivergenceError(Exception):
    """A loss, gradient, or iterate turned non-finite.

    Divergence is a first-class outcome: the harness catches this, records
    the last finite step, and reports status ``"diverged"`` with exit code 0.
    """

    def __init__(self, message: str, step: Optional[int] = None, where: str = ""):
        super().__init__(message)
        self.step = step
        self.where = where

    def __str__(self) -> str:
        ctx = []
        if self.step is not None:
            ctx.append(f"step {self.step}")
        if self.where:
            ctx.append(self.where)
        base = super().__str__()
        return f"{base} ({', '.join(ctx)})" if ctx else base


def as_param_vector(values, name: str = "x") -> Vector:
    """Validate and copy ``values`` into a finite 1-D float64 parameter vector."""
    x = np.array(values, dtype=np.float64, copy=True)
    if x.ndim != 1:
        raise ConfigError(f"{name} must be 1-D, got shape {x.shape}")
    if x.size == 0:
        raise ConfigError(f"{name} must be non-empty")
    if not np.all(np.isfinite(x)):
        raise ConfigError(f"{name} must be finite everywhere")
    return x


@dataclass(frozen=True)
class Batch:
    """A mini-batch of dataset row indices; duplicates are forbidden."""

    indices: NDArray[np.int64]

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ConfigError(f"batch indices must be a non-empty 1-D sequence, got shape {idx.shape}")
        if np.any(idx < 0):
            raise ConfigError("batch indices must be nonnegative")
        if np.unique(idx).size != idx.size:
            raise ConfigError("batch indices must not contain duplicates")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return int(self.indices.size)


@runtime_checkable
class Objective(Protocol):
    """Value + gradient oracle over an optional mini-batch.

    ``dataset_size == 0`` marks a deterministic full objective (batches are
    meaningless and must be ``None``). Results must be deterministic given
    ``(x, batch)``, and implementations must be read-only after construction.
    Implementations may expose ``value_and_gradient`` to fuse the two queries.
    """

    dataset_size: int

    def value(self, x: Vector, batch: Optional[Batch] = None) -> float: ...

    def gradient(self, x: Vector, batch: Optional[Batch] = None) -> Vector: ...


def evaluate(obj: Objective, x: Vector, batch: Optional[Batch] = None) -> tuple[float, Vector]:
    """One logical (value, gradient) query on the same batch.

    Uses the objective's fused ``value_and_gradient`` when available.
    Raises :class:`DivergenceError` if either output is non-finite.
    """
    try:
        fused = getattr(obj, "value_and_gradient", None)
        if fused is not None:
            loss, grad = fused(x, batch)
        else:
            loss = obj.value(x, batch)
            grad = obj.gradient(x, batch)
    except (OverflowError, FloatingPointError) as err:
        raise DivergenceError(f"objective overflowed: {err}", where="evaluate") from err
    loss = float(loss)
    grad = np.asarray(grad, dtype=np.float64)
    if not np.isfinite(loss):
        raise DivergenceError(f"objective value is non-finite ({loss!r})", where="evaluate:value")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise DivergenceError(
            f"gradient is non-finite at coordinate {bad}", where="evaluate:gradient"
        )
    return loss, grad


class RngStream:
    """Deterministic counter-based random stream (Philox 4x64).

    Single-owner: never share one stream between concurrent consumers.
    The same seed yields the same draw sequence on every platform.
    """

    algorithm = "philox4x64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.Philox(self.seed))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, algorithm={self.algorithm!r})"


def sample_batch(rng: RngStream, dataset_size: int, batch_size: int) -> Batch:
    """Draw a uniform batch without replacement, advancing the stream."""
    if dataset_size <= 0:
        raise ConfigError("sample_batch requires a dataset (dataset_size > 0)")
    if not 1 <= batch_size <= dataset_size:
        raise ConfigError(
            f"batch_size must be in [1, {dataset_size}], got {batch_size}"
        )
    idx = rng.generator.choice(dataset_size, size=batch_size, replace=False)
    return Batch(idx.astype(np.int64))


def finite_difference_gradient(
    obj: Objective, x: Vector, batch: Optional[Batch] = None, h: float = 1e-6
) -> Vector:
    """Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / (2h).

    Evaluates the objective's value only (never its gradient), on the same
    batch throughout, so it stays independent of the analytic path it checks.
    """
    if h <= 0:
        raise ConfigError(f"finite-difference step h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    probe = x.copy()
    for i in range(x.size):
        xi = x[i]
        probe[i] = xi + h
        f_plus = float(obj.value(probe, batch))
        probe[i] = xi - h
        f_minus = float(obj.value(probe, batch))
        probe[i] = xi
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise DivergenceError(
                f"non-finite probe value at coordinate {i} "
                f"(f(x+h)={f_plus!r}, f(x-h)={f_minus!r})",
                where="finite_difference_gradient",
            )
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
