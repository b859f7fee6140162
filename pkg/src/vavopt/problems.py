"""Desk-scale benchmark objectives.

Three problem families, all satisfying the :class:`~vavopt.core.Objective`
contract:

* :class:`RosenbrockProblem` -- the classic nonconvex banana valley,
* :class:`QuadraticProblem` -- convex PSD bowls with a known minimum,
* :class:`RegressionProblem` -- mini-batch least squares through a small
  tanh MLP with hand-written backpropagation (no autodiff).

Every analytic gradient here is required to agree with the central-difference
oracle in :mod:`vavopt.core`; the test suite enforces that at 100 random
points per problem.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Optional, Sequence

import numpy as np

from .core import Batch, ConfigError, SchemaError, Vector


@dataclass(frozen=True)
class RosenbrockProblem:
    """f(x, y) = (a - x)^2 + b (y - x^2)^2, global minimum 0 at (a, a^2).

    Arithmetic stays in float64 with IEEE overflow-to-inf semantics so that
    an exploding iterate surfaces as a divergence signal, never a crash.
    """

    a: float = 1.0
    b: float = 100.0
    dataset_size: ClassVar[int] = 0

    def value(self, x: Vector, batch: Optional[Batch] = None) -> float:
        u = np.float64(x[0])
        v = np.float64(x[1])
        gap = v - u * u
        return float((self.a - u) * (self.a - u) + self.b * gap * gap)

    def gradient(self, x: Vector, batch: Optional[Batch] = None) -> Vector:
        return self.value_and_gradient(x, batch)[1]

    def value_and_gradient(self, x: Vector, batch: Optional[Batch] = None) -> tuple[float, Vector]:
        u = np.float64(x[0])
        v = np.float64(x[1])
        gap = v - u * u
        val = (self.a - u) * (self.a - u) + self.b * gap * gap
        grad = np.array(
            [-2.0 * (self.a - u) - 4.0 * self.b * u * gap, 2.0 * self.b * gap]
        )
        return float(val), grad


class QuadraticProblem:
    """f(x) = 0.5 x^T M x + offset for a symmetric PSD matrix M."""

    dataset_size: ClassVar[int] = 0

    def __init__(self, matrix, offset: float = 0.0):
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError(f"quadratic matrix must be square, got shape {m.shape}")
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-12):
            raise ConfigError("quadratic matrix must be symmetric")
        if np.min(np.linalg.eigvalsh(m)) < -1e-10:
            raise ConfigError("quadratic matrix must be positive semidefinite")
        if offset < 0.0:
            raise ConfigError(f"quadratic offset must be nonnegative, got {offset}")
        self.matrix = m
        self.offset = float(offset)

    @classmethod
    def isotropic(cls, dim: int, scale: float = 1.0, offset: float = 0.0) -> "QuadraticProblem":
        """f(x) = scale/2 * ||x||^2 + offset."""
        return cls(scale * np.eye(dim), offset)

    @classmethod
    def diagonal(cls, eigenvalues: Sequence[float], offset: float = 0.0) -> "QuadraticProblem":
        return cls(np.diag(np.asarray(eigenvalues, dtype=np.float64)), offset)

    def value(self, x: Vector, batch: Optional[Batch] = None) -> float:
        return 0.5 * float(x @ self.matrix @ x) + self.offset

    def gradient(self, x: Vector, batch: Optional[Batch] = None) -> Vector:
        return self.matrix @ x


class MlpModel:
    """Fully connected tanh network with a linear output head.

    Parameters flatten in a fixed, documented order: layer-major, weights
    before biases, i.e. ``[W1.ravel(), b1, W2.ravel(), b2, ...]`` with
    ``W`` of shape ``(fan_in, fan_out)``.
    """

    def __init__(self, widths: Sequence[int] = (1, 16, 16, 1)):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ConfigError(f"widths must be >= 2 positive layer sizes, got {widths}")
        if widths[-1] != 1:
            raise ConfigError("scalar regression requires an output width of 1")
        self.widths = widths
        self.num_params = sum(
            fi * fo + fo for fi, fo in zip(widths[:-1], widths[1:])
        )

    def init_params(self, seed: int) -> Vector:
        """Seeded uniform init in +-1/sqrt(fan_in) per layer."""
        rng = np.random.Generator(np.random.Philox(int(seed)))
        parts = []
        for fi, fo in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(fi)
            parts.append(rng.uniform(-bound, bound, size=fi * fo))
            parts.append(rng.uniform(-bound, bound, size=fo))
        return np.concatenate(parts)

    def unflatten(self, theta: Vector) -> list[tuple[Vector, Vector]]:
        if theta.size != self.num_params:
            raise ConfigError(
                f"parameter vector has {theta.size} entries, model needs {self.num_params}"
            )
        layers = []
        off = 0
        for fi, fo in zip(self.widths[:-1], self.widths[1:]):
            w = theta[off : off + fi * fo].reshape(fi, fo)
            off += fi * fo
            b = theta[off : off + fo]
            off += fo
            layers.append((w, b))
        return layers

    def forward(self, theta: Vector, inputs: np.ndarray) -> Vector:
        layers = self.unflatten(np.asarray(theta, dtype=np.float64))
        a = np.asarray(inputs, dtype=np.float64)
        last = len(layers) - 1
        for i, (w, b) in enumerate(layers):
            z = a @ w + b
            a = z if i == last else np.tanh(z)
        return a[:, 0]

    def forward_backward(
        self, theta: Vector, inputs: np.ndarray, targets: Vector
    ) -> tuple[float, Vector]:
        """MSE loss over the rows plus its exact gradient via reverse accumulation."""
        layers = self.unflatten(np.asarray(theta, dtype=np.float64))
        a = np.asarray(inputs, dtype=np.float64)
        last = len(layers) - 1
        activations = [a]
        for i, (w, b) in enumerate(layers):
            z = a @ w + b
            a = z if i == last else np.tanh(z)
            activations.append(a)
        out = activations[-1][:, 0]
        k = out.size
        resid = out - targets
        loss = float(np.mean(resid * resid))

        grads: list[tuple[Vector, Vector]] = []
        delta = (2.0 / k) * resid[:, None]
        for i in range(last, -1, -1):
            w, _ = layers[i]
            a_prev = activations[i]
            grads.append((a_prev.T @ delta, delta.sum(axis=0)))
            if i > 0:
                # tanh'(z) expressed through the stored activation
                delta = (delta @ w.T) * (1.0 - activations[i] ** 2)
        grads.reverse()
        flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
        return loss, flat


class RegressionProblem:
    """Mean-squared-error regression over a fixed dataset through an MLP."""

    def __init__(self, inputs: np.ndarray, targets, model: MlpModel):
        x = np.asarray(inputs, dtype=np.float64)
        y = np.asarray(targets, dtype=np.float64)
        if x.ndim != 2:
            raise ConfigError(f"inputs must be 2-D (rows, features), got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ConfigError(
                f"targets must be 1-D with one entry per input row, got shape {y.shape}"
            )
        if x.shape[1] != model.widths[0]:
            raise ConfigError(
                f"model expects {model.widths[0]} input features, data has {x.shape[1]}"
            )
        self.inputs = x
        self.targets = y
        self.model = model
        self.dataset_size = int(x.shape[0])

    def _rows(self, batch: Optional[Batch]) -> tuple[np.ndarray, Vector]:
        if batch is None:
            return self.inputs, self.targets
        if np.max(batch.indices) >= self.dataset_size:
            raise ConfigError(
                f"batch index {int(np.max(batch.indices))} out of range "
                f"for dataset of size {self.dataset_size}"
            )
        return self.inputs[batch.indices], self.targets[batch.indices]

    def value(self, x: Vector, batch: Optional[Batch] = None) -> float:
        rows, y = self._rows(batch)
        pred = self.model.forward(x, rows)
        resid = pred - y
        return float(np.mean(resid * resid))

    def gradient(self, x: Vector, batch: Optional[Batch] = None) -> Vector:
        return self.value_and_gradient(x, batch)[1]

    def value_and_gradient(self, x: Vector, batch: Optional[Batch] = None) -> tuple[float, Vector]:
        rows, y = self._rows(batch)
        return self.model.forward_backward(x, rows, y)


def make_sine_regression(
    num_points: int,
    noise_sd: float,
    seed: int,
    widths: Sequence[int] = (1, 16, 16, 1),
) -> RegressionProblem:
    """Dataset of sin(pi x) on [-1, 1] plus optional gaussian noise, fixed seed."""
    if num_points < 2:
        raise ConfigError(f"num_points must be >= 2, got {num_points}")
    if noise_sd < 0:
        raise ConfigError(f"noise_sd must be nonnegative, got {noise_sd}")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    x = rng.uniform(-1.0, 1.0, size=(num_points, 1))
    y = np.sin(np.pi * x[:, 0])
    if noise_sd > 0:
        y = y + noise_sd * rng.standard_normal(num_points)
    return RegressionProblem(x, y, MlpModel(widths))


def save_dataset_csv(path, problem: RegressionProblem) -> None:
    """Write the regression dataset as CSV for reproducibility audits."""
    d = problem.inputs.shape[1]
    names = ["x"] if d == 1 else [f"x{i}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names + ["y"]) + "\n")
        for row, target in zip(problem.inputs, problem.targets):
            cells = [repr(float(v)) for v in row] + [repr(float(target))]
            fh.write(",".join(cells) + "\n")


def load_dataset_csv(path) -> tuple[np.ndarray, Vector]:
    """Read a dataset written by :func:`save_dataset_csv` -> (inputs, targets)."""
    with open(path, "r", newline="") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[-1] != "y":
            raise SchemaError(f"{path} is not a dataset CSV (header {header!r})")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise SchemaError(f"{path} has rows inconsistent with its header {header!r}")
    return data[:, :-1], data[:, -1]
