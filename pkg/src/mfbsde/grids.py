"""Discrete process grids, the L2-in-time-and-probability geometry, and the
frozen noise bank.

Array conventions used throughout the package (all float64):

* control grids:   ``(n_paths, n_steps, dim)``, entry ``[i, j]`` is the control
  applied on the step from ``t_j`` to ``t_{j+1}``;
* state grids:     ``(n_paths, n_steps + 1, dim)``, entry ``[i, 0]`` is the
  initial state;
* backward grids:  same shape as state grids;
* with common noise, controls gain a trailing sample axis before the
  coordinate axis: ``(n_paths, n_steps, n_common, dim)``.

Everything here is pure and free of hidden state: norms and inner products may
be evaluated concurrently on shared read-only arrays, and a noise bank is
immutable once generated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[0, horizon]`` with ``n_steps`` Euler steps."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def times(self) -> np.ndarray:
        """Grid times ``t_j = j * dt`` for ``j = 0 .. n_steps``."""
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


@dataclass(frozen=True)
class NoiseBank:
    """Frozen randomness for an entire solve (common random numbers).

    ``increments`` holds Gaussian steps with per-coordinate variance ``dt``;
    ``common_increments``, when present, are the increments of the shared
    common-noise process, independent of the idiosyncratic ones.
    """

    seed: int
    x0: np.ndarray                      # (n_paths, dim)
    increments: np.ndarray              # (n_paths, n_steps, dim)
    p0: np.ndarray | None = None        # (common_dim,)
    common_increments: np.ndarray | None = None  # (n_common, n_steps, common_dim)

    def __post_init__(self):
        n_paths, n_steps, dim = self.increments.shape
        if self.x0.shape != (n_paths, dim):
            raise ValueError(
                f"x0 shape {self.x0.shape} inconsistent with increments "
                f"{self.increments.shape}"
            )
        if (self.p0 is None) != (self.common_increments is None):
            raise ValueError("p0 and common_increments must be supplied together")
        if self.common_increments is not None:
            n0, m, d0 = self.common_increments.shape
            if m != n_steps:
                raise ValueError("common increments disagree on step count")
            if self.p0.shape != (d0,):
                raise ValueError(
                    f"p0 shape {self.p0.shape} incompatible with common dim {d0}"
                )
        for arr in (self.x0, self.increments, self.common_increments):
            if arr is not None:
                arr.setflags(write=False)
        if self.p0 is not None:
            self.p0.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def dim(self) -> int:
        return self.increments.shape[2]

    @property
    def n_common(self) -> int:
        if self.common_increments is None:
            raise ValueError("bank carries no common noise")
        return self.common_increments.shape[0]


def generate_noise_bank(
    seed: int,
    n_paths: int,
    grid: TimeGrid,
    dim: int = 1,
    initial=0.0,
    n_common: int = 0,
    common_dim: int = 1,
    common_initial=0.0,
) -> NoiseBank:
    """Draw all randomness for a solve, deterministically in ``seed``.

    ``initial`` may be a scalar or array broadcastable to ``(n_paths, dim)``
    (deterministic initial states), or a callable ``f(rng, n_paths, dim)``
    returning samples of the initial law.  Increment coordinates are drawn
    ``N(0, dt)``.  Draw order is fixed (initial states, idiosyncratic
    increments, then common increments) so banks are reproducible bit-for-bit.
    """
    if n_paths < 1 or dim < 1:
        raise ValueError("n_paths and dim must be positive")
    if n_common < 0 or (n_common > 0 and common_dim < 1):
        raise ValueError("invalid common-noise dimensions")
    rng = np.random.default_rng(seed)
    if callable(initial):
        x0 = np.asarray(initial(rng, n_paths, dim), dtype=float)
        if x0.shape != (n_paths, dim):
            raise ValueError(f"initial sampler returned shape {x0.shape}")
    else:
        x0 = np.broadcast_to(np.asarray(initial, dtype=float), (n_paths, dim)).copy()
    sd = np.sqrt(grid.dt)
    increments = rng.normal(0.0, sd, size=(n_paths, grid.n_steps, dim))
    p0 = None
    common = None
    if n_common > 0:
        p0 = np.broadcast_to(np.asarray(common_initial, dtype=float), (common_dim,)).copy()
        common = rng.normal(0.0, sd, size=(n_common, grid.n_steps, common_dim))
    return NoiseBank(seed=seed, x0=x0, increments=increments, p0=p0,
                     common_increments=common)


def _check_time_axis(values: np.ndarray, grid: TimeGrid) -> None:
    if values.ndim not in (3, 4):
        raise ValueError(
            f"expected a (paths, steps, dim) or (paths, steps, common, dim) "
            f"array, got shape {values.shape}"
        )
    if values.shape[1] != grid.n_steps:
        raise ValueError(
            f"time axis has length {values.shape[1]}, grid declares "
            f"{grid.n_steps} steps"
        )


def process_norm(values: np.ndarray, grid: TimeGrid) -> float:
    """Discrete L2 norm of a process grid: sqrt(dt/n_samples * sum |entry|^2).

    ``n_samples`` counts Monte-Carlo samples, i.e. paths times common-noise paths for
    rank-4 grids.  Zero iff all entries are zero.
    """
    values = np.asarray(values, dtype=float)
    _check_time_axis(values, grid)
    n_samples = values.shape[0] if values.ndim == 3 else values.shape[0] * values.shape[2]
    return float(np.sqrt(grid.dt / n_samples * np.sum(values * values)))


def process_inner(a: np.ndarray, b: np.ndarray, grid: TimeGrid) -> float:
    """Discrete L2 inner product matching :func:`process_norm`."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    _check_time_axis(a, grid)
    n_samples = a.shape[0] if a.ndim == 3 else a.shape[0] * a.shape[2]
    return float(grid.dt / n_samples * np.sum(a * b))


def save_noise_bank(bank: NoiseBank, path) -> None:
    """Dump a bank to a text file for cross-run reproducibility.

    Layout: header line ``seed,n_paths,n_steps,dim[,n_common,common_dim]``,
    then one comma-separated row per sample, in order: the ``n_paths``
    initial-state rows, the ``n_paths * n_steps`` increment rows (path-major),
    then for banks with common noise one ``p0`` row and the
    ``n_common * n_steps`` common increment rows.  Values carry 17 significant
    digits, enough to round-trip float64 exactly.
    """
    lines = []
    header = f"{bank.seed},{bank.n_paths},{bank.n_steps},{bank.dim}"
    if bank.common_increments is not None:
        header += f",{bank.n_common},{bank.common_increments.shape[2]}"
    lines.append(header)

    def emit(rows):
        for row in rows:
            lines.append(",".join(format(v, ".17g") for v in row))

    emit(bank.x0)
    emit(bank.increments.reshape(-1, bank.dim))
    if bank.common_increments is not None:
        emit([bank.p0])
        emit(bank.common_increments.reshape(-1, bank.common_increments.shape[2]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_noise_bank(path) -> NoiseBank:
    """Inverse of :func:`save_noise_bank`."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = [int(tok) for tok in lines[0].split(",")]
    if len(head) == 4:
        seed, n_paths, n_steps, dim = head
        n_common = d0 = 0
    elif len(head) == 6:
        seed, n_paths, n_steps, dim, n_common, d0 = head
    else:
        raise ValueError(f"malformed bank header: {lines[0]!r}")
    body = lines[1:]
    rows = iter(body)

    def take(count, width):
        out = np.empty((count, width))
        for r in range(count):
            out[r] = [float(tok) for tok in next(rows).split(",")]
        return out

    x0 = take(n_paths, dim)
    increments = take(n_paths * n_steps, dim).reshape(n_paths, n_steps, dim)
    p0 = common = None
    if n_common:
        p0 = take(1, d0)[0]
        common = take(n_common * n_steps, d0).reshape(n_common, n_steps, d0)
    return NoiseBank(seed=seed, x0=x0, increments=increments, p0=p0,
                     common_increments=common)
