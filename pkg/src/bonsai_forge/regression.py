"""Module relevance estimation from (mask, utility) observations.

The dataset is under-determined on purpose: far fewer evaluated masks
than candidate modules. A penalized least squares fit, solved with
adaptive-moment minibatch gradient descent, still recovers a useful
ranking of the candidates. Hyper-parameters come from a small grid and
are selected by Kendall rank correlation on a held-out split; utilities
are standardized before fitting and mapped back afterwards.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .catalog import ModuleCatalog, ModuleId
from .errors import InputError, NumericError
from .seeding import REGRESSION, rng_for

NORM_L1 = "l1"
NORM_L2 = "l2"


def _seed_key(seed) -> tuple:
    return tuple(int(k) for k in seed) if isinstance(seed, tuple) else (int(seed),)


@dataclass(frozen=True)
class EvalDataset:
    """Rows of (candidate keep-bits, utility) from one iteration's batch."""

    alphas: np.ndarray  # (rows, candidates) float64 in {0, 1}
    utilities: np.ndarray  # (rows,) float64
    candidates: tuple[ModuleId, ...]

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        u = np.asarray(self.utilities, dtype=np.float64)
        if a.ndim != 2:
            raise InputError(f"alphas must be 2-D, got shape {a.shape}")
        if a.shape[1] != len(self.candidates):
            raise InputError(
                f"{a.shape[1]} mask columns vs {len(self.candidates)} candidates"
            )
        if u.shape != (a.shape[0],):
            raise InputError("one utility per row required")
        if not np.isfinite(u).all():
            raise InputError("utilities must be finite; drop bad rows upstream")
        if not np.isin(a, (0.0, 1.0)).all():
            raise InputError("alphas must be binary")
        a.flags.writeable = False
        u.flags.writeable = False
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "utilities", u)

    @property
    def n_rows(self) -> int:
        return self.alphas.shape[0]

    @classmethod
    def from_masks(cls, masks, utilities, candidates: Sequence[ModuleId]) -> "EvalDataset":
        """Restrict full masks to the candidate columns."""
        candidates = tuple(candidates)
        if not masks:
            raise InputError("no masks")
        cols = [masks[0].catalog.index(m) for m in candidates]
        alphas = np.stack([mask.bits[cols].astype(np.float64) for mask in masks])
        return cls(alphas, np.asarray(utilities, dtype=np.float64), candidates)


@dataclass(frozen=True)
class RelevanceScores:
    """Fitted per-candidate relevance, raw utility scale."""

    candidates: tuple[ModuleId, ...]
    beta: np.ndarray  # (candidates,) float64
    intercept: float
    gamma: float
    lr: float
    batch: int
    norm: str
    val_tau: float

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=np.float64)
        if b.shape != (len(self.candidates),):
            raise InputError("one beta per candidate required")
        if not np.isfinite(b).all() or not np.isfinite(self.intercept):
            raise InputError("fitted relevances must be finite")
        b.flags.writeable = False
        object.__setattr__(self, "beta", b)

    def predict(self, alphas: np.ndarray) -> np.ndarray:
        return np.asarray(alphas, dtype=np.float64) @ self.beta + self.intercept

    def for_catalog(self, catalog: ModuleCatalog) -> np.ndarray:
        """Relevance per live module; fixed modules get +inf (never removed)."""
        full = np.full(len(catalog), np.inf)
        for m, b in zip(self.candidates, self.beta):
            full[catalog.index(m)] = b
        return full


@dataclass(frozen=True)
class RegressionGrid:
    """Hyper-parameter search space for the relevance fit."""

    gammas: tuple[float, ...] = (100.0, 0.0, 1e-4)
    lrs: tuple[float, ...] = (100.0, 10.0, 1.0, 0.1)
    batches: tuple[int, ...] = (32, 64, 128)
    epochs: int = 50
    norm: str = NORM_L1

    def __post_init__(self):
        if not self.gammas or not self.lrs or not self.batches:
            raise InputError("regression grid must be nonempty")
        if any(g < 0 for g in self.gammas):
            raise InputError("penalty weights must be nonnegative")
        if self.norm not in (NORM_L1, NORM_L2):
            raise InputError(f"penalty norm must be {NORM_L1} or {NORM_L2}")

    def points(self):
        for gamma in self.gammas:
            for lr in self.lrs:
                for batch in self.batches:
                    yield gamma, lr, batch


def _standardize(u: np.ndarray) -> tuple[np.ndarray, float, float]:
    mean = float(u.mean())
    std = float(u.std())
    if std == 0.0:
        std = 1.0  # constant utilities: fit the zero function
    return (u - mean) / std, mean, std


def fit(
    data: EvalDataset,
    gamma: float,
    lr: float,
    batch: int,
    epochs: int = 50,
    norm: str = NORM_L1,
    seed=0,
    rows: Optional[np.ndarray] = None,
) -> RelevanceScores:
    """Penalized least squares by adaptive-moment minibatch descent.

    Minimizes mean squared error on standardized utilities plus
    gamma * ||beta|| (L1 or squared L2); the intercept is unpenalized.
    rows optionally restricts fitting to a subset (for holdout splits).
    Raises NumericError if the loss goes non-finite.
    """
    if data.n_rows < 2:
        raise InputError(f"need at least 2 rows to fit, got {data.n_rows}")
    if gamma < 0:
        raise InputError("gamma must be nonnegative")
    if lr <= 0:
        raise InputError("learning rate must be positive")
    if batch < 1:
        raise InputError("batch size must be at least 1")
    if norm not in (NORM_L1, NORM_L2):
        raise InputError(f"penalty norm must be {NORM_L1} or {NORM_L2}")

    a = data.alphas if rows is None else data.alphas[rows]
    u_raw = data.utilities if rows is None else data.utilities[rows]
    if a.shape[0] < 2:
        raise InputError("need at least 2 rows to fit")
    z, u_mean, u_std = _standardize(u_raw)

    n, d = a.shape
    beta = np.zeros(d)
    bias = 0.0
    m = np.zeros(d + 1)
    v = np.zeros(d + 1)
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    rng = rng_for(*_seed_key(seed), REGRESSION, 0)

    # divergence shows up as non-finite parameters, checked per epoch
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            order = rng.permutation(n)
            for lo in range(0, n, batch):
                idx = order[lo:lo + batch]
                ab, zb = a[idx], z[idx]
                resid = ab @ beta + bias - zb
                grad_beta = 2.0 * (ab.T @ resid) / idx.size
                grad_bias = 2.0 * resid.mean()
                if norm == NORM_L1:
                    grad_beta += gamma * np.sign(beta)
                else:
                    grad_beta += 2.0 * gamma * beta
                g = np.concatenate([grad_beta, [grad_bias]])
                step += 1
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                m_hat = m / (1 - b1 ** step)
                v_hat = v / (1 - b2 ** step)
                update = lr * m_hat / (np.sqrt(v_hat) + eps)
                beta -= update[:d]
                bias -= update[d]
            if not (np.isfinite(beta).all() and np.isfinite(bias)):
                raise NumericError(
                    f"relevance fit diverged (gamma={gamma}, lr={lr}, batch={batch})"
                )

        loss = float(np.mean((a @ beta + bias - z) ** 2))
    if not np.isfinite(loss):
        raise NumericError(
            f"relevance fit diverged (gamma={gamma}, lr={lr}, batch={batch})"
        )
    return RelevanceScores(
        candidates=data.candidates,
        beta=u_std * beta,
        intercept=u_mean + u_std * bias,
        gamma=gamma,
        lr=lr,
        batch=batch,
        norm=norm,
        val_tau=float("nan"),
    )


def kendall_tau(a, b) -> float:
    """Kendall rank correlation, tau-b tie handling; degenerate inputs -> 0."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError(f"rankings must be equal-length 1-D, got {x.shape} vs {y.shape}")
    n = x.shape[0]
    if n < 2:
        raise InputError("need at least 2 values to rank")
    iu = np.triu_indices(n, k=1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    concordant_minus_discordant = float((dx * dy).sum())
    n0 = n * (n - 1) / 2.0
    tied_x = float((dx == 0).sum())
    tied_y = float((dy == 0).sum())
    denom = np.sqrt((n0 - tied_x) * (n0 - tied_y))
    if denom == 0.0:
        return 0.0
    return concordant_minus_discordant / denom


def cross_validate(
    data: EvalDataset, grid: RegressionGrid, seed=0
) -> RelevanceScores:
    """Grid search scored by holdout Kendall tau, then refit on all rows.

    Splits 80/20 with a seeded shuffle, fits every grid point on the
    training side, ranks points by tau between predicted and true holdout
    utilities, and refits the winner on the full dataset. Diverged points
    are skipped; if all diverge, falls back to a mild default.
    """
    if data.n_rows < 10:
        raise InputError(
            f"cross-validation needs at least 10 rows, got {data.n_rows}"
        )
    rng = rng_for(*_seed_key(seed), REGRESSION, 1)
    perm = rng.permutation(data.n_rows)
    n_val = max(1, int(round(0.2 * data.n_rows)))
    val_rows, train_rows = perm[:n_val], perm[n_val:]

    best = None  # (tau, order index, gamma, lr, batch)
    for i, (gamma, lr, batch) in enumerate(grid.points()):
        try:
            scores = fit(
                data, gamma, lr, batch,
                epochs=grid.epochs, norm=grid.norm, seed=seed, rows=train_rows,
            )
        except NumericError as e:
            warnings.warn(str(e))
            continue
        pred = scores.predict(data.alphas[val_rows])
        if not np.isfinite(pred).all():
            continue
        tau = kendall_tau(pred, data.utilities[val_rows]) if n_val >= 2 else 0.0
        if best is None or tau > best[0]:
            best = (tau, i, gamma, lr, batch)

    if best is None:
        warnings.warn("every grid point diverged; falling back to gamma=1e-4, lr=0.1")
        tau, gamma, lr, batch = 0.0, 1e-4, 0.1, min(grid.batches)
    else:
        tau, _, gamma, lr, batch = best

    final = fit(data, gamma, lr, batch, epochs=grid.epochs, norm=grid.norm, seed=seed)
    return RelevanceScores(
        candidates=final.candidates,
        beta=final.beta,
        intercept=final.intercept,
        gamma=gamma,
        lr=lr,
        batch=batch,
        norm=grid.norm,
        val_tau=float(tau),
    )
