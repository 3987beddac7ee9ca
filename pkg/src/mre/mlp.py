"""Single-hidden-layer network mapping modal states to discrepancy forces.

The net is intentionally tiny (sigmoid hidden layer, linear output) and
trained with hand-rolled Adam on z-scored inputs and outputs. Weights,
normalizers, and the training summary serialize to a JSON-safe dict; the
serialized form reproduces evaluations bit-for-bit, which is what makes
the artifact transferable across meshes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, TrainingDivergedError


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    l2_weight: float = 1e-6
    max_epochs: int = 5000
    batch_size: int = 128
    val_fraction: float = 0.2
    patience: int = 100
    # fraction of the fan-in limit used for hidden-layer weights at init;
    # starting near the sigmoid's linear regime keeps the fitted map
    # well-behaved slightly beyond the training range
    init_scale: float = 0.25
    hidden_candidates: tuple[int, ...] = (20, 50, 100)
    cv_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction <= 0.5:
            raise InvalidInputError("val_fraction must lie in (0, 0.5]")
        if self.patience < 1:
            raise InvalidInputError("patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("max_epochs and batch_size must be >= 1")


@dataclass
class Surrogate:
    """Weights plus input/output z-score statistics."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    constant_inputs: np.ndarray = field(default=None)
    constant_outputs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.constant_inputs is None:
            self.constant_inputs = np.zeros(self.in_mean.size, dtype=bool)
        if self.constant_outputs is None:
            self.constant_outputs = np.zeros(self.out_mean.size, dtype=bool)
        if np.any(self.in_std <= 0.0) or np.any(self.out_std <= 0.0):
            raise InvalidInputError("normalizer stds must be positive")

    @property
    def n_inputs(self) -> int:
        return self.W1.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.W2.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Denormalized prediction for inputs of shape (..., n_inputs)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_inputs:
            raise InvalidInputError(
                f"expected {self.n_inputs} inputs, got {x.shape[-1]}")
        z = (x - self.in_mean) / self.in_std
        h = _sigmoid(z @ self.W1.T + self.b1)
        y = h @ self.W2.T + self.b2
        return y * self.out_std + self.out_mean

    def evaluate_states(self, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
        return self.evaluate(np.concatenate([np.atleast_1d(q),
                                             np.atleast_1d(qdot)], axis=-1))

    def input_jacobian(self, x: np.ndarray) -> np.ndarray:
        """d(output)/d(input) at one raw input point, shape (n_out, n_in)."""
        x = np.asarray(x, dtype=float)
        z = (x - self.in_mean) / self.in_std
        a = _sigmoid(z @ self.W1.T + self.b1)
        inner = self.W2 @ (self.W1 * (a * (1.0 - a))[:, None])
        return (inner / self.in_std[None, :]) * self.out_std[:, None]

    def to_dict(self) -> dict:
        return {
            "hidden": int(self.hidden),
            "n_inputs": int(self.n_inputs),
            "n_outputs": int(self.n_outputs),
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": self.b2.tolist(),
            "in_mean": self.in_mean.tolist(),
            "in_std": self.in_std.tolist(),
            "out_mean": self.out_mean.tolist(),
            "out_std": self.out_std.tolist(),
            "constant_inputs": self.constant_inputs.astype(int).tolist(),
            "constant_outputs": self.constant_outputs.astype(int).tolist(),
        }

    @staticmethod
    def from_dict(payload: dict) -> "Surrogate":
        return Surrogate(
            W1=np.array(payload["W1"], dtype=float),
            b1=np.array(payload["b1"], dtype=float),
            W2=np.array(payload["W2"], dtype=float),
            b2=np.array(payload["b2"], dtype=float),
            in_mean=np.array(payload["in_mean"], dtype=float),
            in_std=np.array(payload["in_std"], dtype=float),
            out_mean=np.array(payload["out_mean"], dtype=float),
            out_std=np.array(payload["out_std"], dtype=float),
            constant_inputs=np.array(payload["constant_inputs"], dtype=bool),
            constant_outputs=np.array(payload["constant_outputs"], dtype=bool),
        )


@dataclass
class TrainingReport:
    train_losses: list
    val_losses: list
    best_epoch: int
    best_val_mse: float
    epochs_run: int
    hidden: int
    seed: int

    def summary(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_val_mse": self.best_val_mse,
            "epochs_run": self.epochs_run,
            "hidden": self.hidden,
            "seed": self.seed,
            "final_train_loss": self.train_losses[-1] if self.train_losses else None,
        }


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _normalizer(arr: np.ndarray):
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    constant = std <= 0.0
    std = np.where(constant, 1.0, std)
    return mean, std, constant


def _init_weights(n_in: int, hidden: int, n_out: int, rng: np.random.Generator,
                  init_scale: float = 0.25):
    lim1 = init_scale / np.sqrt(n_in)
    lim2 = 1.0 / np.sqrt(hidden)
    W1 = rng.uniform(-lim1, lim1, size=(hidden, n_in))
    b1 = np.zeros(hidden)
    W2 = rng.uniform(-lim2, lim2, size=(n_out, hidden))
    b2 = np.zeros(n_out)
    return W1, b1, W2, b2


def train(inputs: np.ndarray, targets: np.ndarray, hidden: int,
          cfg: TrainingConfig,
          val_slice: tuple[np.ndarray, np.ndarray] | None = None,
          seed: int | None = None) -> tuple[Surrogate, TrainingReport]:
    """Fit the net by Adam on normalized MSE + l2_weight * ||W||^2.

    Validation defaults to the chronologically last ``val_fraction`` block
    (the samples are time-correlated, so a random split would leak).
    Returns the best-validation weights, not the last epoch's.
    """
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise InvalidInputError("inputs and targets must be aligned 2-D arrays")
    if X.shape[0] < 100:
        raise InvalidInputError("need at least 100 samples")
    seed = cfg.seed if seed is None else seed

    if val_slice is None:
        n_val = max(1, int(round(cfg.val_fraction * X.shape[0])))
        X_tr, Y_tr = X[:-n_val], Y[:-n_val]
        X_va, Y_va = X[-n_val:], Y[-n_val:]
    else:
        X_va, Y_va = val_slice
        X_tr, Y_tr = X, Y

    in_mean, in_std, const_in = _normalizer(X_tr)
    out_mean, out_std, const_out = _normalizer(Y_tr)
    Xn = (X_tr - in_mean) / in_std
    Yn = (Y_tr - out_mean) / out_std
    Xv = (X_va - in_mean) / in_std
    Yv = (Y_va - out_mean) / out_std

    rng = np.random.default_rng(seed)
    W1, b1, W2, b2 = _init_weights(X.shape[1], hidden, Y.shape[1], rng)
    params = [W1, b1, W2, b2]
    m_adam = [np.zeros_like(p) for p in params]
    v_adam = [np.zeros_like(p) for p in params]

    n_train = Xn.shape[0]
    batch = min(cfg.batch_size, n_train)
    step = 0
    best_val = np.inf
    best_params = [p.copy() for p in params]
    best_epoch = 0
    train_losses, val_losses = [], []
    stale = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        for lo in range(0, n_train, batch):
            idx = order[lo:lo + batch]
            xb, yb = Xn[idx], Yn[idx]
            loss, grads = _loss_and_grads(params, xb, yb, cfg.l2_weight)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"NaN loss at epoch {epoch}")
            step += 1
            for p, g, m_buf, v_buf in zip(params, grads, m_adam, v_adam):
                m_buf *= cfg.beta1
                m_buf += (1.0 - cfg.beta1) * g
                v_buf *= cfg.beta2
                v_buf += (1.0 - cfg.beta2) * g * g
                m_hat = m_buf / (1.0 - cfg.beta1**step)
                v_hat = v_buf / (1.0 - cfg.beta2**step)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
            epoch_loss += loss * idx.size
        train_losses.append(epoch_loss / n_train)

        val_mse = float(np.mean((_forward(params, Xv) - Yv) ** 2))
        val_losses.append(val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_params = [p.copy() for p in params]
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    surrogate = Surrogate(best_params[0], best_params[1], best_params[2],
                          best_params[3], in_mean, in_std, out_mean, out_std,
                          const_in, const_out)
    report = TrainingReport(train_losses, val_losses, best_epoch,
                            float(best_val), len(train_losses), hidden, seed)
    return surrogate, report


def _forward(params, Xn):
    W1, b1, W2, b2 = params
    return _sigmoid(Xn @ W1.T + b1) @ W2.T + b2


def _loss_and_grads(params, xb, yb, l2):
    W1, b1, W2, b2 = params
    z1 = xb @ W1.T + b1
    a1 = _sigmoid(z1)
    pred = a1 @ W2.T + b2
    err = pred - yb
    n = xb.shape[0]
    mse = np.mean(err**2)
    loss = mse + l2 * (np.sum(W1**2) + np.sum(W2**2))

    # d(mse)/d(pred) = 2 err / (n * n_out)
    d_pred = 2.0 * err / err.size
    gW2 = d_pred.T @ a1 + 2.0 * l2 * W2
    gb2 = d_pred.sum(axis=0)
    d_a1 = d_pred @ W2
    d_z1 = d_a1 * a1 * (1.0 - a1)
    gW1 = d_z1.T @ xb + 2.0 * l2 * W1
    gb1 = d_z1.sum(axis=0)
    return float(loss), [gW1, gb1, gW2, gb2]


def select_hidden_size(inputs: np.ndarray, targets: np.ndarray,
                       candidates, cfg: TrainingConfig) -> tuple[int, dict]:
    """Contiguous-block K-fold CV over hidden widths; ties pick the smaller.

    Scores are raw-unit validation MSEs so they stay comparable across
    candidates; returns (best_width, per-candidate mean scores).
    """
    candidates = [int(h) for h in candidates]
    if len(candidates) == 0:
        raise InvalidInputError("need at least one candidate width")
    if len(candidates) == 1:
        return candidates[0], {candidates[0]: np.nan}
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(targets, dtype=float)
    n = X.shape[0]
    folds = np.array_split(np.arange(n), cfg.cv_folds)

    scores: dict[int, float] = {}
    failures = 0
    for h in candidates:
        fold_mse = []
        for f_idx, fold in enumerate(folds):
            mask = np.ones(n, dtype=bool)
            mask[fold] = False
            try:
                model, _ = train(X[mask], Y[mask], h, cfg,
                                 val_slice=(X[fold], Y[fold]),
                                 seed=cfg.seed + 1000 * f_idx)
            except TrainingDivergedError:
                fold_mse.append(np.inf)
                continue
            pred = model.evaluate(X[fold])
            fold_mse.append(float(np.mean((pred - Y[fold]) ** 2)))
        score = float(np.mean(fold_mse))
        scores[h] = score
        if not np.isfinite(score):
            failures += 1
    if failures == len(candidates):
        raise TrainingDivergedError("every candidate width diverged")
    best = min(sorted(candidates), key=lambda h: (scores[h], h))
    return best, scores
