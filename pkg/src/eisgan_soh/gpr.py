"""Exact Gaussian process regression with a squared-exponential kernel.

Hyperparameters [sigma_n, sigma_f, length_scale] are fit by maximizing the
log marginal likelihood with gradient ascent in log-space (backtracking
line search, random restarts). Targets are z-scored internally so the
zero-mean prior applies; predictions are denormalized on the way out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

LOG2PI = float(np.log(2 * np.pi))

#: diagonal jitter ladder tried on Cholesky failure
JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


class GprError(Exception):
    """Fit or prediction failure."""


@dataclass(frozen=True)
class Hyperparams:
    sigma_n: float
    sigma_f: float
    length_scale: float

    def __post_init__(self):
        if min(self.sigma_n, self.sigma_f, self.length_scale) <= 0:
            raise GprError(f"hyperparameters must be positive: {self}")

    def as_log(self) -> np.ndarray:
        return np.log([self.sigma_n, self.sigma_f, self.length_scale])

    @staticmethod
    def from_log(theta) -> "Hyperparams":
        sn, sf, ls = np.exp(theta)
        return Hyperparams(float(sn), float(sf), float(ls))


def se_kernel(ci, cj, hp: Hyperparams) -> float:
    """sigma_f^2 * exp(-|ci - cj|^2 / (2 l^2)) for a single pair."""
    ci, cj = np.asarray(ci, dtype=float), np.asarray(cj, dtype=float)
    if ci.shape != cj.shape:
        raise GprError(f"kernel input dims differ: {ci.shape} vs {cj.shape}")
    d2 = float(np.sum((ci - cj) ** 2))
    return hp.sigma_f ** 2 * float(np.exp(-d2 / (2 * hp.length_scale ** 2)))


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.sum(d * d, axis=2)


def kernel_matrix(a: np.ndarray, b: np.ndarray, hp: Hyperparams) -> np.ndarray:
    return hp.sigma_f ** 2 * np.exp(-_sqdist(a, b) / (2 * hp.length_scale ** 2))


def _chol_with_jitter(gram: np.ndarray):
    for jitter in JITTERS:
        try:
            return cho_factor(gram + jitter * np.eye(len(gram)), lower=True), jitter
        except LinAlgError:
            continue
    raise GprError("Cholesky factorization failed even with maximal jitter")


def log_marginal_likelihood(inputs, targets, hp: Hyperparams):
    """Returns (L, dL/dlog[sigma_n, sigma_f, l]).

    L = -1/2 log det(K + sigma_n^2 I) - 1/2 y^T (K + sigma_n^2 I)^-1 y
        - n/2 log 2pi, evaluated via Cholesky.
    """
    c = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    n = len(y)
    if n < 1 or c.shape[0] != n:
        raise GprError(f"bad training shapes: inputs {c.shape}, targets {y.shape}")
    d2 = _sqdist(c, c)
    k_f = hp.sigma_f ** 2 * np.exp(-d2 / (2 * hp.length_scale ** 2))
    gram = k_f + hp.sigma_n ** 2 * np.eye(n)
    (chol, lower), _ = _chol_with_jitter(gram)
    alpha = cho_solve((chol, lower), y)
    lml = (-float(np.sum(np.log(np.diag(chol))))
           - 0.5 * float(y @ alpha)
           - 0.5 * n * LOG2PI)

    # dL/dtheta = 1/2 tr((alpha alpha^T - K^-1) dK/dtheta), theta in log-space
    k_inv = cho_solve((chol, lower), np.eye(n))
    inner = np.outer(alpha, alpha) - k_inv
    dk_sn = 2 * hp.sigma_n ** 2 * np.eye(n)
    dk_sf = 2 * k_f
    dk_ls = k_f * d2 / hp.length_scale ** 2
    grad = np.array([0.5 * float(np.sum(inner * dk)) for dk in (dk_sn, dk_sf, dk_ls)])
    return lml, grad


@dataclass
class GprModel:
    """Fitted model with cached Cholesky factor and alpha vector."""

    inputs: np.ndarray
    targets: np.ndarray
    hp: Hyperparams
    y_mean: float
    y_scale: float
    _chol: np.ndarray = None
    _lower: bool = True
    _alpha: np.ndarray = None
    lml: float = None

    @staticmethod
    def build(inputs, targets, hp: Hyperparams, y_mean: float, y_scale: float) -> "GprModel":
        c = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(targets, dtype=float).ravel()
        gram = kernel_matrix(c, c, hp) + hp.sigma_n ** 2 * np.eye(len(y))
        (chol, lower), _ = _chol_with_jitter(gram)
        lml, _ = log_marginal_likelihood(c, y, hp)
        return GprModel(inputs=c, targets=y, hp=hp, y_mean=y_mean, y_scale=y_scale,
                        _chol=chol, _lower=lower, _alpha=cho_solve((chol, lower), y),
                        lml=lml)

    def predict(self, c_star):
        """Posterior mean and variance per test row, denormalized to target units."""
        cs = np.asarray(c_star, dtype=float)
        single = cs.ndim == 1
        cs = np.atleast_2d(cs)
        if cs.shape[1] != self.inputs.shape[1]:
            raise GprError(
                f"test dim {cs.shape[1]} != training dim {self.inputs.shape[1]}")
        k_star = kernel_matrix(cs, self.inputs, self.hp)
        mean_n = k_star @ self._alpha
        v = cho_solve((self._chol, self._lower), k_star.T)
        var_n = self.hp.sigma_f ** 2 - np.sum(k_star * v.T, axis=1)
        var_n = np.where((var_n < 0) & (var_n > -1e-10), 0.0, var_n)
        if np.any(var_n < 0):
            raise GprError(f"negative posterior variance {var_n.min()}")
        mean = self.y_mean + self.y_scale * mean_n
        var = self.y_scale ** 2 * var_n
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    # -- persistence (structured text, exact round trip) --

    def to_json(self) -> str:
        return json.dumps({
            "format": "gpr-model-v1",
            "hyperparams": [self.hp.sigma_n, self.hp.sigma_f, self.hp.length_scale],
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "inputs": self.inputs.tolist(),
            "targets": self.targets.tolist(),
        })

    @staticmethod
    def from_json(text: str) -> "GprModel":
        obj = json.loads(text)
        if obj.get("format") != "gpr-model-v1":
            raise GprError(f"unknown model format {obj.get('format')!r}")
        hp = Hyperparams(*obj["hyperparams"])
        return GprModel.build(np.array(obj["inputs"]), np.array(obj["targets"]),
                              hp, obj["y_mean"], obj["y_scale"])


def _ascend(c, y, theta0, max_iter=200, tol=1e-9):
    """Gradient ascent on L over log-hyperparameters with backtracking."""
    theta = np.asarray(theta0, dtype=float)
    lml, grad = log_marginal_likelihood(c, y, Hyperparams.from_log(theta))
    step = 0.1
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-8:
            break
        improved = False
        trial_step = step
        for _ in range(30):
            cand = np.clip(theta + trial_step * grad / max(gnorm, 1.0), -12.0, 12.0)
            try:
                cand_lml, cand_grad = log_marginal_likelihood(
                    c, y, Hyperparams.from_log(cand))
            except GprError:
                trial_step *= 0.5
                continue
            if cand_lml > lml:
                theta, lml, grad = cand, cand_lml, cand_grad
                step = min(trial_step * 2.0, 1.0)
                improved = True
                break
            trial_step *= 0.5
        if not improved or trial_step * gnorm < tol:
            break
    return theta, lml


def fit(inputs, targets, init: Hyperparams | None = None, restarts: int = 10,
        max_iter: int = 200, seed: int = 0) -> GprModel:
    """Maximize the log marginal likelihood from several random starts."""
    c = np.atleast_2d(np.asarray(inputs, dtype=float))
    y_raw = np.asarray(targets, dtype=float).ravel()
    if len(y_raw) < 2:
        raise GprError("need at least 2 training points")
    y_mean = float(y_raw.mean())
    y_scale = float(y_raw.std()) or 1.0
    y = (y_raw - y_mean) / y_scale

    rng = np.random.default_rng(seed)
    starts = []
    if init is not None:
        starts.append(init.as_log())
    starts.append(np.log([0.1, 1.0, 1.0]))
    while len(starts) < max(restarts, 1):
        starts.append(rng.uniform(np.log(0.01), np.log(10.0), size=3))
    starts = starts[:max(restarts, 1)] if init is None else starts[:max(restarts, 1) + 1]

    best_theta, best_lml = None, -np.inf
    failures = []
    for theta0 in starts:
        try:
            theta, lml = _ascend(c, y, theta0, max_iter=max_iter)
        except GprError as exc:
            failures.append(str(exc))
            continue
        if lml > best_lml:
            best_theta, best_lml = theta, lml
    if best_theta is None:
        raise GprError(f"all restarts failed: {failures}")
    return GprModel.build(c, y, Hyperparams.from_log(best_theta), y_mean, y_scale)
