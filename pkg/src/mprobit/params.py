"""Parameter vectors for the baseline and follow-up models.

Both stages estimate a flat packed vector; the packing order is fixed here and
shared by the score, the information matrix, and every report:

  baseline : (beta_star[0..p1-1], lambda_star[2..k], c1)
  follow-up: (beta[0..p2-1], alpha[t=2..T, f=1..l], lambda[2..k], c[2..T])

The first scale loading of each stage (lambda_star[1], lambda[1]) is fixed at
one for identifiability and is never part of the packed vector. Variances are
parameterized on the log scale, c_t = log(sigma_t).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["BaselineParams", "MainParams"]


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BaselineParams:
    """Parameters of the first-period model: marginal coefficients, response
    loadings, and the log random-effect scale."""

    beta_star: np.ndarray  # (p1,)
    lambda_star: np.ndarray  # (k,), lambda_star[0] == 1
    c1: float

    def __post_init__(self):
        object.__setattr__(self, "beta_star", _readonly(self.beta_star))
        object.__setattr__(self, "lambda_star", _readonly(self.lambda_star))
        object.__setattr__(self, "c1", float(self.c1))
        if self.lambda_star.ndim != 1 or self.lambda_star.size < 1:
            raise ValueError("lambda_star must be a vector of length k >= 1")
        if self.lambda_star[0] != 1.0:
            raise ValueError("lambda_star[0] is fixed at 1 for identifiability")
        if not (np.isfinite(self.beta_star).all() and np.isfinite(self.lambda_star).all()):
            raise ValueError("non-finite baseline parameters")
        if not np.isfinite(self.c1):
            raise ValueError("c1 must be finite")

    @property
    def n_covariates(self) -> int:
        return self.beta_star.size

    @property
    def n_responses(self) -> int:
        return self.lambda_star.size

    @property
    def sigma1(self) -> float:
        return float(np.exp(self.c1))

    def pack(self) -> np.ndarray:
        return np.concatenate([self.beta_star, self.lambda_star[1:], [self.c1]])

    @classmethod
    def unpack(cls, vec, n_covariates: int, n_responses: int) -> "BaselineParams":
        vec = np.asarray(vec, dtype=float)
        p, k = n_covariates, n_responses
        if vec.size != p + (k - 1) + 1:
            raise ValueError("packed baseline vector has wrong length")
        lam = np.concatenate([[1.0], vec[p : p + k - 1]])
        return cls(beta_star=vec[:p], lambda_star=lam, c1=vec[-1])

    @classmethod
    def names(cls, covariate_names, n_responses: int) -> list[str]:
        out = [f"beta_star[{c}]" for c in covariate_names]
        out += [f"lambda_star[{j}]" for j in range(2, n_responses + 1)]
        out.append("c[1]")
        return out


@dataclass(frozen=True)
class MainParams:
    """Parameters of the follow-up (t >= 2) model.

    ``alpha`` is indexed (time, transition covariate) with rows for t = 2..T;
    ``c`` holds c_t = log(sigma_t) for the same times.
    """

    beta: np.ndarray  # (p2,)
    alpha: np.ndarray  # (T-1, l)
    lambda_: np.ndarray  # (k,), lambda_[0] == 1
    c: np.ndarray  # (T-1,)

    def __post_init__(self):
        object.__setattr__(self, "beta", _readonly(self.beta))
        object.__setattr__(self, "alpha", _readonly(np.atleast_2d(self.alpha)))
        object.__setattr__(self, "lambda_", _readonly(self.lambda_))
        object.__setattr__(self, "c", _readonly(self.c))
        if self.lambda_[0] != 1.0:
            raise ValueError("lambda_[0] is fixed at 1 for identifiability")
        if self.alpha.shape[0] != self.c.size:
            raise ValueError("alpha and c must cover the same follow-up times")
        for name in ("beta", "alpha", "lambda_", "c"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"non-finite values in {name}")

    @property
    def n_covariates(self) -> int:
        return self.beta.size

    @property
    def n_main_times(self) -> int:
        return self.c.size

    @property
    def n_transition_covariates(self) -> int:
        return self.alpha.shape[1]

    @property
    def n_responses(self) -> int:
        return self.lambda_.size

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.c)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.beta, self.alpha.ravel(), self.lambda_[1:], self.c])

    @classmethod
    def unpack(
        cls, vec, n_covariates: int, n_main_times: int, n_transition_covariates: int, n_responses: int
    ) -> "MainParams":
        vec = np.asarray(vec, dtype=float)
        p, tm, l, k = n_covariates, n_main_times, n_transition_covariates, n_responses
        if vec.size != p + tm * l + (k - 1) + tm:
            raise ValueError("packed follow-up vector has wrong length")
        beta = vec[:p]
        alpha = vec[p : p + tm * l].reshape(tm, l)
        lam = np.concatenate([[1.0], vec[p + tm * l : p + tm * l + k - 1]])
        c = vec[p + tm * l + k - 1 :]
        return cls(beta=beta, alpha=alpha, lambda_=lam, c=c)

    @classmethod
    def names(cls, covariate_names, transition_names, n_main_times: int, n_responses: int) -> list[str]:
        out = [f"beta[{c}]" for c in covariate_names]
        for t in range(2, n_main_times + 2):
            out += [f"alpha[t{t},{z}]" for z in transition_names]
        out += [f"lambda[{j}]" for j in range(2, n_responses + 1)]
        out += [f"c[{t}]" for t in range(2, n_main_times + 2)]
        return out
