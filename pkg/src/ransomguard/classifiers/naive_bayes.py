from __future__ import annotations

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


class GaussianNB:
    """Gaussian naive Bayes for labels {0, 1} with log-space posteriors.

    Per-class variances are smoothed by ``var_smoothing`` times the largest
    feature variance so constant features do not produce zero variances.
    """

    kind = "nb"

    def __init__(self, var_smoothing: float = 1e-9):
        self.var_smoothing = var_smoothing
        self.theta = None  # (2, d) class means
        self.var = None  # (2, d) class variances
        self.log_prior = None  # (2,)

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        eps = self.var_smoothing * max(float(X.var(axis=0).max()), 0.0)
        if eps == 0.0:
            eps = self.var_smoothing
        theta, var, prior = [], [], []
        for cls in (0, 1):
            Xc = X[y == cls]
            theta.append(Xc.mean(axis=0))
            var.append(Xc.var(axis=0) + eps)
            prior.append(Xc.shape[0] / X.shape[0])
        self.theta = np.array(theta)
        self.var = np.array(var)
        self.log_prior = np.log(np.array(prior))
        return self

    def joint_log_likelihood(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty((X.shape[0], 2))
        for c in range(2):
            ll = -0.5 * np.sum(LOG_2PI + np.log(self.var[c]))
            ll = ll - 0.5 * np.sum((X - self.theta[c]) ** 2 / self.var[c], axis=1)
            out[:, c] = self.log_prior[c] + ll
        return out

    def predict_proba(self, X) -> np.ndarray:
        jll = self.joint_log_likelihood(X)
        return np.exp(jll[:, 1] - np.logaddexp(jll[:, 0], jll[:, 1]))

    def get_params(self) -> dict:
        return {"theta": self.theta, "var": self.var, "log_prior": self.log_prior}

    def set_params(self, params) -> "GaussianNB":
        self.theta = np.asarray(params["theta"], dtype=np.float64)
        self.var = np.asarray(params["var"], dtype=np.float64)
        self.log_prior = np.asarray(params["log_prior"], dtype=np.float64)
        return self
