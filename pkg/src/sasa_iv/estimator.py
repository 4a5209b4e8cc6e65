"""scikit-learn compatible estimators wrapping the network and its training loop."""

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import model as _model
from .structure import beta_to_matrix


def check_series(X, n_vars=None, n_steps=None):
    """Validate a ``(B, N, M)`` batch of multivariate windows; returns float64."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 3:
        raise ValueError(f"expected a 3-D array (samples, steps, variables), got shape {X.shape}")
    b, n, m = X.shape
    if m < 2 or n < 1:
        raise ValueError(f"need at least 2 variables and 1 step, got N={n}, M={m}")
    check_array(X.reshape(b, n * m), ensure_all_finite=True)
    if n_vars is not None and m != n_vars:
        raise ValueError(f"X has {m} variables but the estimator was fitted with {n_vars}")
    if n_steps is not None and n != n_steps:
        raise ValueError(f"X has {n} steps but the estimator was fitted with {n_steps}")
    return X


class _SASABase(BaseEstimator):
    _task = None

    def __init__(self, variant="SASA-IV", d_h=32, d_g=None, omega=1.0, gamma=0.5, mu=0.08, lr=1e-3,
                 batch_size=64, epochs=20, seed=0, estimator="straight-through", aggregate="batch-mean",
                 band=1.0, temperature=0.1, pooling="concat", structure_grad="stop", head_size=64,
                 dtype="float32"):
        self.variant = variant
        self.d_h = d_h
        self.d_g = d_g
        self.omega = omega
        self.gamma = gamma
        self.mu = mu
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.estimator = estimator
        self.aggregate = aggregate
        self.band = band
        self.temperature = temperature
        self.pooling = pooling
        self.structure_grad = structure_grad
        self.head_size = head_size
        self.dtype = dtype

    def _config(self, **extra):
        params = self.get_params()
        params.pop("dtype")
        return _model.ModelConfig(task=self._task, **params, **extra)

    def _encode_targets(self, y):
        return np.asarray(y, dtype=float), {}

    def fit(self, X, y, X_target=None):
        """Train on labelled source windows ``X, y`` and unlabelled target windows ``X_target``."""
        X = check_series(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        y_enc, extra = self._encode_targets(y)
        cfg = self._config(**extra)
        if cfg.uses_target:
            if X_target is None:
                raise ValueError(f"variant {cfg.variant} needs unlabelled target data (X_target)")
            X_target = check_series(X_target, n_vars=X.shape[2], n_steps=X.shape[1])
        else:
            X_target = None
        self.n_steps_, self.n_features_in_ = X.shape[1], X.shape[2]
        self.net_ = _model.build_model(X.shape[2], X.shape[1], cfg, dtype=getattr(torch, self.dtype))
        self.history_ = _model.fit(self.net_, X, y_enc, X_target)
        return self

    def _forward(self, X, batch_size=512):
        check_is_fitted(self, "net_")
        X = check_series(X, n_vars=self.n_features_in_, n_steps=self.n_steps_)
        dtype = next(self.net_.parameters()).dtype
        outs = []
        self.net_.eval()
        with torch.no_grad():
            for start in range(0, len(X), batch_size):
                outs.append(self.net_(torch.as_tensor(X[start:start + batch_size], dtype=dtype)))
        return outs

    def transform(self, X):
        """Final representation ``H`` (structure features plus variant features) per sample."""
        return np.concatenate([o.H.numpy() for o in self._forward(X)]).astype(float)

    def structure(self, X, mu=None):
        """Domain-level structure of ``X``: batch-mean alpha/beta and their binarized forms."""
        mu = self.mu if mu is None else mu
        outs = self._forward(X)
        n = sum(len(o.H) for o in outs)
        alpha = sum(o.structure.alpha.sum(0) for o in outs).numpy() / n
        beta = sum(o.structure.beta.sum(0) for o in outs).numpy() / n
        return {
            "alpha": alpha.astype(float),
            "beta": beta.astype(float),
            "alpha_bin": (alpha > mu).astype(float),
            "beta_bin": (beta > mu).astype(float),
            "adjacency": beta_to_matrix((beta > mu).astype(float), reduce="any"),
        }

    def save(self, path, **meta):
        check_is_fitted(self, "net_")
        meta = {"estimator": type(self).__name__, "params": self.get_params(), **meta}
        if hasattr(self, "classes_"):
            meta["classes"] = self.classes_.tolist()
        _model.save_checkpoint(path, self.net_, meta=meta)

    @classmethod
    def load(cls, path):
        net, meta = _model.load_checkpoint(path)
        target = {"SASARegressor": SASARegressor, "SASAClassifier": SASAClassifier}.get(meta.get("estimator"), cls)
        est = target(**meta.get("params", {}))
        est.net_ = net
        est.n_steps_, est.n_features_in_ = net.n_steps, net.n_vars
        est.history_ = []
        if "classes" in meta:
            est.classes_ = np.asarray(meta["classes"])
        return est


class SASARegressor(RegressorMixin, _SASABase):
    """Structure-aligned domain adaptation for window-level regression."""

    _task = "regression"

    def predict(self, X):
        return np.concatenate([o.output[:, 0].numpy() for o in self._forward(X)]).astype(float)


class SASAClassifier(ClassifierMixin, _SASABase):
    """Structure-aligned domain adaptation for window-level classification."""

    _task = "classification"

    def _encode_targets(self, y):
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("classification needs at least two classes in y")
        return codes, {"n_classes": len(self.classes_)}

    def _config(self, **extra):
        if "n_classes" not in extra and hasattr(self, "classes_"):
            extra["n_classes"] = len(self.classes_)
        return super()._config(**extra)

    def predict_proba(self, X):
        return np.concatenate([torch.softmax(o.output, -1).numpy() for o in self._forward(X)]).astype(float)

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
