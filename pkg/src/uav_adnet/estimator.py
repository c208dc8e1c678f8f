"""scikit-learn compatible front end for the grid VAE family.

``X`` is an ``(n_samples, grid_len)`` 0/1 array of grid vectors. GPS
features travel as a keyword argument because they condition the model
rather than being reconstructed::

    est = GridVAE(variant="uav-adnet").fit(X, gps=G)
    flags = est.predict(X_test, gps=G_test)     # 1 where a cell looks anomalous
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .detection import DEFAULT_THRESHOLD, binarize, check_threshold
from .errors import ConfigError
from .nn import VARIANTS, ModelConfig, encode_batch, reconstruct_batch
from .training import TrainOptions, TrainState, fit_network


class _ArraySample:
    __slots__ = ("grid", "gps")

    def __init__(self, bits, gps):
        self.grid = _Bits(bits)
        self.gps = gps


class _Bits:
    __slots__ = ("bits",)

    def __init__(self, bits):
        self.bits = bits


class GridVAE(TransformerMixin, BaseEstimator):
    """Grid VAE with optional GPS conditioning and copy-crop links.

    Parameters
    ----------
    variant : {"uav-adnet", "uav-adnet-wo-gps", "cvae", "vae"}
        Selects the ``(use_gps, use_copy_crop)`` flag pair.
    hidden_sizes, latent_dim, kl_weight
        Architecture; the decoder mirrors ``hidden_sizes``.
    epochs_max, batch_size, learning_rate, patience, random_state
        Training options (Adam, early stopping on validation error).
    validation_fraction : float
        Share of ``X`` held out for early stopping when ``X_val`` is not given.
    threshold : float
        Binarization threshold used by :meth:`predict`.
    """

    def __init__(self, variant="uav-adnet", hidden_sizes=(256, 128), latent_dim=32, kl_weight=1e-3,
                 epochs_max=200, batch_size=32, learning_rate=1e-3, patience=10, random_state=0,
                 validation_fraction=0.1, threshold=DEFAULT_THRESHOLD):
        self.variant = variant
        self.hidden_sizes = hidden_sizes
        self.latent_dim = latent_dim
        self.kl_weight = kl_weight
        self.epochs_max = epochs_max
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.random_state = random_state
        self.validation_fraction = validation_fraction
        self.threshold = threshold

    def _validate_grid(self, X, reset):
        X = check_array(X, dtype=np.float64)
        if not np.isin(X, (0.0, 1.0)).all():
            raise ValueError("grid vectors must contain only 0 and 1")
        if reset:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but GridVAE was fitted with {self.n_features_in_}")
        return X

    def _validate_gps(self, gps, n, use_gps):
        if not use_gps:
            if gps is not None:
                raise ConfigError(f"variant {self.variant!r} takes no gps input")
            return None
        if gps is None:
            raise ConfigError(f"variant {self.variant!r} needs gps features")
        gps = check_array(gps, dtype=np.float64)
        if gps.shape[0] != n:
            raise ValueError("X and gps have different numbers of rows")
        return gps

    def fit(self, X, y=None, gps=None, X_val=None, gps_val=None):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        use_gps, _ = VARIANTS[self.variant]
        X = self._validate_grid(X, reset=True)
        gps = self._validate_gps(gps, X.shape[0], use_gps)
        if X_val is None:
            rng = np.random.default_rng(self.random_state)
            order = rng.permutation(X.shape[0])
            n_val = max(1, int(round(self.validation_fraction * X.shape[0])))
            if n_val >= X.shape[0]:
                raise ValueError("not enough samples to hold out a validation set")
            val_idx, tr_idx = order[:n_val], order[n_val:]
            X, X_val = X[tr_idx], X[val_idx]
            if gps is not None:
                gps, gps_val = gps[tr_idx], gps[val_idx]
        else:
            X_val = self._validate_grid(X_val, reset=False)
            gps_val = self._validate_gps(gps_val, X_val.shape[0], use_gps)

        self.config_ = ModelConfig.for_variant(
            self.variant, X.shape[1], hidden_sizes=tuple(self.hidden_sizes),
            latent_dim=self.latent_dim, kl_weight=self.kl_weight,
            gps_len=gps.shape[1] if gps is not None else 0,
        )
        self.options_ = TrainOptions(epochs_max=self.epochs_max, batch_size=self.batch_size,
                                     learning_rate=self.learning_rate, patience=self.patience,
                                     seed=self.random_state)
        state: TrainState = fit_network(_rows(X, gps), _rows(X_val, gps_val), self.config_, self.options_)
        self.network_ = state.best
        self.curve_ = state.curve
        self.n_epochs_ = len(state.curve)
        return self

    def _inputs(self, X, gps):
        check_is_fitted(self, "network_")
        X = self._validate_grid(X, reset=False)
        return X, self._validate_gps(gps, X.shape[0], self.config_.use_gps)

    def transform(self, X, gps=None):
        """Posterior means of the latent code."""
        X, gps = self._inputs(X, gps)
        return encode_batch(self.network_, X, gps)[0]

    def reconstruct(self, X, gps=None):
        """Per-cell occupancy probabilities with a deterministic latent."""
        X, gps = self._inputs(X, gps)
        return reconstruct_batch(self.network_, X, gps)

    def predict(self, X, gps=None):
        """0/1 anomaly flags: cells present in ``X`` that the model does not reproduce."""
        X, gps = self._inputs(X, gps)
        m = binarize(reconstruct_batch(self.network_, X, gps), check_threshold(self.threshold))
        return ((X == 1) & (m == 0)).astype(np.uint8)

    def score_samples(self, X, gps=None):
        """Negative per-sample reconstruction error; lower means more anomalous."""
        X, gps = self._inputs(X, gps)
        return -np.mean((X - reconstruct_batch(self.network_, X, gps)) ** 2, axis=1)

    def score(self, X, y=None, gps=None):
        return float(np.mean(self.score_samples(X, gps=gps)))


def _rows(X, gps):
    return [_ArraySample(X[i], None if gps is None else gps[i]) for i in range(X.shape[0])]
