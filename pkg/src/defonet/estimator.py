"""scikit-learn style wrapper around the deformation generator."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .condition import encode_batch
from .dataset import Dataset
from .model import DiscriminatorSpec, Generator, GeneratorSpec
from .training import DEFAULT_ALPHA, DEFAULT_BETA, TrainConfig, train
from .validation import check_conditions, check_grids, check_threshold


class DefoNet(BaseEstimator):
    """Predict deformed occupancy grids from undeformed shells and a condition.

    ``X`` holds input grids (n, N, N, N), ``y`` the deformed targets and
    ``conditions`` one ``(force, location, material)`` index triple per grid.

    Parameters mirror :class:`defonet.training.TrainConfig`; ``threshold``
    binarizes :meth:`predict_proba` in :meth:`predict`.
    """

    def __init__(
        self,
        alpha=DEFAULT_ALPHA,
        beta=DEFAULT_BETA,
        gp_lambda=10.0,
        batch_size=8,
        lr_initial=5e-4,
        lr_after_epoch1=1e-4,
        epochs=1,
        max_steps=None,
        critic_steps=1,
        adam_betas=(0.9, 0.999),
        threshold=0.5,
        generator_spec=None,
        discriminator_spec=None,
        seed=0,
    ):
        self.alpha = alpha
        self.beta = beta
        self.gp_lambda = gp_lambda
        self.batch_size = batch_size
        self.lr_initial = lr_initial
        self.lr_after_epoch1 = lr_after_epoch1
        self.epochs = epochs
        self.max_steps = max_steps
        self.critic_steps = critic_steps
        self.adam_betas = adam_betas
        self.threshold = threshold
        self.generator_spec = generator_spec
        self.discriminator_spec = discriminator_spec
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            alpha=self.alpha,
            beta=self.beta,
            gp_lambda=self.gp_lambda,
            batch_size=self.batch_size,
            lr_initial=self.lr_initial,
            lr_after_epoch1=self.lr_after_epoch1,
            epochs=self.epochs,
            critic_steps_per_gen_step=self.critic_steps,
            seed=self.seed,
            max_steps=self.max_steps,
            adam_betas=self.adam_betas,
        )

    def fit(self, X, y, conditions, pitch=None, **train_kwargs):
        X = check_grids(X)
        y = check_grids(y, X.shape[1], name="y")
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} grids but y has {len(y)}")
        conds = check_conditions(conditions, len(X))
        n = X.shape[1]
        dataset = Dataset(n, pitch or 0.022 * 64 / n, conds.astype(np.uint8), X, y)
        return self.fit_dataset(dataset, **train_kwargs)

    def fit_dataset(self, dataset: Dataset, **train_kwargs):
        check_threshold(self.threshold)
        n = dataset.resolution
        gspec = self.generator_spec or GeneratorSpec.default(n)
        dspec = self.discriminator_spec or DiscriminatorSpec.default(n)
        checkpoint, log = train(dataset, gspec, dspec, self._train_config(), **train_kwargs)
        self._set_checkpoint(checkpoint)
        self.log_ = log
        return self

    def _set_checkpoint(self, checkpoint: Checkpoint):
        gen = Generator(checkpoint.generator_spec)
        gen.load_state_dict(checkpoint.generator_state)
        gen.eval()
        self.checkpoint_ = checkpoint
        self.generator_ = gen
        self.resolution_ = checkpoint.generator_spec.resolution
        self.n_steps_ = checkpoint.step

    def predict_proba(self, X, conditions, batch_size: int = 8) -> np.ndarray:
        """Per-voxel occupancy probabilities, shape (n, N, N, N)."""
        check_is_fitted(self, "generator_")
        X = check_grids(X, self.resolution_)
        cond = encode_batch([tuple(c) for c in check_conditions(conditions, len(X))])
        out = []
        with torch.no_grad():
            for lo in range(0, len(X), batch_size):
                x = torch.from_numpy(X[lo : lo + batch_size]).float()
                c = torch.from_numpy(cond[lo : lo + batch_size])
                out.append(self.generator_(x, c).numpy())
        return np.concatenate(out)

    def predict(self, X, conditions) -> np.ndarray:
        threshold = check_threshold(self.threshold)
        return (self.predict_proba(X, conditions) > threshold).astype(np.uint8)

    def score(self, X, y, conditions) -> float:
        """Mean intersection-over-union between thresholded predictions and ``y``."""
        pred = self.predict(X, conditions).astype(bool)
        y = check_grids(y, self.resolution_, name="y").astype(bool)
        inter = (pred & y).sum(axis=(1, 2, 3))
        union = (pred | y).sum(axis=(1, 2, 3))
        return float(np.mean(np.where(union == 0, 1.0, inter / np.maximum(union, 1))))

    def save(self, path) -> None:
        check_is_fitted(self, "checkpoint_")
        save_checkpoint(path, self.checkpoint_)

    @classmethod
    def load(cls, path, threshold: float = 0.5) -> "DefoNet":
        ckpt = load_checkpoint(path)
        cfg = ckpt.config or {}
        keys = ("alpha", "beta", "gp_lambda", "batch_size", "lr_initial", "lr_after_epoch1", "epochs", "max_steps", "seed")
        params = {k: cfg[k] for k in keys if k in cfg}
        if "adam_betas" in cfg:
            params["adam_betas"] = tuple(cfg["adam_betas"])
        if "critic_steps_per_gen_step" in cfg:
            params["critic_steps"] = cfg["critic_steps_per_gen_step"]
        est = cls(threshold=threshold, generator_spec=ckpt.generator_spec, discriminator_spec=ckpt.discriminator_spec, **params)
        est._set_checkpoint(ckpt)
        return est
