"""Gaussian-process regression over cell complexes with transport kernels.

The training loop fits a map between the signal distributions of paired
complexes: per epoch it draws a fresh batch of coupled source/target signal
samples for every pair, evaluates the exact Gaussian marginal log-likelihood
of the targets, and takes one plain gradient-descent step on the
hyperparameters.

Input embedding (an interpretation, flagged in the README): each batch row
carries the transport-kernel feature vector of the source complex together
with the sampled source signal expressed in whitened covariance coordinates
(its projection onto the top eigendirections, unit-scaled).  The GP kernel
is the product of the linear kernels on the two blocks, so restricted to the
complex block it is exactly the truncated exponential transport kernel,
while the signal block lets the regression represent a per-complex linear
map of the drawn sample.  Source and target draws share the underlying
normal vector, which is the coupling under which a transport map is
learnable from samples at all.  One independent GP per target coordinate
shares the Gram matrix.

Trained parameters (one flattened vector): the constant mean, the log noise
variance, a log bandwidth rescaling of the fitted kernel, and one weight per
feature per output coordinate for the linear mean.  Noise and mean gradients
are analytic; the bandwidth gradient uses central finite differences because
the spectral truncation is re-run whenever the bandwidth moves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator, RegressorMixin

from .complexes import CWComplex
from .exceptions import NumericalError, ValidationError
from .kernels import KernelSpec, WassersteinFeatures
from .transport import GaussianSignal, gaussian_signal

JITTER_SCALE = 1e-8
LOG_2PI = float(np.log(2.0 * np.pi))


# -- exact marginal log-likelihood ----------------------------------------------

def log_marginal_likelihood(kernel, targets, noise_variance: float,
                            mean=None, jitter_scale: float = JITTER_SCALE) -> float:
    """Exact Gaussian log marginal likelihood, summed over output columns.

    Evaluates ``log N(targets | mean, kernel + noise_variance * I)`` with a
    relative jitter of ``jitter_scale * mean(diag(kernel))`` added before the
    solve; a zero kernel therefore gets no jitter and the closed-form cases
    are exact.
    """
    value, _, _, _ = _mll_pieces(kernel, targets, noise_variance, mean,
                                 jitter_scale)
    return value


def _mll_pieces(kernel, targets, noise_variance, mean, jitter_scale):
    kernel = np.asarray(kernel, dtype=float)
    y = np.asarray(targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n = kernel.shape[0]
    if y.shape[0] != n:
        raise ValidationError(
            f"targets have {y.shape[0]} rows, kernel is {n}x{n}")
    if noise_variance <= 0:
        raise ValidationError(f"noise variance must be positive, got {noise_variance}")
    if mean is None:
        residual = y
    else:
        mean = np.asarray(mean, dtype=float)
        if mean.ndim == 1:
            mean = mean[:, None]
        if mean.shape != y.shape:
            raise ValidationError("mean shape does not match targets")
        residual = y - mean

    jitter = jitter_scale * float(np.mean(np.diag(kernel))) if n else 0.0
    covariance = kernel + (noise_variance + jitter) * np.eye(n)
    try:
        factor = cho_factor(covariance, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"kernel + noise is not positive definite: {exc}") from exc
    alpha = cho_solve(factor, residual)
    n_out = residual.shape[1]
    log_det = 2.0 * float(np.log(np.diag(factor[0])).sum())
    value = (-0.5 * float((residual * alpha).sum())
             - 0.5 * n_out * log_det
             - 0.5 * n * n_out * LOG_2PI)
    return value, factor, alpha, residual


# -- model ----------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingPair:
    """A supervised example: transport the source complex onto the target."""

    source: CWComplex
    target: CWComplex


def _as_pair(item) -> TrainingPair:
    if isinstance(item, TrainingPair):
        return item
    source, target = item
    return TrainingPair(source, target)


class _Theta:
    """Flat parameter vector layout: [mean, log noise, log bandwidth, W]."""

    def __init__(self, n_out: int, rank: int):
        self.n_out = n_out
        self.rank = rank
        self.size = 3 + n_out * rank

    def unpack(self, theta: np.ndarray):
        mean_constant = float(theta[0])
        noise_variance = float(np.exp(theta[1]))
        bandwidth_scale = float(np.exp(theta[2]))
        weights = theta[3:].reshape(self.n_out, self.rank)
        return mean_constant, noise_variance, bandwidth_scale, weights


@dataclass(frozen=True)
class _SignalCoords:
    """Whitened sampling geometry of one signal distribution.

    ``factor`` maps standard normals to signal samples; ``whitener`` maps a
    sample to unit-scale coordinates on the top eigendirections of the
    covariance (zero where the covariance is singular).
    """

    factor: np.ndarray     # (size, size): Q sqrt(lam)
    whitener: np.ndarray   # (size, rank)

    @classmethod
    def build(cls, signal: GaussianSignal, rank: int,
              coord_scale: float = 1.0) -> "_SignalCoords":
        lam = np.clip(signal.covariance.eigenvalues, 0.0, None)
        vectors = signal.covariance.eigenvectors
        # canonical signs (largest-magnitude entry positive): the sampling
        # bases of similar complexes then align, which is what makes the
        # sample-to-target maps of similar pairs look similar to the kernel
        anchors = np.argmax(np.abs(vectors), axis=0)
        signs = np.sign(vectors[anchors, np.arange(vectors.shape[1])])
        signs[signs == 0] = 1.0
        vectors = vectors * signs[None, :]
        factor = vectors * np.sqrt(lam)
        cutoff = signal.covariance.zero_cutoff
        order = np.argsort(lam)[::-1]
        top = order[:min(rank, signal.size)]
        positive = [i for i in top if lam[i] > cutoff]
        scale = coord_scale / np.sqrt(max(len(positive), 1))
        whitener = np.zeros((signal.size, rank))
        for slot, idx in enumerate(top):
            if lam[idx] > cutoff:
                whitener[:, slot] = vectors[:, idx] / np.sqrt(lam[idx]) * scale
        return cls(factor, whitener)


@dataclass
class _Batch:
    """One epoch's design: whitened source-sample coordinates, targets, and
    the row-to-pair index map."""

    coords: np.ndarray       # (B, rank)
    targets: np.ndarray      # (B, n_out)
    pair_index: np.ndarray   # (B,)


def _product_kernel(phi_a, coords_a, phi_b=None, coords_b=None) -> np.ndarray:
    """Kernel between embedding rows: (complex block inner product) times
    (signal block inner product).  PSD as a Schur product of Gram matrices."""
    if phi_b is None:
        phi_b, coords_b = phi_a, coords_a
    return (phi_a @ phi_b.T) * (coords_a @ coords_b.T)


@dataclass
class GPModel:
    """Fitted transport GP: feature pipeline, hyperparameters, and the final
    design needed for posterior prediction."""

    features: WassersteinFeatures
    theta: np.ndarray
    rank: int
    n_out: int
    degree: int
    mean_constant: float
    noise_variance: float
    bandwidth_scale: float
    output_weights: np.ndarray
    coord_scale: float
    design_phi: np.ndarray
    design_coords: np.ndarray
    design_targets: np.ndarray
    design_mean: np.ndarray
    alpha: np.ndarray
    cho: tuple
    final_gram_model: object
    history: list = field(default_factory=list)

    @property
    def design_rows(self) -> np.ndarray:
        """Concatenated embedding rows ``[complex features | whitened sample
        coordinates]`` of the final design."""
        return np.hstack([self.design_phi, self.design_coords])

    def _split_rows(self, rows) -> tuple[np.ndarray, np.ndarray]:
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != 2 * self.rank:
            raise ValidationError(
                f"inputs must be (B, {2 * self.rank}) embedding rows")
        return rows[:, :self.rank], rows[:, self.rank:]

    def mll(self, inputs, targets) -> float:
        """Marginal log-likelihood of targets at embedding rows under this
        model's hyperparameters.  ``inputs`` are rows whose first ``rank``
        columns are the complex features and the rest the whitened sample
        coordinates."""
        phi, coords = self._split_rows(inputs)
        mean = self.mean_constant + phi @ self.output_weights.T
        return log_marginal_likelihood(_product_kernel(phi, coords), targets,
                                       self.noise_variance, mean=mean)

    def embed_complexes(self, complexes) -> np.ndarray:
        """Complex-block features of new items at the trained bandwidth."""
        return self.features.embed_at_scale(
            self.features.cross_distances(list(complexes)),
            self.bandwidth_scale, self.final_gram_model)

    def sample_rows(self, complex: CWComplex, n_samples: int, seed):
        """Embedding rows plus the raw drawn signals for one complex."""
        signal = gaussian_signal(complex, self.degree)
        coords = _SignalCoords.build(signal, self.rank, self.coord_scale)
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n_samples, signal.size))
        samples = z @ coords.factor.T
        phi = np.repeat(self.embed_complexes([complex]), n_samples, axis=0)
        rows = np.hstack([phi, samples @ coords.whitener])
        return rows, samples


class FitResult(NamedTuple):
    """Return triple of :func:`fit`: parameters, model, kernel matrix."""

    theta: np.ndarray
    model: GPModel
    kernel: np.ndarray


# -- training -------------------------------------------------------------------

def _draw_batch(coords_x, coords_y, batch_size, seed_sequence) -> _Batch:
    """Independent seeded draws from the source and target signal
    distributions of every pair."""
    n_pairs = len(coords_x)
    children = seed_sequence.spawn(n_pairs)
    coords = []
    targets = []
    index = []
    for j in range(n_pairs):
        rng = np.random.default_rng(children[j])
        z_u = rng.standard_normal((batch_size, coords_x[j].factor.shape[0]))
        z_v = rng.standard_normal((batch_size, coords_y[j].factor.shape[0]))
        u = z_u @ coords_x[j].factor.T
        coords.append(u @ coords_x[j].whitener)
        targets.append(z_v @ coords_y[j].factor.T)
        index.extend([j] * batch_size)
    return _Batch(np.vstack(coords), np.vstack(targets),
                  np.asarray(index, dtype=int))


class _Objective:
    """Negative mean marginal log-likelihood J and its gradient pieces for a
    fixed batch."""

    def __init__(self, features: WassersteinFeatures, layout: _Theta,
                 batch: _Batch, cross_distances: np.ndarray | None = None):
        self.features = features
        self.layout = layout
        self.batch = batch
        # held-out batches embed their complexes out-of-sample at the
        # current bandwidth
        self.cross_distances = cross_distances

    def _complex_rows(self, scale: float):
        phi_train, model = self.features.features_at_scale(scale)
        if self.cross_distances is None:
            phi = phi_train
        else:
            phi = self.features.embed_at_scale(self.cross_distances, scale, model)
        return phi[self.batch.pair_index], model

    def value_and_state(self, theta: np.ndarray):
        mean_c, noise, scale, weights = self.layout.unpack(theta)
        phi_rows, model = self._complex_rows(scale)
        kernel = _product_kernel(phi_rows, self.batch.coords)
        mean = mean_c + phi_rows @ weights.T
        value, factor, alpha, residual = _mll_pieces(
            kernel, self.batch.targets, noise, mean, JITTER_SCALE)
        denom = self.batch.targets.size
        return -value / denom, (factor, alpha, phi_rows, noise, denom, model, mean)

    def value(self, theta: np.ndarray) -> float:
        return self.value_and_state(theta)[0]

    def gradient(self, theta: np.ndarray, fd_step: float = 1e-4):
        """Gradient of J: analytic in mean, weights, and noise; central
        finite differences in the log bandwidth (truncation is re-run when
        the bandwidth moves, so there is no clean analytic form)."""
        value, state = self.value_and_state(theta)
        factor, alpha, phi_rows, noise, denom, _, _ = state
        grad = np.zeros_like(theta)
        grad[0] = -alpha.sum() / denom
        n = alpha.shape[0]
        trace_inv = float(np.trace(cho_solve(factor, np.eye(n))))
        n_out = self.layout.n_out
        d_mll_d_noise = 0.5 * float((alpha ** 2).sum()) - 0.5 * n_out * trace_inv
        grad[1] = -(d_mll_d_noise * noise) / denom
        plus = theta.copy()
        minus = theta.copy()
        plus[2] += fd_step
        minus[2] -= fd_step
        grad[2] = (self.value(plus) - self.value(minus)) / (2.0 * fd_step)
        grad_weights = -(alpha.T @ phi_rows) / denom
        grad[3:] = grad_weights.ravel()
        return value, grad, state


def _posterior_nlpd(theta, layout, features, train_state, train_batch,
                    eval_batch, eval_cross) -> float:
    """Held-out loss: mean negative log predictive density per scalar,
    conditioning the GP on the epoch's training design."""
    factor, alpha, phi_rows, noise, _, model, _ = train_state
    mean_c, _, scale, weights = layout.unpack(theta)
    ephi = features.embed_at_scale(eval_cross, scale, model)[eval_batch.pair_index]
    cross = _product_kernel(ephi, eval_batch.coords, phi_rows,
                            train_batch.coords)
    mean = mean_c + ephi @ weights.T + cross @ alpha
    solved = cho_solve(factor, cross.T)
    prior_var = (ephi ** 2).sum(axis=1) * (eval_batch.coords ** 2).sum(axis=1)
    variance = np.clip(prior_var - (cross * solved.T).sum(axis=1), 0.0, None) + noise
    residual = eval_batch.targets - mean
    return float(np.mean(0.5 * (residual ** 2 / variance[:, None]
                                + np.log(2.0 * np.pi * variance[:, None]))))


def fit(pairs, spec: KernelSpec | None = None, epochs: int = 15,
        batch_size: int = 1, learning_rate: float = 1e-2, seed: int = 0,
        rank: int | None = None, sigma="auto", squared: bool = True,
        eval_pairs=None, theta_init=None, cache_dir=None,
        n_jobs: int = 1) -> FitResult:
    """Train the transport GP on source/target complex pairs.

    Per epoch: draw seeded coupled sample batches for every pair, evaluate
    the training objective J (negative marginal log-likelihood per scalar
    observation), take one gradient-descent step with constant learning
    rate, and record the loss curve (plus the same objective on
    ``eval_pairs`` when given).  Deterministic for fixed seeds.

    Returns the triple ``(theta, model, kernel)``; the kernel matrix is the
    final design's Gram matrix.  Raises :class:`NumericalError` if the
    objective becomes non-finite.
    """
    pair_list = [_as_pair(p) for p in pairs]
    if not pair_list:
        raise ValidationError("need at least one training pair")
    if epochs < 1 or batch_size < 1:
        raise ValidationError("epochs and batch_size must be >= 1")
    if learning_rate <= 0:
        raise ValidationError(f"learning rate must be positive, got {learning_rate}")
    spec = spec or KernelSpec()

    sources = [p.source for p in pair_list]
    targets = [p.target for p in pair_list]
    features = WassersteinFeatures(
        kind=spec.kind, p=spec.p, alpha=spec.alpha, degree=spec.degree,
        sigma=sigma, squared=squared, rank=rank, cache_dir=cache_dir,
        n_jobs=n_jobs).fit(sources)
    r = features.rank_

    signals_x = [gaussian_signal(c, spec.degree) for c in sources]
    signals_y = [gaussian_signal(c, spec.degree) for c in targets]
    sizes = {s.size for s in signals_x} | {s.size for s in signals_y}
    if len(sizes) > 1:
        raise ValidationError(
            f"all paired complexes must share one Hodge Laplacian dimension, "
            f"got sizes {sorted(sizes)}")
    n_out = sizes.pop()
    # standardize the signal block so the prior row variance matches the
    # target variance scale (the parameter vector carries no kernel
    # amplitude, so this is fixed at fit time from the data)
    target_scale = float(np.mean(
        [np.diag(s.covariance.matrix).mean() for s in signals_y]))
    coord_scale = float(np.sqrt(max(target_scale, 1e-12)))
    coords_x = [_SignalCoords.build(s, r, coord_scale) for s in signals_x]
    coords_y = [_SignalCoords.build(s, r) for s in signals_y]

    layout = _Theta(n_out, r)
    if theta_init is not None:
        theta = np.asarray(theta_init, dtype=float).copy()
        if theta.shape != (layout.size,):
            raise ValidationError(
                f"theta_init must have shape ({layout.size},), got {theta.shape}")
    else:
        theta = np.random.default_rng(seed).standard_normal(layout.size)

    eval_setup = None
    if eval_pairs:
        eval_list = [_as_pair(p) for p in eval_pairs]
        eval_cx = [_SignalCoords.build(gaussian_signal(p.source, spec.degree),
                                       r, coord_scale)
                   for p in eval_list]
        eval_cy = [_SignalCoords.build(gaussian_signal(p.target, spec.degree), r)
                   for p in eval_list]
        eval_cross = features.cross_distances([p.source for p in eval_list])
        eval_setup = (eval_cx, eval_cy, eval_cross)

    train_seeds = np.random.SeedSequence([seed, 0]).spawn(epochs + 1)
    eval_seeds = np.random.SeedSequence([seed, 1]).spawn(epochs)

    # the loss curve is monitored on one fixed seeded batch so it tracks
    # parameter progress; gradient steps use the fresh per-epoch batches
    probe_batch = _draw_batch(coords_x, coords_y, batch_size,
                              np.random.SeedSequence([seed, 2]))
    probe_objective = _Objective(features, layout, probe_batch)

    history = []
    for epoch in range(epochs):
        batch = _draw_batch(coords_x, coords_y, batch_size, train_seeds[epoch])
        objective = _Objective(features, layout, batch)
        step_loss, grad, state = objective.gradient(theta)
        if not np.isfinite(step_loss) or not np.all(np.isfinite(grad)):
            raise NumericalError(f"training diverged at epoch {epoch}")

        record = {
            "epoch": epoch,
            "train_loss": float(probe_objective.value(theta)),
            "step_loss": float(step_loss),
            "noise_variance": float(state[3]),
            "bandwidth_scale": float(np.exp(theta[2])),
        }
        if eval_setup is not None:
            eval_cx, eval_cy, eval_cross = eval_setup
            eval_batch = _draw_batch(eval_cx, eval_cy, batch_size,
                                     eval_seeds[epoch])
            record["test_loss"] = _posterior_nlpd(
                theta, layout, features, state, batch, eval_batch, eval_cross)
        history.append(record)

        theta = theta - learning_rate * grad

    # final deterministic design at the trained parameters
    final_batch = _draw_batch(coords_x, coords_y, batch_size, train_seeds[epochs])
    final_obj = _Objective(features, layout, final_batch)
    _, state = final_obj.value_and_state(theta)
    factor, alpha, phi_rows, noise, _, gram_model, mean = state
    mean_c, noise_var, bw_scale, weights = layout.unpack(theta)

    model = GPModel(
        features=features,
        theta=theta.copy(),
        rank=r,
        n_out=n_out,
        degree=spec.degree,
        mean_constant=mean_c,
        noise_variance=noise_var,
        bandwidth_scale=bw_scale,
        output_weights=weights.copy(),
        coord_scale=coord_scale,
        design_phi=phi_rows,
        design_coords=final_batch.coords,
        design_targets=final_batch.targets,
        design_mean=mean,
        alpha=alpha,
        cho=factor,
        final_gram_model=gram_model,
        history=history,
    )
    kernel = _product_kernel(phi_rows, final_batch.coords)
    return FitResult(theta.copy(), model, kernel)


def mll(model: GPModel, inputs, targets) -> float:
    """Marginal log-likelihood of ``targets`` at embedding rows ``inputs``
    under the fitted hyperparameters."""
    return model.mll(inputs, targets)


def predict(model: GPModel, new_complex: CWComplex, n_samples: int = 1,
            seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance for sampled signals of a new complex.

    Draws ``n_samples`` source signals, embeds them alongside the complex's
    out-of-sample kernel features, and evaluates the standard GP posterior
    against the model's final design.  Returns ``(mean, variance)`` of shape
    ``(n_samples, n_out)``; the variance is shared across coordinates (one
    Gram matrix per model) and is clamped to be nonnegative.
    """
    if n_samples < 1:
        raise ValidationError(f"need at least one sample, got {n_samples}")
    rows, _ = model.sample_rows(new_complex, n_samples, seed)
    return predict_rows(model, rows)


def predict_rows(model: GPModel, rows) -> tuple[np.ndarray, np.ndarray]:
    """GP posterior at precomputed embedding rows."""
    phi, coords = model._split_rows(rows)
    cross = _product_kernel(phi, coords, model.design_phi, model.design_coords)
    prior_mean = model.mean_constant + phi @ model.output_weights.T
    mean = prior_mean + cross @ model.alpha
    solved = cho_solve(model.cho, cross.T)
    prior_var = (phi ** 2).sum(axis=1) * (coords ** 2).sum(axis=1)
    reduction = (cross * solved.T).sum(axis=1)
    variance = np.clip(prior_var - reduction, 0.0, None) + model.noise_variance
    variance = np.repeat(variance[:, None], model.n_out, axis=1)
    return mean, variance


# -- sklearn-style estimator ------------------------------------------------------

class TransportMapGP(RegressorMixin, BaseEstimator):
    """Estimator facade over :func:`fit` / :func:`predict`.

    ``fit(X, y)`` takes source complexes ``X`` and target complexes ``y``;
    ``predict(X)`` returns the posterior mean target signal for one seeded
    sample per source complex.
    """

    def __init__(self, kind="w", p=2.0, alpha=0.5, degree=0, sigma="auto",
                 squared=True, epochs=15, batch_size=1, learning_rate=1e-2,
                 rank=None, seed=0, cache_dir=None, n_jobs=1):
        self.kind = kind
        self.p = p
        self.alpha = alpha
        self.degree = degree
        self.sigma = sigma
        self.squared = squared
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.rank = rank
        self.seed = seed
        self.cache_dir = cache_dir
        self.n_jobs = n_jobs

    def fit(self, X, y):
        pairs = list(zip(X, y))
        spec = KernelSpec(kind=self.kind, p=self.p, alpha=self.alpha,
                          degree=self.degree)
        result = fit(pairs, spec=spec, epochs=self.epochs,
                     batch_size=self.batch_size,
                     learning_rate=self.learning_rate, seed=self.seed,
                     rank=self.rank, sigma=self.sigma, squared=self.squared,
                     cache_dir=self.cache_dir, n_jobs=self.n_jobs)
        self.theta_, self.model_, self.kernel_matrix_ = result
        self.history_ = self.model_.history
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise ValidationError("estimator is not fitted yet")
        means = []
        for j, complex in enumerate(X):
            mean, _ = predict(self.model_, complex, n_samples=1,
                              seed=self.seed + j)
            means.append(mean[0])
        return np.asarray(means)
