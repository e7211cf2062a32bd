"""Resampling helpers shared by the estimators."""

import numpy as np


def jackknife(estimator, *samples):
    """Delete-one jackknife of an estimator built from sample means.

    Each array in ``samples`` carries one row per independent unit
    (position pair, segment, ...).  ``estimator`` receives the means of
    every array and must be vectorized over a leading axis, since the
    leave-one-out means are passed in one batch.

    Returns ``(estimate, err_real, err_imag)``.  For real estimators the
    imaginary error is all zeros.
    """
    samples = [np.asarray(s) for s in samples]
    n = len(samples[0])
    if any(len(s) != n for s in samples):
        raise ValueError("all sample arrays need the same number of units")
    totals = [s.sum(axis=0) for s in samples]
    estimate = estimator(*[t / n for t in totals])
    if n < 2:
        zeros = np.zeros(np.shape(estimate))
        return estimate, zeros, zeros
    loo = estimator(*[(t[None] - s) / (n - 1) for t, s in zip(totals, samples)])
    centred = loo - loo.mean(axis=0)
    scale = (n - 1) / n
    err_re = np.sqrt(scale * np.sum(centred.real ** 2, axis=0))
    err_im = np.sqrt(scale * np.sum(np.imag(centred) ** 2, axis=0))
    return estimate, err_re, err_im


def shard_sizes(n, n_shards):
    """Split ``n`` draws over ``n_shards`` as evenly as possible."""
    if n_shards < 1:
        raise ValueError("n_shards must be >= 1")
    base, extra = divmod(n, n_shards)
    return [base + (1 if i < extra else 0) for i in range(n_shards)]


def shard_rngs(seed, n_shards):
    """Independent generators, one per shard, derived from a single seed."""
    children = np.random.SeedSequence(seed).spawn(n_shards)
    return [np.random.default_rng(c) for c in children]
