"""Padding and epoch ordering shared by both training stages."""
import numpy as np


def collate(utterances):
    """Zero-pad to ``[B, T_max, F]``; returns (features, lengths)."""
    lengths = np.array([u.duration for u in utterances], dtype=np.int64)
    F = utterances[0].features.shape[1]
    feats = np.zeros((len(utterances), int(lengths.max()), F))
    for i, u in enumerate(utterances):
        feats[i, :u.duration] = u.features
    return feats, lengths


def epoch_order(utterances, epoch, rng):
    """Longest-first in epoch 1, seeded shuffle afterwards."""
    if epoch == 1:
        durations = np.array([u.duration for u in utterances])
        # stable sort so equal durations keep corpus order
        return list(np.argsort(-durations, kind="stable"))
    return list(rng.permutation(len(utterances)))


def minibatches(order, batch_size):
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def eval_batches(utterances, batch_size=64):
    """Length-sorted fixed batches for evaluation (results go back in corpus order)."""
    order = np.argsort([u.duration for u in utterances], kind="stable")
    return minibatches(list(order), batch_size)
