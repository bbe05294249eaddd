"""Synthetic generator specs used by the demos and the acceptance tests.

Each function returns a plain dict accepted by ``SynthSpec.from_dict`` so it
can be dropped into a JSON run config under ``"synth"``.
"""

from __future__ import annotations


def sinusoid_mixture(n_instances: int = 64, noise: float = 0.05) -> dict:
    """Four channels, each a sum of two slow sinusoids with random phases.

    Frequencies stay well below the per-channel sampling rate so that half of
    the observations still pin the curve down.
    """
    chans = [
        [[1.0, 0.01, None], [0.5, 0.03, None]],
        [[1.0, 0.015, None], [0.4, 0.035, None]],
        [[1.0, 0.0125, None], [0.5, 0.025, None]],
        [[0.8, 0.02, None], [0.6, 0.03, None]],
    ]
    return {
        "n_instances": n_instances,
        "span": 100.0,
        "rate_range": [0.3, 0.6],
        "noise": noise,
        "classes": [{"channels": chans}],
    }


def two_frequency_classes(
    n_instances: int = 160,
    n_channels: int = 4,
    freqs: tuple[float, float] = (0.05, 0.12),
    rate: tuple[float, float] = (0.1, 0.2),
    noise: float = 0.3,
) -> dict:
    """Two classes told apart by the frequency of a tone that every channel
    carries with a phase shared inside an instance.

    Channels are sparse on their own; pooling them recovers the tone.
    """
    classes = [{"channels": [[[1.0, f, None]] for _ in range(n_channels)]} for f in freqs]
    return {
        "n_instances": n_instances,
        "span": 100.0,
        "rate_range": list(rate),
        "noise": noise,
        "shared_phase": True,
        "classes": classes,
    }


def channel_groups(
    n_instances: int = 160,
    freqs: tuple[float, float] = (0.05, 0.12),
    group_size: int = 3,
    noise: float = 0.3,
) -> dict:
    """Two channel groups carrying the class tone with opposite signs.

    Group A adds a slow tone, group B a fast one, so their spectra differ.
    Averaging every channel together cancels the class tone.
    """

    def cls(f):
        a = [[1.0, f, None], [1.0, 0.02, None]]
        b = [[-1.0, f, None], [1.0, 0.3, None]]
        return {"channels": [a] * group_size + [b] * group_size}

    return {
        "n_instances": n_instances,
        "span": 100.0,
        "rate_range": [[0.1, 0.2]] * group_size + [[0.3, 0.6]] * group_size,
        "noise": noise,
        "shared_phase": True,
        "classes": [cls(f) for f in freqs],
    }


def sparse_channel(n_instances: int = 48, missing: float = 0.95) -> dict:
    """Four dense single-tone channels plus one unrelated tone channel that
    loses ``missing`` of its samples (the last channel)."""
    chans = [[[1.0, f, None]] for f in (0.05, 0.1, 0.15, 0.2)] + [[[1.0, 0.35, None]]]
    return {
        "n_instances": n_instances,
        "span": 100.0,
        "rate_range": [1.0, 1.0],
        "dropout": [0.0, 0.0, 0.0, 0.0, missing],
        "noise": 0.05,
        "classes": [{"channels": chans}],
    }
