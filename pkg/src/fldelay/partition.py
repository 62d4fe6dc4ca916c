"""Split a task's dataset into device shards."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass
class Partition:
    shards: list
    weights: np.ndarray
    classes: list

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.shards])


def _weights(shards):
    sizes = np.array([len(s) for s in shards], dtype=np.float64)
    return sizes / sizes.sum()


def partition_data(
    labels,
    n_devices: int,
    mode: str = "iid",
    size_std: float = 0.0,
    labels_per_device: int | None = None,
    mean_size: int | None = None,
    seed: int = 0,
) -> Partition:
    """Assign disjoint sample indices to ``n_devices`` devices.

    ``iid`` shuffles the dataset and deals out equal shards of ``mean_size``
    (default: all samples split evenly).  ``non-iid`` draws each device's shard
    size from a lognormal with log-standard-deviation ``size_std`` and mean
    ``mean_size`` (default: half an even split, leaving headroom in the class
    pools), and restricts device ``n`` to ``labels_per_device`` classes chosen
    round-robin.  A class pool that runs dry caps the shard; sizes are at
    least one sample.
    """
    labels = np.asarray(labels)
    if n_devices < 1:
        raise InvalidArgumentError("need at least one device")
    if size_std < 0:
        raise InvalidArgumentError("size_std must be nonnegative")
    classes = np.unique(labels)
    n_classes = classes.size
    rng = np.random.default_rng(seed)

    if mode == "iid":
        if mean_size is None:
            mean_size = labels.size // n_devices
        if mean_size * n_devices > labels.size or mean_size < 1:
            raise InvalidArgumentError("not enough samples for the requested shard size")
        order = rng.permutation(labels.size)
        shards = [np.sort(order[i * mean_size : (i + 1) * mean_size]) for i in range(n_devices)]
        return Partition(shards, _weights(shards), [np.unique(labels[s]) for s in shards])

    if mode not in ("non-iid", "noniid", "non_iid"):
        raise InvalidArgumentError(f"unknown partition mode {mode!r}")
    if labels_per_device is None:
        labels_per_device = n_classes
    if not 1 <= labels_per_device <= n_classes:
        raise InvalidArgumentError(
            f"labels_per_device={labels_per_device} exceeds the {n_classes} available classes"
        )
    if mean_size is None:
        mean_size = max(1, labels.size // (2 * n_devices))

    mu = -0.5 * size_std**2
    sizes = np.maximum(1, np.rint(mean_size * rng.lognormal(mu, size_std, n_devices))).astype(int)
    pools = {c: list(rng.permutation(np.flatnonzero(labels == c))) for c in classes}
    shards, owned = [], []
    for n in range(n_devices):
        mine = classes[(n * labels_per_device + np.arange(labels_per_device)) % n_classes]
        per_class = np.full(labels_per_device, sizes[n] // labels_per_device)
        per_class[: sizes[n] % labels_per_device] += 1
        picked = []
        for c, want in zip(mine, per_class):
            pool = pools[c]
            take = min(int(want), len(pool))
            picked.extend(pool[:take])
            del pool[:take]
        if not picked:
            raise InvalidArgumentError(f"device {n} received no samples; dataset too small")
        shards.append(np.sort(np.array(picked)))
        owned.append(np.unique(labels[shards[-1]]))
    return Partition(shards, _weights(shards), owned)
