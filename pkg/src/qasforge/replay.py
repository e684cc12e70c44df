"""Prioritized experience replay backed by an array sum-tree."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SumTree:
    """Binary tree of partial sums over ``capacity`` leaves.

    The tree is stored 1-based in a flat array: root at 1, children of node i
    at 2i and 2i+1, leaves at ``[size, 2 * size)`` where ``size`` is the
    capacity rounded up to a power of two.  Batched queries descend all levels
    at once.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.size = 1 << max(0, (capacity - 1).bit_length())
        self.tree = np.zeros(2 * self.size)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    @property
    def leaves(self) -> np.ndarray:
        return self.tree[self.size:self.size + self.capacity]

    def update(self, indices, values) -> None:
        indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        values = np.broadcast_to(np.asarray(values, dtype=float), indices.shape)
        if indices.size and (indices.min() < 0 or indices.max() >= self.capacity):
            raise IndexError("leaf index out of range")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("priorities must be finite and non-negative")
        if indices.size <= 8:  # small updates: plain walks to the root are cheaper
            tree = self.tree
            for i, val in zip(indices.tolist(), values.tolist()):
                node = i + self.size
                tree[node] = val
                node //= 2
                while node >= 1:
                    tree[node] = tree[2 * node] + tree[2 * node + 1]
                    node //= 2
            return
        nodes = indices + self.size
        self.tree[nodes] = values  # later duplicates win, matching sequential updates
        nodes = np.unique(nodes // 2)
        while nodes[0] >= 1:
            self.tree[nodes] = self.tree[2 * nodes] + self.tree[2 * nodes + 1]
            if nodes[0] == 1:
                break
            nodes = np.unique(nodes // 2)

    def find(self, mass) -> np.ndarray:
        """Leaf indices whose prefix-sum interval contains each ``mass``."""
        v = np.atleast_1d(np.asarray(mass, dtype=float)).copy()
        if v.size == 1:
            tree, node, m = self.tree, 1, float(v[0])
            while node < self.size:
                left = 2 * node
                if m < tree[left] or tree[left + 1] <= 0.0:
                    node = left
                else:
                    m -= tree[left]
                    node = left + 1
            return np.array([node - self.size])
        node = np.ones(v.shape, dtype=np.int64)
        while node[0] < self.size:
            left = 2 * node
            lsum = self.tree[left]
            go_left = (v < lsum) | (self.tree[left + 1] <= 0.0)
            v = np.where(go_left, v, v - lsum)
            node = np.where(go_left, left, left + 1)
        return node - self.size


@dataclass
class SampledBatch:
    transitions: dict
    indices: np.ndarray
    is_weights: np.ndarray

    def __len__(self):
        return len(self.indices)


class PrioritizedBuffer:
    """Ring buffer of transitions sampled in proportion to stored p**alpha.

    Transitions are dicts of equally-shaped fields; storage arrays are
    allocated on the first push.  An optional per-item ``scale`` multiplies
    the leaf value and survives priority updates.
    """

    def __init__(self, capacity=15000, alpha=0.6, beta=0.4, beta_increment=1e-3,
                 epsilon_priority=1e-5, rng=None):
        self.capacity = capacity
        self.alpha = alpha
        self.beta = beta
        self.beta_increment = beta_increment
        self.epsilon_priority = epsilon_priority
        self.tree = SumTree(capacity)
        self.rng = np.random.default_rng(rng)
        self.fields = None
        self.priority = np.zeros(capacity)
        self.scale = np.ones(capacity)
        self.cursor = 0
        self.count = 0

    def __len__(self):
        return self.count

    def max_priority(self) -> float:
        """Largest unscaled leaf priority, 1.0 for an empty buffer."""
        if self.count == 0:
            return 1.0
        return float(self.priority[:self.count].max())

    def push(self, transition: dict, scale: float = 1.0) -> int:
        if self.fields is None:
            self.fields = {k: np.zeros((self.capacity,) + np.shape(v), dtype=np.asarray(v).dtype)
                           for k, v in transition.items()}
        i = self.cursor
        for k, arr in self.fields.items():
            arr[i] = transition[k]
        p = self.max_priority()
        self.priority[i] = p
        self.scale[i] = scale
        self.tree.update(i, p * scale)
        self.cursor = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        return i

    def sample(self, batch_size: int) -> SampledBatch:
        if batch_size < 1 or self.count < batch_size:
            raise ValueError(f"need {batch_size} transitions, have {self.count}")
        total = self.tree.total
        seg = total / batch_size
        mass = (np.arange(batch_size) + self.rng.random(batch_size)) * seg
        idx = self.tree.find(np.minimum(mass, np.nextafter(total, 0.0)))
        idx = np.minimum(idx, self.count - 1)
        probs = self.tree.leaves[idx] / total
        w = (self.count * probs) ** (-self.beta)
        w = w / w.max()
        batch = {k: arr[idx] for k, arr in self.fields.items()}
        return SampledBatch(batch, idx, w)

    def update_priorities(self, indices, td_errors) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.count):
            raise IndexError("priority update for an empty slot")
        p = (np.abs(np.asarray(td_errors, dtype=float)) + self.epsilon_priority) ** self.alpha
        self.priority[indices] = p
        self.tree.update(indices, p * self.scale[indices])

    def anneal_beta(self) -> float:
        self.beta = min(1.0, self.beta + self.beta_increment)
        return self.beta
