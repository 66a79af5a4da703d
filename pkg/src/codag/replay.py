"""Capacity-bounded replay buffer with greedy herding selection.

Capacity splits evenly across seen domains (remainder to the earliest), and
within a domain as evenly as possible across classes. Per class, samples are
kept in herding order over the current DG features; shrinking a quota later
only truncates that stored order, never re-selects.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .generalize import PseudoLabeledDataset
from .nnmodel import ClassifierParams, features

LABEL_TRUE = "true"
LABEL_PSEUDO = "pseudo"


def herding_select(feature_vectors, m: int) -> np.ndarray:
    """Greedy pick order keeping the running mean close to the full mean.

    Step j adds the unchosen index minimizing ||mean(all) - mean(chosen+{j})||;
    ties resolve to the lowest index. Returns indices in pick order.
    """
    feats = np.asarray(feature_vectors, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    n = feats.shape[0]
    if m > n:
        raise ValueError(f"cannot select {m} of {n} items")
    mu = feats.mean(axis=0)
    unchosen = list(range(n))
    running = np.zeros(feats.shape[1])
    order: list[int] = []
    for step in range(1, m + 1):
        cand = (running[None, :] + feats[unchosen]) / step
        dists = np.linalg.norm(mu[None, :] - cand, axis=1)
        j = int(np.argmin(dists))  # first minimum = lowest index (unchosen is sorted)
        idx = unchosen.pop(j)
        order.append(idx)
        running += feats[idx]
    return np.asarray(order, dtype=np.int64)


@dataclass
class _DomainStore:
    domain_id: int
    label_kind: str
    per_class: dict[int, np.ndarray] = field(default_factory=dict)  # herding-ordered rows

    def n_entries(self) -> int:
        return sum(rows.shape[0] for rows in self.per_class.values())


class ReplayBuffer:
    """Selected exemplars from completed domains, rebalanced every stage."""

    def __init__(self, capacity: int, k: int):
        if capacity < 0:
            raise ValueError("capacity must be nonnegative")
        if k <= 0:
            raise ValueError("class count must be positive")
        self.capacity = capacity
        self.k = k
        self._domains: list[_DomainStore] = []  # insertion order = domain age

    @property
    def n_entries(self) -> int:
        return sum(store.n_entries() for store in self._domains)

    @property
    def n_domains(self) -> int:
        return len(self._domains)

    def as_arrays(self):
        """(x, labels, domain_ids, is_pseudo) in (age, class, pick) order."""
        xs, ys, ds, ps = [], [], [], []
        for store in self._domains:
            for cls in sorted(store.per_class):
                rows = store.per_class[cls]
                if rows.shape[0] == 0:
                    continue
                xs.append(rows)
                ys.append(np.full(rows.shape[0], cls, dtype=np.int64))
                ds.append(np.full(rows.shape[0], store.domain_id, dtype=np.int64))
                ps.append(np.full(rows.shape[0], store.label_kind == LABEL_PSEUDO))
        if not xs:
            d = 0
            return (np.empty((0, d)), np.empty(0, dtype=np.int64),
                    np.empty(0, dtype=np.int64), np.empty(0, dtype=bool))
        return (np.concatenate(xs), np.concatenate(ys),
                np.concatenate(ds), np.concatenate(ps))

    def class_rows(self, domain_id: int, cls: int) -> np.ndarray:
        for store in self._domains:
            if store.domain_id == domain_id:
                return store.per_class.get(cls, np.empty((0, 0)))
        raise KeyError(f"domain {domain_id} not in buffer")

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "k": self.k,
            "domains": [
                {
                    "domain_id": store.domain_id,
                    "label_kind": store.label_kind,
                    "classes": {str(c): rows.tolist() for c, rows in store.per_class.items()},
                }
                for store in self._domains
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ReplayBuffer":
        buf = cls(raw["capacity"], raw["k"])
        for dom in raw["domains"]:
            store = _DomainStore(dom["domain_id"], dom["label_kind"])
            for c, rows in dom["classes"].items():
                store.per_class[int(c)] = np.asarray(rows, dtype=np.float64)
            buf._domains.append(store)
        return buf


def _class_quotas(domain_quota: int, k: int) -> list[int]:
    base, rem = divmod(domain_quota, k)
    return [base + (c < rem) for c in range(k)]


def update_buffer(buffer: ReplayBuffer, new_domain, dg_params: ClassifierParams) -> ReplayBuffer:
    """Rebalanced buffer after a completed stage.

    Existing domains are trimmed by truncating their stored herding orders;
    the new domain's exemplars are herded per class over the current DG
    features. Source datasets store true labels, pseudo-labeled datasets
    store their pseudo-labels.
    """
    if isinstance(new_domain, PseudoLabeledDataset):
        x, labels = new_domain.x, new_domain.pseudo_labels
        domain_id, label_kind = new_domain.source_domain_id, LABEL_PSEUDO
    elif isinstance(new_domain, Dataset):
        x, labels = new_domain.x, new_domain.labels
        domain_id, label_kind = new_domain.domain_id, LABEL_TRUE
    else:
        raise TypeError(f"cannot buffer a {type(new_domain).__name__}")
    if new_domain.k != buffer.k:
        raise ValueError(f"class count mismatch: buffer {buffer.k}, domain {new_domain.k}")

    out = ReplayBuffer(buffer.capacity, buffer.k)
    n_domains = buffer.n_domains + 1
    base, rem = divmod(buffer.capacity, n_domains)
    quotas = [base + (i < rem) for i in range(n_domains)]

    for age, store in enumerate(buffer._domains):
        class_quotas = _class_quotas(quotas[age], buffer.k)
        trimmed = _DomainStore(store.domain_id, store.label_kind)
        for cls, rows in store.per_class.items():
            keep = min(class_quotas[cls], rows.shape[0])
            trimmed.per_class[cls] = rows[:keep].copy()
        out._domains.append(trimmed)

    class_quotas = _class_quotas(quotas[-1], buffer.k)
    fresh = _DomainStore(domain_id, label_kind)
    for cls in range(buffer.k):
        idx = np.where(labels == cls)[0]
        take = min(class_quotas[cls], idx.size)
        if take == 0:
            fresh.per_class[cls] = np.empty((0, x.shape[1]))
            continue
        order = herding_select(features(dg_params, x[idx]), take)
        fresh.per_class[cls] = x[idx[order]].copy()
    out._domains.append(fresh)
    return out
