"""Key rates between every pair of users in a star network.

All users connect to one untrusted relay, so a session between two users is
an MDI-QKD link whose channel lengths are their distances to the relay.
Sessions are independent of each other and are optimised separately.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .channel_model import ChannelPair, DeviceParams
from .decoy_analysis import SEVEN
from .key_rate import Analysis
from .optimizer import OptimizationReport, optimize

SYMMETRIC_ADD_FIBRE = "symmetric_add_fibre"
SYMMETRIC_DIRECT = "symmetric_direct"
ASYMMETRIC_FREE = "asymmetric_free"
STRATEGIES = (SYMMETRIC_ADD_FIBRE, SYMMETRIC_DIRECT, ASYMMETRIC_FREE)


@dataclass(frozen=True)
class StarNetwork:
    """Users as ``(id, distance_km)`` pairs around one relay."""

    nodes: Tuple[Tuple[str, float], ...]
    N: Optional[float] = None
    dev: DeviceParams = field(default_factory=DeviceParams)

    def __post_init__(self):
        nodes = tuple((str(i), float(d)) for i, d in self.nodes)
        ids = [i for i, _ in nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        if any(d < 0 or not np.isfinite(d) for _, d in nodes):
            raise ValueError("node distances must be finite and non-negative")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def from_csv(cls, path, N: Optional[float] = None, dev: Optional[DeviceParams] = None) -> "StarNetwork":
        """Read a ``id,distance_km`` file (header row required)."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "distance_km"]:
                raise ValueError(f"{path}: expected header 'id,distance_km'")
            nodes = [(row["id"].strip(), float(row["distance_km"])) for row in reader]
        return cls(tuple(nodes), N, dev or DeviceParams())

    @property
    def ids(self) -> List[str]:
        return [i for i, _ in self.nodes]

    def distance(self, node_id: str) -> float:
        return dict(self.nodes)[node_id]

    @property
    def longest(self) -> float:
        return max(d for _, d in self.nodes)

    def analysis(self) -> Analysis:
        return Analysis.asymptotic() if self.N is None else Analysis.finite(self.N)

    def with_node(self, node_id: str, distance_km: float) -> "StarNetwork":
        return StarNetwork(self.nodes + ((node_id, distance_km),), self.N, self.dev)

    def without_node(self, node_id: str) -> "StarNetwork":
        return StarNetwork(tuple(n for n in self.nodes if n[0] != node_id), self.N, self.dev)


@dataclass
class RateMatrix:
    """Optimised session per unordered pair of users, for one strategy."""

    strategy: str
    ids: List[str]
    reports: Dict[Tuple[str, str], OptimizationReport]

    def _key(self, a: str, b: str) -> Tuple[str, str]:
        if a == b:
            raise KeyError("a node has no session with itself")
        ia, ib = self.ids.index(a), self.ids.index(b)
        return (a, b) if ia < ib else (b, a)

    def report(self, a: str, b: str) -> OptimizationReport:
        return self.reports[self._key(a, b)]

    def rate(self, a: str, b: str) -> float:
        return self.report(a, b).rate

    def matrix(self) -> np.ndarray:
        """Dense symmetric rate matrix with NaN on the diagonal."""
        n = len(self.ids)
        out = np.full((n, n), np.nan)
        for (a, b), rep in self.reports.items():
            i, j = self.ids.index(a), self.ids.index(b)
            out[i, j] = out[j, i] = rep.rate
        return out

    def pairs(self) -> Iterable[Tuple[str, str, OptimizationReport]]:
        for a, b in combinations(self.ids, 2):
            yield a, b, self.report(a, b)


def session_channel(network: StarNetwork, a: str, b: str, strategy: str) -> ChannelPair:
    """Channel seen by the session ``a``-``b``; added fibre keeps the same loss
    coefficient and pads both arms to the network's longest link."""
    alpha = network.dev.fibre_loss_alpha
    if strategy == SYMMETRIC_ADD_FIBRE:
        L = network.longest
        return ChannelPair(L, L, alpha)
    return ChannelPair(network.distance(a), network.distance(b), alpha)


def plan(network: StarNetwork, strategy: str = ASYMMETRIC_FREE, threads: Optional[int] = None,
         variant: str = SEVEN, seed: int = 0) -> RateMatrix:
    """Optimise every pairwise session under ``strategy``.

    The symmetric strategies constrain both users to the same parameters.
    Sessions run concurrently on a thread pool and are collected in pair
    order, so the result does not depend on completion order.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if len(network.nodes) < 2:
        raise ValueError("a network needs at least two nodes")
    symmetric = strategy != ASYMMETRIC_FREE
    analysis = network.analysis()
    pairs = list(combinations(network.ids, 2))

    def run(pair):
        ch = session_channel(network, *pair, strategy)
        return optimize(ch, network.dev, analysis, variant, symmetric_constraint=symmetric, seed=seed)

    workers = threads or os.cpu_count() or 1
    if workers == 1:
        results = [run(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, pairs))
    return RateMatrix(strategy, network.ids, dict(zip(pairs, results)))
