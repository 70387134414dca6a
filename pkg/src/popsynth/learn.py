"""Parameter learning (weighted MLE, EM) and constrained hill-climb structure search."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .bayesnet import CPT, NetworkStructure, ParameterSet, StructureError, config_index
from .ingest import MISSING_CODE, PreparedDataset

log = logging.getLogger(__name__)


class LearnError(ValueError):
    pass


@dataclass(frozen=True)
class LearnConfig:
    smoothing_alpha: float = 1.0
    em_tolerance: float = 1e-6
    em_max_iters: int = 100
    em_enumeration_cap: int = 100_000
    hc_epsilon: float = 1e-9
    hc_max_iters: int = 10_000
    hc_max_indegree: Optional[int] = None
    hc_restarts: int = 0
    hc_perturbation: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.smoothing_alpha < 0:
            raise ValueError("smoothing_alpha must be >= 0")
        for name in ("em_tolerance", "hc_epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("em_max_iters", "em_enumeration_cap", "hc_max_iters"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hc_max_indegree is not None and self.hc_max_indegree < 0:
            raise ValueError("hc_max_indegree must be >= 0")
        if self.hc_restarts < 0 or self.hc_perturbation < 1:
            raise ValueError("hc_restarts must be >= 0 and hc_perturbation >= 1")


# -- counting --------------------------------------------------------------

def family_counts(data: np.ndarray, weights: np.ndarray, child_col: int,
                  parent_cols: Sequence[int], child_card: int,
                  parent_cards: Sequence[int]) -> np.ndarray:
    """Weighted (parent configuration x child state) count matrix."""
    q = int(np.prod(parent_cards)) if len(parent_cards) else 1
    cfg = config_index(data[:, list(parent_cols)], parent_cards) if len(parent_cols) else 0
    flat = cfg * child_card + data[:, child_col]
    return np.bincount(flat, weights=weights, minlength=q * child_card).reshape(q, child_card)


def normalize_counts(counts: np.ndarray, alpha: float) -> np.ndarray:
    """(count + alpha) / (row total + alpha * k); empty rows become uniform."""
    k = counts.shape[1]
    num = counts + alpha
    den = num.sum(axis=1, keepdims=True)
    out = np.full_like(num, 1.0 / k)
    nz = den[:, 0] > 0
    out[nz] = num[nz] / den[nz]
    return out


def _check_micro(structure: NetworkStructure, ds: PreparedDataset):
    if ds.kind != "micro":
        raise LearnError(f"{ds.source_id}: micro data required")
    if ds.n == 0:
        raise LearnError(f"{ds.source_id}: empty dataset")
    for n in structure.nodes:
        if n not in ds.columns:
            raise LearnError(f"node {n!r} absent from dataset {ds.source_id!r}")


def _layout(structure, ds):
    data = ds.select(structure.nodes).astype(np.int64)
    cards = {n: len(ds.states[n]) for n in structure.nodes}
    col = {n: i for i, n in enumerate(structure.nodes)}
    return data, cards, col


def fit_mle(structure: NetworkStructure, ds: PreparedDataset,
            config: LearnConfig = LearnConfig()) -> ParameterSet:
    """Weighted maximum-likelihood CPTs with additive smoothing."""
    _check_micro(structure, ds)
    data, cards, col = _layout(structure, ds)
    if (data == MISSING_CODE).any():
        raise LearnError(f"{ds.source_id}: data has missing cells; use fit_em")
    w = ds.effective_weights
    params = {}
    for n in structure.nodes:
        ps = structure.parents(n)
        counts = family_counts(data, w, col[n], [col[p] for p in ps], cards[n],
                               [cards[p] for p in ps])
        params[n] = CPT(n, ps, normalize_counts(counts, config.smoothing_alpha))
    return params


# -- EM --------------------------------------------------------------------

@dataclass
class EMResult:
    params: ParameterSet
    objective: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


class _EStep:
    """Expected family counts by exact enumeration of each record's missing cells."""

    BLOCK = 2_000_000  # max (records x completions) evaluated at once

    def __init__(self, structure: NetworkStructure, ds: PreparedDataset, cap: int):
        self.structure = structure
        self.data, self.cards, self.col = _layout(structure, ds)
        self.w = ds.effective_weights
        self.nodes = structure.nodes
        self.parents = {n: structure.parents(n) for n in self.nodes}
        mask = self.data == MISSING_CODE
        if mask.all(axis=1).any():
            raise LearnError(f"{ds.source_id}: a record is missing every variable")
        patterns, inverse = np.unique(mask, axis=0, return_inverse=True)
        self.groups = []
        for p_idx, pat in enumerate(patterns):
            rows = np.flatnonzero(inverse.ravel() == p_idx)
            miss = [self.nodes[j] for j in np.flatnonzero(pat)]
            size = int(np.prod([self.cards[m] for m in miss], dtype=object)) if miss else 1
            if size > cap:
                raise LearnError(
                    f"{ds.source_id}: {size} completions per record exceed the cap of {cap}"
                )
            self.groups.append((rows, miss, size))

    def _family(self, n):
        ps = self.parents[n]
        return [self.col[p] for p in ps], [self.cards[p] for p in ps]

    def __call__(self, params: ParameterSet):
        stats = {n: np.zeros_like(params[n].table) for n in self.nodes}
        loglik = 0.0
        with np.errstate(divide="ignore"):
            logt = {n: np.log(params[n].table) for n in self.nodes}
        for rows, miss, size in self.groups:
            if not miss:
                sub, w = self.data[rows], self.w[rows]
                for n in self.nodes:
                    pc, pk = self._family(n)
                    stats[n] += family_counts(sub, w, self.col[n], pc, self.cards[n], pk)
                    cfg = config_index(sub[:, pc], pk) if pc else np.zeros(len(sub), np.int64)
                    loglik += float(np.dot(w, logt[n][cfg, sub[:, self.col[n]]]))
                continue
            grid = np.indices([self.cards[m] for m in miss]).reshape(len(miss), -1).T
            step = max(1, self.BLOCK // size)
            for s in range(0, len(rows), step):
                r = rows[s:s + step]
                full = np.repeat(self.data[r][:, None, :], size, axis=1)  # (r, C, d)
                for j, m in enumerate(miss):
                    full[:, :, self.col[m]] = grid[None, :, j]
                flat = full.reshape(-1, full.shape[2])
                logp = np.zeros(flat.shape[0])
                cfgs = {}
                for n in self.nodes:
                    pc, pk = self._family(n)
                    cfg = config_index(flat[:, pc], pk) if pc else np.zeros(len(flat), np.int64)
                    cfgs[n] = cfg
                    logp += logt[n][cfg, flat[:, self.col[n]]]
                logp = logp.reshape(len(r), size)
                ll = logsumexp(logp, axis=1)
                if not np.isfinite(ll).all():
                    raise LearnError("a record has zero probability under the current parameters")
                loglik += float(np.dot(self.w[r], ll))
                post = (np.exp(logp - ll[:, None]) * self.w[r][:, None]).ravel()
                for n in self.nodes:
                    k = self.cards[n]
                    idx = cfgs[n] * k + flat[:, self.col[n]]
                    stats[n] += np.bincount(idx, weights=post, minlength=stats[n].size).reshape(
                        stats[n].shape)
        return stats, loglik


def _log_prior(params: ParameterSet, alpha: float) -> float:
    if alpha == 0:
        return 0.0
    return alpha * sum(float(np.log(c.table).sum()) for c in params.values())


def run_em(structure: NetworkStructure, ds: PreparedDataset,
           config: LearnConfig = LearnConfig(), init: Optional[ParameterSet] = None) -> EMResult:
    """EM for CPTs under missing-at-random cells.

    The monotone quantity is the observed-data log-likelihood plus
    ``alpha * sum(log theta)`` (the log Dirichlet prior whose MAP is the
    smoothed M-step); with ``alpha = 0`` it is the plain log-likelihood.
    ``objective[t]`` is evaluated at the parameters after ``t`` M-steps.
    """
    _check_micro(structure, ds)
    estep = _EStep(structure, ds, config.em_enumeration_cap)
    alpha = config.smoothing_alpha
    params = init if init is not None else _available_case_init(structure, estep, max(alpha, 1.0))
    res = EMResult(params)
    stats, ll = estep(params)
    res.loglik.append(ll)
    res.objective.append(ll + _log_prior(params, alpha))
    for _ in range(int(config.em_max_iters)):
        params = {n: CPT(n, structure.parents(n), normalize_counts(stats[n], alpha))
                  for n in structure.nodes}
        res.n_iter += 1
        stats, ll = estep(params)
        res.loglik.append(ll)
        res.objective.append(ll + _log_prior(params, alpha))
        if res.objective[-1] - res.objective[-2] < config.em_tolerance:
            res.converged = True
            break
    res.params = params
    log.debug("EM on %s: %d iterations, objective %.6f", ds.source_id, res.n_iter,
              res.objective[-1])
    return res


def _available_case_init(structure, estep: _EStep, alpha: float) -> ParameterSet:
    params = {}
    for n in structure.nodes:
        pc, pk = estep._family(n)
        fam = pc + [estep.col[n]]
        ok = (estep.data[:, fam] != MISSING_CODE).all(axis=1)
        counts = family_counts(estep.data[ok], estep.w[ok], estep.col[n], pc, estep.cards[n], pk)
        params[n] = CPT(n, structure.parents(n), normalize_counts(counts, alpha))
    return params


def fit_em(structure: NetworkStructure, ds: PreparedDataset,
           config: LearnConfig = LearnConfig()) -> ParameterSet:
    return run_em(structure, ds, config).params


def fit_parameters(structure: NetworkStructure, ds: PreparedDataset,
                   config: LearnConfig = LearnConfig()) -> tuple[ParameterSet, str]:
    """MLE on complete data, EM otherwise; returns the params and the method used."""
    sub = ds.select(structure.nodes)
    if (sub == MISSING_CODE).any():
        return fit_em(structure, ds, config), "em"
    return fit_mle(structure, ds, config), "mle"


# -- BIC -------------------------------------------------------------------

class BICScorer:
    """Decomposable BIC over a complete micro dataset, with a family-score cache."""

    def __init__(self, ds: PreparedDataset, nodes: Optional[Sequence[str]] = None):
        if ds.kind != "micro" or ds.n == 0:
            raise LearnError(f"{ds.source_id}: BIC needs a non-empty micro dataset")
        self.nodes = tuple(nodes or ds.columns)
        for n in self.nodes:
            if n not in ds.columns:
                raise LearnError(f"node {n!r} absent from dataset {ds.source_id!r}")
        self.data = ds.select(self.nodes).astype(np.int64)
        if (self.data == MISSING_CODE).any():
            raise LearnError(f"{ds.source_id}: BIC needs complete data")
        self.w = ds.effective_weights
        self.n_eff = float(self.w.sum())
        if self.n_eff <= 0:
            raise LearnError("empty dataset")
        self.col = {n: i for i, n in enumerate(self.nodes)}
        self.cards = {n: len(ds.states[n]) for n in self.nodes}
        self._cache: dict = {}

    def n_free(self, node: str, parents: Iterable[str]) -> int:
        q = int(np.prod([self.cards[p] for p in parents])) if parents else 1
        return q * (self.cards[node] - 1)

    def family(self, node: str, parents: Iterable[str]) -> float:
        parents = tuple(sorted(parents, key=self.col.__getitem__))
        key = (node, parents)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        counts = family_counts(self.data, self.w, self.col[node], [self.col[p] for p in parents],
                               self.cards[node], [self.cards[p] for p in parents])
        rows = counts.sum(axis=1, keepdims=True)
        nz = counts > 0
        ll = float((counts[nz] * np.log((counts / np.where(rows > 0, rows, 1))[nz])).sum())
        score = ll - 0.5 * np.log(self.n_eff) * self.n_free(node, parents)
        self._cache[key] = score
        return score

    def score(self, structure: NetworkStructure) -> float:
        return sum(self.family(n, structure.parents(n)) for n in structure.nodes)


def bic_score(structure: NetworkStructure, ds: PreparedDataset) -> float:
    """Sum over families of max log-likelihood minus (ln N_eff / 2) x free parameters."""
    return BICScorer(ds, structure.nodes).score(structure)


# -- hill climbing ---------------------------------------------------------

_ADD, _DELETE, _REVERSE = 0, 1, 2


def _legal_moves(s: NetworkStructure, max_indegree: Optional[int]):
    nodes = sorted(s.nodes)
    for u in nodes:
        for v in nodes:
            if u == v:
                continue
            if s.has_edge(u, v):
                if (u, v) in s.required:
                    continue
                yield _DELETE, u, v
                if (v, u) in s.forbidden:
                    continue
                if max_indegree is not None and len(s.parents(u)) >= max_indegree:
                    continue
                s._parents[v].discard(u)
                s._children[u].discard(v)
                ok = not s.has_path(u, v)
                s._parents[v].add(u)
                s._children[u].add(v)
                if ok:
                    yield _REVERSE, u, v
            elif not s.has_edge(v, u):
                if max_indegree is not None and len(s.parents(v)) >= max_indegree:
                    continue
                if (u, v) not in s.forbidden and not s.has_path(v, u):
                    yield _ADD, u, v


def _gain(scorer: BICScorer, s: NetworkStructure, kind: int, u: str, v: str) -> float:
    pv = set(s.parents(v))
    if kind == _ADD:
        return scorer.family(v, pv | {u}) - scorer.family(v, pv)
    if kind == _DELETE:
        return scorer.family(v, pv - {u}) - scorer.family(v, pv)
    pu = set(s.parents(u))
    return (scorer.family(v, pv - {u}) - scorer.family(v, pv)
            + scorer.family(u, pu | {v}) - scorer.family(u, pu))


def _apply(s: NetworkStructure, kind: int, u: str, v: str):
    if kind == _ADD:
        s.add_edge(u, v)
    elif kind == _DELETE:
        s.remove_edge(u, v)
    else:
        s.reverse_edge(u, v)


def _climb(scorer: BICScorer, s: NetworkStructure, config: LearnConfig) -> int:
    for it in range(int(config.hc_max_iters)):
        best = None
        for kind, u, v in _legal_moves(s, config.hc_max_indegree):
            g = _gain(scorer, s, kind, u, v)
            # moves arrive ordered by (source, target) within each kind; keep the
            # first of equal gains, then prefer the lower kind rank
            if best is None or g > best[0] or (g == best[0] and (kind, u, v) < best[1:]):
                best = (g, kind, u, v)
        if best is None or best[0] <= config.hc_epsilon:
            return it
        _apply(s, *best[1:])
    return int(config.hc_max_iters)


def hill_climb(ds: PreparedDataset, nodes: Optional[Sequence[str]] = None,
               required: Iterable = (), forbidden: Iterable = (),
               config: LearnConfig = LearnConfig()) -> NetworkStructure:
    """Greedy BIC search over add/delete/reverse moves under edge constraints.

    Starts from exactly the required edges; a move is legal iff it keeps
    the graph acyclic, never removes or reverses a required edge and never
    introduces a forbidden one.
    """
    nodes = tuple(nodes or ds.columns)
    required = {tuple(e) for e in required}
    forbidden = {tuple(e) for e in forbidden}
    if required & forbidden:
        raise StructureError(f"edges both required and forbidden: {sorted(required & forbidden)}")
    scorer = BICScorer(ds, nodes)
    s = NetworkStructure(nodes, required, required, forbidden)
    _climb(scorer, s, config)
    best, best_score = s, scorer.score(s)
    if config.hc_restarts:
        rng = np.random.default_rng(config.seed)
        for _ in range(config.hc_restarts):
            cand = best.copy()
            for _ in range(config.hc_perturbation):
                moves = list(_legal_moves(cand, config.hc_max_indegree))
                if not moves:
                    break
                _apply(cand, *moves[int(rng.integers(len(moves)))])
            _climb(scorer, cand, config)
            sc = scorer.score(cand)
            if sc > best_score + config.hc_epsilon:
                best, best_score = cand, sc
    log.debug("hill climb on %s: %d edges, BIC %.3f", ds.source_id, len(best.edges), best_score)
    return best
