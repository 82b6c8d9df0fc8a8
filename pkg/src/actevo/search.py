"""Search drivers: exhaustive, random, generational (CAFE) and regularized evolution.

An evaluator is any callable ``evaluator(graph, seed) -> float``.  A
non-finite return value or an exception counts as a failed evaluation and
is replaced by the metric's floor fitness.  Every candidate draws its
evaluation seed from ``SeedSequence([base_seed, birth_index])`` so results
do not depend on evaluation order or on the number of workers.
"""

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyPopulation
from .genetics import cafe_crossover, cafe_mutate, mutate, parameterize
from .graph.construct import enumerate_s1, random_cafe_tree, random_initial_graph
from .graph.graph import parse
from .graph.operators import TABLES, get_table

FLOORS = {"accuracy": 0.0, "neg_loss": -1e6}


def floor_fitness(metric):
    try:
        return FLOORS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(FLOORS)}") from None


def softmax_fitness(scores):
    """Selection probabilities proportional to exp(score)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise EmptyPopulation("cannot select from an empty population")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    w = np.exp(s - s.max())
    return w / w.sum()


def candidate_seed(base_seed, birth_index, *extra):
    return int(np.random.SeedSequence([base_seed, birth_index, *extra]).generate_state(1)[0])


# ---------------------------------------------------------------- records
@dataclass
class Candidate:
    graph: object
    birth_index: int
    metric_kind: str = "accuracy"
    fitness: float = None
    seed: int = None
    status: str = "pending"
    origin: str = "random"
    parent: int = None
    generation: int = None
    eval_log: list = field(default_factory=list)

    @property
    def function(self):
        return self.graph.format()

    @property
    def evaluated(self):
        return self.fitness is not None

    def record(self, status=None, generation=None):
        return {
            "birth_index": self.birth_index,
            "function": self.function,
            "fitness": self.fitness,
            "seed": self.seed,
            "status": status or self.status,
            "origin": self.origin,
            "parent": self.parent,
            "generation": self.generation if generation is None else generation,
        }


class _Log(list):
    """Record list that also forwards each record to ``sink`` as it arrives."""

    def __init__(self, sink=None):
        super().__init__()
        self.sink = sink

    def append(self, record):
        super().append(record)
        if self.sink is not None:
            self.sink(record)

    def extend(self, records):
        for r in records:
            self.append(r)


@dataclass
class SearchReport:
    kind: str
    metric: str
    seed: int
    config: dict
    log: list = field(default_factory=list)  # one record per logged candidate line
    candidates: list = field(default_factory=list)  # unique candidates, birth order
    top: list = field(default_factory=list)
    generations: list = field(default_factory=list)  # birth indices per generation
    population: list = field(default_factory=list)  # final population birth indices
    evaluations: int = 0  # fitness evaluations charged to the budget
    invocations: int = 0  # evaluator calls actually made (cache hits excluded)

    def best_so_far(self):
        """Best fitness seen up to and including each generation."""
        by_birth = {c.birth_index: c for c in self.candidates}
        best = -math.inf
        out = []
        for members in self.generations:
            for b in members:
                best = max(best, by_birth[b].fitness)
            out.append(best)
        return out

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log)

    def summary(self):
        return {
            "kind": self.kind,
            "metric": self.metric,
            "seed": self.seed,
            "config": self.config,
            "evaluations": self.evaluations,
            "invocations": self.invocations,
            "logged": len(self.log),
            "top": [c.record() for c in self.top],
            "final_fitness": [c.fitness for c in self.top],
            "best_so_far": self.best_so_far() if self.generations else [],
            "population": list(self.population),
        }

    def write(self, run_dir):
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "candidates.jsonl"), "w") as fh:
            fh.write(self.to_jsonl())
        with open(os.path.join(run_dir, "summary.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ------------------------------------------------------------- evaluation
def _call(evaluator, graph, seed):
    try:
        value = float(evaluator(graph, seed))
    except Exception:  # noqa: BLE001 - any evaluator failure is a failed candidate
        return None
    return value if math.isfinite(value) else None


def _worker(evaluator, text, table_name, seed):
    return _call(evaluator, parse(text, table_name), seed)


class _Runner:
    """Evaluates candidates, applies the failure floor and keeps the books."""

    def __init__(self, evaluator, metric, workers=1, cache=None):
        self.evaluator = evaluator
        self.metric = metric
        self.floor = floor_fitness(metric)
        self.workers = max(1, int(workers or 1))
        self.cache = dict(cache or {})
        self.evaluations = 0
        self.invocations = 0

    def run(self, cands):
        todo = [c for c in cands if (c.function, c.seed) not in self.cache]
        if todo:
            named = all(c.graph.table.space.lower() in TABLES
                        and TABLES[c.graph.table.space.lower()] is c.graph.table for c in todo)
            if self.workers > 1 and len(todo) > 1 and named:
                with ProcessPoolExecutor(self.workers) as pool:
                    values = list(pool.map(_worker, [self.evaluator] * len(todo),
                                           [c.function for c in todo],
                                           [c.graph.table.space.lower() for c in todo],
                                           [c.seed for c in todo]))
            else:
                values = [_call(self.evaluator, c.graph, c.seed) for c in todo]
            self.invocations += len(todo)
            for c, v in zip(todo, values):
                self.cache[(c.function, c.seed)] = v
        for c in cands:
            raw = self.cache[(c.function, c.seed)]
            c.fitness = self.floor if raw is None else raw
            c.status = "failed" if raw is None else "ok"
            c.metric_kind = self.metric
            c.eval_log.append((c.seed, c.fitness))
        self.evaluations += len(cands)
        return cands


# statuses of log lines that carry a fresh search evaluation
EVALUATED = ("ok", "failed", "rejected")


def cache_from_log(records):
    """Evaluation cache ``{(function, seed): raw fitness or None}`` rebuilt
    from candidate log records, so an interrupted run can be resumed."""
    cache = {}
    for r in records:
        if r.get("status") in EVALUATED and r.get("seed") is not None:
            cache[(r["function"], r["seed"])] = None if r["status"] == "failed" else r["fitness"]
    return cache


def _base_seed(rng):
    if isinstance(rng, (int, np.integer)):
        return int(rng), np.random.default_rng(int(rng))
    if rng is None:
        rng = np.random.default_rng()
    return int(rng.integers(2**31)), rng


def _ranked(cands, k):
    """Top ``k`` distinct functions by fitness; ties go to the earlier birth."""
    seen = set()
    out = []
    for c in sorted(cands, key=lambda c: (-c.fitness, c.birth_index)):
        if c.function not in seen:
            seen.add(c.function)
            out.append(c)
        if len(out) == k:
            break
    return out


# ------------------------------------------------------------ CAFE search
@dataclass(frozen=True)
class CafeConfig:
    N: int = 50
    m: int = 10
    elites: int = 5
    generations: int = 10
    depth: int = 2

    def __post_init__(self):
        if self.children < 0 or min(self.N, self.generations) < 1:
            raise ValueError("need N >= elites + m and at least one generation")

    @property
    def children(self):
        return self.N - self.elites - self.m


def cafe_evolve(cfg, table, evaluator, rng=None, metric="accuracy", workers=1, cache=None,
                top_k=3, sink=None):
    """Generational search over balanced trees with softmax parent selection.

    Generation 0 is ``N`` random trees.  Every later generation keeps the
    top ``elites`` (with their stored fitness), adds ``m`` random trees and
    ``N - elites - m`` children, each the mutated crossover of two parents
    drawn with probability softmax(fitness).
    """
    table = get_table(table)
    seed, rng = _base_seed(rng)
    runner = _Runner(evaluator, metric, workers, cache)
    report = SearchReport("cafe", metric, seed, asdict(cfg), _Log(sink))
    births = 0

    def new(graph, origin, gen, parent=None):
        nonlocal births
        c = Candidate(graph, births, metric, seed=candidate_seed(seed, births), origin=origin,
                      parent=parent, generation=gen)
        births += 1
        return c

    population = [new(random_cafe_tree(table, cfg.depth, rng), "random", 0) for _ in range(cfg.N)]
    runner.run(population)
    report.log.extend(c.record() for c in population)
    report.candidates.extend(population)
    report.generations.append([c.birth_index for c in population])

    for gen in range(1, cfg.generations):
        elites = sorted(population, key=lambda c: (-c.fitness, c.birth_index))[:cfg.elites]
        fresh = [new(random_cafe_tree(table, cfg.depth, rng), "random", gen) for _ in range(cfg.m)]
        probs = softmax_fitness([c.fitness for c in population])
        draws = rng.choice(len(population), size=2 * cfg.children, replace=True, p=probs)
        kids = []
        for i in range(cfg.children):
            p1, p2 = population[draws[2 * i]], population[draws[2 * i + 1]]
            child = cafe_mutate(cafe_crossover(p1.graph, p2.graph, rng), table, rng)
            kids.append(new(child, "child", gen, parent=p1.birth_index))
        runner.run(fresh + kids)
        report.log.extend(c.record("elite", gen) for c in elites)
        report.log.extend(c.record() for c in fresh + kids)
        report.candidates.extend(fresh + kids)
        population = elites + fresh + kids
        report.generations.append([c.birth_index for c in population])

    report.population = [c.birth_index for c in population]
    report.top = _ranked(report.candidates, top_k)
    report.evaluations, report.invocations = runner.evaluations, runner.invocations
    return report


def exhaustive_search(evaluator, space="S1", table="cafe", rng=0, metric="accuracy", workers=1,
                      top_k=3, cache=None, sink=None, group=96):
    """Evaluate every member of S_1."""
    if space != "S1":
        raise ValueError("only S1 is small enough to enumerate")
    seed, _ = _base_seed(rng)
    runner = _Runner(evaluator, metric, workers, cache)
    report = SearchReport("exhaustive", metric, seed, {"space": space}, _Log(sink))
    cands = [Candidate(g, i, metric, seed=candidate_seed(seed, i), origin="exhaustive")
             for i, g in enumerate(enumerate_s1(table))]
    for i in range(0, len(cands), group):
        report.log.extend(c.record() for c in runner.run(cands[i:i + group]))
    report.candidates = cands
    report.top = _ranked(cands, top_k)
    report.evaluations, report.invocations = runner.evaluations, runner.invocations
    return report


def random_search(evaluator, budget=500, table="cafe", depth=2, rng=None, metric="accuracy",
                  group=50, sampler=None, workers=1, top_k=3, cache=None, sink=None):
    """``budget`` uniform samples, reported in groups of ``group``.

    ``sampler(rng) -> AfnGraph`` replaces the default S_depth sampler.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    table = get_table(table)
    seed, rng = _base_seed(rng)
    draw = sampler or (lambda r: random_cafe_tree(table, depth, r))
    runner = _Runner(evaluator, metric, workers, cache)
    report = SearchReport("random", metric, seed,
                          {"budget": budget, "depth": depth, "group": group}, _Log(sink))
    cands = [Candidate(draw(rng), i, metric, seed=candidate_seed(seed, i), origin="random",
                       generation=i // group) for i in range(budget)]
    for i in range(0, budget, group):
        report.log.extend(c.record() for c in runner.run(cands[i:i + group]))
    report.candidates = cands
    report.generations = [[c.birth_index for c in cands[i:i + group]]
                          for i in range(0, budget, group)]
    report.top = _ranked(cands, top_k)
    report.evaluations, report.invocations = runner.evaluations, runner.invocations
    return report


# --------------------------------------------------- regularized evolution
@dataclass(frozen=True)
class RegEvoConfig:
    P: int = 64
    S: int = 16
    C: int = 1000
    V: float = 0.20
    mode: str = "sync"
    batch: int = 1  # children generated per snapshot in async mode

    def __post_init__(self):
        if not 1 <= self.S <= self.P:
            raise ValueError("need 1 <= S <= P")
        if not 0.0 <= self.V <= 1.0:
            raise ValueError("V must lie in [0, 1]")
        if self.C < 1:
            raise ValueError("C must be positive")
        if self.mode not in ("sync", "async"):
            raise ValueError("mode must be 'sync' or 'async'")


def regularized_evolve(cfg, table, evaluator, rng=None, metric="accuracy", workers=1, cache=None,
                       top_k=10, granularity="per-channel", sink=None):
    """Steady-state evolution with tournament selection and oldest-out eviction.

    Children below the quality threshold ``V`` are discarded but still count
    toward the budget ``C``.  In async mode ``cfg.batch`` children are bred
    from one snapshot of the population before any of them is evaluated.
    """
    table = get_table(table)
    seed, rng = _base_seed(rng)
    runner = _Runner(evaluator, metric, workers, cache)
    report = SearchReport("regularized", metric, seed, asdict(cfg), _Log(sink))
    population = []  # oldest first
    births = 0

    def new(graph, origin, parent=None):
        nonlocal births
        c = Candidate(graph, births, metric, seed=candidate_seed(seed, births), origin=origin,
                      parent=parent)
        births += 1
        return c

    def settle(cands):
        for c in cands:
            if c.fitness < cfg.V:
                c.status = "rejected" if c.status == "ok" else c.status
            else:
                population.append(c)
                if len(population) > cfg.P:
                    population.pop(0)
            report.log.append(c.record())
            report.candidates.append(c)

    # initial population
    while len(population) < cfg.P and runner.evaluations < cfg.C:
        n = min(cfg.P - len(population), cfg.C - runner.evaluations)
        batch = [new(parameterize(random_initial_graph(table, rng), rng, granularity=granularity),
                     "random") for _ in range(n)]
        settle(runner.run(batch))

    while runner.evaluations < cfg.C:
        if not population:
            raise EmptyPopulation("no candidate passed the quality threshold")
        n = 1 if cfg.mode == "sync" else min(cfg.batch, cfg.C - runner.evaluations)
        snapshot = list(population)
        batch = []
        for _ in range(n):
            picks = rng.integers(len(snapshot), size=cfg.S)
            parent = max((snapshot[i] for i in picks), key=lambda c: c.fitness)
            child = parameterize(mutate(parent.graph, table, rng), rng, granularity=granularity)
            batch.append(new(child, "child", parent.birth_index))
        settle(runner.run(batch))

    report.population = [c.birth_index for c in population]
    report.top = _ranked(report.candidates, top_k)
    report.evaluations, report.invocations = runner.evaluations, runner.invocations
    return report


# ------------------------------------------------------------- reranking
def rerank(top, full_evaluator, rng=0, metric=None, runs=2, flag=3):
    """Average ``runs`` fresh evaluations per candidate and sort by the mean.

    Failed runs count as the floor fitness; candidates whose runs all failed
    go last.  Returns new Candidate objects with status ``top`` or ``rerank``.
    """
    if not top:
        raise EmptyPopulation("nothing to rerank")
    metric = metric or top[0].metric_kind
    floor = floor_fitness(metric)
    seed, _ = _base_seed(rng)
    scored = []
    for order, c in enumerate(top):
        values = []
        fails = 0
        log = list(c.eval_log)
        for r in range(runs):
            s = candidate_seed(seed, c.birth_index, r + 1)
            v = _call(full_evaluator, c.graph, s)
            if v is None:
                fails += 1
                v = floor
            values.append(v)
            log.append((s, v))
        adjusted = float(np.mean(values))
        new = Candidate(c.graph, c.birth_index, metric, adjusted, c.seed, "rerank", c.origin,
                        c.parent, c.generation, log)
        scored.append((fails == runs, -adjusted, order, new))
    scored.sort(key=lambda t: t[:3])
    out = [t[3] for t in scored]
    for c in out[:flag]:
        c.status = "top"
    return out
