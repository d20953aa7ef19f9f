"""Two-loop discovery orchestration.

The differential loop searches for the state equations and, through the
stagnation-triggered variable-extension mechanism, decides which algebraic
and input signals belong in the model; the algebraic loop then expresses the
algebraic variables the best differential system actually uses as explicit
functions of states and inputs, reusing the same generate / filter / fit /
archive pipeline with algebraic prompts.

Progress is tracked by the running best score across all islands.  Before
each iteration the trigger is checked: if the last ``window`` gains are all
at most ``epsilon`` while the best score still sits at or below ``-gamma``,
requirements mined from the top candidates extend the variable library and
reveal the matching dataset columns; once the best score stays above
``-gamma`` for ``window`` consecutive iterations the loop terminates.

Runs are deterministic given the configuration seed and a scripted mock
generator: sampling uses one engine-owned generator and every candidate fit
receives a derived seed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .archive import Archive, make_linear_seed
from .benchmarks import BenchmarkModel, get_model
from .config import RunConfig
from .dataset import TrajectoryDataset, deriv_name
from .dsl import ParseError, SymbolScope, parse, variables_in
from .fitting import ScoredSkeleton, derived_fit_config, fit_and_score
from .gateway import (
    BackendUnavailable,
    GenerationRequest,
    GeneratorBackend,
    ae_contract,
    build_prompt,
    de_contract,
    generate,
)

logger = logging.getLogger(__name__)


class GenerationExhausted(RuntimeError):
    """The generator never produced a completion across a nonzero budget."""


class BudgetExceeded(RuntimeError):
    """Wall-clock guard tripped (config max_seconds)."""


class NoAlgebraicTargets(RuntimeError):
    """Best differential system references no algebraic variables."""


class CatalogExhausted(RuntimeError):
    """Extension wanted a fallback variable but the catalog has none left."""


class Decision(Enum):
    CONTINUE = "continue"
    EXTEND = "extend"
    TERMINATE = "terminate"


@dataclass(frozen=True)
class LibraryEntry:
    name: str
    unit: str
    description: str
    kind: str  # "algebraic" | "input"


@dataclass
class VariableLibrary:
    """The evolving set of admitted algebraic/input variables for one loop."""

    kind: str  # "de" | "ae"
    entries: list[LibraryEntry] = field(default_factory=list)

    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    def __contains__(self, name: str) -> bool:
        return any(e.name == name for e in self.entries)

    def add(self, entry: LibraryEntry) -> None:
        if entry.name in self:
            raise ValueError(f"{entry.name} already admitted")
        self.entries.append(entry)

    def kind_of(self, name: str) -> str | None:
        for e in self.entries:
            if e.name == name:
                return e.kind
        return None


def check_trigger(history: Sequence[float], window: int, epsilon: float,
                  gamma: float) -> Decision:
    """Stagnation/termination rule over the recorded best-score sequence.

    Termination needs the last ``window`` recorded scores above ``-gamma``;
    extension needs the last ``window`` increments at or below ``epsilon``
    with the current best still at or below ``-gamma``.  With too short a
    history the loop just continues.
    """
    n = len(history)
    if n >= window and all(s > -gamma for s in history[-window:]):
        return Decision.TERMINATE
    if n >= window + 1 and history[-1] <= -gamma:
        gains = [history[i] - history[i - 1] for i in range(n - window, n)]
        if all(g <= epsilon for g in gains):
            return Decision.EXTEND
    return Decision.CONTINUE


@dataclass
class LoopState:
    kind: str
    history: list[float]
    window: int = 3
    epsilon: float = 0.01
    gamma: float = 0.01
    library: VariableLibrary | None = None
    archive: Archive | None = None

    @property
    def iteration(self) -> int:
        return len(self.history) - 1

    def check(self) -> Decision:
        return check_trigger(self.history, self.window, self.epsilon, self.gamma)


def extend_variables(archive: Archive, library: VariableLibrary,
                     dataset: TrajectoryDataset, model: BenchmarkModel,
                     top_k: int, excluded: Sequence[str] = ()) -> tuple[list[str], list[str]]:
    """Admit requested catalog signals; returns (added names, ignored names).

    Requirements come from the best ``top_k`` cluster members.  Names match
    the catalog exactly first, then case-insensitively against names and
    aliases.  If nothing new matches, the first unused catalog variable is
    admitted instead so the loop always makes progress; with no catalog
    variables left CatalogExhausted is raised.
    """
    excluded_set = set(excluded) | set(dataset.state_names)
    requested: list[str] = []
    for cand in archive.top(top_k):
        for req in cand.requirements:
            if req.name not in requested:
                requested.append(req.name)
    added: list[str] = []
    ignored: list[str] = []
    for name in requested:
        entry = model.catalog_entry(name)
        if entry is None:
            ignored.append(name)
            logger.info("requirement %r not in the signal catalog; ignored", name)
            continue
        if entry.name in library or entry.name in excluded_set:
            continue
        library.add(LibraryEntry(entry.name, entry.unit, entry.description, entry.kind))
        dataset.reveal([entry.name])
        added.append(entry.name)
    if not added:
        for entry in model.catalog:
            if entry.name in library or entry.name in excluded_set:
                continue
            library.add(LibraryEntry(entry.name, entry.unit, entry.description, entry.kind))
            dataset.reveal([entry.name])
            added.append(entry.name)
            break
        else:
            raise CatalogExhausted("no catalog variables left to admit")
    return added, ignored


def derive_ae_targets(de_best: ScoredSkeleton, library: VariableLibrary) -> tuple[str, ...]:
    """Algebraic variables the best differential system references, in library
    order; declared exogenous inputs are excluded from discovery."""
    referenced = variables_in(de_best.skeleton)
    return tuple(e.name for e in library.entries
                 if e.kind == "algebraic" and e.name in referenced)


@dataclass
class LoopResult:
    kind: str
    best: ScoredSkeleton
    library: VariableLibrary
    archive: Archive
    scope: SymbolScope
    target_names: tuple[str, ...]
    history: list[float]
    terminated: bool


class DiscoveryEngine:
    """Runs the differential loop then the algebraic loop over one dataset.

    Estimator-style surface: configure once, call ``fit()``, read the fitted
    attributes (``de_result_``, ``ae_result_``, ``library_``, ``run_log_``).
    """

    def __init__(self, dataset: TrajectoryDataset, backend: GeneratorBackend,
                 config: RunConfig | None = None):
        self.dataset = dataset
        self.backend = backend
        self.config = config or RunConfig()
        self.model: BenchmarkModel = get_model(dataset.metadata["model"])
        self.run_log_: list[dict] = []
        self._rng = np.random.default_rng(
            np.random.SeedSequence([self.config.seed & 0x7FFFFFFF, 101]))
        self._start_time: float | None = None

    # estimator-style introspection
    def get_params(self, deep: bool = True) -> dict:
        return self.config.to_dict()

    def set_params(self, **params) -> "DiscoveryEngine":
        data = self.config.to_dict()
        data.update(params)
        self.config = RunConfig.from_dict(data)
        return self

    # ------------------------------------------------------------------ loops

    def fit(self) -> "DiscoveryEngine":
        """Run both loops; algebraic loop is skipped with a report when the
        best differential system references no algebraic variables."""
        self._start_time = time.monotonic()
        de = self.run_de_loop()
        self.de_result_ = de
        self.library_ = de.library
        try:
            self.ae_result_ = self.run_ae_loop(de)
            self.ae_skip_reason_ = None
        except NoAlgebraicTargets as exc:
            self.ae_result_ = None
            self.ae_skip_reason_ = str(exc)
            self.run_log_.append({"loop": "ae", "event": "skipped", "reason": str(exc)})
            logger.info("algebraic loop skipped: %s", exc)
        return self

    def run_de_loop(self) -> LoopResult:
        if self._start_time is None:
            self._start_time = time.monotonic()
        library = VariableLibrary(kind="de")
        targets = tuple(self.dataset.state_names)
        labels = [deriv_name(s) for s in targets]
        return self._run_loop(
            kind="de", loop_index=0, targets=targets, labels=labels, library=library,
            max_iterations=self.config.de_max_iterations,
            excluded_targets=())

    def run_ae_loop(self, de: LoopResult) -> LoopResult:
        targets = derive_ae_targets(de.best, de.library)
        if not targets:
            raise NoAlgebraicTargets(
                "best differential system references no algebraic variables "
                f"(referenced: {sorted(variables_in(de.best.skeleton)) or 'states only'})")
        library = VariableLibrary(
            kind="ae", entries=[e for e in de.library.entries if e.name not in targets])
        return self._run_loop(
            kind="ae", loop_index=1, targets=targets, labels=list(targets),
            library=library, max_iterations=self.config.ae_max_iterations,
            excluded_targets=targets)

    # ---------------------------------------------------------------- shared

    def _scope(self, library: VariableLibrary) -> SymbolScope:
        return SymbolScope(states=tuple(self.dataset.state_names),
                           variables=library.names())

    def _contract(self, kind: str, library: VariableLibrary):
        builder = de_contract if kind == "de" else ae_contract
        return builder(tuple(self.dataset.state_names), tuple(library.entries))

    def _check_wallclock(self) -> None:
        limit = self.config.max_seconds
        if limit is not None and time.monotonic() - self._start_time > limit:
            raise BudgetExceeded(f"run exceeded {limit} s")

    def _log(self, **record) -> None:
        self.run_log_.append(record)
        logger.debug("run log: %s", record)

    def _run_loop(self, kind: str, loop_index: int, targets, labels, library,
                  max_iterations: int, excluded_targets) -> LoopResult:
        cfg = self.config
        scope = self._scope(library)
        batch = self.dataset.to_batch()
        seed_skeleton = make_linear_seed(scope, targets, kind)
        seed_scored = fit_and_score(
            seed_skeleton, batch, labels,
            derived_fit_config(cfg.fit, loop_index, 0, 0))
        archive = Archive.seeded(cfg.islands, seed_scored)
        state = LoopState(kind=kind, history=[archive.best_score()],
                          window=cfg.window, epsilon=cfg.epsilon, gamma=cfg.gamma,
                          library=library, archive=archive)
        history = state.history
        self._log(loop=kind, iteration=0, event="seed",
                  best_score=history[0], best_skeleton=seed_scored.canonical,
                  added_variables=[], library=list(library.names()))
        generated_any = False
        terminated = False
        for t in range(1, max_iterations + 1):
            self._check_wallclock()
            decision = state.check()
            if decision is Decision.TERMINATE:
                terminated = True
                self._log(loop=kind, iteration=t - 1, event="terminate",
                          best_score=history[-1],
                          best_skeleton=archive.best().canonical)
                break
            added: list[str] = []
            ignored: list[str] = []
            if decision is Decision.EXTEND:
                try:
                    added, ignored = extend_variables(
                        archive, library, self.dataset, self.model,
                        cfg.top_k, excluded=excluded_targets)
                    scope = self._scope(library)
                    batch = self.dataset.to_batch()
                except CatalogExhausted as exc:
                    self._log(loop=kind, iteration=t, event="catalog_exhausted",
                              reason=str(exc))
                    logger.info("%s loop: %s", kind, exc)
            island_id, examples = archive.sample_examples(cfg.sampler, self._rng)
            prompt = build_prompt(self._contract(kind, library), examples, targets)
            request = GenerationRequest(
                prompt=prompt, n_b=cfg.n_b, temperature=cfg.temperature,
                timeout=cfg.generator.timeout, max_tokens=cfg.generator.max_tokens)
            try:
                completions = generate(request, self.backend)
                generated_any = True
            except BackendUnavailable as exc:
                completions = []
                logger.info("%s loop iteration %d: generator unavailable (%s)",
                            kind, t, exc)
            rejected = 0
            for j, completion in enumerate(completions):
                try:
                    skeleton = parse(completion.skeleton_text, scope, targets, kind)
                except ParseError as exc:
                    rejected += 1
                    logger.debug("candidate rejected: %s", exc)
                    continue
                scored = fit_and_score(
                    skeleton, batch, labels,
                    derived_fit_config(cfg.fit, loop_index, t, j),
                    requirements=completion.requirements)
                archive.register(island_id, scored)
            history.append(max(history[-1], archive.best_score()))
            self._log(loop=kind, iteration=t, event="iteration",
                      best_score=history[-1], island=island_id,
                      candidates=len(completions), rejected=rejected,
                      added_variables=added, ignored_requirements=ignored,
                      best_skeleton=archive.best().canonical,
                      library=list(library.names()))
        if max_iterations > 0 and not generated_any and not terminated:
            raise GenerationExhausted(
                f"{kind} loop: generator produced nothing in {max_iterations} iterations")
        return LoopResult(kind=kind, best=archive.best(), library=library,
                          archive=archive, scope=scope, target_names=tuple(targets),
                          history=history, terminated=terminated)

    # ---------------------------------------------------------------- output

    def result_dict(self) -> dict:
        """Final model document (written by the CLI next to the run log)."""
        if not hasattr(self, "de_result_"):
            raise RuntimeError("call fit() first")
        de = self.de_result_

        def dump(result: LoopResult) -> dict:
            return {
                "targets": list(result.target_names),
                "text": result.best.canonical,
                "params": [float(v) for v in result.best.params],
                "score": float(result.best.score),
                "terminated": result.terminated,
                "iterations": len(result.history) - 1,
            }

        ae: dict
        if self.ae_result_ is not None:
            ae = dump(self.ae_result_)
        else:
            ae = {"skipped": self.ae_skip_reason_}
        return {
            "format": "daedisc-model",
            "version": 1,
            "benchmark": self.model.model_id,
            "de": dump(de),
            "ae": ae,
            "library": [
                {"name": e.name, "unit": e.unit, "description": e.description,
                 "kind": e.kind} for e in self.library_.entries],
            "config": self.config.to_dict(),
        }
