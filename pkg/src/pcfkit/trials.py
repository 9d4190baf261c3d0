"""Repeated-trial execution with derived sub-seeds.

The estimation is sampled, not computed once: n independent trials run the
whole pipeline and the spread of their totals is the uncertainty estimate.
Each trial derives its own seed and provider instance, so trials can run
on a worker pool without sharing mutable state, and a failed trial is a
recorded fact rather than a lost run.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (
    DegenerateMean,
    InsufficientSamples,
    PcfKitError,
    StageError,
)
from .gateway import CompletionParams, Gateway, Provider
from .metrics import TrialDistribution, adjusted_cv
from .model import ProductSpec
from .pipeline import TrialOutput, run_single_trial
from .seeds import derive_seed, make_rng

DEFAULT_TRIALS = 20


@dataclass(frozen=True)
class TrialFailure:
    trial_id: str
    stage: str
    message: str
    # Kept for error classification at the CLI boundary; never serialized.
    cause: Optional[BaseException] = field(default=None, compare=False,
                                           repr=False)

    def to_record(self) -> dict:
        return {"trial_id": self.trial_id, "stage": self.stage,
                "message": self.message}


@dataclass(frozen=True)
class TrialsOutcome:
    trials: tuple[TrialOutput, ...]
    failures: tuple[TrialFailure, ...]
    totals: tuple[float, ...]
    distribution: Optional[TrialDistribution]

    @property
    def n_requested(self) -> int:
        return len(self.trials) + len(self.failures)


def run_trials(product: ProductSpec, gateway: Gateway,
               provider_factory: Callable[[int], Provider], *,
               n: int = DEFAULT_TRIALS,
               master_seed: int = 0,
               workers: int = 1,
               params: CompletionParams = CompletionParams(),
               **trial_kwargs) -> TrialsOutcome:
    """Run n end-to-end trials and summarize their totals.

    ``provider_factory(i)`` must return a provider instance private to
    trial i (fixture replay keeps per-prompt queues, so sharing one across
    trials would let them consume each other's responses). Failures are
    collected per trial; the distribution is computed over the successes
    and is None when fewer than two survive or the spread is degenerate.
    """

    def one(i: int):
        sub_seed = derive_seed(master_seed, "trial", i)
        try:
            return run_single_trial(
                product, gateway, provider_factory(i),
                params=params, seed=sub_seed, trial_index=i,
                trial_id=f"trial-{i:03d}",
                rng=make_rng(master_seed, "trial", i, "transport"),
                **trial_kwargs)
        except StageError as exc:
            return TrialFailure(trial_id=f"trial-{i:03d}", stage=exc.stage,
                                message=str(exc), cause=exc.cause or exc)
        except PcfKitError as exc:
            return TrialFailure(trial_id=f"trial-{i:03d}", stage="unknown",
                                message=str(exc), cause=exc)

    if workers <= 1:
        outputs = [one(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(one, range(n)))

    trials = tuple(o for o in outputs if isinstance(o, TrialOutput))
    failures = tuple(o for o in outputs if isinstance(o, TrialFailure))
    totals = tuple(t.result.total_co2e_kg for t in trials)
    distribution = None
    if len(totals) >= 2:
        try:
            distribution = adjusted_cv(totals)
        except (InsufficientSamples, DegenerateMean):
            distribution = None
    return TrialsOutcome(trials=trials, failures=failures, totals=totals,
                         distribution=distribution)
