"""Command-line entry point wiring config, pipeline, and run store.

Subcommands: run, evaluate, replay, batch, match-ef, validate-config.
Every artifact lands under the chosen output directory; nothing is written
anywhere else. Exit codes: 0 success, 1 configuration or user error,
2 provider failure, 3 internal invariant breach (drift, hash mismatch, or
an unexpected exception).
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
import time
from dataclasses import replace as dc_replace
from pathlib import Path
from typing import Callable, Optional

from .config import (
    MODE_IEA,
    RunConfig,
    config_from_snapshot,
    load_config,
)
from .embeddings import EmbeddingService, FixtureEmbeddings
from .errors import (
    ConfigInvalid,
    DegenerateMean,
    DriftDetected,
    EmbeddingUnavailable,
    HashMismatch,
    InsufficientSamples,
    ModelDeclined,
    ParseError,
    PcfKitError,
    ProviderError,
    StageError,
)
from .factors import FactorIndex, load_factor_db, match_factor
from .gateway import (
    CompletionParams,
    FixtureProvider,
    Gateway,
    HttpProvider,
    HttpProviderConfig,
    Provider,
    RateLimiter,
    ResponseCache,
)
from .gwp import GwpTable, default_gwp_table, load_gwp_table
from .iea import load_alias_table, load_iot
from .metrics import RULE_ALIAS_EXACT, RULE_SEMANTIC, adjusted_cv
from .pipeline import IeaInputs, run_single_trial
from .reference import ReferenceInventory, evaluate_product, load_reference
from .report import (
    build_report_record,
    emit_run_artifacts,
    render_scatter_png,
    render_summary,
    scatter_csv,
)
from .runstore import (
    RunDir,
    RunStore,
    canonical_dumps,
    make_run_id,
    model_from_record,
)
from .seeds import derive_seed, make_rng
from .transcripts import load_transcript
from .trials import TrialFailure, TrialsOutcome, run_trials

# Errors whose root cause is the completion or embedding service (or its
# output): distinct exit code so callers can tell "fix your config" from
# "the provider misbehaved".
_PROVIDER_FAILURES = (ProviderError, ParseError, ModelDeclined,
                      EmbeddingUnavailable)
_INTERNAL_FAILURES = (DriftDetected, HashMismatch)


def exit_code_for(exc: BaseException) -> int:
    probe = exc
    if isinstance(exc, StageError) and exc.cause is not None:
        probe = exc.cause
    if isinstance(probe, _INTERNAL_FAILURES):
        return 3
    if isinstance(probe, _PROVIDER_FAILURES):
        return 2
    if isinstance(probe, PcfKitError):
        return 1
    return 3


def _staged(stage: str, exc: PcfKitError) -> StageError:
    if isinstance(exc, StageError):
        return exc
    return StageError(stage, str(exc), cause=exc)


class _Runtime:
    """Loaded inputs shared by every trial of one run."""

    def __init__(self, gwp: GwpTable, embeddings: EmbeddingService,
                 index: FactorIndex, iea: Optional[IeaInputs],
                 reference: Optional[ReferenceInventory]):
        self.gwp = gwp
        self.embeddings = embeddings
        self.index = index
        self.iea = iea
        self.reference = reference


def _load_runtime(config: RunConfig) -> _Runtime:
    try:
        gwp = (load_gwp_table(config.resolve(config.gwp_table))
               if config.gwp_table else default_gwp_table())
        service = EmbeddingService(
            FixtureEmbeddings.from_file(config.resolve(config.embeddings)))
        index = load_factor_db(config.resolve(config.factor_db),
                               embeddings=service)
        iea_inputs = None
        if config.mode == MODE_IEA:
            iot = load_iot(config.resolve(config.iea.coefficients),
                           config.resolve(config.iea.facts),
                           regional=config.resolve(config.iea.regional),
                           energy=config.resolve(config.iea.energy),
                           waste=config.resolve(config.iea.waste),
                           distances=config.resolve(config.iea.distances))
            aliases = (load_alias_table(config.resolve(config.iea.aliases))
                       if config.iea.aliases else None)
            iea_inputs = IeaInputs(
                iot=iot, alias_table=aliases,
                industry_threshold=config.iea.industry_threshold,
                destination_region=config.iea.destination_region,
                transport_factor_kg_km=config.iea.transport_factor_kg_km,
                balance_tolerance=config.iea.balance_tolerance)
        reference = (load_reference(config.resolve(config.reference))
                     if config.reference else None)
    except PcfKitError as exc:
        raise _staged("config", exc)
    return _Runtime(gwp, service, index, iea_inputs, reference)


def _provider_factory(config: RunConfig) -> Callable[[int], Provider]:
    settings = config.provider
    if settings.kind == "fixture":
        transcript = load_transcript(config.resolve(settings.transcript))

        def factory(_i: int) -> Provider:
            # Fresh instance per trial: replay queues are consumed in place.
            return FixtureProvider.from_transcript(
                transcript, provider_id=settings.provider_id,
                context_limit=settings.context_limit)

        return factory
    http = HttpProvider(HttpProviderConfig(
        provider_id=settings.provider_id,
        endpoint=settings.endpoint or "",
        model=settings.model,
        request_template=settings.request_template,
        response_path=settings.response_path,
        auth_env=settings.auth_env,
        context_limit=settings.context_limit,
        timeout_s=settings.timeout_s))
    return lambda _i: http


def _gateway(config: RunConfig) -> Gateway:
    cache = ResponseCache() if config.cache_enabled else None
    limiter = None
    if config.rate_limit_per_minute:
        limiter = RateLimiter(config.rate_limit_per_minute, 60.0)
    return Gateway(cache=cache, limiter=limiter)


def _execute_trials(config: RunConfig, runtime: _Runtime,
                    provider_factory: Callable[[int], Provider],
                    write: Callable[[str], None]) -> TrialsOutcome:
    params = CompletionParams(temperature=config.provider.temperature,
                              max_tokens=config.provider.max_tokens)
    outcome = run_trials(
        config.product(), _gateway(config), provider_factory,
        n=config.trials, master_seed=config.seed, workers=config.workers,
        params=params, index=runtime.index, gwp=runtime.gwp,
        embeddings=runtime.embeddings, mode=config.mode, iea=runtime.iea,
        similarity_threshold=config.similarity_threshold)
    for failure in outcome.failures:
        write(f"trial {failure.trial_id} failed: {failure.message}")
    return outcome


def _persist_run(config: RunConfig, outcome: TrialsOutcome,
                 runtime: _Runtime, out_root: Path,
                 started: float) -> tuple[RunDir, dict]:
    run_id = make_run_id(config.product_name, config.seed,
                         config.config_hash())
    run_dir = RunStore(out_root).run_dir(run_id).ensure()
    run_dir.write_config_snapshot(config.snapshot())
    run_dir.write_meta({
        "created_utc": datetime.datetime.now(datetime.timezone.utc)
        .isoformat(timespec="seconds"),
        "elapsed_s": round(time.monotonic() - started, 3),
    })
    for trial in outcome.trials:
        run_dir.save_transcript(trial.transcript)
        run_dir.write_model(trial.trial_id, trial.model)
        run_dir.write_result(trial.trial_id, trial.result.to_record())
    eval_report = None
    if runtime.reference is not None and outcome.trials:
        try:
            eval_report = evaluate_product(
                [t.model for t in outcome.trials], list(outcome.totals),
                runtime.reference, rule=RULE_ALIAS_EXACT)
        except PcfKitError as exc:
            raise _staged("evaluation", exc)
    record = build_report_record(run_id, config.snapshot(),
                                 config.config_hash(), outcome, eval_report)
    emit_run_artifacts(run_dir, record, outcome, runtime.reference)
    return run_dir, record


def _run_once(config: RunConfig, out_root: Path,
              write: Callable[[str], None]) -> tuple[RunDir, dict]:
    """The whole run command for one product; shared with batch."""
    try:
        config.validate()
    except PcfKitError as exc:
        raise _staged("config", exc)
    runtime = _load_runtime(config)
    try:
        provider_factory = _provider_factory(config)
    except PcfKitError as exc:
        raise _staged("config", exc)
    started = time.monotonic()
    outcome = _execute_trials(config, runtime, provider_factory, write)
    try:
        run_dir, record = _persist_run(config, outcome, runtime, out_root,
                                       started)
    except OSError as exc:
        raise StageError("persistence", f"cannot write run artifacts: {exc}",
                         cause=None)
    if not outcome.trials:
        first = outcome.failures[0] if outcome.failures else None
        if first is not None:
            raise StageError(first.stage, f"all {len(outcome.failures)} "
                             f"trials failed; first: {first.message}",
                             cause=first.cause)
        raise StageError("config", "no trials were requested")
    return run_dir, record


def _out_root(args, config: RunConfig) -> Path:
    out = getattr(args, "out", None) or config.out_dir
    if not out:
        raise StageError("config", "an output directory is required "
                         "(--out or out_dir in the config)")
    return Path(out)


def _overrides_from(args) -> dict:
    return {
        "product_name": getattr(args, "product", None),
        "mode": getattr(args, "mode", None),
        "trials": getattr(args, "trials", None),
        "seed": getattr(args, "seed", None),
        "workers": getattr(args, "workers", None),
        "similarity_threshold": getattr(args, "threshold", None),
        "reference": getattr(args, "reference", None),
        "out_dir": getattr(args, "out", None),
        "provider_id": getattr(args, "provider", None),
    }


def _load_cli_config(args) -> RunConfig:
    try:
        return load_config(args.config, _overrides_from(args))
    except PcfKitError as exc:
        raise _staged("config", exc)


def _open_run(args) -> RunDir:
    ref = args.run
    if Path(ref).is_dir():
        return RunStore(Path(ref).parent).open_existing(ref)
    store_root = getattr(args, "store", None) or getattr(args, "out", None)
    if not store_root:
        raise StageError("config", f"{ref!r} is not a directory; pass "
                         "--store to resolve run ids")
    return RunStore(store_root).open_existing(ref)


def cmd_run(args, write=print) -> int:
    config = _load_cli_config(args)
    run_dir, record = _run_once(config, _out_root(args, config), write)
    write(f"run {record['run_id']} written to {run_dir.path}")
    write(render_summary(record).rstrip("\n"))
    return 0


def cmd_validate_config(args, write=print) -> int:
    config = _load_cli_config(args)
    try:
        config.validate()
    except PcfKitError as exc:
        raise _staged("config", exc)
    write(f"config OK (hash {config.config_hash()[:12]}, "
          f"product {config.product_name!r}, mode {config.mode})")
    return 0


def cmd_match_ef(args, write=print) -> int:
    config = _load_cli_config(args)
    runtime = _load_runtime(config)
    for name in args.names:
        try:
            match = match_factor(name, runtime.index,
                                 config.similarity_threshold,
                                 embeddings=runtime.embeddings)
        except EmbeddingUnavailable:
            write(f"{name}: no embedding available")
            continue
        if match.matched:
            line = (f"{name} -> {match.factor_id} "
                    f"(similarity {match.similarity:.6f})")
            if match.runner_up is not None:
                line += (f"; runner-up {match.runner_up[0]} "
                         f"({match.runner_up[1]:.6f})")
        else:
            line = (f"{name} -> no match (best similarity "
                    f"{match.similarity:.6f} below threshold "
                    f"{config.similarity_threshold})")
        write(line)
    return 0


def cmd_evaluate(args, write=print) -> int:
    run_dir = _open_run(args)
    try:
        snapshot = run_dir.read_config_snapshot()
        config = config_from_snapshot(snapshot)
        reference_path = args.reference or config.reference
        if not reference_path:
            raise ConfigInvalid("no reference file configured or given")
        reference = load_reference(reference_path)
        trial_ids = run_dir.result_ids()
        if not trial_ids:
            raise ConfigInvalid(f"run {run_dir.run_id} has no stored results")
        models = [model_from_record(run_dir.read_model_record(t))
                  for t in trial_ids]
        totals = [json.loads(run_dir.read_result_text(t))["total_co2e_kg"]
                  for t in trial_ids]
        rule = RULE_SEMANTIC if args.semantic else RULE_ALIAS_EXACT
        embeddings = None
        if args.semantic:
            embeddings = EmbeddingService(
                FixtureEmbeddings.from_file(config.embeddings))
        report = evaluate_product(models, totals, reference, rule=rule,
                                  embeddings=embeddings,
                                  threshold=args.semantic_threshold)
    except PcfKitError as exc:
        raise _staged("evaluation", exc)
    out_dir = Path(args.out) if args.out else run_dir.path
    out_dir.mkdir(parents=True, exist_ok=True)
    record = report.to_record()
    (out_dir / "eval.json").write_text(canonical_dumps(record),
                                       encoding="utf-8")
    if report.auto_median is not None:
        points = [(report.product, report.auto_median,
                   report.expert_median)]
        (out_dir / "fig4_scatter.csv").write_text(scatter_csv(points),
                                                  encoding="utf-8")
        render_scatter_png(out_dir / "fig4_scatter.png", points)
    write(f"evaluation of {run_dir.run_id} vs {reference.product}:")
    write(f"  inventory P/R/F1 {report.inventory_scores.precision:.3f}/"
          f"{report.inventory_scores.recall:.3f}/"
          f"{report.inventory_scores.f1:.3f} "
          f"(mean over {len(models)} trials)")
    write(f"  process   P/R/F1 {report.process_scores.precision:.3f}/"
          f"{report.process_scores.recall:.3f}/"
          f"{report.process_scores.f1:.3f}")
    if report.pcf_error is not None:
        write(f"  footprint error vs expert median: {report.pcf_error:.4f}")
    write(f"  wrote {out_dir / 'eval.json'}")
    return 0


def _json_diff(stored, replayed, path: str = "$", limit: int = 10) -> list:
    """First differing paths between two JSON-like values."""
    diffs: list[dict] = []

    def walk(a, b, where):
        if len(diffs) >= limit:
            return
        if type(a) is not type(b):
            diffs.append({"path": where, "stored": repr(a)[:120],
                          "replayed": repr(b)[:120]})
        elif isinstance(a, dict):
            for key in sorted(set(a) | set(b)):
                if key not in a or key not in b:
                    diffs.append({"path": f"{where}.{key}",
                                  "stored": repr(a.get(key))[:120],
                                  "replayed": repr(b.get(key))[:120]})
                else:
                    walk(a[key], b[key], f"{where}.{key}")
        elif isinstance(a, list):
            if len(a) != len(b):
                diffs.append({"path": f"{where}.length", "stored": len(a),
                              "replayed": len(b)})
            for i, (x, y) in enumerate(zip(a, b)):
                walk(x, y, f"{where}[{i}]")
        elif a != b:
            diffs.append({"path": where, "stored": repr(a)[:120],
                          "replayed": repr(b)[:120]})

    walk(stored, replayed, path)
    return diffs


def cmd_replay(args, write=print) -> int:
    run_dir = _open_run(args)
    try:
        snapshot = run_dir.read_config_snapshot()
        config = config_from_snapshot(snapshot)
        stored_report = json.loads(run_dir.read_report_text())
        runtime = _load_runtime(config)
    except StageError:
        raise
    except PcfKitError as exc:
        raise _staged("replay", exc)

    params = CompletionParams(temperature=config.provider.temperature,
                              max_tokens=config.provider.max_tokens)
    gateway = Gateway()
    stored_failures = {f["trial_id"]: f for f in
                       stored_report["trials"]["failures"]}
    replayed = []
    failures = []
    drift = []
    for i in range(config.trials):
        trial_id = f"trial-{i:03d}"
        if trial_id in stored_failures:
            # Not replayable (no transcript was recorded); carried verbatim
            # so the rebuilt report stays comparable.
            rec = stored_failures[trial_id]
            failures.append(TrialFailure(trial_id=rec["trial_id"],
                                         stage=rec["stage"],
                                         message=rec["message"]))
            continue
        try:
            transcript = run_dir.transcripts.load(trial_id)
            provider = FixtureProvider.from_transcript(
                transcript, provider_id=config.provider.provider_id,
                context_limit=config.provider.context_limit)
            output = run_single_trial(
                config.product(), gateway, provider, index=runtime.index,
                gwp=runtime.gwp, embeddings=runtime.embeddings,
                params=params, mode=config.mode, iea=runtime.iea,
                similarity_threshold=config.similarity_threshold,
                seed=derive_seed(config.seed, "trial", i), trial_index=i,
                trial_id=trial_id,
                rng=make_rng(config.seed, "trial", i, "transport"))
        except HashMismatch:
            raise
        except PcfKitError as exc:
            raise _staged("replay", exc)
        replayed.append(output)
        stored_text = run_dir.read_result_text(trial_id)
        replayed_text = canonical_dumps(output.result.to_record())
        if stored_text != replayed_text:
            drift.append({"artifact": f"results/{trial_id}.json",
                          "diff": _json_diff(json.loads(stored_text),
                                             json.loads(replayed_text))})

    outcome = TrialsOutcome(trials=tuple(replayed), failures=tuple(failures),
                            totals=tuple(t.result.total_co2e_kg
                                         for t in replayed),
                            distribution=None)
    if len(outcome.totals) >= 2:
        try:
            outcome = TrialsOutcome(trials=outcome.trials,
                                    failures=outcome.failures,
                                    totals=outcome.totals,
                                    distribution=adjusted_cv(outcome.totals))
        except (InsufficientSamples, DegenerateMean):
            pass

    eval_report = None
    if runtime.reference is not None and outcome.trials:
        eval_report = evaluate_product(
            [t.model for t in outcome.trials], list(outcome.totals),
            runtime.reference, rule=RULE_ALIAS_EXACT)
    # Recompute the run id the same way the original run derived it, so a
    # renamed or relocated run directory still replays byte-identically.
    run_id = make_run_id(config.product_name, config.seed,
                         config.config_hash())
    rebuilt = build_report_record(run_id, config.snapshot(),
                                  config.config_hash(), outcome, eval_report)
    rebuilt_text = canonical_dumps(rebuilt)
    stored_text = run_dir.read_report_text()
    if rebuilt_text != stored_text:
        drift.append({"artifact": "report.json",
                      "diff": _json_diff(json.loads(stored_text), rebuilt)})
    if drift:
        raise StageError(
            "replay", "stored artifacts do not match the replayed run: "
            + json.dumps(drift, ensure_ascii=False),
            cause=DriftDetected(json.dumps(drift, ensure_ascii=False)))
    write(f"replay of {run_dir.run_id}: {len(replayed)} trials reproduced "
          f"byte-identically ({len(failures)} recorded failures carried)")
    return 0


def cmd_batch(args, write=print) -> int:
    config = _load_cli_config(args)
    out_root = _out_root(args, config)
    try:
        rows = _read_products_file(Path(args.products))
    except OSError as exc:
        raise StageError("config", f"cannot read products file: {exc}")
    if not rows:
        raise StageError("config", f"products file {args.products} "
                         "lists no products")
    points = []
    errors: list[tuple[str, StageError]] = []
    for name, transcript, reference in rows:
        product_config = dc_replace(config, product_name=name)
        if transcript:
            product_config = dc_replace(
                product_config,
                provider=dc_replace(config.provider, transcript=transcript))
        if reference:
            product_config = dc_replace(product_config, reference=reference)
        try:
            _run_dir, record = _run_once(product_config, out_root, write)
        except StageError as exc:
            errors.append((name, exc))
            write(f"FAILED {name}: {exc}")
            continue
        write(f"ok {name}: run {record['run_id']}")
        ev = record.get("evaluation")
        if ev and ev.get("auto_median") is not None:
            points.append((name, ev["auto_median"], ev["expert_median"]))
    if points:
        out_root.mkdir(parents=True, exist_ok=True)
        (out_root / "fig4_scatter.csv").write_text(scatter_csv(points),
                                                   encoding="utf-8")
        render_scatter_png(out_root / "fig4_scatter.png", points)
        write(f"wrote aggregate scatter for {len(points)} products")
    write(f"batch: {len(rows) - len(errors)}/{len(rows)} products succeeded")
    if not errors:
        return 0
    return max(exit_code_for(e) for _n, e in errors)


def _read_products_file(path: Path) -> list[tuple[str, Optional[str],
                                                  Optional[str]]]:
    """CSV with header product[,transcript][,reference]; blanks inherit
    the base config. Relative paths resolve against the file's directory."""
    import csv
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "product" not in reader.fieldnames:
            raise StageError("config", f"products file {path} needs a "
                             "header row with a 'product' column")
        for raw in reader:
            name = (raw.get("product") or "").strip()
            if not name:
                continue

            def resolved(key):
                value = (raw.get(key) or "").strip()
                if not value:
                    return None
                p = Path(value)
                if not p.is_absolute():
                    p = path.parent / p
                # Absolute so the config's own base_dir cannot re-prefix it.
                return str(p.resolve())

            rows.append((name, resolved("transcript"), resolved("reference")))
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcfkit",
        description="Automated cradle-to-gate product carbon footprints "
                    "from generated life-cycle inventories.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", required=True,
                       help="path to the run configuration file")

    def add_common_overrides(p):
        p.add_argument("--seed", type=int, default=None,
                       help="master seed override")
        p.add_argument("--out", default=None,
                       help="output directory (overrides out_dir)")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--product", default=None,
                       help="product name override")
        p.add_argument("--mode", choices=("DGA", "IEA"), default=None,
                       help="activity-data mode override")
        p.add_argument("--provider", default=None,
                       help="provider id override")
        p.add_argument("--threshold", type=float, default=None,
                       help="similarity threshold override")
        p.add_argument("--reference", default=None,
                       help="reference inventory file override")

    p_run = sub.add_parser("run", help="execute a full multi-trial run")
    add_config(p_run)
    add_common_overrides(p_run)
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("evaluate",
                            help="score a finished run against a reference")
    p_eval.add_argument("run", help="run id or run directory")
    p_eval.add_argument("--store", default=None,
                        help="run store root (to resolve run ids)")
    p_eval.add_argument("--reference", default=None,
                        help="reference file (default: from the run config)")
    p_eval.add_argument("--out", default=None,
                        help="directory for eval outputs "
                             "(default: the run directory)")
    p_eval.add_argument("--semantic", action="store_true",
                        help="use embedding-similarity instance matching")
    p_eval.add_argument("--semantic-threshold", type=float, default=0.85)
    p_eval.set_defaults(func=cmd_evaluate)

    p_replay = sub.add_parser(
        "replay", help="re-execute a run offline from stored transcripts "
                       "and verify byte-equality")
    p_replay.add_argument("run", help="run id or run directory")
    p_replay.add_argument("--store", default=None,
                          help="run store root (to resolve run ids)")
    p_replay.set_defaults(func=cmd_replay)

    p_batch = sub.add_parser("batch",
                             help="run many products from a CSV list")
    add_config(p_batch)
    p_batch.add_argument("--products", required=True,
                         help="CSV of product[,transcript][,reference]")
    p_batch.add_argument("--seed", type=int, default=None)
    p_batch.add_argument("--out", default=None)
    p_batch.set_defaults(func=cmd_batch)

    p_match = sub.add_parser("match-ef",
                             help="probe the factor matcher for given names")
    add_config(p_match)
    p_match.add_argument("names", nargs="+", help="activity names to match")
    p_match.set_defaults(func=cmd_match_ef)

    p_val = sub.add_parser("validate-config",
                           help="check a configuration file and exit")
    add_config(p_val)
    p_val.set_defaults(func=cmd_validate_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage errors are user errors.
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except StageError as exc:
        print(f"pcfkit: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except PcfKitError as exc:
        print(f"pcfkit: [stage: {args.command}] {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary
        print(f"pcfkit: [stage: internal] unexpected {type(exc).__name__}: "
              f"{exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
