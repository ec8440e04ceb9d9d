"""Command-line driver: generate -> plan -> run -> tag -> analyze -> report.

Each experiment lives in one directory. ``manifest.json`` records the seed,
the generator config digest, and per stage the content hash of every artifact
it wrote. Stages check their inputs against those hashes before use, and a
rerun of a finished stage is a no-op.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import shutil
import sys
from contextlib import contextmanager
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .config import GenConfig, load_config, sha256_file
from .design import RunPlan, expand_trials, load_institutions, make_plan
from .errors import ConfigError, DPAFError, IntegrityError, LockedExperiment, MissingStage
from .inference import ChatCompletionClient, ClientConfig, MockModel, execute_batch
from .parsing import ParsedOutcome, failed_outcome, parse_outcome, unparseable_rate
from .profilegen import generate_cohort, read_cohort
from .stats import (admit_rate_table, benchmark_compare, composite_trend_table, first_gen_admit_share,
                    fit_admit_model, flip_rates, heatmap_table, join_records, load_benchmark_csv,
                    or_report, pair_systems, ses_compensates_share, variance_report)
from .tagging import (FLAGS, TAG_FEATURES, JudgeRequest, MockJudge, TagRecord, judge_messages,
                      parse_tag_records, tag_distribution)

log = logging.getLogger("dpaf")

MANIFEST = "manifest.json"
LOCK = ".dpaf.lock"


# -- experiment directory ------------------------------------------------------------

def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def config_digest(cfg: GenConfig) -> str:
    doc = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return _sha256_bytes(doc.encode())


class Experiment:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.manifest_path = self.root / MANIFEST
        self.manifest: dict[str, Any] = {}
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))

    @contextmanager
    def lock(self) -> Iterator[None]:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / LOCK
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockedExperiment(f"{path} exists; another invocation is running "
                                   "(delete the file if a previous run crashed)") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            path.unlink(missing_ok=True)

    def save(self) -> None:
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, self.manifest_path)

    @property
    def stages(self) -> dict[str, dict]:
        return self.manifest.setdefault("stages", {})

    def rel(self, path: Path) -> str:
        return path.relative_to(self.root).as_posix()

    def stage_state(self, name: str) -> str:
        """``missing``, ``stale`` (artifacts deleted) or ``complete``; raises on tampering."""
        st = self.stages.get(name)
        if not st:
            return "missing"
        for rel, digest in st["artifacts"].items():
            path = self.root / rel
            if not path.exists():
                return "stale"
            if sha256_file(path) != digest:
                raise IntegrityError(f"{rel} does not match the hash recorded by stage {name!r}")
        return "complete"

    def require(self, name: str, hint: str) -> dict:
        state = self.stage_state(name)
        if state != "complete":
            raise MissingStage(f"stage {name!r} is {state}; run `dpaf {hint}` first")
        return self.stages[name]

    def complete(self, name: str, artifacts: Sequence[Path], params: dict) -> None:
        self.stages[name] = {
            "completed": _now(),
            "params": params,
            "artifacts": {self.rel(p): sha256_file(p) for p in artifacts},
        }
        self.save()

    def invalidate_after(self, name: str) -> None:
        order = ["generate", "plan", "run", "tag", "analyze", "report"]
        head = name.split(":")[0]
        later = set(order[order.index(head) + 1:])
        for key in list(self.stages):
            if key.split(":")[0] in later:
                del self.stages[key]

    @property
    def master_seed(self) -> int:
        if "master_seed" not in self.manifest:
            raise MissingStage("experiment has no seed yet; run `dpaf generate` first")
        return int(self.manifest["master_seed"])


def write_artifact(path: Path, data: bytes, force: bool = False) -> Path:
    """Write ``data`` unless a different file is already there (then require ``force``)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists() and not force:
        if path.read_bytes() == data:
            return path
        raise IntegrityError(f"{path} exists with different content; pass --force to replace it")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def csv_bytes(df: pd.DataFrame) -> bytes:
    buf = io.StringIO()
    df.to_csv(buf, index=False, lineterminator="\n", float_format="%.10g")
    return buf.getvalue().encode("utf-8")


def jsonl_bytes(lines: Sequence[str]) -> bytes:
    return "".join(line + "\n" for line in lines).encode("utf-8")


# -- shared loaders ----------------------------------------------------------------------

def _load_cohorts(exp: Experiment) -> dict[int, list]:
    st = exp.require("generate", "generate")
    cohorts = {}
    for rel in st["params"]["cohort_files"]:
        cid = int(Path(rel).stem.split("_")[1])
        cohorts[cid] = read_cohort(exp.root / rel)
    return cohorts


def _load_plan(exp: Experiment) -> RunPlan:
    exp.require("plan", "plan")
    return RunPlan.from_json((exp.root / "plan.json").read_text(encoding="utf-8"))


def _run_plan(exp: Experiment, run_name: str) -> RunPlan:
    params = exp.stages[run_name]["params"]
    return _load_plan(exp).with_system(params["system"], params["mode"],
                                       profile_fraction=params["fraction"])


def _read_outcomes(path: Path) -> list[ParsedOutcome]:
    with open(path, encoding="utf-8") as fh:
        return [ParsedOutcome.from_json(line) for line in fh if line.strip()]


def _read_tags(path: Path) -> list[TagRecord]:
    with open(path, encoding="utf-8") as fh:
        return [TagRecord.from_json(line) for line in fh if line.strip()]


def _client_config(args) -> ClientConfig:
    return ClientConfig(endpoint=args.endpoint, model=args.model, token_env=args.token_env,
                        max_tokens=args.max_tokens, temperature=args.temperature, timeout=args.timeout,
                        retry_budget=args.retry_budget, max_in_flight=args.concurrency,
                        merge_system=getattr(args, "merge_system", False))


def _check_seed(exp: Experiment, args) -> None:
    if args.seed is not None and "master_seed" in exp.manifest and args.seed != exp.master_seed:
        raise ConfigError(f"--seed {args.seed} disagrees with the experiment seed {exp.master_seed}")


# -- commands -------------------------------------------------------------------------

def cmd_generate(exp: Experiment, args) -> str:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(master_seed=args.seed)
    elif "master_seed" in exp.manifest:
        cfg = cfg.with_overrides(master_seed=exp.master_seed)
    n_cohorts = args.cohorts or cfg.n_cohorts
    params_key = {"config_sha256": config_digest(cfg), "master_seed": cfg.master_seed, "n_cohorts": n_cohorts}
    state = exp.stage_state("generate")
    if state == "complete" and not args.force:
        recorded = {k: exp.stages["generate"]["params"].get(k) for k in params_key}
        if recorded != params_key:
            raise IntegrityError("generate already ran with different config or seed; pass --force to redo")
        return "generate: up to date"
    if "master_seed" in exp.manifest and exp.master_seed != cfg.master_seed and not args.force:
        raise ConfigError(f"experiment seed is {exp.master_seed}; pass --force to regenerate")
    if args.force:
        exp.invalidate_after("generate")
    artifacts, files, summaries = [], [], {}
    for cid in range(1, n_cohorts + 1):
        profiles, stats = generate_cohort(cid, cfg)
        path = exp.root / "cohorts" / f"cohort_{cid}.jsonl"
        write_artifact(path, jsonl_bytes([p.to_json() for p in profiles]), args.force)
        spath = exp.root / "cohorts" / f"cohort_{cid}.stats.json"
        write_artifact(spath, (stats.to_json() + "\n").encode(), args.force)
        artifacts += [path, spath]
        files.append(exp.rel(path))
        summaries[cid] = len(profiles)
        log.info("cohort %d: %d profiles", cid, len(profiles))
    exp.manifest.update(
        experiment_id=exp.manifest.get("experiment_id", exp.root.resolve().name),
        created=exp.manifest.get("created", _now()),
        master_seed=cfg.master_seed,
        config={"path": str(args.config) if args.config else None, "sha256": params_key["config_sha256"]},
        versions={"dpaf": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                  "pandas": pd.__version__},
    )
    exp.complete("generate", artifacts, {**params_key, "cohort_files": files, "sizes": summaries})
    return f"generate: {n_cohorts} cohorts written to {exp.root / 'cohorts'}"


def cmd_plan(exp: Experiment, args) -> str:
    exp.require("generate", "generate")
    _check_seed(exp, args)
    inst_path = Path(args.institutions) if args.institutions else None
    institutions = load_institutions(inst_path)
    if not institutions:
        raise ConfigError("institution list is empty")
    n_cohorts = exp.stages["generate"]["params"]["n_cohorts"]
    plan = make_plan(institutions, n_cohorts=n_cohorts, n_variants=args.variants, n_seeds=args.seeds,
                     master_seed=exp.master_seed, experiment_id="base")
    data = (plan.to_json() + "\n").encode()
    path = exp.root / "plan.json"
    if exp.stage_state("plan") == "complete" and not args.force:
        if path.read_bytes() != data:
            raise IntegrityError("plan already exists with different assignments; pass --force to redo")
        return "plan: up to date"
    if args.force:
        exp.invalidate_after("plan")
    write_artifact(path, data, args.force)
    exp.complete("plan", [path], {"n_institutions": len(institutions), "variants": args.variants,
                                  "seeds": args.seeds,
                                  "institutions_sha256": _sha256_bytes(
                                      json.dumps([asdict(i) for i in institutions], default=str).encode())})
    return f"plan: {len(institutions)} institutions assigned"


def cmd_run(exp: Experiment, args) -> str:
    _check_seed(exp, args)
    system, mode = args.system.upper(), args.mode
    name = f"run:{system.lower()}-{mode}"
    fraction = args.fraction if args.fraction is not None else (1.0 if system == "S1" else 0.1)
    if exp.stage_state(name) == "complete" and not args.force:
        recorded = exp.stages[name]["params"]
        if recorded["fraction"] != fraction:
            raise IntegrityError(f"{name} already ran with fraction {recorded['fraction']}; pass --force")
        return f"{name}: up to date"
    plan = _load_plan(exp).with_system(system, mode, profile_fraction=fraction)
    cohorts = _load_cohorts(exp)
    trials = list(expand_trials(plan, cohorts))
    run_dir = exp.root / "runs"
    log_path = run_dir / f"{plan.experiment_id}.results.jsonl"
    if args.force:
        exp.invalidate_after(name)
        exp.stages.pop(name, None)
        log_path.unlink(missing_ok=True)
    elif log_path.exists() and not args.resume:
        raise IntegrityError(f"{log_path} holds partial results; pass --resume to continue or --force to discard")
    if args.mock:
        client = MockModel(master_seed=exp.master_seed)
        ccfg = ClientConfig(max_in_flight=args.concurrency)
    else:
        ccfg = _client_config(args)
        client = ChatCompletionClient(ccfg)
    log.info("%s: %d trials", name, len(trials))
    results = execute_batch(trials, client, ccfg, log_path,
                            progress=lambda k, n: log.info("%s: %d/%d", name, k, n))
    outcomes = [parse_outcome(r.trial_id, r.raw_text, system) if r.status == "ok" else failed_outcome(r.trial_id)
                for r in results]
    out_path = write_artifact(run_dir / f"{plan.experiment_id}.outcomes.jsonl",
                              jsonl_bytes([o.to_json() for o in outcomes]), force=True)
    n_failed = sum(r.status != "ok" for r in results)
    rate = unparseable_rate(outcomes)
    exp.complete(name, [log_path, out_path], {
        "system": system, "mode": mode, "fraction": fraction, "mock": bool(args.mock),
        "endpoint": None if args.mock else args.endpoint, "model": None if args.mock else args.model,
        "n_trials": len(trials), "n_failed": n_failed, "unparseable_rate": rate,
    })
    return f"{name}: {len(trials)} trials, {n_failed} failed, unparseable rate {rate:.4f}"


def cmd_tag(exp: Experiment, args) -> str:
    _check_seed(exp, args)
    run_name = f"run:s2-{args.mode}"
    exp.require(run_name, f"run --system s2 --mode {args.mode}")
    name = f"tag:s2-{args.mode}"
    if exp.stage_state(name) == "complete" and not args.force:
        return f"{name}: up to date"
    outcomes = _read_outcomes(exp.root / "runs" / f"s2-{args.mode}.outcomes.jsonl")
    requests = [JudgeRequest(o.trial_id, o.explanation) for o in outcomes if o.explanation]
    tag_dir = exp.root / "tags"
    log_path = tag_dir / f"s2-{args.mode}.judge.jsonl"
    if args.force:
        exp.invalidate_after(name)
        log_path.unlink(missing_ok=True)
    elif log_path.exists() and not args.resume:
        raise IntegrityError(f"{log_path} holds partial results; pass --resume to continue or --force to discard")
    if args.mock:
        client, ccfg = MockJudge(), ClientConfig(max_in_flight=args.concurrency)
    else:
        ccfg = _client_config(args)
        client = ChatCompletionClient(ccfg, render=judge_messages)
    results = execute_batch(requests, client, ccfg, log_path)
    records, excluded = parse_tag_records((r.trial_id, r.raw_text) for r in results if r.status == "ok")
    failed = sum(r.status != "ok" for r in results)
    tags_path = write_artifact(tag_dir / f"s2-{args.mode}.tags.jsonl",
                               jsonl_bytes([r.to_json() for r in records]), force=True)
    summary = {"requests": len(requests), "parsed": len(records), "failed": failed,
               "excluded": dict(sorted(excluded.items()))}
    sum_path = write_artifact(tag_dir / f"s2-{args.mode}.summary.json",
                              (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode(), force=True)
    exp.complete(name, [log_path, tags_path, sum_path], {"mode": args.mode, "mock": bool(args.mock), **summary})
    return f"{name}: {len(records)} tagged, {sum(excluded.values())} excluded, {failed} failed"


def _joined(exp: Experiment, run_name: str, cohorts) -> pd.DataFrame:
    exp_id = run_name.split(":", 1)[1]
    trials = list(expand_trials(_run_plan(exp, run_name), cohorts))
    outcomes = _read_outcomes(exp.root / "runs" / f"{exp_id}.outcomes.jsonl")
    tags = None
    if exp.stage_state(f"tag:{exp_id}") == "complete":
        tags = _read_tags(exp.root / "tags" / f"{exp_id}.tags.jsonl")
    return join_records(trials, outcomes, tags)


def analyze_tables(exp: Experiment, fit: str = "glmm", benchmark: str | None = None) -> dict[str, bytes]:
    """Every analysis output as ``{relative file name: bytes}``."""
    runs = sorted(k for k in exp.stages if k.startswith("run:") and exp.stage_state(k) == "complete")
    if not runs:
        raise MissingStage("no completed runs; run `dpaf run` first")
    cohorts = _load_cohorts(exp)
    frames = {r.split(":", 1)[1]: _joined(exp, r, cohorts) for r in runs}
    out: dict[str, bytes] = {}
    unparse = []
    for exp_id, df in frames.items():
        out[f"admit_rates_{exp_id}_tier.csv"] = csv_bytes(admit_rate_table(df, ("tier",)))
        out[f"admit_rates_{exp_id}_heatmap.csv"] = csv_bytes(heatmap_table(df))
        for tier, g in df.groupby("tier", sort=True):
            unparse.append({"experiment": exp_id, "tier": tier, "n": len(g),
                            "unparseable": int((g["decision"] == "unparseable").sum()),
                            "rate": unparseable_rate(g["decision"].tolist())})
        if fit != "none":
            kwargs = {} if fit == "glmm" else {"groups": ()}
            model = fit_admit_model(df, **kwargs)
            out[f"fit_{exp_id}.json"] = (model.to_json() + "\n").encode()
            out[f"or_{exp_id}.csv"] = csv_bytes(or_report(model))
            if model.variances:
                out[f"random_effects_{exp_id}.csv"] = csv_bytes(variance_report(model))
        if "tag_aca_support" in df:
            tagged = df[df["tag_aca_support"].notna()]
            records = [TagRecord(trial_id=row.trial_id,
                                 **{k: getattr(row, f"tag_{k}") for k in TAG_FEATURES},
                                 **{k: (True if getattr(row, f"tag_{k}") else None) for k in FLAGS})
                       for row in tagged.itertuples()]
            if records:
                for by in ("first_gen", "fee_waiver"):
                    groups = {r.trial_id: ("Yes" if v else "No") for r, v in zip(records, tagged[by])}
                    for feature in TAG_FEATURES + FLAGS:
                        table = tag_distribution(records, feature, groups).reset_index()
                        out[f"tags_{exp_id}_{feature}_by_{by}.csv"] = csv_bytes(table)
                out[f"composite_{exp_id}_ses.csv"] = csv_bytes(composite_trend_table(df, "ses_quintile"))
                out[f"composite_{exp_id}_perf.csv"] = csv_bytes(composite_trend_table(df, "perf_quintile"))
                out[f"ses_compensates_{exp_id}.csv"] = csv_bytes(ses_compensates_share(df, "perf_quintile"))
    out["unparseable.csv"] = csv_bytes(pd.DataFrame(unparse))
    for mode in ("omitted", "specified"):
        s1, s2 = frames.get(f"s1-{mode}"), frames.get(f"s2-{mode}")
        if s1 is not None and s2 is not None:
            pairs = pair_systems(s1, s2)
            if len(pairs):
                out[f"flips_{mode}.csv"] = csv_bytes(flip_rates(pairs, ("tier", "ses_quintile")))
                out[f"flips_{mode}_tier.csv"] = csv_bytes(flip_rates(pairs, ("tier",)))
    if benchmark:
        observed = load_benchmark_csv(benchmark)
        rows = []
        for exp_id, df in frames.items():
            res = benchmark_compare(first_gen_admit_share(df), observed)
            rows.append({"experiment": exp_id, **res.formatted()})
        out["benchmark.csv"] = csv_bytes(pd.DataFrame(rows))
    return out


def cmd_analyze(exp: Experiment, args) -> str:
    _check_seed(exp, args)
    inputs = {k: v["artifacts"] for k, v in sorted(exp.stages.items())
              if k.split(":")[0] in ("generate", "plan", "run", "tag")}
    key = {"inputs": _sha256_bytes(json.dumps(inputs, sort_keys=True).encode()), "fit": args.fit,
           "benchmark": sha256_file(args.benchmark) if args.benchmark else None}
    if exp.stage_state("analyze") == "complete" and not args.force:
        if {k: exp.stages["analyze"]["params"].get(k) for k in key} == key:
            return "analyze: up to date"
    tables = analyze_tables(exp, args.fit, args.benchmark)
    paths = [write_artifact(exp.root / "analysis" / name, data, args.force) for name, data in sorted(tables.items())]
    exp.invalidate_after("analyze")
    exp.complete("analyze", paths, {**key, "files": sorted(tables)})
    return f"analyze: {len(paths)} tables in {exp.root / 'analysis'}"


def markdown_table(df: pd.DataFrame, floatfmt: str = "{:.3f}") -> str:
    def cell(v):
        return floatfmt.format(v) if isinstance(v, float) else str(v)
    head = "| " + " | ".join(map(str, df.columns)) + " |"
    rule = "|" + "|".join("---" for _ in df.columns) + "|"
    body = ["| " + " | ".join(cell(v) for v in row) + " |" for row in df.itertuples(index=False)]
    return "\n".join([head, rule, *body])


def cmd_report(exp: Experiment, args) -> str:
    st = exp.require("analyze", "analyze")
    report_dir = exp.root / "report"
    if exp.stage_state("report") == "complete" and not args.force:
        if exp.stages["report"]["params"].get("analysis") == st["artifacts"]:
            return "report: up to date"
    paths = []
    for rel in sorted(st["artifacts"]):
        src = exp.root / rel
        paths.append(write_artifact(report_dir / src.name, src.read_bytes(), args.force))
    lines = [f"# DPAF audit report: {exp.manifest.get('experiment_id', '')}", "",
             f"Master seed: {exp.master_seed}", ""]
    runs = sorted(k for k in exp.stages if k.startswith("run:"))
    lines += ["## Runs", ""]
    run_rows = pd.DataFrame([{"run": r.split(":", 1)[1], **{k: exp.stages[r]["params"][k] for k in
                              ("n_trials", "n_failed", "unparseable_rate", "mock")}} for r in runs])
    lines += [markdown_table(run_rows, "{:.4f}"), ""]
    adir = exp.root / "analysis"
    for r in runs:
        exp_id = r.split(":", 1)[1]
        lines += [f"## {exp_id}", "", "Admit rate by selectivity tier:", "",
                  markdown_table(pd.read_csv(adir / f"admit_rates_{exp_id}_tier.csv")), ""]
        if (adir / f"or_{exp_id}.csv").exists():
            lines += ["Odds ratios (Wald 95% CI; *** p<0.001, ** p<0.01, * p<0.05, . p<0.1):", "",
                      markdown_table(pd.read_csv(adir / f"or_{exp_id}.csv", dtype=str, keep_default_na=False)), ""]
        if (adir / f"random_effects_{exp_id}.csv").exists():
            lines += ["Random intercepts:", "",
                      markdown_table(pd.read_csv(adir / f"random_effects_{exp_id}.csv", dtype=str)), ""]
    for mode in ("omitted", "specified"):
        f = adir / f"flips_{mode}_tier.csv"
        if f.exists():
            cols = ["tier", "pairs", "flip_rate", "admit_to_reject_rate", "reject_to_admit_rate"]
            lines += [f"## Flip rates S1 -> S2 ({mode})", "", markdown_table(pd.read_csv(f)[cols]), ""]
    summary = write_artifact(report_dir / "summary.md", "\n".join(lines).encode(), force=True)
    exp.complete("report", paths + [summary], {"analysis": st["artifacts"]})
    return f"report: {report_dir}"


COMMANDS = {"generate": cmd_generate, "plan": cmd_plan, "run": cmd_run, "tag": cmd_tag,
            "analyze": cmd_analyze, "report": cmd_report}


def _add_client_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mock", action="store_true", help="use the built-in offline model")
    p.add_argument("--endpoint", default="http://localhost:8000/v1/chat/completions")
    p.add_argument("--model", default="default")
    p.add_argument("--token-env", default="OPENAI_API_KEY",
                   help="environment variable holding the API token")
    p.add_argument("--concurrency", type=int, default=4, help="max in-flight requests")
    p.add_argument("--resume", action="store_true", help="continue a partial results log")
    p.add_argument("--max-tokens", type=int, default=512)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--retry-budget", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpaf", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="master seed (fixed at generate)")
    parser.add_argument("--config", default=None, help="generator config TOML")
    parser.add_argument("--out-dir", default="dpaf-experiment", help="experiment directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"dpaf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample synthetic applicant cohorts")
    g.add_argument("--cohorts", type=int, default=None)
    g.add_argument("--force", action="store_true")

    p = sub.add_parser("plan", help="assign cohort, prompt variant and attribute seed per institution")
    p.add_argument("--institutions", default=None, help="CSV of name,acceptance_rate")
    p.add_argument("--variants", type=int, default=3)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--force", action="store_true")

    r = sub.add_parser("run", help="collect decisions for one system and mode")
    r.add_argument("--system", choices=["s1", "s2"], required=True)
    r.add_argument("--mode", choices=["omitted", "specified"], default="omitted")
    r.add_argument("--fraction", type=float, default=None,
                   help="share of each cohort to run (default 1.0 for s1, 0.1 for s2)")
    r.add_argument("--merge-system", action="store_true",
                   help="fold the system prompt into the user turn")
    r.add_argument("--force", action="store_true")
    _add_client_flags(r)

    t = sub.add_parser("tag", help="tag S2 explanations with a judge")
    t.add_argument("--mode", choices=["omitted", "specified"], default="omitted")
    t.add_argument("--force", action="store_true")
    _add_client_flags(t)

    a = sub.add_parser("analyze", help="compute rate, flip, regression and tag tables")
    a.add_argument("--fit", choices=["glmm", "irls", "none"], default="glmm")
    a.add_argument("--benchmark", default=None, help="CSV of institution,first_gen_share")
    a.add_argument("--force", action="store_true")

    rep = sub.add_parser("report", help="collect analysis outputs and a markdown summary")
    rep.add_argument("--force", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    exp = Experiment(args.out_dir)
    try:
        with exp.lock():
            message = COMMANDS[args.command](exp, args)
    except DPAFError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
