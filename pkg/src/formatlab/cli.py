"""Command-line entry point.

Subcommands: ``reward-eval``, ``train-sim``, ``diagnose``, ``build-sft`` and
``report``. Every run writes its outputs plus a ``manifest.json`` into
``--out-dir``; files are written to a temporary name and renamed into place.

Exit codes: 0 success, 1 runtime failure (divergence, I/O), 2 input or
schema error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config
from .diagnostics import (BUCKETS, StubCompressor, compress_corpus, detect_collapse, format_report,
                          format_table, overthinking_report)
from .env import SimEnv, load_env_config, oracle_best_format
from .formats import ParseError, ResponseFormat, Tokenizer, count_tokens, parse_response, validate_structure
from .rewards import score_group
from .sft import build_records
from .trainer import DivergenceError, TrainHistory, evaluate_policy, policy_format_table, train

log = logging.getLogger("formatlab")


class InputError(Exception):
    """Malformed input; maps to exit code 2."""


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def read_jsonl(path) -> list[tuple[int, dict]]:
    """``(line_number, object)`` pairs; blank lines are skipped."""
    out = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not valid UTF-8 ({exc})") from exc
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{n}: invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise InputError(f"{path}:{n}: expected a JSON object")
        out.append((n, obj))
    return out


def _require(obj, key, types, where, optional=False):
    if key not in obj or obj[key] is None:
        if optional:
            return None
        raise InputError(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, types) or (isinstance(value, bool) and bool not in _as_tuple(types)):
        raise InputError(f"{where}: field {key!r} has the wrong type ({type(value).__name__})")
    return value


def _as_tuple(types):
    return types if isinstance(types, tuple) else (types,)


def write_manifest(out_dir: Path, command: str, args, config: dict | None, outputs: dict,
                   status: str = "ok", extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "seed": args.seed,
        "config": config,
        "outputs": {k: str(v) for k, v in outputs.items()},
        "status": status,
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _echo(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _run_config(args) -> RunConfig:
    try:
        return load_config(args.config)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.config}: invalid config: {exc}") from exc


# -- reward-eval ------------------------------------------------------------

def cmd_reward_eval(args) -> int:
    rc = _run_config(args)
    cfg = rc.reward
    tok = Tokenizer.from_string(args.tokenizer)
    out_rows, summary = [], []
    for n, rec in read_jsonl(args.input):
        where = f"{args.input}:{n}"
        rollouts = _require(rec, "rollouts", list, where)
        if len(rollouts) < 2:
            raise InputError(f"{where}: a group needs at least two rollouts")
        step = args.step if args.step is not None else _require(rec, "step", int, where)
        if not 0 <= step <= cfg.T:
            raise InputError(f"{where}: step {step} outside [0, {cfg.T}]")
        triples, extras = [], []
        for j, ro in enumerate(rollouts):
            rw = f"{where}: rollout {j}"
            if not isinstance(ro, dict):
                raise InputError(f"{rw}: expected an object")
            text = _require(ro, "text", str, rw)
            correct = _require(ro, "correct", bool, rw)
            n_tok = _require(ro, "n_tok", int, rw, optional=True)
            if n_tok is not None and n_tok < 0:
                raise InputError(f"{rw}: n_tok must be nonnegative")
            warnings = []
            try:
                parsed = parse_response(text, tok)
                fmt = parsed.format
                warnings = [w.value for w in validate_structure(parsed)]
                if fmt not in cfg.enabled_formats:
                    log.warning("%s: format %s is disabled; scored as malformed", rw, fmt.label)
                    fmt = None
            except ParseError as exc:
                log.warning("%s: unparseable response scored with the malformed penalty (%s)", rw, exc)
                fmt = None
            n_tok = count_tokens(text, tok) if n_tok is None else n_tok
            triples.append((fmt, correct, n_tok))
            extras.append(warnings)
        scored = score_group(triples, step, cfg)
        new_rollouts = []
        for ro, s, warnings in zip(rollouts, scored, extras):
            row = dict(ro)
            row.update(format=None if s.format is None else int(s.format), n_tok=s.n_tok,
                       r_format=s.r_format, r_div=s.r_div, s_L=s.s_L, r_total=s.r_total,
                       advantage=s.advantage, warnings=warnings)
            new_rollouts.append(row)
        out = dict(rec)
        out["step"] = step
        out["rollouts"] = new_rollouts
        out_rows.append(out)
        summary.append([rec.get("prompt_id"), step, len(scored),
                        sum(s.format is None for s in scored),
                        sum(s.r_total for s in scored) / len(scored),
                        max(s.r_total for s in scored)])
    out_dir = Path(args.out_dir)
    out_path = out_dir / "scored.jsonl"
    atomic_write(out_path, _jsonl(out_rows))
    write_manifest(out_dir, "reward-eval", args, rc.to_dict(), {"scored": out_path.name},
                   extra={"input": str(args.input), "tokenizer": str(tok), "step_override": args.step})
    _echo(args, format_table(["prompt_id", "step", "n", "malformed", "mean_r", "max_r"], summary))
    return 0


# -- train-sim --------------------------------------------------------------

def _resolve_train_config(args) -> RunConfig:
    rc = _run_config(args)
    trainer, reward = rc.trainer, rc.reward
    specs, weights = rc.specs, rc.weights
    if args.env_config:
        try:
            specs, weights = load_env_config(args.env_config, specs)
        except (ValueError, KeyError, OSError) as exc:
            raise InputError(f"{args.env_config}: invalid env config: {exc}") from exc
        specs = tuple(specs)
    overrides = {k: v for k, v in (("steps", args.steps), ("lr", args.lr),
                                   ("inner_steps", args.inner_steps),
                                   ("batch_size", args.batch_size),
                                   ("kl_mode", args.kl_mode)) if v is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        trainer = replace(trainer, **overrides)
        if args.steps is not None:
            reward = replace(reward, T=max(args.steps, 1))
        if args.no_diversity:
            reward = replace(reward, diversity_enabled=False)
    except ValueError as exc:
        raise InputError(f"invalid setting: {exc}") from exc
    return RunConfig(reward, trainer, specs, weights, rc.eval_samples)


def _train_report(result, env, rc: RunConfig) -> dict:
    cfg = rc.reward
    probs = policy_format_table(result.params, env, cfg)
    rollouts = evaluate_policy(result.params, env, cfg, rc.eval_samples, seed=rc.trainer.seed,
                               max_content=rc.trainer.max_content)
    classes = {}
    for spec in env.specs:
        p = probs[spec.name]
        classes[spec.name] = {
            "policy_probs": {k.label: p[int(k) - 1] for k in ResponseFormat},
            "argmax": ResponseFormat(max(range(3), key=p.__getitem__) + 1).label,
            "oracle_argmax": oracle_best_format(spec, cfg).label,
            "sampled": format_report(rollouts[spec.name]).to_dict(),
        }
    everything = [r for rows in rollouts.values() for r in rows]
    collapse = detect_collapse(result.history) if len(result.history) else None
    return {
        "classes": classes,
        "overall": format_report(everything).to_dict(),
        "collapse": None if collapse is None else {"format": collapse[0].label, "onset": collapse[1]},
    }


def cmd_train_sim(args) -> int:
    rc = _resolve_train_config(args)
    out_dir = Path(args.out_dir)
    hist_path, report_path = out_dir / "history.csv", out_dir / "format_report.json"
    env = SimEnv(list(rc.specs), rc.weights, seed=rc.trainer.seed)
    args.seed = rc.trainer.seed
    try:
        result = train(rc.reward, rc.trainer, env)
    except DivergenceError as exc:
        atomic_write(hist_path, exc.history.to_csv())
        write_manifest(out_dir, "train-sim", args, rc.to_dict(), {"history": hist_path.name},
                       status="diverged", extra={"error": str(exc)})
        log.error("training diverged: %s (partial history in %s)", exc, hist_path)
        return 1
    report = _train_report(result, env, rc)
    atomic_write(hist_path, result.history.to_csv())
    atomic_write(report_path, json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out_dir, "train-sim", args, rc.to_dict(),
                   {"history": hist_path.name, "format_report": report_path.name})
    rows = [[name, *c["policy_probs"].values(), c["argmax"], c["oracle_argmax"]]
            for name, c in report["classes"].items()]
    _echo(args, format_table(["class", "p_full", "p_perception", "p_direct", "argmax", "oracle"], rows))
    if report["collapse"]:
        _echo(args, f"collapse: {report['collapse']['format']} from step {report['collapse']['onset']}")
    return 0


# -- diagnose ---------------------------------------------------------------

def _check_corpus(records, path):
    out = []
    for n, rec in records:
        where = f"{path}:{n}"
        _require(rec, "original", str, where)
        _require(rec, "correct_original", bool, where)
        _require(rec, "compressed", str, where, optional=True)
        _require(rec, "correct_compressed", bool, where, optional=True)
        _require(rec, "question", str, where, optional=True)
        out.append(rec)
    return out


def cmd_diagnose(args) -> int:
    tok = Tokenizer.from_string(args.tokenizer)
    records = _check_corpus(read_jsonl(args.input), args.input)
    out_dir = Path(args.out_dir)
    outputs = {}
    if args.compress:
        records = compress_corpus(records, StubCompressor(), max_in_flight=args.max_in_flight)
        comp_path = out_dir / "compressed.jsonl"
        atomic_write(comp_path, _jsonl(records))
        outputs["compressed"] = comp_path.name
    report = overthinking_report(records, tok)
    rep_path = out_dir / "overthinking_report.json"
    atomic_write(rep_path, json.dumps(report, indent=2, sort_keys=True) + "\n")
    outputs["report"] = rep_path.name
    hist = report["histogram"]
    if args.histogram_csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bucket", "count", "fraction"])
        for b in BUCKETS:
            w.writerow([b, hist["counts"][b] if hist else 0, repr(hist["fractions"][b]) if hist else ""])
        atomic_write(Path(args.histogram_csv), buf.getvalue())
        outputs["histogram_csv"] = str(args.histogram_csv)
    write_manifest(out_dir, "diagnose", args, None, outputs,
                   extra={"input": str(args.input), "tokenizer": str(tok), "compress": args.compress})
    ref = report["reference_fractions"]
    rows = [[b, hist["counts"][b] if hist else 0, hist["fractions"][b] if hist else None, ref.get(b)]
            for b in BUCKETS]
    _echo(args, format_table(["bucket", "count", "fraction", "reported"], rows))
    _echo(args, f"eligible {report['n_eligible']}  ineligible {report['n_ineligible']}  "
                f"anomalies {len(report['anomalies'])}")
    return 0


# -- build-sft --------------------------------------------------------------

def cmd_build_sft(args) -> int:
    tok = Tokenizer.from_string(args.tokenizer)
    samples = []
    for n, rec in read_jsonl(args.input):
        if "id" not in rec:
            raise InputError(f"{args.input}:{n}: missing field 'id'")
        samples.append(rec)
    records, rejections = build_records(samples, max_tokens=args.max_tokens, tok=tok)
    out_path, rej_path = Path(args.out), Path(args.reject_log)
    atomic_write(out_path, _jsonl(r.to_dict() for r in records))
    atomic_write(rej_path, _jsonl(rejections))
    write_manifest(Path(args.out_dir), "build-sft", args, None,
                   {"records": out_path, "rejections": rej_path},
                   extra={"input": str(args.input), "tokenizer": str(tok), "max_tokens": args.max_tokens})
    counts = {k.label: sum(r.format == k for r in records) for k in ResponseFormat}
    rows = [[label, c] for label, c in counts.items()] + [["rejected", len(rejections)]]
    _echo(args, format_table(["format", "records"], rows))
    return 0


# -- report -----------------------------------------------------------------

def _history_report(path, args) -> dict:
    try:
        hist = TrainHistory.from_csv(Path(path).read_text())
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"{path}: not a training history: {exc}") from exc
    out = {"kind": "history", "steps": len(hist)}
    if not len(hist):
        out["collapse"] = None
        return out
    collapse = detect_collapse(hist, threshold=args.threshold, window=args.window)
    reward = hist.column("mean_reward")
    task = hist.column("mean_task_reward")
    tenth = max(1, len(hist) // 10)
    u = hist.usage()
    out.update(
        collapse=None if collapse is None else {"format": collapse[0].label, "onset": collapse[1]},
        reward_first_10pct=float(reward[:tenth].mean()),
        reward_last_10pct=float(reward[-tenth:].mean()),
        task_reward_first_10pct=float(task[:tenth].mean()),
        task_reward_last_10pct=float(task[-tenth:].mean()),
        final_usage={k.label: float(u[-1, int(k) - 1]) for k in ResponseFormat},
        min_usage_first_half={k.label: float(u[: max(1, len(u) // 2), int(k) - 1].min())
                              for k in ResponseFormat},
    )
    return out


def _scored_report(path) -> dict:
    rows = []
    for n, rec in read_jsonl(path):
        for j, ro in enumerate(_require(rec, "rollouts", list, f"{path}:{n}")):
            where = f"{path}:{n}: rollout {j}"
            fmt = _require(ro, "format", int, where, optional=True)
            if fmt is not None and fmt not in (1, 2, 3):
                raise InputError(f"{where}: format must be 1, 2 or 3")
            rows.append((fmt, _require(ro, "correct", bool, where), _require(ro, "n_tok", int, where)))
    return {"kind": "scored", **format_report(rows).to_dict()}


def cmd_report(args) -> int:
    path = Path(args.input)
    report = _history_report(path, args) if path.suffix == ".csv" else _scored_report(path)
    out_dir = Path(args.out_dir)
    rep_path = out_dir / "report.json"
    atomic_write(rep_path, json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out_dir, "report", args, None, {"report": rep_path.name},
                   extra={"input": str(path), "threshold": args.threshold, "window": args.window})
    if report["kind"] == "history":
        c = report.get("collapse")
        _echo(args, f"steps {report['steps']}  collapse: "
                    + (f"{c['format']} from step {c['onset']}" if c else "none"))
        if report["steps"]:
            _echo(args, f"mean reward first/last 10%: {report['reward_first_10pct']:.4f} / "
                        f"{report['reward_last_10pct']:.4f}  (task reward "
                        f"{report['task_reward_first_10pct']:.4f} / {report['task_reward_last_10pct']:.4f})")
    else:
        rows = [[k.label, report["usage"].get(k.label), report["accuracy"].get(k.label),
                 report["mean_tokens"].get(k.label)] for k in ResponseFormat]
        _echo(args, format_table(["format", "usage", "accuracy", "mean_tokens"], rows))
    return 0


# -- argument parsing -------------------------------------------------------

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(None), help="master seed (overrides the config)")
    p.add_argument("--config", default=d(None), help="INI config or a previous run's manifest.json")
    p.add_argument("--out-dir", default=d("."), help="directory for outputs and manifest.json")
    p.add_argument("--quiet", action="store_true", default=d(False), help="suppress summaries")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="formatlab", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("--version", action="version", version=f"formatlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("reward-eval", parents=[common], help="score JSON-lines rollout groups")
    p.add_argument("input")
    p.add_argument("--step", type=int, help="step index used for every group")
    p.add_argument("--tokenizer", default="whitespace", help="'whitespace' or 'chars:N'")
    p.set_defaults(func=cmd_reward_eval)

    p = sub.add_parser("train-sim", parents=[common], help="train the toy policy in the simulator")
    p.add_argument("--steps", type=int)
    p.add_argument("--no-diversity", action="store_true", help="drop the diversity term")
    p.add_argument("--env-config", help="INI file of per-class overrides")
    p.add_argument("--lr", type=float)
    p.add_argument("--inner-steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--kl-mode", choices=("exact", "k3"))
    p.set_defaults(func=cmd_train_sim)

    p = sub.add_parser("diagnose", parents=[common], help="overthinking-score report")
    p.add_argument("input")
    p.add_argument("--compress", action="store_true", help="fill missing compressions with the stub")
    p.add_argument("--max-in-flight", type=int, default=8)
    p.add_argument("--tokenizer", default="whitespace")
    p.add_argument("--histogram-csv")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("build-sft", parents=[common], help="assign formats and emit SFT records")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reject-log", required=True)
    p.add_argument("--max-tokens", type=int, default=2048)
    p.add_argument("--tokenizer", default="whitespace")
    p.set_defaults(func=cmd_build_sft)

    p = sub.add_parser("report", parents=[common], help="summarise a history CSV or scored JSON-lines file")
    p.add_argument("input")
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--window", type=int, default=10)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except InputError as exc:
        log.error("%s", exc)
        return 2
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 2
    except (OSError, RuntimeError) as exc:
        log.error("%s", exc)
        return 1
    except ValueError as exc:
        # remaining contract violations in user-supplied values (e.g. tokenizer spec)
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
