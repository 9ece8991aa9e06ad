"""Command-line experiment runner.

    mose run CONFIG [--section.key=value ...]
    mose compare CONFIG --editors mose,additive [--section.key=value ...]
    mose figure2 [CONFIG] [--section.key=value ...]

Exit status: 0 on success, 2 on a configuration error, 3 when an editor
fails numerically (the message names the step).
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import OUTPUT_ENV, apply_overrides, load_config, parse_overrides, validate
from .drift import DriftResult, drift_analysis, write_drift_csv
from .editors import EDITORS, EditorSpec, RunResult, run_sequential, step_log_line, write_steps_jsonl
from .errors import ConfigError, ConstructionError, DomainError
from .linalg import random_orthogonal
from .memory import MemoryModel, build_memory, make_edit_stream, make_eval_suite
from .metrics import evaluate
from .procrustes import EditConfig
from .stability import record, summarize, trend, write_stability_csv

__all__ = ["FIGURE2_PRESET", "Experiment", "compare", "main", "run"]

log = logging.getLogger("mose")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

FIGURE2_PRESET = {
    "dims": {"d": 64, "p": 64},
    "memory": {"n_knowledge": 32, "c": 8, "seed": 0},
    "editing": {"editor": "random_orthogonal", "n_edits": 500, "batch_size": 1, "scale": 0.05, "base": "orthogonal"},
    "eval": {"eval_every": 50},
    "output": {"directory": "figure2"},
}


class Experiment:
    """Memory, edit stream and editor resolved from a validated config."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        dims, memory, editing = cfg["dims"], cfg["memory"], cfg["editing"]
        try:
            mem = build_memory(
                dims["d"], dims["p"], memory["n_knowledge"], memory["c"], memory["seed"], margin=memory["margin"]
            )
        except ConstructionError as exc:
            raise ConfigError("memory.c", str(exc)) from None
        self.stream = make_edit_stream(mem, editing["n_edits"], editing["batch_size"], editing["stream_seed"])
        if editing["base"] == "orthogonal":
            # stress-test base: a well-conditioned weight with no knowledge bank
            empty = np.zeros((mem.p, 0))
            mem = MemoryModel(random_orthogonal(mem.d, memory["seed"]).matrix, empty, [], mem.codebook, empty)
        self.mem = mem
        self.spec = EditorSpec(
            editing["editor"],
            config=EditConfig(lam=editing["lam"], rank_tol=editing["rank_tol"]),
            seed=editing["editor_seed"],
            scale=editing["scale"],
            anchor=editing["anchor"],
            refresh_k0=editing["refresh_k0"],
            reortho_interval=editing["reortho_interval"],
        )

    def suite(self, applied):
        ev = self.cfg["eval"]
        return make_eval_suite(self.mem, applied, ev["rho"], ev["m_neighbors"], self.cfg["editing"]["stream_seed"])

    def execute(self) -> RunResult:
        mem, every = self.mem, self.cfg["eval"]["eval_every"]
        last = len(self.stream)

        def stability(i, w, step, applied):
            return record(i, w, mem.w0)

        def metrics(i, w, step, applied):
            if i % every == 0 or i == last:
                return i, evaluate(w, mem.w0, self.suite(applied), mem.codebook)
            return None

        return run_sequential(self.spec, mem, self.stream, {"stability": stability, "metrics": metrics})


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _emit(exp: Experiment, res: RunResult, out: Path) -> tuple[dict, Optional[DriftResult]]:
    """Write one run's files into ``out``; returns its summary entry and drift."""
    out.mkdir(parents=True, exist_ok=True)
    cfg = exp.cfg
    formats = cfg["output"]["formats"]
    stab = res.records["stability"]
    history = res.records["metrics"]
    by_step = dict(history)
    applied = exp.stream[: len(res.steps)]
    drift = drift_analysis(exp.mem, res.steps, applied, n_samples=cfg["eval"]["drift_samples"]) if res.steps else None

    final = history[-1][1].to_dict() if history else None
    stats = summarize(stab)
    entry = {
        "editor": exp.spec.name,
        "final": final,
        "stability": {
            "frob_norm_ratio": stats["frob_norm"]["ratio"],
            "cond_number_ratio": stats["cond_number"]["ratio"],
            "cond_number_spearman": trend(stab),
        },
        "drift_separation": drift.separation if drift else None,
        "error": None if res.error is None else {"step": res.error.step, "message": res.error.message},
    }
    _write_json(out / "config.json", cfg)
    if "csv" in formats:
        write_stability_csv(out / "stability.csv", stab)
        if drift is not None:
            write_drift_csv(out / "drift.csv", drift)
    if "json" in formats:
        doc = {
            "editor": exp.spec.name,
            "rho": cfg["eval"]["rho"],
            "final": final,
            "history": [{"step": i, **rep.to_dict()} for i, rep in history],
            "drift_separation": entry["drift_separation"],
            "error": entry["error"],
        }
        _write_json(out / "metrics.json", doc)
        rows = []
        for step, rec in zip(res.steps, stab[1:]):
            rep = by_step.get(rec.step)
            rows.append(step_log_line(rec.step, step.update_kind, rec, rep.reliability if rep else None))
        write_steps_jsonl(out / "steps.jsonl", rows)
    return entry, drift


def _report_error(entry: dict, label: str) -> None:
    err = entry["error"]
    print(f"{label}: numerical failure at step {err['step']}: {err['message']}", file=sys.stderr)


def run(cfg: dict) -> int:
    """Single editor run; writes into ``output.directory``."""
    exp = Experiment(cfg)
    res = exp.execute()
    entry, _ = _emit(exp, res, Path(cfg["output"]["directory"]))
    if res.error is not None:
        _report_error(entry, exp.spec.name)
        return EXIT_NUMERIC
    log.info("run finished: %s", json.dumps(entry["final"]))
    return EXIT_OK


def _labels(editors: Sequence[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for name in editors:
        seen[name] = seen.get(name, 0) + 1
        out.append(name if seen[name] == 1 else f"{name}_{seen[name]}")
    return out


def compare(cfg: dict, editors: Sequence[str]) -> int:
    """Run several editors on the same memory, stream and seeds.

    Each editor writes a full run into ``<directory>/<label>/``; the top
    directory gets merged ``stability.csv`` / ``drift.csv`` with a leading
    ``editor`` column and a ``summary.json``.
    """
    if len(editors) < 2:
        raise ConfigError("editors", "compare needs at least two editors")
    for name in editors:
        if name not in EDITORS:
            raise ConfigError("editors", f"unknown editor {name!r}; expected names from {list(EDITORS)}")
    top = Path(cfg["output"]["directory"])
    top.mkdir(parents=True, exist_ok=True)
    summary = {}
    status = EXIT_OK
    drift_started = False
    for i, (name, label) in enumerate(zip(editors, _labels(editors))):
        exp = Experiment(validate(apply_overrides(cfg, [("editing.editor", name)])))
        res = exp.execute()
        entry, drift = _emit(exp, res, top / label)
        summary[label] = entry
        if "csv" in cfg["output"]["formats"]:
            write_stability_csv(top / "stability.csv", res.records["stability"], editor=label, append=i > 0)
            if drift is not None:
                write_drift_csv(top / "drift.csv", drift, editor=label, append=drift_started)
                drift_started = True
        if res.error is not None:
            _report_error(entry, label)
            status = EXIT_NUMERIC
    _write_json(top / "summary.json", summary)
    _write_json(top / "config.json", {**cfg, "editors": list(editors)})
    return status


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mose", description="Sequential editing experiments on linear memories.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one editor")
    p_run.add_argument("config", help="JSON experiment config")

    p_cmp = sub.add_parser("compare", help="run several editors on shared inputs")
    p_cmp.add_argument("config", help="JSON experiment config")
    p_cmp.add_argument("--editors", required=True, help="comma-separated editor names, at least two")

    p_fig = sub.add_parser("figure2", help="random orthogonal vs random additive chains from an orthogonal base")
    p_fig.add_argument("config", nargs="?", help="optional JSON config merged over the preset")
    return parser


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for section, node in extra.items():
        if isinstance(node, dict) and isinstance(out.get(section), dict):
            out[section].update(node)
        else:
            out[section] = node
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = parse_overrides(extra)
        if args.command == "figure2":
            raw = FIGURE2_PRESET
            if args.config:
                raw = _merge(raw, json.loads(Path(args.config).read_text(encoding="utf-8")))
            if os.environ.get(OUTPUT_ENV):
                raw = apply_overrides(raw, [("output.directory", os.environ[OUTPUT_ENV])])
            cfg = validate(apply_overrides(raw, overrides))
            return compare(cfg, ["random_orthogonal", "random_additive"])
        cfg = load_config(args.config, overrides)
        if args.command == "run":
            return run(cfg)
        return compare(cfg, [e.strip() for e in args.editors.split(",") if e.strip()])
    except (ConfigError, DomainError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
