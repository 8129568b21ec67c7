"""Command-line entry point: ``wearauth generate | run | sweep``.

Exit codes: 0 success, 1 pipeline failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .classifier import TrainConfig
from .core import ALL_COMBOS, Combo, ConflictError, DomainError, ParseError, Period, ingest_csv
from .evaluation import ExperimentConfig, sweep_threshold
from .pipeline import feature_table, run_combos
from .report import combos_csv, render_table, subjects_csv, summarize
from .selection import Approach, FeatureSelector, KsConfig
from .synth import CohortConfig, export_csv, generate_cohort

logger = logging.getLogger("wearauth")


class ConfigError(Exception):
    pass


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def load_config(path: Optional[str]) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        return tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict[str, str]
    tool_version: str = __version__
    outputs: dict[str, str] = field(default_factory=dict)
    results: dict[str, Any] = field(default_factory=dict)

    @property
    def digest(self) -> str:
        """Identity of the run: everything that determines its outputs."""
        ident = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "tool_version": self.tool_version,
        }
        return sha256(json.dumps(ident, sort_keys=True).encode("utf-8"))

    def to_json(self) -> str:
        doc = {
            "manifest": self.digest,
            "tool": "wearauth",
            "tool_version": self.tool_version,
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": dict(sorted(self.outputs.items())),
            "results": self.results,
        }
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"


class ArtifactWriter:
    def __init__(self, root: Path, manifest: RunManifest):
        self.root = root
        self.manifest = manifest

    def write(self, relpath: str, data: bytes) -> Path:
        path = self.root / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.manifest.outputs[relpath] = sha256(data)
        return path

    def finish(self, name: str = "manifest.json") -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.manifest.to_json())
        return path


# ---------------------------------------------------------------- generate


def cmd_generate(args: argparse.Namespace) -> int:
    doc = load_config(args.config)
    settings = dict(doc.get("cohort", doc))
    out = args.out or settings.pop("out", None)
    settings.pop("out", None)
    if out is None:
        raise ConfigError("no output path: pass --out or set 'out' in the config")
    if args.seed is not None:
        settings["seed"] = args.seed
    try:
        cfg = CohortConfig.from_dict(settings)
    except (DomainError, TypeError) as exc:
        raise ConfigError(f"bad cohort config: {exc}") from exc

    manifest = RunManifest("generate", cfg.to_dict(), cfg.seed, inputs={})
    out = Path(out)
    writer = ArtifactWriter(out.parent, manifest)
    data = export_csv(generate_cohort(cfg), comment=f"manifest {manifest.digest}")
    writer.write(out.name, data)
    writer.finish(out.name + ".manifest.json")
    print(f"wrote {cfg.n_subjects} subjects to {out} (sha256 {sha256(data)[:12]})")
    return 0


# ---------------------------------------------------------------- run / sweep

_TOP_KEYS = {"input", "out_dir", "period", "combo", "approach", "x_sigma_t", "seed",
             "acc_slack", "cov_mode", "dataset", "svm", "ks"}
_SECTION_KEYS = {
    "dataset": {"windows_per_subject", "min_windows", "min_window_multiple", "split"},
    "svm": {"C", "kkt_tol", "max_passes"},
    "ks": {"alpha", "reject_fraction", "max_pairs"},
}


@dataclass
class RunSettings:
    input: Path
    out_dir: Path
    combos: tuple[Combo, ...]
    experiment: ExperimentConfig
    snapshot: dict


def resolve_run_settings(args: argparse.Namespace) -> RunSettings:
    doc = load_config(args.config)
    unknown = set(doc) - _TOP_KEYS
    for section, keys in _SECTION_KEYS.items():
        unknown |= {f"{section}.{k}" for k in set(doc.get(section, {})) - keys}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    overrides = {
        "seed": args.seed,
        "period": args.period,
        "combo": args.combo,
        "approach": args.approach,
        "x_sigma_t": args.x_sigma_t,
        "acc_slack": args.acc_slack,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if "input" not in doc:
        raise ConfigError("config needs an 'input' CSV path")
    base = Path(args.config).parent
    input_path = base / doc["input"]
    out_dir = Path(args.out_dir) if args.out_dir else base / doc.get("out_dir", "wearauth-out")

    combo_text = str(doc.get("combo", "all"))
    seed = int(doc.get("seed", 0))
    try:
        combos = ALL_COMBOS if combo_text.lower() == "all" else (Combo.parse(combo_text),)
        ds, svm, ks = doc.get("dataset", {}), doc.get("svm", {}), doc.get("ks", {})
        experiment = ExperimentConfig(
            period=Period(int(doc.get("period", 1))),
            combo=combos[-1],
            approach=Approach(doc.get("approach", "ks-cov")),
            x_sigma_t=int(doc.get("x_sigma_t", 30)),
            seed=seed,
            acc_slack=float(doc.get("acc_slack", 2.0)),
            cov_mode=doc.get("cov_mode", "subject"),
            train=TrainConfig(seed=seed, **svm),
            ks=KsConfig(seed=seed, **ks),
            **ds,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad run config: {exc}") from exc
    if experiment.cov_mode not in ("subject", "pooled"):
        raise ConfigError(f"cov_mode must be 'subject' or 'pooled', got {experiment.cov_mode!r}")

    snapshot = {k: v for k, v in doc.items() if k != "out_dir"}
    snapshot["combo"] = combo_text.upper() if combo_text.lower() != "all" else "all"
    return RunSettings(input_path, out_dir, combos, experiment, snapshot)


def _load_table(settings: RunSettings):
    if not settings.input.is_file():
        raise ConfigError(f"input CSV not found: {settings.input}")
    data = settings.input.read_bytes()
    streams = ingest_csv(data)
    table = feature_table(streams, settings.experiment.period)
    logger.info("%d subjects, %d windows in period %d", len(streams), len(table),
                int(settings.experiment.period))
    return table, {settings.input.name: sha256(data)}


def cmd_run(args: argparse.Namespace) -> int:
    settings = resolve_run_settings(args)
    cfg = settings.experiment
    table, inputs = _load_table(settings)
    manifest = RunManifest("run", settings.snapshot, cfg.seed, inputs)
    mid = manifest.digest
    writer = ArtifactWriter(settings.out_dir, manifest)

    selector = FeatureSelector(table, cfg.ks, cfg.cov_mode)
    reports, failures = run_combos(table, cfg, settings.combos, selector)

    for combo in settings.combos:
        try:
            sel = selector.select(cfg.approach, combo, cfg.x_sigma_t)
        except DomainError:
            continue
        writer.write(f"selections/{combo.code}.json", sel.to_json().encode("utf-8"))
    for rep in reports:
        for row in rep.rows:
            model = replace(row.model, provenance={**row.model.provenance, "manifest": mid})
            writer.write(f"models/{rep.combo.code}/{row.subject}.json", model.to_json().encode("utf-8"))

    comment = f"manifest {mid}"
    writer.write("subjects.csv", subjects_csv(reports, comment))
    writer.write("combos.csv", combos_csv(reports, failures, comment))
    summary = summarize(cfg.period, cfg.approach, reports, failures)
    table_text = render_table([summary])
    writer.write("summary.txt", f"# {comment}\n{table_text}".encode("utf-8"))
    manifest.results = {
        "combos_ok": len(reports),
        "combos_failed": failures,
        "n_T": 124 if cfg.period is Period.SEDENTARY else 125,
    }
    writer.finish()
    print(table_text, end="")
    for combo, reason in failures.items():
        print(f"{combo}: failed: {reason}")
    return 0 if reports else 1


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = resolve_run_settings(args)
    cfg = replace(settings.experiment, approach=Approach.KS_COV)
    table, inputs = _load_table(settings)
    snapshot = dict(settings.snapshot, approach=Approach.KS_COV.value)
    snapshot.pop("x_sigma_t", None)
    manifest = RunManifest("sweep", snapshot, cfg.seed, inputs)
    writer = ArtifactWriter(settings.out_dir, manifest)

    report = sweep_threshold(table, cfg, combos=settings.combos)
    writer.write("sweep.csv", b"# manifest " + manifest.digest.encode() + b"\n" + report.to_csv())
    manifest.results = {
        "chosen_threshold": report.chosen_threshold,
        "acc_slack": report.acc_slack,
        "failures": report.failures,
    }
    writer.finish()
    sys.stdout.write(report.to_csv().decode())
    if report.chosen_threshold is None:
        print("chosen x_sigma_t = none (every combination failed)")
        for combo, reason in sorted(report.failures.items()):
            print(f"{combo}: failed: {reason}")
        return 1
    print(f"chosen x_sigma_t = {report.chosen_threshold}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wearauth", description="Implicit wearable-user authentication pipeline"
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"wearauth {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="simulate a synthetic cohort CSV")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out")
    gen.add_argument("--seed", type=int)
    gen.set_defaults(func=cmd_generate)

    for name, func, text in (
        ("run", cmd_run, "evaluate one period/approach pair"),
        ("sweep", cmd_sweep, "sweep the COV threshold grid"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--out-dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--period", type=int, choices=(0, 1))
        p.add_argument("--combo", help="biometric combination such as CM, or 'all'")
        p.add_argument("--approach", choices=[a.value for a in Approach])
        p.add_argument("--x-sigma-t", type=int, dest="x_sigma_t")
        p.add_argument("--acc-slack", type=float, dest="acc_slack")
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"wearauth: {exc}", file=sys.stderr)
        return 2
    except (DomainError, ParseError, ConflictError) as exc:
        print(f"wearauth: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
