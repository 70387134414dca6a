"""Declarative pipeline: ingest -> merge -> sample -> validate.

Every stage reads its inputs from the output directory and writes its
artifact there, so stages can be run separately and resumed.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .bayesnet import read_model, sample, write_model
from .ingest import (POLICIES, PreparedDataset, ingest_macro, ingest_micro, read_prepared,
                     write_prepared)
from .learn import LearnConfig
from .merge import merge_sources, plan_from_schema
from .schema import Schema, load_schema
from .validate import validate_population

log = logging.getLogger(__name__)

STAGES = ("ingest", "merge", "sample", "validate")


class ConfigError(ValueError):
    pass


class StageDependencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class SourceConfig:
    path: Path
    harmonization: dict = field(default_factory=dict)
    missing_policy: str = "listwise-delete"
    missing_token: str = "NA"
    delimiter: str = ","
    count_column: str = "count"


@dataclass(frozen=True)
class SampleSpec:
    n: int = 10_000
    seed: int = 0
    evidence: dict = field(default_factory=dict)
    workers: int = 1
    max_tries: int = 10_000


@dataclass(frozen=True)
class ValidateSpec:
    references: Optional[list] = None
    joint_sets: Optional[list] = None
    scatter: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    schema_path: Path
    sources: dict
    merge: dict
    learn: LearnConfig
    sample: SampleSpec
    validate: ValidateSpec
    output: Path
    raw: dict = field(default_factory=dict, repr=False)

    def with_overrides(self, seed: Optional[int] = None, n: Optional[int] = None,
                       output: Optional[Path] = None) -> "PipelineConfig":
        spec = self.sample
        if seed is not None:
            spec = replace(spec, seed=int(seed))
        if n is not None:
            spec = replace(spec, n=int(n))
        return replace(self, sample=spec, output=Path(output) if output else self.output)

    def resolved(self) -> dict:
        """Every effective value, for hashing and the run manifest."""
        return {
            "schema": str(self.schema_path),
            "sources": {k: {**asdict(v), "path": str(v.path)} for k, v in sorted(self.sources.items())},
            "merge": self.merge,
            "learn": asdict(self.learn),
            "sample": asdict(self.sample),
            "validate": asdict(self.validate),
        }

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.resolved(), sort_keys=True).encode()).hexdigest()


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    base = path.parent

    def rel(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    if "schema" not in doc:
        raise ConfigError("config needs a 'schema' entry")
    sources = {}
    for sid, sc in (doc.get("sources") or {}).items():
        if "path" not in sc:
            raise ConfigError(f"source {sid!r} needs a path")
        extra = set(sc) - {"path", "harmonization", "missing_policy", "missing_token",
                           "delimiter", "count_column"}
        if extra:
            raise ConfigError(f"source {sid!r}: unknown keys {sorted(extra)}")
        sources[sid] = SourceConfig(
            path=rel(sc["path"]),
            harmonization={a: {str(k): str(v) for k, v in m.items()}
                           for a, m in (sc.get("harmonization") or {}).items()},
            missing_policy=sc.get("missing_policy", "listwise-delete"),
            missing_token=str(sc.get("missing_token", "NA")),
            delimiter=sc.get("delimiter", ","),
            count_column=sc.get("count_column", "count"),
        )
    try:
        learn = LearnConfig(**(doc.get("learn") or {}))
        spec = SampleSpec(**(doc.get("sample") or {}))
        vspec = ValidateSpec(**(doc.get("validate") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return PipelineConfig(rel(doc["schema"]), sources, doc.get("merge") or {}, learn, spec,
                          vspec, rel(doc.get("output", "out")), doc)


def check_config(config: PipelineConfig, schema: Schema) -> None:
    """Cross-validate the config against the schema before doing any work."""
    for s in schema.sources:
        if s.id not in config.sources:
            raise ConfigError(f"no input configured for source {s.id!r}")
    for sid, sc in config.sources.items():
        try:
            desc = schema.source(sid)
        except KeyError:
            raise ConfigError(f"configured source {sid!r} is not in the schema") from None
        if sc.missing_policy not in POLICIES:
            raise ConfigError(f"source {sid!r}: unknown missing policy {sc.missing_policy!r}")
        for attr in sc.harmonization:
            if attr not in desc.attributes:
                raise ConfigError(f"source {sid!r}: harmonization for undeclared {attr!r}")
    msrc = (config.merge.get("sources") or {})
    for sid in msrc:
        if sid not in config.sources:
            raise ConfigError(f"merge plan names unknown source {sid!r}")
    for k in config.sample.evidence:
        if k not in schema:
            raise ConfigError(f"evidence on unknown attribute {k!r}")
    for r in config.validate.references or []:
        if r not in config.sources:
            raise ConfigError(f"unknown validation reference {r!r}")


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.schema = load_schema(config.schema_path)
        check_config(config, self.schema)
        self.out = Path(config.output)

    # -- artifact paths ----------------------------------------------------
    def prepared_path(self, sid: str) -> Path:
        return self.out / "prepared" / f"{sid}.csv"

    @property
    def model_path(self) -> Path:
        return self.out / "model.json"

    @property
    def population_path(self) -> Path:
        return self.out / "population.csv"

    @property
    def report_path(self) -> Path:
        return self.out / "report.json"

    # -- stages --------------------------------------------------------------
    def ingest(self) -> dict:
        (self.out / "prepared").mkdir(parents=True, exist_ok=True)
        reports = {}
        for desc in self.schema.sources:
            sc = self.config.sources[desc.id]
            if not sc.path.exists():
                raise ConfigError(f"input file {sc.path} for source {desc.id!r} not found")
            if desc.kind == "micro":
                ds = ingest_micro(sc.path, desc, self.schema, sc.harmonization, sc.missing_policy,
                                  sc.missing_token, sc.delimiter)
            else:
                ds = ingest_macro(sc.path, desc, self.schema, sc.harmonization, sc.count_column,
                                  sc.missing_token, sc.delimiter)
            write_prepared(ds, self.prepared_path(desc.id))
            reports[desc.id] = ds.report.to_dict()
        _write_json(self.out / "ingest_report.json", reports)
        return {"ingest_report": reports}

    def load_prepared(self) -> list[PreparedDataset]:
        out = []
        for desc in self.schema.sources:
            p = self.prepared_path(desc.id)
            if not p.exists():
                raise StageDependencyError(f"prepared dataset {p} missing; run the ingest stage")
            out.append(read_prepared(p, desc.id, self.schema))
        return out

    def merge(self) -> dict:
        datasets = self.load_prepared()
        m = self.config.merge
        plan = plan_from_schema(
            self.schema,
            modes={k: v.get("mode", "learnt") for k, v in (m.get("sources") or {}).items()},
            parents={k: v.get("parents") or {} for k, v in (m.get("sources") or {}).items()},
            core_mode=m.get("core_mode", "learnt"),
            core_edges=m.get("core_edges") or (),
        )
        net = merge_sources(datasets, plan, self.config.learn, self.schema,
                            workers=int(m.get("workers", 1)))
        write_model(net, self.model_path)
        return {"nodes": len(net.nodes), "edges": len(net.structure.edges)}

    def sample(self) -> dict:
        if not self.model_path.exists():
            raise StageDependencyError(f"model {self.model_path} missing; run the merge stage")
        net = read_model(self.model_path)
        spec = self.config.sample
        draws = sample(net, spec.n, spec.seed, spec.evidence, spec.max_tries, spec.workers)
        cols = self.schema.order(net.nodes)
        write_population(net, draws, cols, self.population_path)
        return {"n": spec.n, "seed": spec.seed}

    def validate(self) -> dict:
        if not self.model_path.exists():
            raise StageDependencyError(f"model {self.model_path} missing; run the merge stage")
        if not self.population_path.exists():
            raise StageDependencyError(
                f"population {self.population_path} missing; run the sample stage")
        synth = read_prepared(self.population_path, "synthetic", self.schema)
        refs = self.load_prepared()
        wanted = self.config.validate.references
        if wanted:
            refs = [r for r in refs if r.source_id in wanted]
        js = self.config.validate.joint_sets
        if js is not None:
            js = [tuple(x) for x in js]
        report = validate_population(
            synth, refs, self.schema, js, keep_scatter=self.config.validate.scatter,
            metadata={"sample_seed": self.config.sample.seed, "learn_seed": self.config.learn.seed},
        )
        self.report_path.write_text(report.to_json(), encoding="utf-8")
        (self.out / "report_summary.csv").write_text(report.to_csv(), encoding="utf-8")
        if self.config.validate.scatter:
            sdir = self.out / "scatter"
            sdir.mkdir(exist_ok=True)
            for (rid, attrs), (x, y) in sorted(report.scatter.items()):
                name = f"{rid}__{'__'.join(attrs)}.csv"
                with open(sdir / name, "w", newline="", encoding="utf-8") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["reference", "synthetic"])
                    w.writerows((repr(float(a)), repr(float(b))) for a, b in zip(x, y))
        return {"max_marginal_distance": report.max_marginal_distance(),
                "joint_sets": len(report.joints)}

    def run(self, stage: str = "all") -> dict:
        stages = STAGES if stage == "all" else (stage,)
        if any(s not in STAGES for s in stages):
            raise ConfigError(f"unknown stage {stage!r}")
        self.out.mkdir(parents=True, exist_ok=True)
        results = {}
        for s in stages:
            log.info("stage %s", s)
            results[s] = getattr(self, s)()
            self._update_manifest(s, results[s])
        return results

    def _update_manifest(self, stage: str, result: dict) -> None:
        path = self.out / "manifest.json"
        man = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
        man.update({
            "config_hash": self.config.hash(),
            "config": self.config.resolved(),
            "seeds": {"learn": self.config.learn.seed, "sample": self.config.sample.seed},
            "versions": {"popsynth": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
        })
        arts = {}
        for p in sorted(self.out.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                arts[str(p.relative_to(self.out))] = _sha256(p)
        man["artifacts"] = arts
        man.setdefault("stages", {})[stage] = result
        _write_json(path, man)


def write_population(net, draws: np.ndarray, cols, path) -> None:
    """One row per individual, columns in ``cols`` order, state labels as cells."""
    idx = [net.nodes.index(c) for c in cols]
    labels = [np.array(net.states[c], dtype=object) for c in cols]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        step = 1 << 16
        for s in range(0, draws.shape[0], step):
            block = draws[s:s + step]
            w.writerows(zip(*(labels[j][block[:, i]] for j, i in enumerate(idx))))


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
