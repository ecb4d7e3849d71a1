"""Stage orchestration: fingerprint -> dedup -> blocklist -> chunk -> describe
-> subsample -> stats, driven by an INI config, with an append-only run ledger."""
from __future__ import annotations

import configparser
import datetime as dt
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import corpus, dedup, describe, fingerprint, subsample
from .audio_io import CANONICAL_RATE, decode_pcm, resample

log = logging.getLogger(__name__)


class PipelineError(Exception):
    exit_code = 4


class ConfigInvalid(PipelineError):
    exit_code = 2


class MissingInput(PipelineError):
    exit_code = 3


class StageFailed(PipelineError):
    exit_code = 4


@dataclass(frozen=True)
class PipelineConfig:
    corpus_root: str = "."
    work_dir: str = "work"
    phases: int = 4
    min_run: int = dedup.DEFAULT_MIN_RUN
    tol: int = fingerprint.DEFAULT_TOL
    n_chunks: int = 60
    chunk_seed: int = 0
    describe_mode: str = "timeline"
    subsample_target: int = 15
    subsample_seed: int = 0
    dup_fraction: float = 0.07
    dup_copies: int = 10
    gender_target: float = 0.5
    jobs: int = 1

    def __post_init__(self):
        if self.phases < 1 or self.min_run < 1 or not 0 <= self.tol <= 32:
            raise ConfigInvalid("need phases >= 1, min_run >= 1 and 0 <= tol <= 32")
        if self.n_chunks < 0 or self.subsample_target < 1 or self.jobs < 1:
            raise ConfigInvalid("n_chunks >= 0, subsample target >= 1 and jobs >= 1 required")
        if self.describe_mode not in ("timeline", "baseline"):
            raise ConfigInvalid(f"describe mode must be timeline or baseline, got {self.describe_mode!r}")
        if not 0 < self.dup_fraction < 1 or self.dup_copies < 1 or not 0 <= self.gender_target <= 1:
            raise ConfigInvalid("bad subsample parameters")

    @property
    def root(self) -> Path:
        return Path(self.corpus_root)

    @property
    def work(self) -> Path:
        return Path(self.work_dir)

    def config_hash(self) -> str:
        doc = {k: v for k, v in asdict(self).items() if k != "jobs"}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# INI section/key -> config field
_INI_KEYS = {
    ("paths", "corpus_root"): "corpus_root",
    ("paths", "work_dir"): "work_dir",
    ("fingerprint", "phases"): "phases",
    ("dedup", "min_run"): "min_run",
    ("dedup", "tol"): "tol",
    ("chunk", "n"): "n_chunks",
    ("chunk", "seed"): "chunk_seed",
    ("describe", "mode"): "describe_mode",
    ("subsample", "target"): "subsample_target",
    ("subsample", "seed"): "subsample_seed",
    ("subsample", "dup_fraction"): "dup_fraction",
    ("subsample", "dup_copies"): "dup_copies",
    ("subsample", "gender_target"): "gender_target",
    ("run", "jobs"): "jobs",
}


def load_config(path) -> PipelineConfig:
    """Read an INI file; relative paths resolve against the file's directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file {path} not found")
    ini = configparser.ConfigParser()
    try:
        ini.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigInvalid(str(exc)) from exc
    types = {f.name: f.type for f in fields(PipelineConfig)}
    values = {}
    for section in ini.sections():
        for key, raw in ini[section].items():
            name = _INI_KEYS.get((section, key))
            if name is None:
                raise ConfigInvalid(f"unknown config key [{section}] {key}")
            kind = types[name]
            try:
                values[name] = int(raw) if kind == "int" else float(raw) if kind == "float" else raw
            except ValueError as exc:
                raise ConfigInvalid(f"[{section}] {key}: {exc}") from exc
    for name in ("corpus_root", "work_dir"):
        if name in values and not Path(values[name]).is_absolute():
            values[name] = str((path.parent / values[name]).resolve())
    values.setdefault("corpus_root", str(path.parent.resolve()))
    values.setdefault("work_dir", str((path.parent / "work").resolve()))
    return PipelineConfig(**values)


def write_config(cfg: PipelineConfig, path) -> None:
    ini = configparser.ConfigParser()
    d = asdict(cfg)
    for (section, key), name in _INI_KEYS.items():
        if not ini.has_section(section):
            ini.add_section(section)
        ini[section][key] = str(d[name])
    with open(path, "w", encoding="utf-8") as fh:
        ini.write(fh)


# --- stage plumbing ------------------------------------------------------------

@dataclass
class StageReport:
    stage: str
    status: str
    config_hash: str
    outputs: dict = field(default_factory=dict)
    detail: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _paths(cfg: PipelineConfig) -> dict:
    r, w = cfg.root, cfg.work
    return {
        "catalog": r / "catalog.jsonl",
        "audio": r / "audio",
        "eval_audio": r / "eval",
        "timelines": r / "timelines",
        "fp_corpus": w / "fp" / "corpus",
        "fp_eval": w / "fp" / "eval",
        "dedup_report": w / "dedup.jsonl",
        "blocklist_report": w / "blocklist.jsonl",
        "clean_catalog": w / "catalog_clean.jsonl",
        "manifest": w / "manifest.jsonl",
        "annotations": w / "sidecars",
        "subsamples": w / "subsamples",
        "stats_json": w / "stats.json",
        "stats_text": w / "stats.txt",
        "ledger": w / "ledger.jsonl",
    }


STAGES = ("fingerprint", "dedup", "blocklist", "chunk", "describe", "subsample", "stats")

INPUTS = {
    "fingerprint": ("catalog", "audio", "eval_audio"),
    "dedup": ("catalog", "fp_corpus"),
    "blocklist": ("catalog", "fp_corpus", "fp_eval", "dedup_report"),
    "chunk": ("clean_catalog",),
    "describe": ("manifest", "catalog"),
    "subsample": ("manifest", "annotations"),
    "stats": ("manifest", "annotations"),
}
INPUT_NAMES = {"annotations": "annotations map (describe sidecars)"}


def _check_inputs(stage: str, cfg: PipelineConfig) -> None:
    paths = _paths(cfg)
    for key in INPUTS[stage]:
        if not paths[key].exists():
            raise MissingInput(f"{stage}: missing {INPUT_NAMES.get(key, key)} at {paths[key]}")
    if stage == "describe":
        key = "timelines" if cfg.describe_mode == "timeline" else "audio"
        if not paths[key].exists():
            raise MissingInput(f"describe: missing {key} at {paths[key]}")


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _output_digests(cfg: PipelineConfig, keys) -> dict:
    out = {}
    for key in keys:
        p = _paths(cfg)[key]
        files = sorted(x for x in p.rglob("*") if x.is_file()) if p.is_dir() else [p]
        for f in files:
            out[str(f.relative_to(cfg.work))] = _digest(f)
    return out


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def _load_audio(path: Path):
    buf = decode_pcm(path)
    return buf if buf.sample_rate == CANONICAL_RATE else resample(buf, CANONICAL_RATE)


def _fingerprint_one(args):
    src, dst_dir, sid, phases = args
    track = fingerprint.extract(_load_audio(src), sid, phases=phases)
    fingerprint.write_track_dir(track, dst_dir)
    return sid, len(track)


# --- stages --------------------------------------------------------------------

def stage_fingerprint(cfg: PipelineConfig) -> dict:
    p = _paths(cfg)
    catalog = corpus.load_catalog(p["catalog"])
    jobs = []
    for out_key, items in (("fp_corpus", [(cfg.root / f.path, f.id) for f in catalog]),
                           ("fp_eval", [(wav, wav.stem) for wav in sorted(p["eval_audio"].glob("*.wav"))])):
        dst = p[out_key]
        dst.mkdir(parents=True, exist_ok=True)
        for old in dst.glob("*.fpt"):
            old.unlink()
        # the blocklist side is indexed, so a single phase suffices there
        phases = cfg.phases if out_key == "fp_corpus" else 1
        jobs += [(src, dst, sid, phases) for src, sid in items]
    missing = [str(j[0]) for j in jobs if not j[0].exists()]
    if missing:
        raise MissingInput(f"fingerprint: audio file {missing[0]} not found")
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            counts = dict(pool.map(_fingerprint_one, jobs))
    else:
        counts = dict(map(_fingerprint_one, jobs))
    return {"tracks": len(counts), "codes": sum(counts.values())}


def _ordered_catalog(cfg: PipelineConfig, key: str = "catalog") -> list:
    catalog = corpus.load_catalog(_paths(cfg)[key])
    return sorted(catalog, key=lambda f: (f.broadcast_date, f.id))


def stage_dedup(cfg: PipelineConfig) -> dict:
    p = _paths(cfg)
    catalog = _ordered_catalog(cfg)
    tracks = fingerprint.read_track_dir(p["fp_corpus"])
    missing = [f.id for f in catalog if f.id not in tracks]
    if missing:
        raise MissingInput(f"dedup: no fingerprints for {missing[0]}")
    report = dedup.dedup_corpus([tracks[f.id] for f in catalog], cfg.min_run, cfg.tol,
                                durations={f.id: f.duration_s for f in catalog})
    order = [f.id for f in catalog]
    p["dedup_report"].write_text(report.to_jsonl(order), encoding="utf-8")
    return {"kept": len(report.kept), "removed": len(report.removed),
            "removed_fraction": round(report.removed_fraction, 6)}


def stage_blocklist(cfg: PipelineConfig) -> dict:
    """Whole source files that match any evaluation file are dropped."""
    p = _paths(cfg)
    removed_by_dedup = {json.loads(l)["source_id"] for l in p["dedup_report"].read_text().splitlines()
                        if json.loads(l)["verdict"] == "REMOVED"}
    catalog = [f for f in _ordered_catalog(cfg) if f.id not in removed_by_dedup]
    tracks = fingerprint.read_track_dir(p["fp_corpus"])
    block = dedup.build_index(fingerprint.read_track_dir(p["fp_eval"]).values())
    kept, removed = dedup.apply_blocklist(block, [tracks[f.id] for f in catalog], cfg.min_run, cfg.tol)
    p["blocklist_report"].write_text(_jsonl(dedup.removal_to_dict(r) for r in removed), encoding="utf-8")
    keep = set(kept)
    corpus.save_catalog([f for f in catalog if f.id in keep], p["clean_catalog"])
    return {"checked": len(catalog), "removed": len(removed), "kept": len(kept)}


def stage_chunk(cfg: PipelineConfig) -> dict:
    p = _paths(cfg)
    catalog = _ordered_catalog(cfg, "clean_catalog")
    manifest = corpus.sample_chunks(catalog, cfg.n_chunks, cfg.chunk_seed)
    manifest.save(p["manifest"])
    return {"chunks": len(manifest), "hours": round(manifest.total_hours, 6)}


def stage_describe(cfg: PipelineConfig) -> dict:
    p = _paths(cfg)
    manifest = corpus.ChunkManifest.load(p["manifest"])
    out = p["annotations"]
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("*.json"):
        old.unlink()
    sources = {f.id: f for f in corpus.load_catalog(p["catalog"])}
    cache = {}
    for c in manifest.chunks:
        if cfg.describe_mode == "timeline":
            if c.source_id not in cache:
                tl_path = p["timelines"] / f"{c.source_id}.json"
                if not tl_path.exists():
                    raise MissingInput(f"describe: no timeline for {c.source_id}")
                cache = {c.source_id: json.loads(tl_path.read_text(encoding="utf-8"))}
            ann = describe.annotate_from_timeline(cache[c.source_id], c.offset_s, c.duration_s)
        else:
            if c.source_id not in cache:
                cache = {c.source_id: _load_audio(cfg.root / sources[c.source_id].path)}
            ann = describe.baseline_annotation(cache[c.source_id].slice(c.offset_s, c.offset_s + c.duration_s))
        describe.write_sidecar(ann, out / f"{c.chunk_id}.json")
    return {"annotated": len(manifest), "mode": cfg.describe_mode}


def _annotated_manifest(cfg: PipelineConfig) -> corpus.ChunkManifest:
    p = _paths(cfg)
    manifest = corpus.ChunkManifest.load(p["manifest"])
    try:
        manifest.annotations = describe.ingest_dir(p["annotations"], manifest.ids)
    except FileNotFoundError as exc:
        raise MissingInput(f"annotations map incomplete: {exc.filename}") from exc
    return manifest


def subsample_specs(cfg: PipelineConfig) -> list:
    return [subsample.SubsampleSpec(name, cfg.subsample_target, cfg.subsample_seed,
                                    dup_fraction=cfg.dup_fraction, dup_copies=cfg.dup_copies,
                                    gender_target=cfg.gender_target)
            for name in subsample.NAMES]


def stage_subsample(cfg: PipelineConfig) -> dict:
    p = _paths(cfg)
    manifest = _annotated_manifest(cfg)
    out = p["subsamples"]
    out.mkdir(parents=True, exist_ok=True)
    base, checks, failed = None, {}, []
    for spec in subsample_specs(cfg):
        try:
            sub = subsample.build(spec, manifest, base)
        except subsample.SubsampleError as exc:
            raise StageFailed(f"subsample {spec.name}: {exc}") from exc
        if spec.name == "base":
            base = sub
        sub.save(out / f"{spec.name}.txt")
        results = subsample.verify_subsample(sub, manifest)
        checks[spec.name] = [asdict(c) for c in results]
        failed += [f"{spec.name}.{c.name}" for c in results if not c.passed]
    (out / "verify.json").write_text(json.dumps(checks, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if failed:
        raise StageFailed(f"subsample checks failed: {', '.join(failed)}")
    return {"built": list(subsample.NAMES)}


def stage_stats(cfg: PipelineConfig) -> dict:
    p = _paths(cfg)
    report = corpus.stats_report(_annotated_manifest(cfg))
    p["stats_json"].write_text(report.to_json(), encoding="utf-8")
    p["stats_text"].write_text(report.to_text(), encoding="utf-8")
    return {"segments": report.total_segments, "pct_speech": round(report.pct_speech, 4)}


_RUNNERS = {
    "fingerprint": (stage_fingerprint, ("fp_corpus", "fp_eval")),
    "dedup": (stage_dedup, ("dedup_report",)),
    "blocklist": (stage_blocklist, ("blocklist_report", "clean_catalog")),
    "chunk": (stage_chunk, ("manifest",)),
    "describe": (stage_describe, ("annotations",)),
    "subsample": (stage_subsample, ("subsamples",)),
    "stats": (stage_stats, ("stats_json", "stats_text")),
}


def append_ledger(cfg: PipelineConfig, report: StageReport) -> None:
    path = _paths(cfg)["ledger"]
    path.parent.mkdir(parents=True, exist_ok=True)
    row = {"time": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"), **asdict(report)}
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_ledger(cfg: PipelineConfig) -> list[dict]:
    path = _paths(cfg)["ledger"]
    if not path.exists():
        return []
    return [json.loads(l) for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]


def run_stage(name: str, cfg: PipelineConfig, force: bool = False) -> StageReport:
    """Run one stage; with ``force``, missing upstream outputs are rebuilt first."""
    if name not in _RUNNERS:
        raise ConfigInvalid(f"unknown stage {name!r}; expected one of {STAGES}")
    try:
        _check_inputs(name, cfg)
    except MissingInput:
        if not force or STAGES.index(name) == 0:
            raise
        run_stage(STAGES[STAGES.index(name) - 1], cfg, force=True)
        _check_inputs(name, cfg)
    cfg.work.mkdir(parents=True, exist_ok=True)
    fn, outputs = _RUNNERS[name]
    try:
        detail = fn(cfg)
    except PipelineError as exc:
        append_ledger(cfg, StageReport(name, "failed", cfg.config_hash(), detail={"error": str(exc)}))
        raise
    except Exception as exc:
        append_ledger(cfg, StageReport(name, "failed", cfg.config_hash(),
                                       detail={"error": f"{type(exc).__name__}: {exc}"}))
        raise StageFailed(f"{name}: {type(exc).__name__}: {exc}") from exc
    report = StageReport(name, "ok", cfg.config_hash(), _output_digests(cfg, outputs), detail)
    append_ledger(cfg, report)
    log.info("%s: %s", name, detail)
    return report


def run_pipeline(cfg: PipelineConfig, stages=STAGES) -> list[StageReport]:
    return [run_stage(s, cfg) for s in stages]
