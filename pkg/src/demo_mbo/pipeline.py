"""Pipeline configuration, content-addressed artifacts and the per-seed stage runner."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import inspect
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import GuidanceConfig, NoiseSchedule, ScoreNetwork, train_score_network
from .editing import EditConfig, generate_candidates, sample_from_prior, select_top_k
from .numeric_core import RngStream, load_checkpoint, save_checkpoint
from .surrogate import SurrogateConfig, ascend, build_synthetic_dataset, train_surrogate
from .tasks import (
    TASKS,
    Dataset,
    DesignScaler,
    build_offline_dataset,
    load_dataset,
    make_task,
    normalize_score,
    oracle_eval,
    save_dataset,
)

log = logging.getLogger(__name__)

STAGES = ("gen-data", "train-surrogate", "synthesize", "train-diffusion", "edit", "evaluate")
VARIANTS = ("full", "no_pseudo_target", "no_editing", "grad")

# Fixed stream ids per stage, so changing one stage never shifts another's draws.
STREAM_DATA, STREAM_SURROGATE, STREAM_DIFFUSION, STREAM_EDIT, STREAM_PRIOR = 1, 2, 3, 5, 6


class ConfigError(ValueError):
    pass


class MissingArtifact(RuntimeError):
    pass


@dataclass
class TaskSection:
    name: str = "levy"
    params: dict = field(default_factory=lambda: {"dim": 10})


@dataclass
class DatasetSection:
    n: int = 5000
    keep_fraction: float = 0.9
    standardize: bool = True


@dataclass
class SurrogateSection:
    hidden: int = 256
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    ascent_step: float | None = None  # None: 1e-3 continuous, 1e-1 discrete
    ascent_iters: int = 100


@dataclass
class DiffusionSection:
    hidden: int = 256
    epochs: int = 300
    batch_size: int = 128
    lr: float = 1e-3
    beta_min: float = 0.1
    beta_max: float = 20.0
    M: int = 1000
    t_eps: float = 1e-3
    n_time: int = 32
    n_cond: int = 16
    p_uncond: float = 0.15
    ema: float = 0.999


@dataclass
class EditSection:
    m: int = 400
    y_target: float = 1.0
    omega: float = 2.0
    K: int = 256
    steps: int = 128


@dataclass
class RunSection:
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    sweep_m: list = field(default_factory=lambda: list(range(0, 1001, 100)))


SECTIONS = {
    "task": TaskSection,
    "dataset": DatasetSection,
    "surrogate": SurrogateSection,
    "diffusion": DiffusionSection,
    "edit": EditSection,
    "run": RunSection,
}

PAPER_PARITY = {
    "task": {"dim": 60},
    "dataset": {"n": 15000},
    "surrogate": {"hidden": 2048, "lr": 1e-1},
    "diffusion": {"hidden": 2048, "epochs": 1000},
    "run": {"seeds": list(range(8))},
}


def _parse_value(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() not in ("true", "false"):
            raise ConfigError(f"expected true/false, got {text!r}")
        return text.lower() == "true"
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, list):
        return [int(v) for v in text.replace(",", " ").split()]
    if default is None:
        return None if text == "auto" else float(text)
    return text


def _format_value(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(str(x) for x in v)
    return str(v)


@dataclass
class PipelineConfig:
    task: TaskSection = field(default_factory=TaskSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    edit: EditSection = field(default_factory=EditSection)
    run: RunSection = field(default_factory=RunSection)

    # -- (de)serialisation --

    @classmethod
    def from_text(cls, text: str, paper_parity: bool = False) -> PipelineConfig:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string(text)
        cfg = cls.paper_parity() if paper_parity else cls()
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser[section].items():
                cfg.set(section, key, raw)
        return cfg

    @classmethod
    def from_file(cls, path, paper_parity: bool = False) -> PipelineConfig:
        return cls.from_text(Path(path).read_text(), paper_parity)

    @classmethod
    def paper_parity(cls) -> PipelineConfig:
        cfg = cls()
        for section, values in PAPER_PARITY.items():
            for key, v in values.items():
                cfg.set(section, key, _format_value(v))
        return cfg

    def set(self, section: str, key: str, raw: str) -> None:
        sec = getattr(self, section)
        if section == "task":
            if key == "name":
                if raw.strip() not in TASKS:
                    raise ConfigError(f"unknown task {raw.strip()!r}")
                if raw.strip() != sec.name:
                    sec.params = {}
                sec.name = raw.strip()
                return
            allowed = inspect.signature(TASKS[sec.name]).parameters
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} for task {sec.name!r}")
            sec.params[key] = _parse_value(raw, allowed[key].default)
            return
        names = {f.name: f for f in dataclasses.fields(sec)}
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        default = getattr(type(sec)(), key)
        try:
            setattr(sec, key, _parse_value(raw, default))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None

    def section_dict(self, section: str) -> dict:
        sec = getattr(self, section)
        if section == "task":
            return {"name": sec.name, **dict(sorted(sec.params.items()))}
        return dataclasses.asdict(sec)

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section in SECTIONS:
            parser[section] = {k: _format_value(v) for k, v in self.section_dict(section).items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self, *sections: str) -> str:
        payload = json.dumps({s: self.section_dict(s) for s in sections or SECTIONS}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    # -- typed views --

    def make_task(self):
        return make_task(self.task.name, **self.task.params)

    def surrogate_config(self, discrete: bool) -> SurrogateConfig:
        s = self.surrogate
        step = s.ascent_step if s.ascent_step is not None else (1e-1 if discrete else 1e-3)
        return SurrogateConfig(s.epochs, s.batch_size, s.lr, step, s.ascent_iters, s.hidden)

    def schedule(self) -> NoiseSchedule:
        d = self.diffusion
        return NoiseSchedule(d.beta_min, d.beta_max, d.M, d.t_eps)

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(self.edit.omega, self.diffusion.p_uncond)

    def edit_config(self, m: int | None = None) -> EditConfig:
        e = self.edit
        return EditConfig(e.m if m is None else m, e.y_target, e.omega, e.K, e.steps)


def _key(*parts: str) -> str:
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def write_candidates_csv(path, X: np.ndarray, y_raw: np.ndarray, y_norm: np.ndarray) -> None:
    """Candidate file: ``k, x0..x{d-1}, y_raw, y_norm`` in rank order."""
    header = ["k"] + [f"x{j}" for j in range(X.shape[1])] + ["y_raw", "y_norm"]
    lines = [",".join(header)]
    for k in range(X.shape[0]):
        vals = [repr(float(v)) for v in X[k]] + [repr(float(y_raw[k])), repr(float(y_norm[k]))]
        lines.append(",".join([str(k)] + vals))
    path = Path(path)
    tmp = path.with_suffix(".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def read_candidates_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln])
    return rows[:, 1:-2], rows[:, -2], rows[:, -1]


@dataclass
class Candidates:
    X: np.ndarray  # original design units
    y_raw: np.ndarray
    y_norm: np.ndarray


class Runner:
    """Lazily builds every artifact for one (config, seed).

    With a ``store`` directory each artifact lives under
    ``store/<stage>-<key>/`` where the key hashes exactly the config sections
    (and upstream keys) it depends on; existing artifacts are loaded instead of
    recomputed. ``compute`` limits which stages may be computed; anything else
    must already be on disk.
    """

    def __init__(self, config: PipelineConfig, seed: int, store=None, compute=None):
        self.config = config
        self.seed = int(seed)
        self.store = Path(store) if store is not None else None
        self.compute = set(compute) if compute is not None else None
        self.task = config.make_task()
        self.sched = config.schedule()
        self._cache: dict = {}

    # -- keys / paths --

    def key(self, stage: str, variant: str = "full", m: int | None = None) -> str:
        c = self.config
        if stage == "gen-data":
            return _key(stage, c.digest("task", "dataset"), str(self.seed))
        if stage in ("train-surrogate", "synthesize"):
            return _key(stage, self.key("gen-data"), c.digest("surrogate"))
        if stage == "train-diffusion":
            upstream = self.key("synthesize") if variant != "no_pseudo_target" else self.key("gen-data")
            return _key(stage, upstream, c.digest("diffusion"))
        if stage in ("edit", "evaluate"):
            edit = dict(c.section_dict("edit"), m=c.edit.m if m is None else m)
            if variant == "grad":
                upstream = self.key("synthesize")
            else:
                upstream = self.key("train-diffusion", variant)
            return _key(stage, upstream, variant, json.dumps(edit, sort_keys=True))
        raise ValueError(f"unknown stage {stage!r}")

    def artifact_dir(self, stage: str, variant: str = "full", m: int | None = None) -> Path | None:
        if self.store is None:
            return None
        return self.store / f"{stage}-{self.key(stage, variant, m)}"

    def _may_compute(self, stage: str, path: Path | None) -> None:
        if self.compute is not None and stage not in self.compute:
            where = f" (expected {path})" if path else ""
            raise MissingArtifact(f"upstream stage '{stage}' has no artifact{where}; run it first")

    def _memo(self, name, fn):
        if name not in self._cache:
            self._cache[name] = fn()
        return self._cache[name]

    # -- stages --

    def dataset(self) -> tuple[Dataset, DesignScaler]:
        return self._memo("data", self._dataset)

    def _dataset(self):
        d = self.artifact_dir("gen-data")
        if d is not None and (d / "dataset.csv").exists():
            data, scaler = load_dataset(d / "dataset.csv", self.task)
            return data, scaler
        self._may_compute("gen-data", d)
        ds = self.config.dataset
        data = build_offline_dataset(self.task, ds.n, ds.keep_fraction, RngStream(self.seed, STREAM_DATA))
        if ds.standardize and not self.task.discrete:
            scaler = DesignScaler.fit(data.X)
        else:
            scaler = DesignScaler.identity(self.task.dim)
        if d is not None:
            d.mkdir(parents=True, exist_ok=True)
            save_dataset(d / "dataset.csv", data, scaler)
        return data, scaler

    def model_data(self) -> Dataset:
        """Offline dataset with designs mapped into the model's standardised space."""
        data, scaler = self.dataset()
        return data.with_designs(scaler.transform(data.X))

    def surrogate(self):
        return self._memo("surrogate", self._surrogate)

    def _surrogate(self):
        d = self.artifact_dir("train-surrogate")
        if d is not None and (d / "surrogate.ckpt").exists():
            params, meta = load_checkpoint(d / "surrogate.ckpt")
            return params, meta["train_mse"]
        self._may_compute("train-surrogate", d)
        cfg = self.config.surrogate_config(self.task.discrete)
        params, mse = train_surrogate(self.model_data(), cfg, RngStream(self.seed, STREAM_SURROGATE))
        if d is not None:
            d.mkdir(parents=True, exist_ok=True)
            save_checkpoint(d / "surrogate.ckpt", params, {"kind": "surrogate", "train_mse": mse})
        return params, mse

    def synthetic(self) -> Dataset:
        """D' in model space."""
        return self._memo("synthetic", self._synthetic)

    def _synthetic(self):
        _, scaler = self.dataset()
        d = self.artifact_dir("synthesize")
        if d is not None and (d / "synthetic.csv").exists():
            data, _ = load_dataset(d / "synthetic.csv", self.task)
            return data.with_designs(scaler.transform(data.X))
        self._may_compute("synthesize", d)
        params, _ = self.surrogate()
        cfg = self.config.surrogate_config(self.task.discrete)
        synth = build_synthetic_dataset(params, self.model_data(), cfg)
        if d is not None:
            d.mkdir(parents=True, exist_ok=True)
            save_dataset(d / "synthetic.csv", synth.with_designs(scaler.inverse(synth.X)), scaler)
            # Reload so in-memory values match what later processes read back.
            data, _ = load_dataset(d / "synthetic.csv", self.task)
            return data.with_designs(scaler.transform(data.X))
        return synth

    def score_network(self, variant: str = "full") -> tuple[ScoreNetwork, list[float]]:
        source = "offline" if variant == "no_pseudo_target" else "synthetic"
        return self._memo(("net", source), lambda: self._score_network(variant, source))

    def _score_network(self, variant, source):
        d = self.artifact_dir("train-diffusion", variant)
        if d is not None and (d / "score.ckpt").exists():
            params, meta = load_checkpoint(d / "score.ckpt")
            return ScoreNetwork.from_meta(params, meta), meta["loss_history"]
        self._may_compute("train-diffusion", d)
        data = self.synthetic() if source == "synthetic" else self.model_data()
        dc = self.config.diffusion
        net, history = train_score_network(
            data, self.sched, self.config.guidance(), dc.epochs, dc.batch_size,
            RngStream(self.seed, STREAM_DIFFUSION), hidden=dc.hidden, lr=dc.lr,
            n_time=dc.n_time, n_cond=dc.n_cond, ema=dc.ema,
        )
        if d is not None:
            d.mkdir(parents=True, exist_ok=True)
            meta = dict(net.meta(), trained_on=source, loss_history=history)
            save_checkpoint(d / "score.ckpt", net.params, meta)
        return net, history

    def candidates(self, variant: str = "full", m: int | None = None) -> Candidates:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        return self._memo(("cand", variant, m), lambda: self._candidates(variant, m))

    def _candidates(self, variant, m):
        data, scaler = self.dataset()
        d = self.artifact_dir("edit", variant, m)
        if d is not None and (d / "candidates.csv").exists():
            X, y_raw, y_norm = read_candidates_csv(d / "candidates.csv")
            return Candidates(X, y_raw, y_norm)
        self._may_compute("edit", d)
        cfg = self.config.edit_config(m)
        cfg.validate(self.sched, data.N)
        mdata = self.model_data()
        if variant == "grad":
            params, _ = self.surrogate()
            scfg = self.config.surrogate_config(self.task.discrete)
            tops, _ = select_top_k(mdata, cfg.K)
            Z = ascend(params, tops, scfg.ascent_step, scfg.ascent_iters)
        elif variant == "no_editing":
            net, _ = self.score_network(variant)
            Z = sample_from_prior(net, self.sched, cfg.K, self.task.dim, cfg, RngStream(self.seed, STREAM_PRIOR))
        else:
            net, _ = self.score_network(variant)
            Z = generate_candidates(net, self.sched, mdata, cfg, RngStream(self.seed, STREAM_EDIT))
        X = scaler.inverse(Z)
        y_raw = oracle_eval(self.task, X)
        y_norm = normalize_score(y_raw, data.y_min, data.y_max)
        if d is not None:
            d.mkdir(parents=True, exist_ok=True)
            write_candidates_csv(d / "candidates.csv", X, y_raw, y_norm)
            X, y_raw, y_norm = read_candidates_csv(d / "candidates.csv")
        return Candidates(X, y_raw, y_norm)

    def evaluate(self, variant: str = "full", m: int | None = None) -> dict:
        from .eval_bench import percentile_score, proportion_above_best

        c = self.candidates(variant, m)
        data, _ = self.dataset()
        metrics = {
            "task": self.task.name,
            "variant": variant,
            "seed": self.seed,
            "m": self.config.edit.m if m is None else m,
            "K": int(len(c.y_norm)),
            "max": percentile_score(c.y_norm, 100),
            "median": percentile_score(c.y_norm, 50),
            "proportion_above_best": proportion_above_best(c.y_norm, 1.0),
            "d_best_norm": float(normalize_score(data.y_raw.max(), data.y_min, data.y_max)),
            "y_min": data.y_min,
            "y_max": data.y_max,
        }
        d = self.artifact_dir("evaluate", variant, m)
        if d is not None:
            d.mkdir(parents=True, exist_ok=True)
            (d / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
        return metrics

    def run_stage(self, stage: str, variant: str = "full"):
        if stage == "gen-data":
            return self.dataset()
        if stage == "train-surrogate":
            return self.surrogate()
        if stage == "synthesize":
            return self.synthetic()
        if stage == "train-diffusion":
            return self.score_network(variant)
        if stage == "edit":
            return self.candidates(variant)
        if stage == "evaluate":
            return self.evaluate(variant)
        raise ValueError(f"unknown stage {stage!r}")

    def stage_files(self, stage: str, variant: str = "full") -> list[str]:
        d = self.artifact_dir(stage, variant)
        if d is None or not d.exists():
            return []
        return sorted(str(p) for p in d.iterdir() if p.is_file())
