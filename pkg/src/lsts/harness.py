"""Experiment configuration, seeded trial runner, metrics and CSV output.

Config files are YAML mappings::

    env: doorkey                 # doorkey | search_rescue
    layout: doorkey.layout       # optional; path or bundled file name
    spec: doorkey.spec           # path or bundled file name ...
    spec_text: "achieve g"       # ... or the spec inline
    algo: lsts                   # one name or a list (see ALGORITHMS)
    seeds: [0, 1, 2]
    budget: 2000000
    out: results/doorkey
    eval_episodes: 200           # composed-policy evaluation episodes per trial
    threshold: 0.9               # time-to-threshold success level
    max_episode_steps: 400       # optional horizon of whole-task learners
    params: {x: 500, eta: 0.95}  # any TeacherParams / BaselineParams field

Relative paths resolve against the config file's directory, then against
the bundled data directory.
"""
from __future__ import annotations

import csv
import io
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml
from scipy import stats as sps

from .baselines import RUNNERS, BaselineParams
from .envs_grid import ENV_FACTORIES, data_path, make_env
from .errors import ConfigError, DegenerateVarianceError, LstsError
from .graph import compile_spec
from .seeding import root_sequence
from .spec_lang import parse_spec
from .student import compose_eval, save_policy_table
from .teacher import lsts_ct_run, lsts_run

ALGORITHMS = ("lsts", "lsts_ct") + tuple(RUNNERS)
TRIALS_SCHEMA = "# lsts-trials v1"
CURVES_SCHEMA = "# lsts-curves v1"
TIMINGS_SCHEMA = "# lsts-timings v1"
TRIAL_COLUMNS = ("algo", "seed", "total_interactions", "converged", "final_success_rate", "learned_path")
CURVE_COLUMNS = ("algo", "seed", "interaction_stamp", "edge_or_composed", "success_rate", "event")
_PARAM_FIELDS = {f.name: f.type for f in fields(BaselineParams)}


@dataclass
class ExperimentConfig:
    env: str
    spec_text: str
    algos: list
    seeds: list
    budget: int
    out: Path
    layout: str | None = None
    params: dict = field(default_factory=dict)
    eval_episodes: int = 200
    threshold: float = 0.9
    max_episode_steps: int | None = None
    save_policies: bool = False
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.env not in ENV_FACTORIES:
            raise ConfigError("env", f"unknown environment {self.env!r}")
        for a in self.algos:
            if a not in ALGORITHMS:
                raise ConfigError("algo", f"unknown algorithm {a!r}")
        if not self.algos:
            raise ConfigError("algo", "no algorithm given")
        if not self.seeds:
            raise ConfigError("seeds", "must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds", "must be distinct")
        if any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds", "must be nonnegative integers")
        if not isinstance(self.budget, int) or self.budget <= 0:
            raise ConfigError("budget", "must be a positive integer")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes", "must be >= 1")
        if not 0 <= self.threshold <= 1:
            raise ConfigError("threshold", "must lie in [0, 1]")
        for k, v in self.params.items():
            if k not in _PARAM_FIELDS:
                raise ConfigError(f"params.{k}", "unknown parameter")
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"params.{k}", "must be a number")
        try:
            parse_spec(self.spec_text)
        except LstsError as exc:
            raise ConfigError("spec", str(exc)) from exc
        return self

    def baseline_params(self) -> BaselineParams:
        return BaselineParams(**{k: _cast_param(k, v) for k, v in self.params.items()})


def _cast_param(name, v):
    return int(v) if _PARAM_FIELDS[name] in (int, "int") else float(v)


def _resolve(ref: str, base_dir: Path | None) -> Path:
    p = Path(ref)
    if p.is_absolute() and p.exists():
        return p
    if base_dir is not None and (base_dir / p).exists():
        return base_dir / p
    if p.exists():
        return p
    bundled = data_path(str(ref))
    if bundled.exists():
        return bundled
    raise FileNotFoundError(ref)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"no such file: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}")
    return config_from_dict(raw, path.parent, overrides)


def config_from_dict(raw, base_dir: Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    known = {"env", "layout", "spec", "spec_text", "algo", "seeds", "budget", "out", "params",
             "eval_episodes", "threshold", "max_episode_steps", "save_policies", "workers"}
    for k in raw:
        if k not in known:
            raise ConfigError(k, "unknown key")
    for k in ("env", "algo", "seeds", "budget"):
        if k not in raw:
            raise ConfigError(k, "missing")
    if ("spec" in raw) == ("spec_text" in raw):
        raise ConfigError("spec", "give exactly one of spec / spec_text")
    if "spec" in raw:
        try:
            spec_text = _resolve(str(raw["spec"]), base_dir).read_text()
        except FileNotFoundError:
            raise ConfigError("spec", f"no such file: {raw['spec']}")
    else:
        spec_text = str(raw["spec_text"])
    layout = raw.get("layout")
    if layout is not None:
        try:
            layout = str(_resolve(str(layout), base_dir))
        except FileNotFoundError:
            raise ConfigError("layout", f"no such file: {layout}")
    algos = raw["algo"] if isinstance(raw["algo"], list) else [raw["algo"]]
    seeds = raw["seeds"]
    if not isinstance(seeds, list):
        raise ConfigError("seeds", "must be a list")
    params = raw.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params", "must be a mapping")
    cfg = ExperimentConfig(
        env=str(raw["env"]), spec_text=spec_text, algos=[str(a) for a in algos], seeds=seeds,
        budget=raw["budget"], out=Path(raw.get("out", "results")), layout=layout, params=params,
        eval_episodes=int(raw.get("eval_episodes", 200)), threshold=float(raw.get("threshold", 0.9)),
        max_episode_steps=raw.get("max_episode_steps"), save_policies=bool(raw.get("save_policies", False)),
        workers=int(raw.get("workers", 1)),
    )
    return cfg.validate()


# ---------------------------------------------------------------- trials


@dataclass
class TrialRecord:
    algo: str
    seed: int
    total_interactions: int
    converged: bool
    final_success_rate: float
    wall_time_ms: int = 0
    learned_path: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.final_success_rate <= 1.0:
            raise ValueError("final_success_rate must lie in [0, 1]")


@dataclass(frozen=True)
class CurveRow:
    algo: str
    seed: int
    interaction_stamp: int
    edge_or_composed: str
    success_rate: float
    event: str = ""


def run_trial(cfg: ExperimentConfig, algo: str, seed: int):
    """One (algo, seed) trial; returns (TrialRecord, curve rows, RunResult)."""
    env = make_env(cfg.env, cfg.layout, cfg.max_episode_steps)
    spec = parse_spec(cfg.spec_text)
    graph = compile_spec(spec)
    params = cfg.baseline_params()
    seq = root_sequence(seed)
    t0 = time.perf_counter()
    if algo in ("lsts", "lsts_ct"):
        fn = lsts_run if algo == "lsts" else lsts_ct_run
        result = fn(graph, env, params, cfg.budget, seq)
    else:
        result = RUNNERS[algo](env, spec, graph, params, cfg.budget, seq)
    if result.success_fn is not None:
        rate = result.success_fn(cfg.eval_episodes)
    elif result.policy_table.ordered is not None:
        rate = compose_eval(result.policy_table, env, graph, cfg.eval_episodes, spec=spec,
                            step_budget=params.step_budget)
    else:
        rate = 0.0
    wall = int(round((time.perf_counter() - t0) * 1000))
    rec = TrialRecord(algo, seed, result.total_interactions, result.converged, rate, wall,
                      tuple(result.learned_path))
    rows = []
    for b in result.bursts:
        name = "composed" if b.edge is None else f"{b.edge.src}-{b.edge.dst}"
        rows.append(CurveRow(algo, seed, b.stamp, name, b.rate, b.event))
    if result.policy_table.ordered is not None and result.success_fn is None:
        # composed curve starts at the interactions already spent on the sub-tasks
        rows.append(CurveRow(algo, seed, result.total_interactions, "composed", rate, "ordered"))
    if cfg.save_policies and result.policy_table.by_edge:
        pdir = Path(cfg.out) / "policies"
        pdir.mkdir(parents=True, exist_ok=True)
        save_policy_table(result.policy_table, pdir / f"{algo}_{seed}.txt")
    return rec, rows, result


def _trial_job(args):
    cfg, algo, seed = args
    rec, rows, _ = run_trial(cfg, algo, seed)
    return rec, rows


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> list[TrialRecord]:
    """Run every (algo, seed) pair; write trials, curves and timings CSVs."""
    jobs = [(cfg, a, s) for a in cfg.algos for s in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]
    results.sort(key=lambda r: (r[0].algo, r[0].seed))
    records = [r[0] for r in results]
    rows = [row for r in results for row in r[1]]
    if write:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_trials(records, out / "trials.csv")
        write_timings(records, out / "timings.csv")
        emit_curves(rows, out / "curves.csv")
    return records


# ---------------------------------------------------------------- CSV IO


def _fmt_float(v: float) -> str:
    return repr(float(v))


def trials_to_csv(records) -> str:
    buf = io.StringIO()
    buf.write(TRIALS_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_COLUMNS)
    for r in sorted(records, key=lambda r: (r.algo, r.seed)):
        w.writerow([r.algo, r.seed, r.total_interactions, int(r.converged), _fmt_float(r.final_success_rate),
                    " ".join(map(str, r.learned_path))])
    return buf.getvalue()


def write_trials(records, path) -> None:
    Path(path).write_text(trials_to_csv(records))


def write_timings(records, path) -> None:
    lines = [TIMINGS_SCHEMA, "algo,seed,wall_time_ms"]
    lines += [f"{r.algo},{r.seed},{r.wall_time_ms}" for r in sorted(records, key=lambda r: (r.algo, r.seed))]
    Path(path).write_text("\n".join(lines) + "\n")


def _schema_rows(path, schema):
    text = Path(path).read_text().splitlines()
    if not text or text[0] != schema:
        raise ValueError(f"{path}: expected schema line {schema!r}")
    return list(csv.DictReader(text[1:]))


def read_trials(path) -> list[TrialRecord]:
    path = Path(path)
    times = {}
    tpath = path.with_name("timings.csv")
    if tpath.exists():
        for row in _schema_rows(tpath, TIMINGS_SCHEMA):
            times[(row["algo"], int(row["seed"]))] = int(row["wall_time_ms"])
    out = []
    for row in _schema_rows(path, TRIALS_SCHEMA):
        key = (row["algo"], int(row["seed"]))
        out.append(TrialRecord(
            row["algo"], key[1], int(row["total_interactions"]), row["converged"] == "1",
            float(row["final_success_rate"]), times.get(key, 0),
            tuple(int(v) for v in row["learned_path"].split()),
        ))
    return out


def emit_curves(rows, path) -> None:
    buf = io.StringIO()
    buf.write(CURVES_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in sorted(rows, key=lambda r: (r.algo, r.seed, r.interaction_stamp, r.edge_or_composed)):
        w.writerow([r.algo, r.seed, r.interaction_stamp, r.edge_or_composed, _fmt_float(r.success_rate), r.event])
    Path(path).write_text(buf.getvalue())


def read_curves(path) -> list[CurveRow]:
    return [
        CurveRow(r["algo"], int(r["seed"]), int(r["interaction_stamp"]), r["edge_or_composed"],
                 float(r["success_rate"]), r["event"])
        for r in _schema_rows(path, CURVES_SCHEMA)
    ]


# ---------------------------------------------------------------- statistics


@dataclass(frozen=True)
class SummaryRow:
    algo: str
    n: int
    interactions_mean: float
    interactions_sd: float
    success_mean: float
    success_sd: float
    converged: int


def _mean_sd(values):
    values = [float(v) for v in values]
    m = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else float("nan")
    return m, sd


def summarize(records) -> list[SummaryRow]:
    """Mean and sample SD (n-1 denominator) per algorithm."""
    by = {}
    for r in records:
        by.setdefault(r.algo, []).append(r)
    out = []
    for algo in sorted(by):
        rs = by[algo]
        im, isd = _mean_sd([r.total_interactions for r in rs])
        sm, ssd = _mean_sd([r.final_success_rate for r in rs])
        out.append(SummaryRow(algo, len(rs), im, isd, sm, ssd, sum(r.converged for r in rs)))
    return out


def format_summary(rows) -> str:
    lines = [f"{'algo':<8} {'n':>3}  {'interactions (mean ± SD)':>28}  {'success (mean ± SD)':>20}  converged"]
    for r in rows:
        lines.append(f"{r.algo:<8} {r.n:>3}  {r.interactions_mean:>14.1f} ± {r.interactions_sd:<11.1f}"
                     f"  {r.success_mean:>8.3f} ± {r.success_sd:<8.3f}  {r.converged}/{r.n}")
    return "\n".join(lines)


def welch_t_test(a, b) -> tuple[float, float]:
    """Two-sided unequal-variance t-test with Welch-Satterthwaite degrees of freedom."""
    a, b = [float(v) for v in a], [float(v) for v in b]
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    ma, mb = statistics.fmean(a), statistics.fmean(b)
    va, vb = statistics.variance(a), statistics.variance(b)
    if va == 0 and vb == 0:
        raise DegenerateVarianceError("both samples have zero variance")
    sa, sb = va / len(a), vb / len(b)
    t = (ma - mb) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa * sa / (len(a) - 1) + sb * sb / (len(b) - 1))
    p = 2.0 * float(sps.t.sf(abs(t), df))
    return t, min(1.0, p)


def welch_df(a, b) -> float:
    va, vb = statistics.variance(a) / len(a), statistics.variance(b) / len(b)
    return (va + vb) ** 2 / (va * va / (len(a) - 1) + vb * vb / (len(b) - 1))


def threshold_stamps(rows, threshold: float = 0.9) -> dict:
    """First composed-curve stamp reaching ``threshold`` per (algo, seed); None if never."""
    out = {}
    for r in sorted(rows, key=lambda r: (r.algo, r.seed, r.interaction_stamp)):
        key = (r.algo, r.seed)
        out.setdefault(key, None)
        if r.edge_or_composed == "composed" and out[key] is None and r.success_rate >= threshold:
            out[key] = r.interaction_stamp
    return out


def time_to_threshold(rows, algo_a: str, algo_b: str, threshold: float = 0.9) -> float | None:
    """Mean interactions algo_b needs to reach ``threshold`` minus those algo_a needs.

    Seeds that never reach the threshold make the comparison undefined (None).
    """
    stamps = threshold_stamps(rows, threshold)
    a = [v for (al, _), v in stamps.items() if al == algo_a]
    b = [v for (al, _), v in stamps.items() if al == algo_b]
    if not a or not b or None in a or None in b:
        return None
    return statistics.fmean(b) - statistics.fmean(a)


def compare(records, algo_a: str, algo_b: str) -> dict:
    rows = {r.algo: r for r in summarize(records)}
    for a in (algo_a, algo_b):
        if a not in rows:
            raise ValueError(f"no records for {a!r}")
    xa = [r.total_interactions for r in records if r.algo == algo_a]
    xb = [r.total_interactions for r in records if r.algo == algo_b]
    try:
        t, p = welch_t_test(xa, xb)
    except (ValueError, DegenerateVarianceError):
        t, p = float("nan"), float("nan")
    return {"a": rows[algo_a], "b": rows[algo_b], "t": t, "p": p}
