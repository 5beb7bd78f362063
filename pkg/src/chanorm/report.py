"""Raw per-trial traces on disk and the summary tables computed from them.

Layout of an output directory::

    manifest.json                 resolved config
    raw/trial_0000/<arm>/departures.csv
    raw/trial_0000/<arm>/decisions.csv     (only with trace_decisions)
    raw/trial_0000/<arm>/stats.json
    summary/*.csv

Summaries are always derived from the raw files, so ``report`` on an
existing directory reproduces what ``run`` wrote.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .experiments import UTILITY_COLUMNS, ExperimentConfig, TrialStats, iter_trials
from .norms import CellContent
from .metrics import DelayDistribution, kurtosis, percentile, skewness, welch_t

PERCENTILES = (50, 90, 99, 99.5, 99.7, 99.9, 100)
HISTOGRAM_MIN_DELAY = 4
DEPARTURE_HEADER = ("id", "direction", "entryTick", "exitTick", "delay")
DECISION_HEADER = (
    "tick", "direction", "normKey", "action", "reward", "utilityFollow", "utilityViolate", "collisions",
)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(round(x, 10))
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def ensure_writable(out_dir) -> Path:
    """Create ``out_dir`` and prove we can write into it, before any trial runs."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise PermissionError(f"output directory {out} is not writable: {exc}") from exc
    return out


def write_manifest(out_dir, config: ExperimentConfig) -> None:
    cfg = config.to_dict()
    cfg["output_dir"] = None
    Path(out_dir, "manifest.json").write_text(
        json.dumps({"config": cfg}, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )


def read_manifest(in_dir) -> ExperimentConfig:
    data = json.loads(Path(in_dir, "manifest.json").read_text(encoding="utf-8"))["config"]
    return ExperimentConfig.from_mapping(data)


_STATS_FIELDS = (
    "controller", "collisions", "utilities", "convergence_tick", "converged_at_end", "outcome",
    "operators", "norms", "activation_tick", "outcome_before_reversal", "converged_before_reversal",
    "reconvergence_tick", "measure_from", "total_collisions", "concessions",
)


def write_trial(out_dir, trial: TrialStats) -> None:
    base = Path(out_dir, "raw", f"trial_{trial.index:04d}")
    for arm, st in trial.arms.items():
        d = base / arm
        d.mkdir(parents=True, exist_ok=True)
        _write_csv(d / "departures.csv", DEPARTURE_HEADER, (
            (vid, CellContent(c).symbol, entry, exit_, delay) for vid, c, entry, exit_, delay in st.departures.tolist()
        ))
        if st.decisions is not None:
            _write_csv(d / "decisions.csv", DECISION_HEADER, (
                (x.tick, x.direction.symbol, x.norm_key, x.action.name.title(), x.reward,
                 x.utility_follow, x.utility_violate, x.collisions) for x in st.decisions
            ))
        payload = {k: getattr(st, k) for k in _STATS_FIELDS}
        payload.update(trial=trial.index, seed=trial.seed, scenario=trial.scenario)
        (d / "stats.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class ArmTrace:
    """What the summaries need from one arm of one trial, as read back from disk."""

    trial: int
    arm: str
    stats: dict
    departures: np.ndarray = field(repr=False)

    @property
    def measured(self) -> np.ndarray:
        return self.departures[self.departures[:, 2] >= self.stats["measure_from"]]


def read_departures(path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != DEPARTURE_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    data = [(int(r[0]), int(CellContent.from_symbol(r[1])), int(r[2]), int(r[3]), int(r[4])) for r in rows[1:]]
    return np.asarray(data, dtype=np.int64).reshape(-1, 5)


def load_traces(in_dir) -> dict:
    """``{arm: [ArmTrace, ...]}`` ordered by trial index."""
    out: dict = {}
    raw = Path(in_dir, "raw")
    if not raw.is_dir():
        raise FileNotFoundError(f"no raw traces under {raw}")
    for trial_dir in sorted(raw.iterdir()):
        for arm_dir in sorted(trial_dir.iterdir()):
            stats = json.loads((arm_dir / "stats.json").read_text(encoding="utf-8"))
            out.setdefault(arm_dir.name, []).append(
                ArmTrace(stats["trial"], arm_dir.name, stats, read_departures(arm_dir / "departures.csv"))
            )
    for traces in out.values():
        traces.sort(key=lambda t: t.trial)
    return out


def traces_from_trials(trials) -> dict:
    """The in-memory equivalent of :func:`load_traces`."""
    out: dict = {}
    for tr in sorted(trials, key=lambda t: t.index):
        for arm, st in tr.arms.items():
            stats = {k: getattr(st, k) for k in _STATS_FIELDS}
            stats["trial"] = tr.index
            out.setdefault(arm, []).append(ArmTrace(tr.index, arm, stats, st.departures))
    return out


def _pointwise_mean(series) -> list:
    """Average equal-position entries over trials; trials shorter than the longest just stop contributing."""
    n = max((len(s) for s in series), default=0)
    out = []
    for k in range(n):
        vals = [s[k] for s in series if len(s) > k]
        out.append(np.mean(vals, axis=0))
    return out


def collisions_table(traces, window: int):
    rows = []
    for arm, ts in traces.items():
        for k, mean in enumerate(_pointwise_mean([t.stats["collisions"] for t in ts])):
            rows.append((arm, (k + 1) * window, float(mean)))
    return ("arm", "windowEnd", "meanCollisions"), rows


def utilities_table(traces, window: int):
    rows = []
    for arm, ts in traces.items():
        for k, mean in enumerate(_pointwise_mean([t.stats["utilities"] for t in ts])):
            for (d, a), u in zip(UTILITY_COLUMNS, mean):
                rows.append((arm, (k + 1) * window, d.symbol, a.name.title(), float(u)))
    return ("arm", "windowEnd", "direction", "action", "meanUtility"), rows


def pooled_delays(ts) -> np.ndarray:
    parts = [t.measured[:, 4] for t in ts]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def delay_table(traces):
    header = ("arm", "vehicles") + tuple(f"p{q:g}" for q in PERCENTILES) + ("skewness", "kurtosis")
    rows = []
    for arm, ts in traces.items():
        d = pooled_delays(ts)
        if d.size == 0:
            continue
        pct = tuple(percentile(d, q) for q in PERCENTILES)
        try:
            g, k = skewness(d), kurtosis(d)
        except ValueError:
            g = k = float("nan")
        rows.append((arm, int(d.size)) + tuple(int(p) for p in pct) + (g, k))
    return header, rows


def histogram_table(traces, minimum: int = HISTOGRAM_MIN_DELAY):
    rows = []
    for arm, ts in traces.items():
        hist = DelayDistribution(pooled_delays(ts).tolist()).histogram(minimum)
        rows.extend((arm, d, c) for d, c in hist.items())
    return ("arm", "delay", "vehicles"), rows


def trial_travel_times(ts) -> np.ndarray:
    out = []
    for t in ts:
        m = t.measured
        out.append(float(np.mean(m[:, 3] - m[:, 2])) if len(m) else float("nan"))
    return np.asarray(out)


def travel_time_table(traces, best_case: int):
    """Per arm: mean and stdev of per-trial mean travel times; the first arm is compared with the others."""
    arms = list(traces)
    means = {a: trial_travel_times(traces[a]) for a in arms}
    header = ("arm", "trials", "bestCase", "mean", "stdev", "improvementPct", "welchT", "welchP", "glassDelta")
    rows = []
    treat = means[arms[0]] if arms else None
    for a in arms:
        x = means[a]
        sd = float(np.std(x, ddof=1)) if x.size > 1 else float("nan")
        t = p = delta = imp = None
        if a != arms[0] and x.size > 1 and treat.size > 1:
            try:
                t, p = welch_t(treat, x)
            except ValueError:
                pass
            if sd > 0:
                delta = float((x.mean() - treat.mean()) / sd)
            imp = float(100.0 * (x.mean() - treat.mean()) / x.mean())
        rows.append((a, int(x.size), best_case, float(np.mean(x)), sd, imp, t, p, delta))
    return header, rows


def norms_table(traces):
    rows = []
    for arm, ts in traces.items():
        for t in ts:
            s = t.stats
            conv = s["convergence_tick"]
            rows.append((t.trial, arm, "final", s["outcome"], conv, s["converged_at_end"], " | ".join(s["norms"])))
            if s.get("outcome_before_reversal") is not None:
                rows.append((t.trial, arm, "before-reversal", s["outcome_before_reversal"], conv,
                             s["converged_before_reversal"], ""))
    return ("trial", "arm", "phase", "outcome", "convergenceTick", "converged", "norms"), rows


def outcomes_table(traces):
    rows = []
    for arm, ts in traces.items():
        counts: dict = {}
        for t in ts:
            for phase, key in (("final", "outcome"), ("before-reversal", "outcome_before_reversal")):
                label = t.stats.get(key)
                if label is not None:
                    counts[phase, label] = counts.get((phase, label), 0) + 1
        rows.extend((arm, ph, label, n) for (ph, label), n in sorted(counts.items()))
    return ("arm", "phase", "outcome", "trials"), rows


def summarize(traces, config: ExperimentConfig) -> dict:
    """Every summary table, keyed by file name."""
    # best case is the straight crossing, one tick per cell
    best = config.lane_length
    order = [a for a in config.arms if a in traces] + sorted(set(traces) - set(config.arms))
    traces = {a: traces[a] for a in order}
    return {
        "collisions_per_window.csv": collisions_table(traces, config.window),
        "utilities_per_window.csv": utilities_table(traces, config.window),
        "delay_percentiles.csv": delay_table(traces),
        "delay_histogram.csv": histogram_table(traces),
        "travel_time.csv": travel_time_table(traces, best),
        "norms.csv": norms_table(traces),
        "outcomes.csv": outcomes_table(traces),
    }


def write_summaries(out_dir, tables: dict) -> list[Path]:
    target = Path(out_dir, "summary")
    target.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (header, rows) in tables.items():
        p = target / name
        _write_csv(p, header, rows)
        paths.append(p)
    return paths


def report(in_dir) -> list[Path]:
    """Recompute all summaries of ``in_dir`` from its raw traces."""
    config = read_manifest(in_dir)
    return write_summaries(in_dir, summarize(load_traces(in_dir), config))


def run_experiment(config: ExperimentConfig, out_dir=None) -> list[Path]:
    out_dir = out_dir or config.output_dir
    if out_dir is None:
        raise ValueError("an output directory is required")
    ensure_writable(out_dir)
    write_manifest(out_dir, config)
    for trial in iter_trials(config):
        write_trial(out_dir, trial)
    return report(out_dir)


__all__ = [
    "ArmTrace", "ensure_writable", "load_traces", "report", "run_experiment", "summarize",
    "traces_from_trials", "write_manifest", "write_summaries", "write_trial",
]
