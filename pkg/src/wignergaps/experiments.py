"""Monte Carlo experiments: harness, comparison tests and universality runs.

Every trial is a pure function of (config, N, trial index): its random
streams come from ``SeedSequence(base_seed, spawn_key=(N, trial, arm))``, so
results do not depend on worker count or completion order.  Records are
merged in (N, trial) order and summarized with single-pass Welford updates.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats as sps

from . import dynamics, gaps, hsreg, smoothmax, spectral
from .ensembles import EnsembleSpec, goe_spec, gue_spec, moment_mismatch, sample_matrix
from .errors import ConfigError, NumericalError, PreconditionError
from .testfunctions import TestFunctionSpec, build_test_function

__all__ = [
    "ExperimentConfig",
    "TrialRecord",
    "RunResult",
    "RunningStats",
    "RunFailure",
    "TestFunctionSpec",
    "trial_rng",
    "mc_run",
    "summarize",
    "four_moment_compare",
    "flow_compare",
    "flow_window",
    "lindeberg_taylor_probe",
    "wegner_probe",
    "universality_maxgap",
    "universality_fluctuations",
    "coupling_decay",
    "regularization_accuracy",
    "entry_derivative_scale",
    "spectral_diagnostics",
    "KINDS",
]

KINDS = (
    "spectrum",
    "wegner",
    "gaps",
    "regularize",
    "fd_probe",
    "four_moment",
    "lindeberg",
    "flow",
    "coupling",
    "universality",
)
MAX_FAILURE_RATE = 0.01


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one Monte Carlo experiment.

    ``ensemble`` and ``ensemble_b`` are EnsembleSpec dictionaries whose
    profile size is replaced by each entry of ``n_values``.  ``params`` holds
    kind-specific settings (times, indices, exponents).
    """

    kind: str
    ensemble: dict
    n_values: tuple
    n_trials: int = 1
    base_seed: int = 0
    ensemble_b: dict | None = None
    selector: dict | None = None
    ell: int = 1
    reg: dict = field(default_factory=lambda: {"gamma": 0.5, "frak_a": 0.0})
    hs: dict = field(default_factory=dict)
    test_function: dict | None = None
    params: dict = field(default_factory=dict)
    n_trials_per_n: dict = field(default_factory=dict)
    output: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if int(self.n_trials) < 1:
            raise ConfigError("n_trials must be at least 1")
        if not self.n_values:
            raise ConfigError("n_values must not be empty")
        if any(int(n) < 2 for n in self.n_values):
            raise ConfigError("every N must be at least 2")
        if self.ell < 1:
            raise ConfigError("ell must be at least 1")
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(
            self, "n_trials_per_n", {str(k): int(v) for k, v in dict(self.n_trials_per_n).items()}
        )
        try:
            for n in self.n_values:
                self.spec(n)
                if self.ensemble_b is not None:
                    self.spec(n, "b")
            if self.selector is not None:
                gaps.GapSelector.from_dict(self.selector)
            if self.test_function is not None:
                TestFunctionSpec.from_dict(self.test_function)
            hsreg.HSParams.from_dict(self.hs)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    # -- serialization
    def to_dict(self):
        d = {
            "kind": self.kind,
            "ensemble": self.ensemble,
            "n_values": list(self.n_values),
            "n_trials": self.n_trials,
            "base_seed": self.base_seed,
            "ell": self.ell,
            "reg": self.reg,
            "hs": self.hs,
            "params": self.params,
        }
        for key in ("ensemble_b", "selector", "test_function", "output"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        if self.n_trials_per_n:
            d["n_trials_per_n"] = self.n_trials_per_n
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        for key in ("kind", "ensemble", "n_values"):
            if key not in d:
                raise ConfigError(f"missing config key {key!r}")
        d = dict(d)
        d["n_values"] = tuple(d["n_values"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def with_seed(self, seed):
        d = self.to_dict()
        d["base_seed"] = int(seed)
        return ExperimentConfig.from_dict(d)

    @property
    def config_hash(self):
        d = self.to_dict()
        d.pop("output", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    # -- derived objects
    def trials_for(self, n):
        return int(self.n_trials_per_n.get(str(n), self.n_trials))

    def spec(self, n, arm="a"):
        src = self.ensemble if arm == "a" else self.ensemble_b
        return _spec_cached(json.dumps(src, sort_keys=True), n)

    def selector_for(self, n):
        sel = self.selector or {"mode": "index_set", "alpha": 0.1}
        if sel.get("mode") == "index_set" and "J" not in sel:
            return gaps.GapSelector.bulk(n, sel.get("alpha", 0.1))
        out = gaps.GapSelector.from_dict(sel)
        out.validate_for(n)
        return out

    def reg_for(self, n):
        r = self.reg
        if "beta" in r:
            return smoothmax.RegularizationParams.from_beta(n, r["beta"], r.get("frak_a", 0.0))
        return smoothmax.RegularizationParams.for_n(n, r.get("gamma", 0.5), r.get("frak_a", 0.0))

    def hs_params(self):
        return hsreg.HSParams.from_dict(self.hs)

    def test_fn(self, n):
        tf = self.test_function or {"kind": "smoothed_lp", "params": {"center": 1.0, "p": 2.0}}
        return _test_fn_cached(json.dumps(tf, sort_keys=True), n)


NAMED_ENSEMBLES = {
    "goe": lambda n: goe_spec(n),
    "gue": lambda n: gue_spec(n),
    "gue_three_point": lambda n: gue_spec(n, "three_point"),
    "gue_rademacher": lambda n: gue_spec(n, "two_point_rademacher"),
}


def resolve_ensemble(src, n):
    """EnsembleSpec at dimension ``n`` from a spec dictionary or a short name."""
    if isinstance(src, str):
        if src not in NAMED_ENSEMBLES:
            raise ConfigError(f"unknown ensemble name {src!r}; choose from {sorted(NAMED_ENSEMBLES)}")
        return NAMED_ENSEMBLES[src](n)
    return EnsembleSpec.from_dict(src, n=n)


@lru_cache(maxsize=64)
def _spec_cached(spec_json, n):
    return resolve_ensemble(json.loads(spec_json), n)


@lru_cache(maxsize=64)
def _test_fn_cached(tf_json, n):
    return build_test_function(TestFunctionSpec.from_dict(json.loads(tf_json)), n)


def trial_rng(base_seed, n, trial, arm=0):
    """64-bit token and generator for one (N, trial, arm) stream."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(n), int(trial), int(arm)))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    token = (int(hi) << 32) | int(lo)
    return token, np.random.default_rng(token)


def _sample(cfg, n, trial, arm=0, which="a"):
    token, rng = trial_rng(cfg.base_seed, n, trial, arm)
    return sample_matrix(cfg.spec(n, which), rng, seed=token)


# ---------------------------------------------------------------- records


@dataclass
class TrialRecord:
    trial: int
    seed: int
    n: int
    stats: dict
    failed: bool = False
    error: str | None = None
    wall_time: float = 0.0
    config_hash: str = ""

    def to_json(self):
        """Deterministic NDJSON line (wall time is kept out)."""
        d = {
            "config_hash": self.config_hash,
            "n": self.n,
            "trial": self.trial,
            "seed": self.seed,
            "failed": self.failed,
            "stats": self.stats,
        }
        if self.error is not None:
            d["error"] = self.error
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(d["trial"], d["seed"], d["n"], d["stats"], d["failed"], d.get("error"), 0.0, d["config_hash"])


class RunningStats:
    """Welford single-pass mean and variance."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (x - self.mean)

    @property
    def var(self):
        return self._m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def sd(self):
        return math.sqrt(self.var)

    @property
    def stderr(self):
        return self.sd / math.sqrt(self.count) if self.count else float("nan")


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list
    summary: list
    n_failed: int
    failure_rate: float
    artifacts: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    def ok_records(self, n=None):
        return [r for r in self.records if not r.failed and (n is None or r.n == n)]

    def column(self, key, n=None):
        return np.array([r.stats[key] for r in self.ok_records(n)], dtype=float)

    def summary_csv(self):
        lines = ["n,statistic,count,mean,sd,stderr,failures"]
        for row in self.summary:
            lines.append(
                ",".join(
                    [
                        str(row["n"]),
                        row["statistic"],
                        str(row["count"]),
                        repr(row["mean"]),
                        repr(row["sd"]),
                        repr(row["stderr"]),
                        str(row["failures"]),
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    def ndjson(self):
        return "".join(r.to_json() + "\n" for r in self.records)


class RunFailure(NumericalError):
    """More than 1% of trials failed."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


def summarize(records):
    """Welford summaries per (N, scalar statistic) in trial order."""
    by_n = {}
    for r in sorted(records, key=lambda r: (r.n, r.trial)):
        slot = by_n.setdefault(r.n, {"stats": {}, "failures": 0})
        if r.failed:
            slot["failures"] += 1
            continue
        for k, v in r.stats.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                if isinstance(v, bool):
                    v = float(v)
                else:
                    continue
            if not math.isfinite(v):
                continue
            slot["stats"].setdefault(k, RunningStats()).push(float(v))
    rows = []
    for n in sorted(by_n):
        slot = by_n[n]
        for k in sorted(slot["stats"]):
            s = slot["stats"][k]
            rows.append(
                {
                    "n": n,
                    "statistic": k,
                    "count": s.count,
                    "mean": s.mean,
                    "sd": s.sd,
                    "stderr": s.stderr,
                    "failures": slot["failures"],
                }
            )
    return rows


# ---------------------------------------------------------------- trial kinds


def _gap_stat(lam, cfg, n, ell=None):
    """nu times the ell-th largest gap over the configured selector."""
    ell = cfg.ell if ell is None else ell
    sel = cfg.selector_for(n)
    if sel.mode == "interval":
        return gaps.nu(n) * gaps.t_hat_ell(lam, sel, ell)
    return gaps.nu(n) * gaps.t_ell(lam, sel, ell)


def _trial_spectrum(cfg, n, trial):
    m = _sample(cfg, n, trial)
    p = cfg.params
    want = bool(p.get("vectors", True))
    s = spectral.eigenvalues(m, want_vectors=want)
    alpha = p.get("alpha", 0.1)
    rig = spectral.rigidity_report(s, alpha)
    grid = spectral.SpectralDomainGrid.default(
        n, p.get("grid_delta", 0.1), p.get("grid_energies", 201), p.get("grid_etas", 20)
    )
    ll = spectral.local_law_deviation(s, grid)
    out = {
        "rigidity_max": rig["max_scaled_dev"],
        "rigidity_worst_index": rig["worst_index"],
        "rigidity_edge_max": rig["edge_adaptive_max"],
        "local_law_max": ll["max_scaled_dev"],
    }
    if want:
        out["deloc_max"] = spectral.delocalization_report(s)["max_scaled_supnorm"]
    artifacts = {}
    if p.get("write_spectra", True):
        artifacts[f"spectra/spectrum_n{n}_trial{trial:05d}.csv"] = s.to_csv()
    return out, artifacts


def _trial_wegner(cfg, n, trial):
    lam = spectral.eigenvalues(_sample(cfg, n, trial)).lam
    e = cfg.params.get("energy", 0.0)
    out = {}
    for k, eps_w in enumerate(cfg.params.get("eps_w", [0.5])):
        width = 2.0 * n ** (-1.0 - eps_w)
        out[f"hit_{k}"] = bool(np.any(np.abs(lam - e) <= width))
    return out, {}


def _trial_gaps(cfg, n, trial):
    lam = spectral.eigenvalues(_sample(cfg, n, trial)).lam
    sel = cfg.selector_for(n)
    reg = cfg.reg_for(n)
    ell = cfg.ell
    out = {}
    if sel.mode == "interval":
        t = gaps.t_hat_ell(lam, sel, ell)
        m = gaps.m_of_interval(sel.a, sel.b)
        cut = smoothmax.CutoffSpec(**cfg.params.get("cutoff", {}))
        out.update(
            t_hat=t,
            nu_t_hat=gaps.nu(n) * t,
            f_hat=smoothmax.f_hat(lam, (sel.a, sel.b), ell, reg, cut),
            tau_star=float(gaps.tau_star(t, n, m)),
        )
        J = gaps.gap_indices_in_interval(lam, sel.a, sel.b)
    else:
        J = np.asarray(sel.J)
        t = gaps.t_ell(lam, sel, ell)
        out.update(t_ell=t, nu_t=gaps.nu(n) * t)
    out["f_ell"] = smoothmax.f_ell(lam, J, ell, reg)
    return out, {}


def _regularize_indices(cfg, n):
    p = cfg.params
    if "indices" in p:
        return [int(i) for i in p["indices"]]
    lo, hi = p.get("bulk_fraction", [0.4, 0.6])
    return list(range(int(np.ceil(lo * n)), int(np.floor(hi * n)) + 1))


def _trial_regularize(cfg, n, trial):
    m = _sample(cfg, n, trial)
    lam = spectral.eigenvalues(m).lam
    idx = _regularize_indices(cfg, n)
    res, _ = hsreg.tilde_lambdas(lam, idx, cfg.hs_params(), alpha=cfg.params.get("alpha", 0.0))
    errs = np.array([r.exact_gap_to_lambda for r in res])
    out = {
        "max_abs_error": float(errs.max()),
        "max_scaled_error": float(n * errs.max()),
        "mean_scaled_error": float(n * errs.mean()),
        "max_quad_error": float(max(r.quad_error_estimate for r in res)),
    }
    artifacts = {}
    if cfg.params.get("write_dump", True):
        artifacts[f"regularized/tilde_n{n}_trial{trial:05d}.csv"] = hsreg.dump_regularized_csv(res, lam)
    return out, artifacts


def _trial_fd_probe(cfg, n, trial):
    m = _sample(cfg, n, trial)
    _, rng = trial_rng(cfg.base_seed, n, trial, 1)
    p = cfg.params
    alpha = p.get("alpha", 0.1)
    lo, hi = int(np.ceil(alpha * n)), int(np.floor((1 - alpha) * n))
    i = int(rng.integers(lo, hi + 1))
    a, b = (int(x) for x in rng.integers(1, n + 1, size=2))
    hs = cfg.hs_params()
    fun = hsreg.TildeLambdaFunctional(m, i, hs, alpha=alpha)
    est = hsreg.fd_entry_derivative(fun, m, (a, b), order=p.get("order", 1))
    return {
        "i": i,
        "a": a,
        "b": b,
        "derivative": est.value,
        "abs_derivative": abs(est.value),
        "error_gauge": est.error_gauge,
        "noisy": est.noisy,
    }, {}


def _trial_four_moment(cfg, n, trial):
    lam_a = spectral.eigenvalues(_sample(cfg, n, trial, 0, "a")).lam
    lam_b = spectral.eigenvalues(_sample(cfg, n, trial, 1, "b")).lam
    s = cfg.test_fn(n)
    xa, xb = _gap_stat(lam_a, cfg, n), _gap_stat(lam_b, cfg, n)
    return {"stat_a": xa, "stat_b": xb, "s_a": float(s(xa)), "s_b": float(s(xb))}, {}


def _trial_flow(cfg, n, trial):
    t = float(cfg.params["t"])
    m = _sample(cfg, n, trial)
    spec = cfg.spec(n)
    _, rng = trial_rng(cfg.base_seed, n, trial, 1)
    state = dynamics.ou_evolve(dynamics.flow_state(m, spec), t, rng)
    lam0 = spectral.eigenvalues(m).lam
    lam_t = lam0 if t == 0 else spectral.eigenvalues(state.h).lam
    s = cfg.test_fn(n)
    x0, xt = _gap_stat(lam0, cfg, n), _gap_stat(lam_t, cfg, n)
    s0, st = float(s(x0)), float(s(xt))
    return {"stat_0": x0, "stat_t": xt, "s_0": s0, "s_t": st, "paired_diff": st - s0}, {}


def _coupling_times(cfg, n):
    exps = cfg.params.get("time_exponents", [-0.9, -0.5])
    return [float(n) ** e for e in exps]


def _trial_coupling(cfg, n, trial):
    x = spectral.eigenvalues(_sample(cfg, n, trial, 0, "a")).lam
    which = "b" if cfg.ensemble_b is not None else "a"
    y = spectral.eigenvalues(_sample(cfg, n, trial, 1, which)).lam
    token, rng = trial_rng(cfg.base_seed, n, trial, 2)
    beta = 2 if cfg.spec(n).is_complex else 1
    p = dynamics.CoupledParticles(x, y, beta, 0.0, token)
    alpha = cfg.params.get("alpha", 0.1)
    out = {"gapdiff_0": dynamics.gap_coupling_report(p, alpha)["max_scaled_gap_diff"]}
    snaps = [p]
    for k, t in enumerate(_coupling_times(cfg, n), start=1):
        p = dynamics.dbm_coupled_evolve(p, t, rng, noise=cfg.params.get("noise", True))
        out[f"gapdiff_{k}"] = dynamics.gap_coupling_report(p, alpha)["max_scaled_gap_diff"]
        snaps.append(p)
    out["halvings"] = p.n_halvings
    artifacts = {}
    if cfg.params.get("write_trajectory", False):
        artifacts[f"trajectories/coupled_n{n}_trial{trial:05d}.csv"] = dynamics.trajectory_csv(snaps)
    return out, artifacts


def _trial_universality(cfg, n, trial):
    lam = spectral.eigenvalues(_sample(cfg, n, trial)).lam
    sel = cfg.selector_for(n)
    if sel.mode != "interval":
        raise ConfigError("universality runs need an interval selector")
    m = gaps.m_of_interval(sel.a, sel.b)
    norm = m * n / math.sqrt(32 * math.log(n))
    out = {}
    for k in range(1, int(cfg.params.get("k_max", 2)) + 1):
        t = gaps.t_hat_ell(lam, sel, k)
        out[f"t_hat_{k}"] = t
        out[f"scaled_{k}"] = norm * t
        out[f"tau_{k}"] = float(gaps.tau_star(t, n, m))
    growth = cfg.params.get("ell_growth")
    if growth is not None:
        ell_n = int(math.ceil(n**growth))
        out["ell_n"] = ell_n
        out["scaled_growth"] = norm * gaps.t_hat_ell(lam, sel, ell_n)
    return out, {}


def _trial_lindeberg(cfg, n, trial):
    spec_a, spec_b = cfg.spec(n, "a"), cfg.spec(n, "b")
    entry = tuple(cfg.params.get("entry", (1, 2)))
    res = lindeberg_taylor_probe(
        spec_a,
        spec_b,
        n,
        entry,
        cfg,
        trial=trial,
        method=cfg.params.get("method", "exact"),
        n_inner=int(cfg.params.get("n_inner", 10_000)),
    )
    return {k: v for k, v in res.items() if isinstance(v, (int, float, bool))}, {}


_TRIALS = {
    "spectrum": _trial_spectrum,
    "wegner": _trial_wegner,
    "gaps": _trial_gaps,
    "regularize": _trial_regularize,
    "fd_probe": _trial_fd_probe,
    "four_moment": _trial_four_moment,
    "lindeberg": _trial_lindeberg,
    "flow": _trial_flow,
    "coupling": _trial_coupling,
    "universality": _trial_universality,
}


@lru_cache(maxsize=8)
def _cfg_from_json(text):
    return ExperimentConfig.from_json(text)


def _run_one(job):
    cfg_json, n, trial = job
    cfg = _cfg_from_json(cfg_json)
    token, _ = trial_rng(cfg.base_seed, n, trial, 0)
    t0 = time.perf_counter()
    try:
        stats, artifacts = _TRIALS[cfg.kind](cfg, n, trial)
        rec = TrialRecord(trial, token, n, _plain(stats), config_hash=cfg.config_hash)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        rec = TrialRecord(trial, token, n, {}, True, f"{type(exc).__name__}: {exc}", config_hash=cfg.config_hash)
        artifacts = {}
    rec.wall_time = time.perf_counter() - t0
    return rec, artifacts


def _plain(stats):
    out = {}
    for k, v in stats.items():
        if isinstance(v, (bool, np.bool_)):
            out[k] = bool(v)
        elif isinstance(v, (int, np.integer)):
            out[k] = int(v)
        else:
            out[k] = float(v)
    return out


def _write_text(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def mc_run(cfg, workers=1, records_path=None, artifact_dir=None, resume=True, max_failure_rate=MAX_FAILURE_RATE):
    """Run every (N, trial) of ``cfg`` and summarize.

    Parameters
    ----------
    cfg : ExperimentConfig
    workers : int
        Process count; the output does not depend on it.
    records_path : str, optional
        NDJSON file.  Records are appended as trials finish; with ``resume``
        existing records for the same config are reused and the file is
        rewritten in (N, trial) order at the end.
    artifact_dir : str, optional
        Directory for per-trial files (spectra, dumps, trajectories).
    max_failure_rate : float
        Above this fraction of failed trials :class:`RunFailure` is raised
        after persisting everything.
    """
    jobs = [(n, r) for n in cfg.n_values for r in range(cfg.trials_for(n))]
    done = {}
    if records_path and resume and os.path.exists(records_path):
        with open(records_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = TrialRecord.from_json(line)
                except (ValueError, KeyError):
                    continue  # torn final line of an interrupted run
                if rec.config_hash == cfg.config_hash:
                    done[(rec.n, rec.trial)] = rec
    todo = [j for j in jobs if j not in done]
    cfg_json = cfg.to_json()
    payload = [(cfg_json, n, r) for n, r in todo]
    artifacts_written = []
    timings = []

    sink = None
    if records_path:
        os.makedirs(os.path.dirname(records_path) or ".", exist_ok=True)
        sink = open(records_path, "a")

    def consume(results):
        for rec, arts in results:
            done[(rec.n, rec.trial)] = rec
            timings.append({"n": rec.n, "trial": rec.trial, "wall_time": rec.wall_time})
            if sink:
                sink.write(rec.to_json() + "\n")
                sink.flush()
            if artifact_dir:
                for name, text in arts.items():
                    path = os.path.join(artifact_dir, name)
                    _write_text(path, text)
                    artifacts_written.append(path)

    try:
        if workers > 1 and len(payload) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                consume(pool.map(_run_one, payload, chunksize=1))
        else:
            consume(map(_run_one, payload))
    finally:
        if sink:
            sink.close()

    records = [done[j] for j in jobs]
    if records_path:
        _write_text(records_path, "".join(r.to_json() + "\n" for r in records))
    n_failed = sum(r.failed for r in records)
    result = RunResult(
        cfg,
        records,
        summarize(records),
        n_failed,
        n_failed / len(records),
        sorted(artifacts_written),
        timings,
    )
    if result.failure_rate > max_failure_rate:
        raise RunFailure(
            f"{n_failed} of {len(records)} trials failed (limit {max_failure_rate:.0%}); "
            f"first error: {next(r.error for r in records if r.failed)}",
            result,
        )
    return result


# ---------------------------------------------------------------- experiments


def _with(cfg, **changes):
    d = cfg.to_dict()
    d.update(changes)
    return ExperimentConfig.from_dict(d)


def moment_gate(spec_a, spec_b, c=0.1):
    """Largest entry-moment mismatch and the threshold N^{-2-c}."""
    n = spec_a.n
    return moment_mismatch(spec_a, spec_b), float(n) ** (-2.0 - c)


def four_moment_compare(spec_a, spec_b, cfg, workers=1, **run_kw):
    """Compare nu * gap statistics under two moment-matched ensembles.

    Refuses to sample unless every moment of order a + b <= 4 agrees up to
    N^{-2-c} (``cfg.params["gate_c"]``, default 0.1).

    Returns
    -------
    dict with ``mean_diff`` and ``stderr`` of S(stat) between the ensembles,
    the two-sample Kolmogorov-Smirnov distance ``ks_two_sample`` and the
    per-N table ``per_n``.
    """
    c = cfg.params.get("gate_c", 0.1)
    for n in cfg.n_values:
        a, b = spec_a.with_n(n), spec_b.with_n(n)
        worst, bound = moment_gate(a, b, c)
        if worst > bound:
            raise PreconditionError(
                f"precondition: four-moment match failed at N={n} "
                f"(mismatch {worst:.3e} > {bound:.3e})"
            )
    run_cfg = _with(cfg, kind="four_moment", ensemble=spec_a.to_dict(), ensemble_b=spec_b.to_dict())
    run = mc_run(run_cfg, workers=workers, **run_kw)
    per_n = [_two_sample_row(run, n, "stat_a", "stat_b", "s_a", "s_b") for n in run_cfg.n_values]
    out = dict(per_n[-1])
    out["per_n"] = per_n
    out["run"] = run
    return out


def _two_sample_row(run, n, xa, xb, sa, sb):
    a, b = run.column(xa, n), run.column(xb, n)
    fa, fb = run.column(sa, n), run.column(sb, n)
    diff = float(fa.mean() - fb.mean())
    se = float(math.sqrt(fa.var(ddof=1) / fa.size + fb.var(ddof=1) / fb.size)) if fa.size > 1 else float("nan")
    return {
        "n": n,
        "count": int(a.size),
        "mean_diff": diff,
        "stderr": se,
        "ks_two_sample": float(sps.ks_2samp(a, b).statistic),
        "ks_pvalue": float(sps.ks_2samp(a, b).pvalue),
    }


def flow_window(n, delta):
    """Admissible times (N^{-1+delta}, N^{-1/2-delta})."""
    return float(n) ** (-1.0 + delta), float(n) ** (-0.5 - delta)


def flow_compare(spec, t, cfg, override=False, workers=1, **run_kw):
    """Compare nu * gap statistics at time 0 and after the OU flow to time t.

    Both come from the same trial (paired).  Times outside the window
    (N^{-1+delta}, N^{-1/2-delta}), delta = ``cfg.params["window_delta"]``
    (default 0.04), are refused unless ``override``; t = 0 is always allowed.
    """
    delta = cfg.params.get("window_delta", 0.04)
    if t != 0 and not override:
        for n in cfg.n_values:
            lo, hi = flow_window(n, delta)
            if not lo < t < hi:
                raise PreconditionError(
                    f"precondition: t={t:.4g} outside ({lo:.4g}, {hi:.4g}) at N={n}; use the override to explore"
                )
    params = dict(cfg.params)
    params["t"] = float(t)
    run_cfg = _with(cfg, kind="flow", ensemble=spec.to_dict(), params=params)
    run = mc_run(run_cfg, workers=workers, **run_kw)
    per_n = []
    for n in run_cfg.n_values:
        x0, xt = run.column("stat_0", n), run.column("stat_t", n)
        d = run.column("paired_diff", n)
        per_n.append(
            {
                "n": n,
                "count": int(d.size),
                "ks": float(sps.ks_2samp(x0, xt).statistic),
                "mean_diff": float(d.mean()),
                "stderr": float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0,
                "max_abs_paired_diff": float(np.abs(d).max()),
            }
        )
    out = dict(per_n[-1])
    out["per_n"] = per_n
    out["run"] = run
    return out


def _entry_law_nodes(law, method, rng, n_inner):
    """Nodes and weights for E[g(X)] over a unit-variance law (times ``law.scale``)."""
    if method == "mc":
        return law.sample(rng, n_inner), np.full(n_inner, 1.0 / n_inner)
    if law.kind == "three_point":
        x, w = np.array([-math.sqrt(3.0), 0.0, math.sqrt(3.0)]), np.array([1 / 6, 2 / 3, 1 / 6])
    elif law.kind == "two_point_rademacher":
        x, w = np.array([-1.0, 1.0]), np.array([0.5, 0.5])
    elif law.kind == "gaussian":
        x, w = np.polynomial.hermite_e.hermegauss(60)
        w = w / w.sum()
    else:
        x, w = np.polynomial.legendre.leggauss(40)
        x, w = math.sqrt(3.0) * x, w / 2
    return law.scale * x, w


def lindeberg_taylor_probe(spec_a, spec_b, n_small, entry, cfg, trial=0, method="exact", n_inner=10_000):
    """Single-entry swap compared with its fourth-order Taylor prediction.

    All entries but (a, b) come from one sample of ``spec_a``; the (a, b)
    entry (and its mirror) is drawn from the law of ``spec_a`` or of
    ``spec_b``.  The observable is S(F_{ell,beta,J}(lambda(H))) with the
    exact eigenvalues.  ``lhs`` is E_A - E_B over the swapped entry only,
    exact by quadrature (``method="exact"``) or by Monte Carlo with
    ``n_inner`` draws per law.  ``taylor_rhs`` is sum_k (E v^k - E w^k)/k!
    times the k-th derivative of the observable in the entry at 0, with the
    first two derivatives of F by central differences and the third and
    fourth by differencing the second (flagged noisy when unstable).
    Real symmetric ensembles only.
    """
    if n_small > 60:
        raise ValueError("probe dimension is limited to 60")
    spec_a, spec_b = spec_a.with_n(n_small), spec_b.with_n(n_small)
    if spec_a.is_complex or spec_b.is_complex:
        raise ValueError("the entry-swap probe supports real symmetric ensembles")
    a, b = entry[0] - 1, entry[1] - 1
    token, rng = trial_rng(cfg.base_seed, n_small, trial, 0)
    h = np.array(sample_matrix(spec_a, rng).h, copy=True)
    h[a, b] = h[b, a] = 0.0
    sigma = math.sqrt(spec_a.profile.sigma2[a, b])
    if a == b:
        law_a, law_b = spec_a.diag_law, spec_b.diag_law
    else:
        law_a, law_b = spec_a.offdiag_law, spec_b.offdiag_law

    sel = cfg.selector_for(n_small) if cfg.selector else gaps.GapSelector.bulk(n_small, 0.1)
    J = np.asarray(sel.J)
    reg = cfg.reg_for(n_small)
    s_fn = cfg.test_fn(n_small)
    ell = cfg.ell

    def place(x):
        out = h.copy()
        out[a, b] = x
        out[b, a] = x
        return out

    def f_of(x):
        return smoothmax.f_ell(np.linalg.eigvalsh(place(x)), J, ell, reg)

    def obs(x):
        return float(s_fn(f_of(x)))

    _, inner_rng = trial_rng(cfg.base_seed, n_small, trial, 1)
    xa, wa = _entry_law_nodes(law_a, method, inner_rng, n_inner)
    xb, wb = _entry_law_nodes(law_b, method, inner_rng, n_inner)
    va = np.array([obs(sigma * x) for x in xa])
    vb = np.array([obs(sigma * x) for x in xb])
    lhs = float(wa @ va - wb @ vb)
    if method == "mc":
        se = float(math.sqrt(va.var(ddof=1) / va.size + vb.var(ddof=1) / vb.size))
    else:
        se = 0.0

    # derivatives of F in the entry at 0
    step = 1e-3 * sigma
    d1 = hsreg.fd_entry_derivative(lambda m: smoothmax.f_ell(np.linalg.eigvalsh(m), J, ell, reg), h, entry, 1, step=step)
    d2 = hsreg.fd_entry_derivative(lambda m: smoothmax.f_ell(np.linalg.eigvalsh(m), J, ell, reg), h, entry, 2, step=step)

    def second(x):
        return hsreg.fd_entry_derivative(
            lambda m: smoothmax.f_ell(np.linalg.eigvalsh(m), J, ell, reg), place(x), entry, 2, step=step
        ).value

    outer = 10 * step
    s_p, s_0, s_m = second(outer), d2.value, second(-outer)
    d3 = (s_p - s_m) / (2 * outer)
    d4 = (s_p - 2 * s_0 + s_m) / outer**2
    f0 = f_of(0.0)
    sj = s_fn.jet(np.array([f0]), 4)[:, 0]
    F1, F2, F3, F4 = d1.value, d2.value, d3, d4
    chain = [
        0.0,
        sj[1] * F1,
        sj[2] * F1**2 + sj[1] * F2,
        sj[3] * F1**3 + 3 * sj[2] * F1 * F2 + sj[1] * F3,
        sj[4] * F1**4 + 6 * sj[3] * F1**2 * F2 + sj[2] * (3 * F2**2 + 4 * F3 * F1) + sj[1] * F4,
    ]
    moment_diff = [
        sigma**k * (float(law_a.unit_moment(k)) - float(law_b.unit_moment(k))) for k in range(5)
    ]
    rhs = float(sum(chain[k] * moment_diff[k] / math.factorial(k) for k in range(1, 5)))
    noisy = bool(d1.noisy or d2.noisy)
    return {
        "lhs": lhs,
        "lhs_stderr": se,
        "taylor_rhs": rhs,
        "residual": lhs - rhs,
        "fourth_order_bracket": float(chain[4]),
        "noisy": noisy,
        "seed": token,
    }


def wegner_probe(spec, energy, eps_w, cfg, workers=1, **run_kw):
    """Frequency of an eigenvalue within 2 N^{-1-eps_w} of ``energy``.

    ``eps_w`` may be a list; results come back per exponent, together with
    the first-order expected count 4 rho_sc(E) N^{-eps_w}.
    """
    eps_list = list(np.atleast_1d(eps_w))
    params = dict(cfg.params)
    params.update(energy=float(energy), eps_w=[float(e) for e in eps_list])
    run_cfg = _with(cfg, kind="wegner", ensemble=spec.to_dict(), params=params)
    run = mc_run(run_cfg, workers=workers, **run_kw)
    rows = []
    for n in run_cfg.n_values:
        for k, e in enumerate(eps_list):
            hits = run.column(f"hit_{k}", n)
            p = float(hits.mean())
            rows.append(
                {
                    "n": n,
                    "eps_w": float(e),
                    "empirical_prob": p,
                    "stderr": float(math.sqrt(max(p * (1 - p), 1e-300) / hits.size)),
                    "expected_count": float(4 * spectral.rho_sc(energy) * n ** (-e)),
                }
            )
    out = dict(rows[-1]) if len(rows) == 1 else {"per_case": rows}
    out["per_case"] = rows
    out["run"] = run
    return out


def _universality_run(spec, interval, cfg, workers, run_kw):
    if isinstance(cfg, RunResult):
        return cfg
    sel = {"mode": "interval", "a": float(interval[0]), "b": float(interval[1])}
    run_cfg = _with(cfg, kind="universality", ensemble=spec.to_dict(), selector=sel)
    return mc_run(run_cfg, workers=workers, **run_kw)


def universality_maxgap(spec, interval, cfg, workers=1, max_trials=None, k=1, **run_kw):
    """Per-N mean and sd of M N T_hat_k / sqrt(32 log N).

    ``cfg`` may also be a finished universality :class:`RunResult`; then
    only the first ``max_trials`` successful trials per N are used.
    """
    run = _universality_run(spec, interval, cfg, workers, run_kw)
    table = []
    for n in run.config.n_values:
        x = run.column(f"scaled_{k}", n)
        if max_trials is not None:
            x = x[:max_trials]
        row = {"n": n, "count": int(x.size), "scaled_mean": float(x.mean()), "scaled_sd": float(x.std(ddof=1))}
        if "scaled_growth" in run.ok_records(n)[0].stats:
            g = run.column("scaled_growth", n)[: x.size]
            row["growth_mean"] = float(g.mean())
        table.append(row)
    return {"scaled_mean": table[-1]["scaled_mean"], "scaled_sd": table[-1]["scaled_sd"], "per_N": table, "run": run}


def universality_fluctuations(spec, interval, k, cfg, workers=1, n=None, c2=None, **run_kw):
    """tau*_k samples, the fitted (or given) c2 and the KS distance to Gumbel-k."""
    run = _universality_run(spec, interval, cfg, workers, run_kw)
    n = run.config.n_values[-1] if n is None else n
    tau = run.column(f"tau_{k}", n)
    fitted = gaps.fit_gumbel_location(tau, k)
    loc = fitted if c2 is None else c2
    ks = sps.kstest(tau, lambda x: gaps.gumbel_k_cdf(x, k, loc)).statistic
    return {"tau_samples": tau, "fitted_c2": fitted, "ks_to_gumbel_k": float(ks), "n": n, "run": run}


def gumbel_self_check(k=1, c2=0.0, size=10_000, seed=0):
    """Fit and KS on synthetic Gumbel-k draws (pipeline self-consistency)."""
    rng = np.random.default_rng(seed)
    tau = gaps.sample_gumbel_k(rng, k, c2, size)
    fitted = gaps.fit_gumbel_location(tau, k)
    ks = sps.kstest(tau, lambda x: gaps.gumbel_k_cdf(x, k, fitted)).statistic
    return {"fitted_c2": fitted, "ks_to_gumbel_k": float(ks)}


def coupling_decay(spec, cfg, spec_y=None, workers=1, **run_kw):
    """Median over trials of the max bulk N |gap difference| at each checkpoint."""
    d = {"kind": "coupling", "ensemble": spec.to_dict()}
    if spec_y is not None:
        d["ensemble_b"] = spec_y.to_dict()
    run_cfg = _with(cfg, **d)
    run = mc_run(run_cfg, workers=workers, **run_kw)
    n = run_cfg.n_values[-1]
    times = _coupling_times(run_cfg, n)
    medians = [float(np.median(run.column(f"gapdiff_{k}", n))) for k in range(len(times) + 1)]
    return {"times": [0.0] + times, "median_max_gapdiff": medians, "run": run}


def regularization_accuracy(spec, cfg, workers=1, **run_kw):
    """Distribution over trials of N max_i |tilde lambda_i - lambda_i|."""
    run = mc_run(_with(cfg, kind="regularize", ensemble=spec.to_dict()), workers=workers, **run_kw)
    n = run.config.n_values[-1]
    x = run.column("max_scaled_error", n)
    return {"p95_scaled": float(np.percentile(x, 95)), "median_scaled": float(np.median(x)), "samples": x, "run": run}


def entry_derivative_scale(spec, cfg, workers=1, **run_kw):
    """Finite-difference probes of d tilde_lambda_i / d h_ab at random (i, a, b)."""
    run = mc_run(_with(cfg, kind="fd_probe", ensemble=spec.to_dict()), workers=workers, **run_kw)
    n = run.config.n_values[-1]
    x = run.column("abs_derivative", n)
    return {"max_abs": float(x.max()), "samples": x, "noisy": int(run.column("noisy", n).sum()), "run": run}


def spectral_diagnostics(spec, cfg, workers=1, **run_kw):
    """Rigidity, delocalization and local-law maxima per trial."""
    run = mc_run(_with(cfg, kind="spectrum", ensemble=spec.to_dict()), workers=workers, **run_kw)
    n = run.config.n_values[-1]
    out = {"run": run}
    for key in ("rigidity_max", "deloc_max", "local_law_max"):
        if run.ok_records(n) and key in run.ok_records(n)[0].stats:
            out[key] = run.column(key, n)
    return out
