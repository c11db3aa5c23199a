"""Attack orchestration: configuration, SCARL and classical attacks, sweeps, NDF and reports."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import ascon_core, stats
from .autoencoder import AutoencoderConfig, normalize_features, to_sequences, train_autoencoder
from .leakage_est import FIT_METHODS, RANK_STATISTICS, RankTable, enumerate_candidates
from .rl_cluster import ClusteringResult, RlConfig, run_clustering
from .trace_prep import PairData, WindowSpec, pair_windows
from .trace_sim import SimConfig, TraceSet, noise_for_snr, simulate_campaign

log = logging.getLogger(__name__)

ATTACK_KINDS = ("dpa", "cpa", "ks", "scarl")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(ValueError):
    """Unreadable or inconsistent input data (exit code 3)."""


# --- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class AttackConfig:
    traceset: str = ""
    pair: int = 0
    samples_per_clock: int | None = None  # None: take it from the trace set
    delta_l: int = 24
    model: str = "hw"  # leakage model of the classical attacks
    m0: int = 2
    rank_statistic: str = "corr"
    fit_method: str = "minnorm"
    traces: int | None = None  # use a prefix of this many encryptions
    iv: int | None = None
    workers: int = 1
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    rl: RlConfig = field(default_factory=RlConfig)

    def validate(self) -> None:
        if not 0 <= self.pair < 32:
            raise ConfigError("pair index must be in 0..31")
        if self.model not in ("hw", "msb"):
            raise ConfigError(f"unknown classical leakage model {self.model!r}")
        if not 0 <= self.m0 <= 5:
            raise ConfigError("m0 must be in 0..5")
        if self.rank_statistic not in RANK_STATISTICS:
            raise ConfigError(f"unknown rank statistic {self.rank_statistic!r}")
        if self.fit_method not in FIT_METHODS:
            raise ConfigError(f"unknown fit method {self.fit_method!r}")
        if self.traces is not None and self.traces < 2:
            raise ConfigError("need at least two traces")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.autoencoder.validate()
            self.rl.validate()
            WindowSpec(self.samples_per_clock or 125, self.delta_l)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def with_seed(self, seed: int) -> "AttackConfig":
        """Derive the autoencoder and RL seeds from one experiment seed."""
        ae_seed, rl_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2))
        return replace(self, autoencoder=replace(self.autoencoder, seed=ae_seed), rl=replace(self.rl, seed=rl_seed))

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {where} fields: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def attack_config_from_dict(data: dict) -> AttackConfig:
    data = dict(data)
    ae = _build(AutoencoderConfig, data.pop("autoencoder", {}) or {}, "autoencoder")
    rl = _build(RlConfig, data.pop("rl", {}) or {}, "rl")
    cfg = _build(AttackConfig, {**data, "autoencoder": ae, "rl": rl}, "attack")
    cfg.validate()
    return cfg


def sim_config_from_dict(data: dict) -> SimConfig:
    """SimConfig from a mapping; ``snr_db`` may replace ``noise_sigma``."""
    data = dict(data)
    snr = data.pop("snr_db", None)
    try:
        cfg = SimConfig.from_dict(data)
        if snr is not None:
            if "noise_sigma" in data:
                raise ConfigError("give either snr_db or noise_sigma, not both")
            sigma = noise_for_snr(float(snr), cfg.leakage_kind, cfg.leakage_scale, cfg.leakage_coefficients)
            cfg = replace(cfg, noise_sigma=sigma)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config_file(path) -> dict:
    """Read a JSON or YAML config file into a dict."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    return data


def planted_key(seed: int) -> int:
    """A reproducible random 128-bit key for simulated campaigns."""
    words = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x4B4559,))).integers(0, 2 ** 32, size=4, dtype=np.uint64)
    key = 0
    for w in words:
        key = (key << 32) | int(w)
    return key


def standard_campaign(kind: str = "hw", seed: int = 0, num_encryptions: int = 4000,
                      sbox_count: int = 64, **overrides) -> SimConfig:
    """Smeared leakage at 0 dB SNR on the POI, 125 samples per clock."""
    cfg = SimConfig(num_encryptions=num_encryptions, samples_per_clock=125, sbox_count=sbox_count,
                    leakage_kind=kind, smear_width=5, baseline_amplitude=4.0, rng_seed=seed)
    cfg = replace(cfg, noise_sigma=noise_for_snr(0.0, kind))
    return replace(cfg, **overrides)


# --- attacks ------------------------------------------------------------------

@dataclass
class AttackReport:
    kind: str
    pair: int
    num_traces: int
    table: RankTable
    config: dict
    timing: dict = field(default_factory=dict)
    true_candidate: int | None = None
    ae_history: list[float] = field(default_factory=list)
    ae_initial_mse: float | None = None
    rl: ClusteringResult | None = None

    @property
    def verdict(self) -> bool | None:
        if self.true_candidate is None:
            return None
        return self.table.best == self.true_candidate

    @property
    def true_position(self) -> int | None:
        return None if self.true_candidate is None else self.table.position(self.true_candidate)

    def summary(self) -> dict:
        out = {
            "kind": self.kind,
            "pair": self.pair,
            "num_traces": self.num_traces,
            "best_candidate": self.table.best,
            "order": [int(c) for c in self.table.order],
            "ranks": [float(r) for r in self.table.ranks],
            "degenerate": list(self.table.degenerate),
            "timing": self.timing,
            "config": self.config,
        }
        if self.true_candidate is not None:
            out["true_candidate"] = self.true_candidate
            out["true_position"] = self.true_position
            out["verdict"] = "correct" if self.verdict else "incorrect"
        if self.ae_history:
            out["ae_initial_mse"] = self.ae_initial_mse
            out["ae_history"] = self.ae_history
        if self.rl is not None:
            best = self.rl.best
            out["rl_best"] = {"step": best.step, "reward": best.reward, "inter_cluster": best.inter,
                              "kl": best.kl, "p0": best.p0,
                              "argmax_dim": int(np.abs(self.rl.best_state).argmax())}
        return out


def _prepare(ts: TraceSet, cfg: AttackConfig, normalize: bool = True) -> tuple[TraceSet, PairData]:
    if cfg.traces is not None:
        if cfg.traces > len(ts):
            raise DataError(f"requested {cfg.traces} traces, only {len(ts)} available")
        ts = ts.prefix(cfg.traces)
    if len(ts) < 2:
        raise DataError("need at least two traces")
    spc = cfg.samples_per_clock or ts.samples_per_clock
    spec = WindowSpec(spc, cfg.delta_l)
    if ts.trace_length < (2 * cfg.pair + 2) * spc:
        raise DataError(f"traces of {ts.trace_length} samples do not reach S-box pair {cfg.pair}")
    iv = cfg.iv
    if iv is None and ts.sim_config is not None:
        iv = ts.sim_config.iv
    return ts, pair_windows(ts, cfg.pair, spec, iv=iv, normalize=normalize)


def true_candidate(ts: TraceSet, pair: int) -> int | None:
    if ts.ground_truth_key is None:
        return None
    key = ts.ground_truth_key
    sim = ts.sim_config
    if sim is not None and sim.round_constant:
        # the constant is folded into the effective k_{i+64} bits seen by the S-box
        hi, lo = key >> 64, key & ascon_core.MASK64
        key = (hi << 64) | (lo ^ 0xF0)
    return ascon_core.pair_candidate(key, pair)


def run_classical(kind: str, ts: TraceSet, cfg: AttackConfig) -> AttackReport:
    if kind not in ("dpa", "cpa", "ks"):
        raise ConfigError(f"unknown classical attack {kind!r}")
    t0 = time.perf_counter()
    # raw windows: per-row range scaling would bend the leakage non-linearly
    ts, pd = _prepare(ts, cfg, normalize=False)
    table = stats.classical_attack(kind, pd.windows, pd.sbox_sel, pd.nonce_hi, pd.nonce_lo, pd.iv_pair,
                                   model=cfg.model, workers=cfg.workers)
    return AttackReport(kind=kind, pair=cfg.pair, num_traces=len(ts), table=table, config=cfg.to_dict(),
                        timing={"total_s": time.perf_counter() - t0},
                        true_candidate=true_candidate(ts, cfg.pair))


@dataclass
class ScarlArtifacts:
    features: np.ndarray
    pair_data: PairData


def run_scarl(ts: TraceSet, cfg: AttackConfig, keep: dict | None = None) -> AttackReport:
    """Window, train the autoencoder, cluster its features and rank the 16 candidates.

    ``keep``, if given, receives intermediate artifacts (model, features).
    """
    timing = {}
    t0 = time.perf_counter()
    ts, pd = _prepare(ts, cfg)
    ae_cfg = cfg.autoencoder
    seqs = to_sequences(pd.windows, ae_cfg.window, ae_cfg.stride)
    t1 = time.perf_counter()
    trained = train_autoencoder(seqs, ae_cfg)
    features = trained.model.encode(seqs)
    t2 = time.perf_counter()
    clustering = run_clustering(features, cfg.rl, normalized=normalize_features(features))
    t3 = time.perf_counter()
    table = enumerate_candidates(features, pd.sbox_sel, pd.nonce_hi, pd.nonce_lo, clustering.labels,
                                 pd.iv_pair, m0=cfg.m0, workers=cfg.workers,
                                 statistic=cfg.rank_statistic, fit_method=cfg.fit_method)
    t4 = time.perf_counter()
    timing = {"prepare_s": t1 - t0, "autoencoder_s": t2 - t1, "rl_s": t3 - t2, "rank_s": t4 - t3, "total_s": t4 - t0}
    if keep is not None:
        keep.update(model=trained.model, features=features, pair_data=pd, sequences=seqs)
    return AttackReport(kind="scarl", pair=cfg.pair, num_traces=len(ts), table=table, config=cfg.to_dict(),
                        timing=timing, true_candidate=true_candidate(ts, cfg.pair),
                        ae_history=trained.history, ae_initial_mse=trained.initial_mse, rl=clustering)


def run_attack(kind: str, ts: TraceSet, cfg: AttackConfig) -> AttackReport:
    if kind not in ATTACK_KINDS:
        raise ConfigError(f"unknown attack kind {kind!r}")
    cfg.validate()
    if kind == "scarl":
        return run_scarl(ts, cfg)
    return run_classical(kind, ts, cfg)


def run_sweep(kind: str, ts: TraceSet, cfg: AttackConfig, counts: list[int]) -> list[AttackReport]:
    """Repeat the attack on prefixes of the campaign, one report per count (in order)."""
    if not counts:
        raise ConfigError("sweep needs at least one trace count")
    bad = [n for n in counts if n > len(ts) or n < 2]
    if bad:
        raise DataError(f"trace counts {bad} outside 2..{len(ts)}")
    jobs = [replace(cfg, traces=int(n), workers=1) for n in counts]
    if cfg.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(lambda c: run_attack(kind, ts, c), jobs))
    return [run_attack(kind, ts, c) for c in jobs]


def run_ndf(ts: TraceSet, window_lengths: list[int]) -> np.ndarray:
    """Matrix with the sample index in column 0 and one NDF curve per window length."""
    if len(ts) < 2:
        raise DataError("NDF needs at least two traces")
    if not window_lengths:
        raise ConfigError("NDF needs at least one window length")
    samples = np.asarray(ts.samples, dtype=np.float64)
    cols = [np.arange(samples.shape[1], dtype=np.float64)]
    for w in window_lengths:
        if w < 2 or w > samples.shape[1]:
            raise ConfigError(f"window length {w} outside 2..{samples.shape[1]}")
        cols.append(stats.ndf_curve(samples, int(w)))
    return np.stack(cols, axis=1)


# --- report text ----------------------------------------------------------------

def sweep_text(reports: list[AttackReport]) -> str:
    lines = ["num_traces,best_candidate,true_position,correct"]
    for r in reports:
        pos = "" if r.true_position is None else str(r.true_position)
        ok = "" if r.verdict is None else str(int(r.verdict))
        lines.append(f"{r.num_traces},{r.table.best},{pos},{ok}")
    positions = [r.true_position for r in reports if r.true_position is not None]
    if len(positions) > 1:
        trend = "non-increasing" if all(a >= b for a, b in zip(positions, positions[1:])) else "not monotone"
        lines.append(f"# true-candidate position trend: {trend}")
    return "\n".join(lines) + "\n"


def ndf_text(matrix: np.ndarray, window_lengths: list[int]) -> str:
    lines = ["sample," + ",".join(f"ndf_w{w}" for w in window_lengths)]
    for row in matrix:
        vals = ",".join("nan" if not np.isfinite(v) else f"{v:.17g}" for v in row[1:])
        lines.append(f"{int(row[0])},{vals}")
    return "\n".join(lines) + "\n"


def history_text(history: list[float], initial: float | None) -> str:
    lines = ["epoch,mse"]
    if initial is not None:
        lines.append(f"0,{initial:.17g}")
    lines += [f"{e},{m:.17g}" for e, m in enumerate(history, start=1)]
    return "\n".join(lines) + "\n"


def write_report(report: AttackReport, out_dir) -> dict[str, Path]:
    """Write the rank table, histories, a JSON summary and timings into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"ranks": out / "ranks.csv", "summary": out / "summary.json"}
    paths["ranks"].write_text(report.table.to_text())
    if report.ae_history:
        paths["ae_history"] = out / "ae_history.csv"
        paths["ae_history"].write_text(history_text(report.ae_history, report.ae_initial_mse))
    if report.rl is not None:
        paths["rl_history"] = out / "rl_history.csv"
        paths["rl_history"].write_text(report.rl.history_text())
    summary = report.summary()
    # wall-clock timing lives apart so that reruns reproduce every other file exactly
    paths["timing"] = out / "timing.json"
    paths["timing"].write_text(json.dumps(_jsonable(summary.pop("timing")), indent=2, sort_keys=True) + "\n")
    paths["summary"].write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return paths


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else str(x)
    return x


def render_summary(summary: dict) -> str:
    """Human-readable text report of a JSON summary."""
    lines = [f"attack: {summary['kind']}  pair: {summary['pair']}  traces: {summary['num_traces']}"]
    lines.append(f"best candidate: {summary['best_candidate']}")
    if "verdict" in summary:
        lines.append(f"true candidate: {summary['true_candidate']} (position {summary['true_position']}) -> {summary['verdict']}")
    lines.append("order: " + " ".join(str(c) for c in summary["order"]))
    if "ae_history" in summary:
        h = summary["ae_history"]
        lines.append(f"autoencoder mse: initial {summary['ae_initial_mse']:.6g}, epoch 1 {h[0]:.6g}, final {h[-1]:.6g}")
    if "rl_best" in summary:
        b = summary["rl_best"]
        lines.append(f"rl best step {b['step']}: reward {b['reward']:.6g} = {b['inter_cluster']:.6g} - {b['kl']:.6g}, p0 {b['p0']:.4f}")
    if "timing" in summary:
        lines.append("timing: " + ", ".join(f"{k} {v:.2f}" for k, v in sorted(summary["timing"].items())))
    return "\n".join(lines) + "\n"
