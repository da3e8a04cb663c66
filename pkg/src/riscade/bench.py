"""NMSE metric, LS baseline, estimator SNR sweeps and the capacity study.

Estimators here are plain callables mapping a packed real batch (B, H, W)
to estimates of the same shape, so trained models, the LS identity and test
doubles all plug into the same benchmark loop. Noise in a benchmark cell is
drawn from a stream keyed by (seed, BENCH_NOISE, snr, sample) and therefore
shared between estimators at the same SNR: comparisons are paired.
"""
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import channel, models, rngs, training
from .errors import ConfigError, NumericError

FLOOR_DB = -120.0


# ------------------------------------------------------------------ NMSE

def nmse(h_hat, h_true, estimate_denom=False):
    """||h_hat - h_true||_F^2 / ||h_true||_F^2, batch-aggregated.

    Batches average in the expectation-ratio sense, sum of squared errors
    over sum of squared references. The per-sample-ratio mean is avoided on
    purpose: the cascaded channel is rank-limited, ||H||_F^2 has a heavy
    left tail, and E[1/||H||^2] inflates the metric by an order of
    magnitude at desk scale while the ratio of sums matches the analytic
    LS error. Accepts real-packed or complex arrays (their Frobenius norms
    agree). estimate_denom switches the denominator to ||h_hat||_F^2, the
    form some texts print; it is degenerate as h_hat -> 0, which is why it
    is not the default.
    """
    h_hat = np.asarray(h_hat)
    h_true = np.asarray(h_true)
    if h_hat.shape != h_true.shape:
        raise ConfigError(f"shape mismatch {h_hat.shape} vs {h_true.shape}")
    err = float(np.sum(np.abs(h_hat - h_true) ** 2))
    ref = float(np.sum(np.abs(h_hat if estimate_denom else h_true) ** 2))
    if ref == 0:
        raise NumericError(where="nmse", detail="zero-norm reference matrix")
    return err / ref


def to_db(ratio):
    """10 log10 with a floor at FLOOR_DB so a perfect estimate stays finite."""
    if ratio < 0:
        raise NumericError(where="to_db", detail=f"negative ratio {ratio}")
    if ratio <= 10.0 ** (FLOOR_DB / 10.0):
        return FLOOR_DB
    return float(10.0 * np.log10(ratio))


def nmse_db(h_hat, h_true, estimate_denom=False):
    return to_db(nmse(h_hat, h_true, estimate_denom))


# ------------------------------------------------------------ LS baseline

def ls_baseline(obs):
    """LS estimate from a despread observation: the observation itself.

    With orthonormal pilots the despread model is Y = H + N, so LS reduces
    to reading Y back out of the packed representation. Its NMSE is
    sigma_n^2 N_b N_u / E||H||_F^2 in expectation.
    """
    return channel.unpack_real(obs.y_packed)


def ls_estimator(y):
    """Packed-domain LS: identity on the observation batch."""
    return np.asarray(y)


def as_estimator(obj):
    """Coerce a Model or callable into the batch-callable contract."""
    if isinstance(obj, models.Model):
        return lambda y: models.estimate(obj, y)
    if callable(obj):
        return obj
    raise ConfigError(f"estimator must be a Model or callable, got "
                      f"{type(obj).__name__}")


# -------------------------------------------------------------- SNR sweep

@dataclass
class BenchmarkRow:
    estimator: str
    snr_db: float
    nmse_db: float
    n_samples: int
    mean_infer_s: float = None


@dataclass
class BenchmarkTable:
    rows: list
    config: dict = field(default_factory=dict)


BENCH_FIELDS = ["estimator", "snr_db", "nmse_db", "n_samples",
                "mean_infer_s"]


def _noisy_batch(h, sigma, seed, snr_db):
    """Observations at one SNR; per-sample substreams keep cells paired."""
    if sigma == 0.0:
        return h.copy()
    n_b, n_u = h.shape[1], h.shape[2] // 2
    key = int(round(snr_db * 1000))
    y = np.empty_like(h)
    for i in range(h.shape[0]):
        rng = rngs.substream(seed, rngs.BENCH_NOISE, key, i)
        z = rngs.complex_normal(rng, (n_b, n_u), sigma ** 2)
        y[i] = h[i] + channel.pack_real(z)
    return y


def _median_infer_s(fn, y, reps, warmup=3):
    n = y.shape[0]
    for i in range(warmup):
        fn(y[i % n:i % n + 1])
    times = np.empty(reps)
    for r in range(reps):
        i = r % n
        t0 = time.perf_counter()
        fn(y[i:i + 1])
        times[r] = time.perf_counter() - t0
    return float(np.median(times))


def run_benchmark(estimators, split, snr_grid_db, seed=0, p_mean=None,
                  record_timing=False, timing_reps=100, config=None):
    """NMSE of each estimator over an SNR grid, one table row per cell.

    Noise is regenerated per SNR on top of the split's clean channels;
    p_mean fixes the SNR definition (mean power per complex channel entry)
    and defaults to the empirical mean of the split. Timing is opt-in
    because wall-clock readings break byte-identical reruns; when on, the
    recorded value is the median over timing_reps single-sample inferences
    after warmup.
    """
    if len(snr_grid_db) == 0:
        raise ConfigError("SNR grid must be nonempty")
    if not estimators:
        raise ConfigError("estimator mapping must be nonempty")
    h = np.asarray(split.h_true)
    n = h.shape[0]
    if n < 1:
        raise ConfigError("benchmark split is empty")
    if p_mean is None:
        per_entry = h.shape[1] * (h.shape[2] // 2)
        p_mean = float(np.mean(np.sum(h ** 2, axis=(1, 2)) / per_entry))

    fns = {name: as_estimator(obj) for name, obj in estimators.items()}
    noisy = {}
    for snr in snr_grid_db:
        sigma = np.sqrt(p_mean / 10.0 ** (snr / 10.0))
        noisy[snr] = _noisy_batch(h, float(sigma), seed, snr)

    rows = []
    for name, fn in fns.items():
        for snr in snr_grid_db:
            y = noisy[snr]
            est = fn(y)
            row = BenchmarkRow(estimator=name, snr_db=float(snr),
                               nmse_db=nmse_db(est, h), n_samples=n)
            if record_timing:
                row.mean_infer_s = _median_infer_s(fn, y, timing_reps)
            rows.append(row)
    return BenchmarkTable(rows=rows, config=dict(config or {}))


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def table_to_csv_text(table):
    lines = [",".join(BENCH_FIELDS)]
    for r in table.rows:
        lines.append(",".join(_cell(getattr(r, k)) for k in BENCH_FIELDS))
    return "\n".join(lines) + "\n"


def table_to_json_text(table):
    doc = {
        "format": "riscade-benchmark",
        "version": 1,
        "config": table.config,
        "rows": [{k: getattr(r, k) for k in BENCH_FIELDS}
                 for r in table.rows],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_table(path_base, table):
    """Write path_base.csv and the JSON mirror path_base.json."""
    csv_path, json_path = f"{path_base}.csv", f"{path_base}.json"
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(table_to_csv_text(table))
    with open(json_path, "w", encoding="utf-8") as f:
        f.write(table_to_json_text(table))
    return csv_path, json_path


# ---------------------------------------------------------- capacity sweep

@dataclass
class SweepRow:
    features: int
    n_r: int
    formula_ops: float
    exact_macs_per_sample: float
    val_nmse_db: float


SWEEP_FIELDS = ["features", "n_r", "formula_ops", "exact_macs_per_sample",
                "val_nmse_db"]


def capacity_sweep(feature_counts, rdn_counts, dataset, cfg, b_layers=4):
    """Train an MRDN variant per (features, n_r) cell under identical data.

    Every cell reuses the same dataset and the same TrainConfig (and hence
    the same shuffle stream), so rows differ only through model capacity.
    Returns one SweepRow per cell with the op count attached.
    """
    if not feature_counts or not rdn_counts:
        raise ConfigError("feature and RDN count lists must be nonempty")
    if cfg.model_kind != "mrdn":
        raise ConfigError("capacity sweep trains MRDN variants only")
    if len(dataset.val) == 0:
        raise ConfigError("capacity sweep needs a validation split")
    n_b, width = dataset.train.y.shape[1], dataset.train.y.shape[2]
    budget = models.OpsBudget(n_b=n_b, n_u=width // 2,
                              s=len(dataset.train), t=cfg.epochs)
    rows = []
    for f in feature_counts:
        for r in rdn_counts:
            spec = models.MRDNSpec(n_r=r, b_layers=b_layers, features=f)
            model = models.build_model("mrdn", spec=spec, seed=cfg.seed)
            trained, metrics = training.train(model, dataset, cfg)
            val = metrics[-1]["val_nmse_db"]
            ops = models.count_ops(spec, budget)
            rows.append(SweepRow(features=f, n_r=r,
                                 formula_ops=ops.formula_ops,
                                 exact_macs_per_sample=
                                 ops.exact_macs_per_sample,
                                 val_nmse_db=float(val)))
    return rows


def sweep_to_csv_text(rows):
    lines = [",".join(SWEEP_FIELDS)]
    for r in rows:
        lines.append(",".join(_cell(getattr(r, k)) for k in SWEEP_FIELDS))
    return "\n".join(lines) + "\n"
