"""Training-corpus generation: Latin Hypercube sampling, COS labeling,
region filtering, gradient squashing, splitting and serialization.

Two corpora are produced.  The inverse-map corpus holds put samples in
the holding region with the squashed price as a feature and volatility
as the target; the forward corpus holds (put, call) price pairs for the
dual-head network.  The spot is fixed at 1.0 in both; moneyness is
varied through the strike.  Row labeling is embarrassingly parallel and
is sharded across processes, merged back in row order, so results do
not depend on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cos_engine import CosConfig, MarketParams, call_via_symmetry, price_american
from .errors import FormatError
from .region import EPS_PAYOFF, EPS_VEGA, classify, squash

__all__ = [
    "ParamBox",
    "Dataset",
    "IV_BOX",
    "FORWARD_BOX",
    "LOG_TV_BOUNDS",
    "lhs_sample",
    "generate_iv_dataset",
    "generate_forward_dataset",
    "split",
    "save_dataset",
    "load_dataset",
]

SPOT = 1.0

# Declared range of the squashed feature; rows outside are discarded so the
# corpus matches the advertised input domain of the inverse network.
LOG_TV_BOUNDS = (-11.51, -0.24)


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned sampling box, one (name, low, high) triple per dimension."""

    dims: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        for name, low, high in self.dims:
            if not low < high:
                raise ValueError(f"dimension {name!r}: low must be < high")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d[0] for d in self.dims)

    @property
    def lows(self) -> np.ndarray:
        return np.array([d[1] for d in self.dims])

    @property
    def highs(self) -> np.ndarray:
        return np.array([d[2] for d in self.dims])


IV_BOX = ParamBox(
    (
        ("strike", 0.6, 1.4),
        ("tau", 0.05, 3.0),
        ("rate", -0.05, 0.1),
        ("div_yield", -0.05, 0.1),
        ("sigma", 0.01, 1.05),
    )
)

FORWARD_BOX = ParamBox(
    (
        ("strike", 0.45, 1.55),
        ("tau", 0.08, 3.05),
        ("rate", -0.1, 0.25),
        ("div_yield", -0.1, 0.25),
        ("sigma", 0.01, 1.05),
    )
)


@dataclass
class Dataset:
    """Labeled sample table with a column schema and per-row split tags.

    ``split`` holds "train"/"val"/"test" tags (empty before :func:`split`
    has been applied).  ``meta`` records provenance: box bounds, seed,
    thresholds, pricing configuration and drop counts.
    """

    feature_names: tuple[str, ...]
    target_names: tuple[str, ...]
    features: np.ndarray
    targets: np.ndarray
    split: np.ndarray
    seed: int
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        n = self.features.shape[0]
        if self.targets.shape[0] != n or self.split.shape[0] != n:
            raise ValueError("features, targets and split must have equal row counts")

    def __len__(self) -> int:
        return self.features.shape[0]

    def rows(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        """(features, targets) of the rows carrying ``tag``."""
        mask = self.split == tag
        return self.features[mask], self.targets[mask]


def lhs_sample(box: ParamBox, n: int, seed: int) -> np.ndarray:
    """Latin Hypercube sample of ``n`` points over ``box``.

    Per dimension, exactly one point falls in each of the n equal-width
    strata; deterministic for a given seed.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    d = len(box.dims)
    unit = np.empty((n, d))
    for j in range(d):
        unit[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return box.lows + unit * (box.highs - box.lows)


def _params_from_row(row: np.ndarray, names: tuple[str, ...], kind: str) -> MarketParams:
    v = dict(zip(names, row))
    return MarketParams(
        s0=SPOT,
        strike=v["strike"],
        tau=v["tau"],
        rate=v["rate"],
        div_yield=v["div_yield"],
        sigma=v["sigma"],
        kind=kind,
    )


def _label_iv_chunk(args) -> list[tuple[int, str, float, float]]:
    """Price one shard of put rows; returns (index, status, log_tv, sigma)."""
    rows, names, cfg, eps1, eps2, offset = args
    out = []
    for i, row in enumerate(rows):
        p = _params_from_row(row, names, "put")
        itm = p.s0 < p.strike
        try:
            res = price_american(p, cfg, greeks=itm)
        except Exception:
            out.append((offset + i, "error", 0.0, 0.0))
            continue
        vega = res.vega if itm else np.inf
        if res.in_stopping_region or not classify(p, res.price, vega, eps1, eps2).is_holding:
            out.append((offset + i, "stopping", 0.0, 0.0))
            continue
        time_value = res.price - max(
            p.strike - p.s0,
            p.strike * np.exp(-p.rate * p.tau) - p.s0 * np.exp(-p.div_yield * p.tau),
            0.0,
        )
        if time_value <= 0.0:
            out.append((offset + i, "nonpositive_tv", 0.0, 0.0))
            continue
        log_tv = float(np.log(time_value))
        if not LOG_TV_BOUNDS[0] < log_tv < LOG_TV_BOUNDS[1]:
            out.append((offset + i, "out_of_bounds", 0.0, 0.0))
            continue
        out.append((offset + i, "ok", log_tv, p.sigma))
    return out


def _label_forward_chunk(args) -> list[tuple[int, str, float, float]]:
    """Price one shard of rows as put and (symmetric) call pairs."""
    rows, names, cfg, offset = args
    out = []
    for i, row in enumerate(rows):
        try:
            p_put = _params_from_row(row, names, "put")
            p_call = _params_from_row(row, names, "call")
            put_price = price_american(p_put, cfg, greeks=False).price
            call_price = price_american(call_via_symmetry(p_call), cfg, greeks=False).price
        except Exception:
            out.append((offset + i, "error", 0.0, 0.0))
            continue
        out.append((offset + i, "ok", put_price, call_price))
    return out


def _run_sharded(fn, per_row_args: list, workers: int) -> list:
    results = []
    if workers <= 1:
        for chunk in per_row_args:
            results.extend(fn(chunk))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(fn, per_row_args):
                results.extend(part)
    results.sort(key=lambda t: t[0])
    return results


def _chunks(samples: np.ndarray, extra: tuple, chunk_rows: int = 256) -> list:
    out = []
    for start in range(0, samples.shape[0], chunk_rows):
        rows = samples[start : start + chunk_rows]
        out.append((rows, *extra, start))
    return out


def default_workers() -> int:
    """Worker count from AMCOS_THREADS, defaulting to single-process."""
    try:
        return max(1, int(os.environ.get("AMCOS_THREADS", "1")))
    except ValueError:
        return 1


def _box_meta(box: ParamBox, cfg: CosConfig, seed: int, n: int) -> dict[str, str]:
    meta = {"seed": str(seed), "requested_rows": str(n), "spot": repr(SPOT)}
    for name, low, high in box.dims:
        meta[f"box.{name}"] = f"{low!r},{high!r}"
    for field_name in ("n_terms", "trunc_width", "richardson_level", "newton_tol",
                       "newton_max_iter", "scan_points", "fft_mode"):
        meta[f"cos.{field_name}"] = repr(getattr(cfg, field_name))
    return meta


def generate_iv_dataset(
    box: ParamBox = IV_BOX,
    n: int = 100_000,
    seed: int = 0,
    cfg: CosConfig = CosConfig(),
    eps1: float = EPS_PAYOFF,
    eps2: float = EPS_VEGA,
    workers: int | None = None,
) -> Dataset:
    """Inverse-map corpus: (log time value, K, r, q, tau) -> sigma.

    Rows whose put sits in the stopping region, has a non-positive time
    value, prices outside the declared log-time-value range, or fails to
    price are dropped; the drop counts are recorded in ``meta``.
    """
    workers = default_workers() if workers is None else workers
    samples = lhs_sample(box, n, seed)
    names = box.names
    results = _run_sharded(_label_iv_chunk, _chunks(samples, (names, cfg, eps1, eps2)), workers)

    counts = {"ok": 0, "stopping": 0, "nonpositive_tv": 0, "out_of_bounds": 0, "error": 0}
    keep_idx, log_tvs = [], []
    for idx, status, log_tv, _sigma in results:
        counts[status] += 1
        if status == "ok":
            keep_idx.append(idx)
            log_tvs.append(log_tv)

    keep = np.array(keep_idx, dtype=int)
    col = {name: i for i, name in enumerate(names)}
    features = np.column_stack(
        [
            np.array(log_tvs),
            samples[keep, col["strike"]],
            samples[keep, col["rate"]],
            samples[keep, col["div_yield"]],
            samples[keep, col["tau"]],
        ]
    )
    targets = samples[keep, col["sigma"]][:, None]

    meta = _box_meta(box, cfg, seed, n)
    meta.update(
        {
            "eps_payoff": repr(eps1),
            "eps_vega": repr(eps2),
            "log_tv_bounds": f"{LOG_TV_BOUNDS[0]!r},{LOG_TV_BOUNDS[1]!r}",
            "emitted_rows": str(counts["ok"]),
            "dropped_stopping": str(counts["stopping"]),
            "dropped_nonpositive_tv": str(counts["nonpositive_tv"]),
            "dropped_out_of_bounds": str(counts["out_of_bounds"]),
            "dropped_error": str(counts["error"]),
        }
    )
    return Dataset(
        feature_names=("log_time_value", "strike", "rate", "div_yield", "tau"),
        target_names=("sigma",),
        features=features,
        targets=targets,
        split=np.full(len(keep), "", dtype="<U5"),
        seed=seed,
        meta=meta,
    )


def generate_forward_dataset(
    box: ParamBox = FORWARD_BOX,
    n: int = 100_000,
    seed: int = 0,
    cfg: CosConfig = CosConfig(),
    workers: int | None = None,
) -> Dataset:
    """Forward corpus: (K, tau, r, q, sigma) -> (put price, call price).

    The call is priced through put-call symmetry, so each row costs two
    put solves.  Stopping-region rows keep their (payoff) prices; only
    pricing failures are dropped.
    """
    workers = default_workers() if workers is None else workers
    samples = lhs_sample(box, n, seed)
    names = box.names
    results = _run_sharded(_label_forward_chunk, _chunks(samples, (names, cfg)), workers)

    keep_idx, puts, calls = [], [], []
    n_error = 0
    for idx, status, put_price, call_price in results:
        if status != "ok":
            n_error += 1
            continue
        keep_idx.append(idx)
        puts.append(put_price)
        calls.append(call_price)

    keep = np.array(keep_idx, dtype=int)
    col = {name: i for i, name in enumerate(names)}
    features = np.column_stack([samples[keep, col[c]] for c in ("strike", "tau", "rate", "div_yield", "sigma")])
    targets = np.column_stack([np.array(puts), np.array(calls)])

    meta = _box_meta(box, cfg, seed, n)
    meta.update({"emitted_rows": str(len(keep)), "dropped_error": str(n_error)})
    return Dataset(
        feature_names=("strike", "tau", "rate", "div_yield", "sigma"),
        target_names=("put_price", "call_price"),
        features=features,
        targets=targets,
        split=np.full(len(keep), "", dtype="<U5"),
        seed=seed,
        meta=meta,
    )


def split(d: Dataset, seed: int, fractions: tuple[float, float] = (0.8, 0.1)) -> Dataset:
    """Tag rows train/val/test by a seeded random permutation (80/10/10)."""
    n = len(d)
    if n < 10:
        raise ValueError("need at least 10 rows to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    tags = np.full(n, "test", dtype="<U5")
    tags[order[:n_train]] = "train"
    tags[order[n_train : n_train + n_val]] = "val"
    return replace(d, split=tags, meta={**d.meta, "split_seed": str(seed)})


def save_dataset(d: Dataset, path: str) -> None:
    """Write the table as CSV plus a ``<path>.meta`` key=value sidecar.

    Floats use 17 significant digits so a load round-trips bit-exactly.
    """
    header = ",".join([*d.feature_names, *d.target_names, "split"])
    data = np.column_stack([d.features, d.targets])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row, tag in zip(data, d.split):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{tag}\n")
    with open(path + ".meta", "w") as fh:
        fh.write(f"seed={d.seed}\n")
        fh.write(f"feature_names={','.join(d.feature_names)}\n")
        fh.write(f"target_names={','.join(d.target_names)}\n")
        for key in sorted(d.meta):
            fh.write(f"{key}={d.meta[key]}\n")


def load_dataset(path: str) -> Dataset:
    """Read a dataset written by :func:`save_dataset`."""
    meta_path = path + ".meta"
    if not os.path.exists(meta_path):
        raise FormatError(f"missing sidecar file {meta_path}")
    meta: dict[str, str] = {}
    with open(meta_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                meta[key] = value
    for required in ("seed", "feature_names", "target_names"):
        if required not in meta:
            raise FormatError(f"sidecar misses key {required!r}")
    feature_names = tuple(meta.pop("feature_names").split(","))
    target_names = tuple(meta.pop("target_names").split(","))
    seed = int(meta.pop("seed"))

    with open(path) as fh:
        header = fh.readline().strip().split(",")
        expected = [*feature_names, *target_names, "split"]
        if header != expected:
            raise FormatError(f"CSV header {header} does not match sidecar schema {expected}")
        feats, targs, tags = [], [], []
        nf, nt = len(feature_names), len(target_names)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            feats.append([float(v) for v in parts[:nf]])
            targs.append([float(v) for v in parts[nf : nf + nt]])
            tags.append(parts[nf + nt])
    return Dataset(
        feature_names=feature_names,
        target_names=target_names,
        features=np.array(feats),
        targets=np.array(targs),
        split=np.array(tags, dtype="<U5"),
        seed=seed,
        meta=meta,
    )
