"""Command-line surface.

Subcommands: price, greeks, eed, figures, gen-data, train, implied-vol,
calibrate, eval.  All human-facing output is CSV or plain key=value
text.  Flags override --config file entries, which override built-in
defaults; when an --output file is written, the effective settings are
echoed to ``<output>.config``.  Exit codes: 0 success, 2 usage error,
1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from . import dataset as ds
from .calibrate import DeConfig, calibrate_direct, cann_backward, implied_vol_predict
from .cos_engine import CosConfig, MarketParams, call_via_symmetry, price_american
from .neuralnet import TrainConfig, forward, init_glorot, load_weights, save_weights, train
from .reference import early_exercise_premiums, european_bs
from .region import classify

FLOAT_FMT = "%.12g"

# Parameter grid of the systemic recovery experiment: (low, high, step).
SYSTEMIC_GRID = {
    "sigma": (0.1, 0.45, 0.05),
    "div_yield": (-0.06, 0.08, 0.02),
    "strike": (0.7, 1.2, 0.1),
    "tau": (0.5, 1.5, 0.25),
    "rate": (-0.04, 0.06, 0.02),
}


def _fmt(value: float) -> str:
    return FLOAT_FMT % value


def _grid_values(low: float, high: float, step: float, stride: int = 1) -> np.ndarray:
    count = int(round((high - low) / step)) + 1
    return (low + step * np.arange(count))[::stride]


def _cos_config(args) -> CosConfig:
    return CosConfig(
        n_terms=args.n_terms,
        trunc_width=args.trunc_width,
        richardson_level=args.richardson_level,
    )


def _add_cos_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-terms", type=int, default=512, help="Fourier term count")
    parser.add_argument("--trunc-width", type=float, default=10.0, help="truncation width multiple")
    parser.add_argument("--richardson-level", type=int, default=2, help="ladder level l")


def _add_market_flags(parser: argparse.ArgumentParser, with_sigma: bool = True) -> None:
    parser.add_argument("--s0", type=float, default=1.0)
    parser.add_argument("--strike", type=float, required=True)
    parser.add_argument("--tau", type=float, required=True)
    parser.add_argument("--rate", type=float, required=True)
    parser.add_argument("--div-yield", type=float, required=True)
    if with_sigma:
        parser.add_argument("--sigma", type=float, required=True)


def _open_output(args):
    if getattr(args, "output", None):
        return open(args.output, "w", newline="")
    return sys.stdout


def _echo_config(args) -> None:
    output = getattr(args, "output", None)
    if not output:
        return
    with open(output + ".config", "w") as fh:
        for key, value in sorted(vars(args).items()):
            if key not in ("func", "config"):
                fh.write(f"{key}={value}\n")


# -- price / greeks -----------------------------------------------------------


def _price_rows(rows, cfg: CosConfig, include_greeks: bool, include_ladder: bool, writer) -> None:
    header = ["s0", "strike", "tau", "rate", "div_yield", "sigma", "kind", "price", "vega", "delta"]
    if include_greeks:
        header.append("in_stopping_region")
    if include_ladder:
        header += [f"bermudan_{i}" for i in range(4)]
    header.append("error")
    writer.writerow(header)
    for row in rows:
        base = [row["s0"], row["strike"], row["tau"], row["rate"], row["div_yield"], row["sigma"], row["kind"]]
        try:
            p = MarketParams(
                s0=float(row["s0"]),
                strike=float(row["strike"]),
                tau=float(row["tau"]),
                rate=float(row["rate"]),
                div_yield=float(row["div_yield"]),
                sigma=float(row["sigma"]),
                kind=row["kind"],
            )
            res = price_american(p, cfg)
        except Exception as exc:
            pad = 3 + (1 if include_greeks else 0) + (4 if include_ladder else 0)
            writer.writerow(base + [""] * pad + [str(exc)])
            continue
        out = base + [_fmt(res.price), _fmt(res.vega), _fmt(res.delta)]
        if include_greeks:
            out.append(str(res.in_stopping_region).lower())
        if include_ladder:
            out += [_fmt(v) for v in res.bermudan_ladder]
        writer.writerow(out + [""])


def _collect_market_rows(args):
    if args.input:
        with open(args.input, newline="") as fh:
            return list(csv.DictReader(fh))
    for name in ("strike", "tau", "rate", "sigma"):
        if getattr(args, name) is None:
            print(f"usage: provide --input FILE or all of --strike/--tau/--rate/--sigma (missing --{name})", file=sys.stderr)
            raise SystemExit(2)
    return [
        {
            "s0": args.s0,
            "strike": args.strike,
            "tau": args.tau,
            "rate": args.rate,
            "div_yield": args.div_yield,
            "sigma": args.sigma,
            "kind": args.kind,
        }
    ]


def cmd_price(args) -> int:
    rows = _collect_market_rows(args)
    fh = _open_output(args)
    _price_rows(rows, _cos_config(args), include_greeks=False, include_ladder=args.ladder, writer=csv.writer(fh))
    if fh is not sys.stdout:
        fh.close()
    _echo_config(args)
    return 0


def cmd_greeks(args) -> int:
    rows = _collect_market_rows(args)
    fh = _open_output(args)
    _price_rows(rows, _cos_config(args), include_greeks=True, include_ladder=args.ladder, writer=csv.writer(fh))
    if fh is not sys.stdout:
        fh.close()
    _echo_config(args)
    return 0


# -- parity / figures ---------------------------------------------------------


def cmd_eed(args) -> int:
    values = [float(v) for v in args.values.split(",")]
    fh = _open_output(args)
    writer = csv.writer(fh)
    writer.writerow([args.sweep, "call_premium", "put_premium", "eed", "implied_div_european"])
    base = {
        "s0": args.s0,
        "strike": args.strike,
        "tau": args.tau,
        "rate": args.rate,
        "div_yield": args.div_yield,
        "sigma": args.sigma,
    }
    for v in values:
        params = dict(base)
        params[args.sweep] = v
        report = early_exercise_premiums(MarketParams(kind="put", **params), steps=args.steps)
        writer.writerow(
            [_fmt(v), _fmt(report.call_premium), _fmt(report.put_premium), _fmt(report.eed), _fmt(report.implied_div_european)]
        )
    if fh is not sys.stdout:
        fh.close()
    _echo_config(args)
    return 0


def cmd_figures(args) -> int:
    cfg = _cos_config(args)
    fh = _open_output(args)
    writer = csv.writer(fh)
    if args.curve == "value-vs-spot":
        spots = np.linspace(args.spot_min, args.spot_max, args.points)
        writer.writerow(["s0", "payoff", "european", "american"])
        for s in spots:
            p = MarketParams(s, args.strike, args.tau, args.rate, args.div_yield, args.sigma, args.kind)
            writer.writerow(
                [_fmt(s), _fmt(float(p.payoff())), _fmt(european_bs(p)), _fmt(price_american(p, cfg, greeks=False).price)]
            )
    else:
        sweep_var, values = {
            "eed-vs-maturity": ("tau", np.linspace(0.1, 3.0, args.points)),
            "eed-vs-rate-gap": ("div_yield", None),
            "eed-vs-sigma": ("sigma", np.linspace(0.05, 0.8, args.points)),
        }[args.curve]
        if args.curve == "eed-vs-rate-gap":
            # Sweep r - q by moving the dividend yield around the fixed rate.
            values = args.rate - np.linspace(-0.1, 0.1, args.points)
        writer.writerow([sweep_var, "eed"])
        for v in values:
            params = {
                "s0": args.s0,
                "strike": args.strike,
                "tau": args.tau,
                "rate": args.rate,
                "div_yield": args.div_yield,
                "sigma": args.sigma,
            }
            params[sweep_var] = float(v)
            report = early_exercise_premiums(MarketParams(kind="put", **params), steps=args.steps)
            writer.writerow([_fmt(float(v)), _fmt(report.eed)])
    if fh is not sys.stdout:
        fh.close()
    _echo_config(args)
    return 0


# -- data / training ------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _cos_config(args)
    if args.which == "iv":
        data = ds.generate_iv_dataset(n=args.n, seed=args.seed, cfg=cfg, workers=args.workers)
    else:
        data = ds.generate_forward_dataset(n=args.n, seed=args.seed, cfg=cfg, workers=args.workers)
    data = ds.split(data, seed=args.split_seed)
    ds.save_dataset(data, args.output)
    dropped = sum(int(v) for k, v in data.meta.items() if k.startswith("dropped"))
    print(f"wrote {len(data)} rows to {args.output} ({dropped} dropped of {args.n} requested)")
    _echo_config(args)
    return 0


def cmd_train(args) -> int:
    data = ds.load_dataset(args.data)
    if not (data.split != "").all() or not set(np.unique(data.split)) == {"train", "val", "test"}:
        data = ds.split(data, seed=args.split_seed)
    n_features = data.features.shape[1]
    n_heads = data.targets.shape[1]
    net = init_glorot((n_features, *([args.width] * args.depth), n_heads), seed=args.seed)
    net.input_low = data.features.min(axis=0)
    net.input_high = data.features.max(axis=0)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        halving_period=args.halving_period,
        seed=args.seed,
    )
    result = train(net, data, cfg, log_every=args.log_every)
    save_weights(result.net, args.output)
    report = result.test_metrics
    for head in range(n_heads):
        name = data.target_names[head]
        mape = "n/a" if report.mape[head] is None else f"{report.mape[head]:.4e}"
        print(
            f"test[{name}]: mse={report.mse[head]:.4e} mae={report.mae[head]:.4e} "
            f"mape={mape} r2={report.r2[head]:.6f}"
        )
    _echo_config(args)
    return 0


# -- inversion / calibration ----------------------------------------------------


def cmd_implied_vol(args) -> int:
    net = load_weights(args.weights)
    sigma = implied_vol_predict(
        net,
        args.quote,
        (args.strike, args.tau, args.rate, args.div_yield, args.s0),
        kind=args.kind,
    )
    print(_fmt(sigma))
    return 0


def cmd_calibrate(args) -> int:
    net = load_weights(args.weights) if args.weights else None
    cfg = DeConfig(seed=args.seed, tol=args.tol, max_generations=args.max_generations)
    cos_cfg = _cos_config(args)
    with open(args.input, newline="") as fh:
        rows = list(csv.DictReader(fh))
    fh = _open_output(args)
    writer = csv.writer(fh)
    writer.writerow(
        ["strike", "tau", "rate", "s0", "call_price", "put_price",
         "sigma_star", "q_star", "objective", "n_evals", "converged"]
    )
    for row in rows:
        fixed = (float(row["strike"]), float(row["tau"]), float(row["rate"]), float(row["s0"]))
        quote = (float(row["call_price"]), float(row["put_price"]))
        if net is not None:
            result = cann_backward(net, quote, fixed, cfg)
        else:
            result = calibrate_direct(quote, fixed, cfg, cos_cfg)
        writer.writerow(
            [row["strike"], row["tau"], row["rate"], row["s0"], row["call_price"], row["put_price"],
             _fmt(result.sigma_star), _fmt(result.q_star), _fmt(result.objective),
             str(result.n_evals), str(result.converged).lower()]
        )
    if fh is not sys.stdout:
        fh.close()
    _echo_config(args)
    return 0


def systemic_cases(stride: int) -> list[dict]:
    """Cartesian systemic grid, thinned by ``stride`` along every axis."""
    axes = {name: _grid_values(*SYSTEMIC_GRID[name], stride=stride) for name in SYSTEMIC_GRID}
    cases = []
    for sigma in axes["sigma"]:
        for q in axes["div_yield"]:
            for strike in axes["strike"]:
                for tau in axes["tau"]:
                    for rate in axes["rate"]:
                        cases.append(
                            {"sigma": float(sigma), "div_yield": float(q), "strike": float(strike),
                             "tau": float(tau), "rate": float(rate)}
                        )
    return cases


def quote_if_holding(case: dict, cos_cfg: CosConfig) -> tuple[float, float] | None:
    """(call, put) quote pair, or None when either leg is in the stopping region."""
    p_put = MarketParams(1.0, case["strike"], case["tau"], case["rate"], case["div_yield"], case["sigma"], "put")
    res_put = price_american(p_put, cos_cfg)
    if res_put.in_stopping_region or not classify(p_put, res_put.price, res_put.vega).is_holding:
        return None
    p_call = MarketParams(1.0, case["strike"], case["tau"], case["rate"], case["div_yield"], case["sigma"], "call")
    sym = call_via_symmetry(p_call)
    res_sym = price_american(sym, cos_cfg)
    if res_sym.in_stopping_region or not classify(sym, res_sym.price, res_sym.vega).is_holding:
        return None
    return res_sym.price, res_put.price


def cmd_eval(args) -> int:
    net = load_weights(args.weights)
    cos_cfg = _cos_config(args)
    cases = systemic_cases(args.stride)
    kept: list[tuple[dict, tuple[float, float]]] = []
    for case in cases:
        quote = quote_if_holding(case, cos_cfg)
        if quote is not None:
            kept.append((case, quote))
    if not kept:
        print("no cases: every grid point was filtered as stopping-region")
        return 0

    sigma_errs, q_errs, evals = [], [], []
    t0 = time.perf_counter()
    for i, (case, quote) in enumerate(kept):
        cfg = DeConfig(seed=args.seed + i, tol=args.tol, max_generations=args.max_generations)
        try:
            result = cann_backward(net, quote, (case["strike"], case["tau"], case["rate"], 1.0), cfg)
        except Exception as exc:
            print(f"case {i} failed: {exc}", file=sys.stderr)
            continue
        sigma_errs.append(abs(result.sigma_star - case["sigma"]))
        q_errs.append(abs(result.q_star - case["div_yield"]))
        evals.append(result.n_evals)
    elapsed = time.perf_counter() - t0

    lines = [
        f"grid_cases={len(cases)}",
        f"kept_after_region_filter={len(kept)}",
        f"calibrated={len(sigma_errs)}",
        f"mean_abs_sigma_error={np.mean(sigma_errs):.6g}",
        f"mean_abs_q_error={np.mean(q_errs):.6g}",
        f"mean_n_evals={np.mean(evals):.1f}",
        f"wall_seconds={elapsed:.2f}",
        f"seconds_per_calibration={elapsed / max(len(sigma_errs), 1):.4f}",
    ]
    text = "\n".join(lines)
    if args.output:
        with open(args.output, "w") as out:
            out.write(text + "\n")
    print(text)
    _echo_config(args)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amcos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="key=value file; flags override its entries")
        return sp

    sp = add("price", cmd_price, "price American contracts (CSV in/out)")
    sp.add_argument("--input", help="CSV with s0,strike,tau,rate,div_yield,sigma,kind")
    sp.add_argument("--output")
    sp.add_argument("--ladder", action="store_true", help="append the Bermudan ladder columns")
    sp.add_argument("--s0", type=float, default=1.0)
    sp.add_argument("--strike", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--rate", type=float)
    sp.add_argument("--div-yield", type=float, default=0.0)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--kind", choices=("call", "put"), default="put")
    _add_cos_flags(sp)

    sp = add("greeks", cmd_greeks, "price plus Vega/Delta and region flag")
    sp.add_argument("--input")
    sp.add_argument("--output")
    sp.add_argument("--ladder", action="store_true")
    sp.add_argument("--s0", type=float, default=1.0)
    sp.add_argument("--strike", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--rate", type=float)
    sp.add_argument("--div-yield", type=float, default=0.0)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--kind", choices=("call", "put"), default="put")
    _add_cos_flags(sp)

    sp = add("eed", cmd_eed, "early-exercise premiums and parity deviation sweep")
    sp.add_argument("--sweep", choices=("tau", "sigma", "rate", "div_yield", "strike", "s0"), default="tau")
    sp.add_argument("--values", default="0.25,0.5,1.0,2.0", help="comma-separated sweep values")
    sp.add_argument("--steps", type=int, default=2000, help="binomial steps")
    sp.add_argument("--output")
    _add_market_flags(sp)

    sp = add("figures", cmd_figures, "plottable curve data (CSV)")
    sp.add_argument(
        "--curve",
        choices=("value-vs-spot", "eed-vs-maturity", "eed-vs-rate-gap", "eed-vs-sigma"),
        required=True,
    )
    sp.add_argument("--points", type=int, default=40)
    sp.add_argument("--spot-min", type=float, default=0.05)
    sp.add_argument("--spot-max", type=float, default=2.0)
    sp.add_argument("--kind", choices=("call", "put"), default="put")
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--output")
    _add_market_flags(sp)
    _add_cos_flags(sp)

    sp = add("gen-data", cmd_gen_data, "generate a training corpus")
    sp.add_argument("--which", choices=("iv", "forward"), required=True)
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--split-seed", type=int, default=1)
    sp.add_argument("--workers", type=int, default=ds.default_workers())
    sp.add_argument("--output", required=True)
    _add_cos_flags(sp)

    sp = add("train", cmd_train, "train a network on a generated corpus")
    sp.add_argument("--data", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--epochs", type=int, default=800)
    sp.add_argument("--batch-size", type=int, default=1024)
    sp.add_argument("--learning-rate", type=float, default=1e-3)
    sp.add_argument("--halving-period", type=int, default=400)
    sp.add_argument("--width", type=int, default=200)
    sp.add_argument("--depth", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--split-seed", type=int, default=1)
    sp.add_argument("--log-every", type=int, default=50)

    sp = add("implied-vol", cmd_implied_vol, "one-shot implied volatility from a quote")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--quote", type=float, required=True)
    sp.add_argument("--kind", choices=("call", "put"), default="put")
    _add_market_flags(sp, with_sigma=False)

    sp = add("calibrate", cmd_calibrate, "recover (sigma*, q*) from quote pairs")
    sp.add_argument("--input", required=True, help="CSV with strike,tau,rate,s0,call_price,put_price")
    sp.add_argument("--output")
    sp.add_argument("--weights", help="dual-head network; omitted = direct pricer objective")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=0.01)
    sp.add_argument("--max-generations", type=int, default=500)
    _add_cos_flags(sp)

    sp = add("eval", cmd_eval, "systemic recovery sweep over the evaluation grid")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--stride", type=int, default=2, help="grid thinning along every axis")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=0.01)
    sp.add_argument("--max-generations", type=int, default=500)
    sp.add_argument("--output")
    _add_cos_flags(sp)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Inject config-file entries as defaults (flags still win)."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return argv
    values: dict[str, str] = {}
    with open(known.config) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                key, _, value = line.partition("=")
                values[key.strip().replace("-", "_")] = value.strip()
    for action in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
        defaults = {}
        for key, value in values.items():
            for sub_action in action._actions:  # noqa: SLF001
                if sub_action.dest == key:
                    defaults[key] = sub_action.type(value) if sub_action.type else value
        action.set_defaults(**defaults)
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    argv = _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    if "AMCOS_THREADS" not in os.environ and getattr(args, "workers", None):
        os.environ["AMCOS_THREADS"] = str(args.workers)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
