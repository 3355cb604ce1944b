"""Command-line interface: ``metaboot fit | test | simulate``.

Flag mapping to the usual R-style arguments: ``nrep`` is ``--nrep``, ``p_cut``
is ``--alpha``, ``mods`` is ``--mods`` (comma-separated column names),
``adjust`` is ``--adjust`` and ``lambda`` is ``--lambda``.

``--output json`` writes one JSON object per line (keys sorted), which is
byte-identical for identical inputs and seed. ``--output text`` writes a
readable report.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from . import __version__
from .analysis import CLASSICAL, STAT_CHOICES, parse_stats, run_tests
from .bootstrap import BootstrapOutcome
from .datasets import BUNDLED, dataset_path
from .effect_sizes import EffectKind
from .errors import InvalidRequest, MetaBootError
from .ingest import ingest_csv
from .model import Method, fit, heterogeneity_indexes, q_statistic
from .simulation import SimulationResult, load_grid, render_results_table, run_rejection_study

DEFAULT_STATS = ("q", "b_q", "b_reml_lrt")


@dataclass(frozen=True)
class AnalysisRequest:
    subcommand: str
    effect: Optional[EffectKind] = None
    input_path: Optional[str] = None
    model: str = "random"
    moderator_columns: tuple[str, ...] = ()
    stat: tuple[str, ...] = DEFAULT_STATS
    lam: float = 0.0
    alpha: float = 0.05
    nrep: int = 10_000
    adjust: bool = False
    seed: int = 0
    workers: Optional[int] = None
    config_path: Optional[str] = None

    def __post_init__(self):
        if self.subcommand not in ("fit", "test", "simulate"):
            raise InvalidRequest(f"unknown subcommand {self.subcommand!r}")
        if self.subcommand == "simulate":
            if not self.config_path:
                raise InvalidRequest("simulate needs --config")
            return
        if self.effect is None or self.input_path is None:
            raise InvalidRequest(f"{self.subcommand} needs --effect and --input")
        object.__setattr__(self, "effect", EffectKind.parse(self.effect))
        if self.model not in ("random", "mixed"):
            raise InvalidRequest(f"model must be random or mixed, got {self.model!r}")
        if self.model == "mixed" and not self.moderator_columns:
            raise InvalidRequest("the mixed model needs moderator columns (--mods)")
        if self.model == "random" and self.moderator_columns:
            raise InvalidRequest("moderators given; use --model mixed")
        if self.adjust and self.effect is not EffectKind.SMD:
            raise InvalidRequest("--adjust applies only to --effect smd")
        try:
            object.__setattr__(self, "stat", parse_stats(self.stat))
        except ValueError as exc:
            raise InvalidRequest(str(exc)) from None
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise InvalidRequest("lambda must be a finite value >= 0")
        if self.lam > 0 and any(s in CLASSICAL for s in self.stat):
            raise InvalidRequest("classical tests only test tau^2 = 0; request b_* statistics with --lambda")
        if not 0 < self.alpha < 1:
            raise InvalidRequest("alpha must lie in (0, 1)")
        if self.nrep < 1:
            raise InvalidRequest("nrep must be >= 1")
        if self.seed < 0:
            raise InvalidRequest("seed must be >= 0")


@dataclass
class Report:
    records: list[dict] = field(default_factory=list)
    text: str = ""

    def jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def _fit_record(model) -> dict:
    return {"record": "fit", "method": model.method.value, "mu_delta": model.mu_delta,
            "beta": list(model.beta), "tau2": model.tau2, "loglik_ml": model.loglik_ml,
            "loglik_reml": model.loglik_reml, "iterations": model.iterations}


def _test_record(name, res) -> dict:
    if isinstance(res, BootstrapOutcome):
        rec = res.result.to_dict()
        rec.update(tau2_hat=res.tau2_hat, clamped=res.clamped_count, dropped=res.dropped_count,
                   null_summary=asdict(res.null_statistics))
    else:
        rec = res.to_dict()
    rec.update(record="test", stat=name)
    return rec


def _analysis(request: AnalysisRequest) -> Report:
    dataset = ingest_csv(request.input_path, request.effect, request.moderator_columns, request.adjust)
    fits = [fit(dataset, Method.REML), fit(dataset, Method.ML)]
    qr = q_statistic(dataset)
    i2, h = heterogeneity_indexes(dataset) if dataset.p == 0 else (None, None)
    records = [{"record": "dataset", "effect": dataset.kind.value, "k": dataset.k, "p": dataset.p,
                "moderators": list(dataset.moderator_names), "input": str(request.input_path)}]
    records += [_fit_record(m) for m in fits]
    records.append({"record": "heterogeneity", "q": qr.q, "df": qr.df, "i2": i2, "h": h})
    lines = [f"{dataset.k} studies, effect {dataset.kind.value}, {dataset.p} moderator(s)"]
    for m in fits:
        coef = "  ".join(f"{n}={b:.4f}" for n, b in zip(dataset.moderator_names, m.beta))
        lines.append(f"{m.method.value:>4}: mu={m.mu_delta:.4f}  tau2={m.tau2:.4f}" + (f"  {coef}" if coef else ""))
    het = f"Q={qr.q:.4f} (df={qr.df})"
    if i2 is not None:
        het += f"  I2={i2:.4f}  H={h:.4f}"
    lines.append(het)

    if request.subcommand == "test":
        results = run_tests(dataset, request.stat, request.lam, request.alpha, request.nrep,
                            request.seed, request.workers)
        lines.append("")
        lines.append(f"{'test':<11}{'statistic':>11}{'p':>9}{'critical':>11}  decision")
        for name, res in results.items():
            records.append(_test_record(name, res))
            r = res.result if isinstance(res, BootstrapOutcome) else res
            verdict = "reject" if r.reject else "retain"
            lines.append(f"{r.test_name:<11}{r.statistic:>11.4f}{r.p_value:>9.4f}{r.critical_value:>11.4f}  {verdict}")
        if any(isinstance(r, BootstrapOutcome) for r in results.values()):
            lines.append(f"bootstrap: B={request.nrep}, seed={request.seed}, lambda={request.lam:g}, alpha={request.alpha:g}")
    return Report(records, "\n".join(lines) + "\n")


def _simulate(request: AnalysisRequest) -> Report:
    configs = load_grid(request.config_path)
    results: list[SimulationResult] = []
    for i, cfg in enumerate(configs, 1):
        print(f"[{i}/{len(configs)}] {cfg.kind.value} size={cfg.label} K={cfg.k_studies} "
              f"tau2={cfg.tau2_true:g} lambda={cfg.lambda_null:g}", file=sys.stderr, flush=True)
        results.append(run_rejection_study(cfg, request.workers))
    records = [dict(rec, record="rate") for res in results for rec in res.to_records()]
    return Report(records, render_results_table(results) + "\n")


def run(request: AnalysisRequest) -> Report:
    """Execute a validated request and return its report."""
    if request.subcommand == "simulate":
        return _simulate(request)
    return _analysis(request)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaboot", description="Heterogeneity tests for meta-analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", choices=("json", "text"), default="text")
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: $METABOOT_WORKERS or 1)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--effect", required=True, help="smd, fcor or lnor")
    src = data.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="CSV file, one study per row")
    src.add_argument("--dataset", choices=sorted(BUNDLED), help="bundled example data")
    data.add_argument("--model", choices=("random", "mixed"), default=None,
                      help="default: mixed when --mods is given, else random")
    data.add_argument("--mods", default="", help="comma-separated moderator columns")
    data.add_argument("--adjust", action="store_true", help="bias-correct a reported SMD est column")

    sub.add_parser("fit", parents=[common, data], help="REML/ML fits and Q, I2, H")
    test = sub.add_parser("test", parents=[common, data], help="heterogeneity tests")
    test.add_argument("--stat", default=",".join(DEFAULT_STATS),
                      help=f"comma-separated subset of {','.join(STAT_CHOICES)}")
    test.add_argument("--lambda", dest="lam", type=float, default=0.0)
    test.add_argument("--alpha", type=float, default=0.05)
    test.add_argument("--nrep", type=int, default=10_000)
    test.add_argument("--seed", type=int, default=0)

    sim = sub.add_parser("simulate", parents=[common], help="rejection-rate study from an INI grid")
    sim.add_argument("--config", required=True)
    return parser


def request_from_args(args: argparse.Namespace) -> AnalysisRequest:
    if args.subcommand == "simulate":
        return AnalysisRequest("simulate", config_path=args.config, workers=args.workers)
    mods = tuple(m.strip() for m in args.mods.split(",") if m.strip())
    model = args.model or ("mixed" if mods else "random")
    input_path = args.input if args.input else str(dataset_path(args.dataset))
    extra = {}
    if args.subcommand == "test":
        extra = dict(stat=tuple(args.stat.split(",")), lam=args.lam, alpha=args.alpha,
                     nrep=args.nrep, seed=args.seed)
    return AnalysisRequest(args.subcommand, effect=args.effect, input_path=input_path, model=model,
                           moderator_columns=mods, adjust=args.adjust, workers=args.workers, **extra)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        request = request_from_args(args)
        report = run(request)
    except MetaBootError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error[cli.InvalidRequest]: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(report.jsonl() if args.output == "json" else report.text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
