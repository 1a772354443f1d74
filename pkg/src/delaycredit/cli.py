"""Command-line front end.

Every output file starts with a ``#`` line holding the resolved run
configuration, so a result can be reproduced from the file alone.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError, NumericalError
from .market_data import (
    FirmSeries,
    build_memory_path,
    fit_volatility,
    load_firm_csv,
    resample_coefficients,
)
from .monte_carlo import run_ensemble, run_merton_ensemble, write_paths_csv, write_summary_csv
from .pde import ClaimSpec, build_grid
from .pricing import (
    solve_merton_surface,
    solve_surface_deterministic,
    solve_surface_stochastic,
    surface_slice,
)
from .sdde import SchemeConfig, SddeModel, write_series_csv

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3
SDDE_DT = 1.0 / 250.0

VOL_FIT_NAMES = {
    "linear": "time_interp_linear",
    "quadratic": "time_interp_quadratic",
    "spline": "time_interp_spline",
    "value-quadratic": "value_fit_quadratic",
    "mean": "constant_mean",
}

log = logging.getLogger("delaycredit")


def bundled_fixture() -> Path:
    """Path of the synthetic firm series shipped with the package."""
    return Path(str(resources.files("delaycredit") / "data" / "synthetic_firm.csv"))


@dataclass(frozen=True)
class RunConfig:
    command: str
    firm_csv: str
    origin: float = 2000.5
    L: float = 9.5
    T: float = 9.5
    theta: float = 1.0
    n_paths: int = 400
    seed: int = 0
    N: int = 400
    dtau: float = 1.0 / 365.0
    vol_fit: str = "time_interp_quadratic"
    vmax_multiple: float = 4.0
    epsilon: float | None = None
    upwind: str = "paper"
    out: str = ""

    def stamp(self) -> str:
        """Reproducibility line; leaves out the output prefix and the worker count."""
        digest = hashlib.sha256(Path(self.firm_csv).read_bytes()).hexdigest()[:16]
        eps = "h" if self.epsilon is None else repr(self.epsilon)
        parts = [
            f"delaycredit {__version__} {self.command}",
            f"firm={Path(self.firm_csv).name} sha256={digest}",
            f"origin={self.origin!r} L={self.L!r} T={self.T!r} theta={self.theta!r}",
            f"paths={self.n_paths} seed={self.seed} grid={self.N} dtau={self.dtau!r}",
            f"vol_fit={self.vol_fit} vmax_mult={self.vmax_multiple!r} epsilon={eps}",
            f"upwind={self.upwind} sdde_dt={SDDE_DT!r}",
        ]
        return " ".join(parts)

    def target(self, name: str) -> Path:
        path = Path(f"{self.out}{name}")
        path.parent.mkdir(parents=True, exist_ok=True)
        return path


# ---------------------------------------------------------------------------
# shared setup


@dataclass
class Setup:
    series: FirmSeries
    memory: object
    volmodel: object
    curves_sdde: object
    curves_pde: object
    B: float


def _setup(cfg: RunConfig) -> Setup:
    if not Path(cfg.firm_csv).is_file():
        raise InputError(f"firm CSV not found: {cfg.firm_csv}")
    series = load_firm_csv(cfg.firm_csv)
    memory = build_memory_path(series, cfg.origin, cfg.L)
    volmodel = fit_volatility(series, cfg.origin, cfg.L, cfg.vol_fit)
    B = series.row_for(cfg.origin + cfg.T).B
    return Setup(
        series=series,
        memory=memory,
        volmodel=volmodel,
        curves_sdde=resample_coefficients(series, SDDE_DT),
        curves_pde=resample_coefficients(series, cfg.dtau),
        B=B,
    )


def _window_years(series: FirmSeries, lo: float, hi: float) -> np.ndarray:
    years = series.years
    return years[(years >= lo - 1e-9) & (years <= hi + 1e-9)]


def _model(cfg: RunConfig, s: Setup) -> SddeModel:
    return SddeModel(s.curves_sdde.alpha, s.curves_sdde.C, s.volmodel, s.memory, cfg.L, cfg.T)


def _merton_sigma(cfg: RunConfig, s: Setup) -> float:
    return float(fit_volatility(s.series, cfg.origin, cfg.L, "constant_mean").coefficients[0])


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig) -> int:
    s = _setup(cfg)
    stamp = cfg.stamp()
    scheme = SchemeConfig.build(cfg.T, cfg.L, SDDE_DT, cfg.theta)
    ens = run_ensemble(_model(cfg, s), scheme, cfg.n_paths, cfg.seed)
    write_paths_csv(ens, cfg.target("paths.csv"), stamp, t_offset=cfg.origin)
    write_summary_csv(ens, cfg.target("summary.csv"), comment=stamp, t_offset=cfg.origin)

    merton = run_merton_ensemble(
        s.memory.v0, s.curves_sdde.alpha, s.curves_sdde.C, _merton_sigma(cfg, s), scheme,
        cfg.n_paths, cfg.seed, origin=cfg.origin,
    )
    write_summary_csv(merton, cfg.target("merton_summary.csv"), comment=stamp, t_offset=cfg.origin)

    years = _window_years(s.series, cfg.origin - cfg.L, cfg.origin + cfg.T)
    real = [s.series.value_at(y, "V") for y in years]
    write_series_csv(cfg.target("real.csv"), ("year", "V"), [years, real], stamp)
    if ens.excluded:
        log.warning("%d of %d paths excluded (non-positive or non-finite)", len(ens.excluded), ens.n_paths)
    return EXIT_OK


def _price_surface(cfg: RunConfig, s: Setup, claim: ClaimSpec):
    grid = build_grid(s.B, cfg.N, cfg.vmax_multiple)
    if cfg.T <= cfg.L:
        return solve_surface_deterministic(
            claim, grid, s.volmodel, s.memory, s.curves_pde, cfg.T, cfg.L, cfg.dtau,
            rule=cfg.upwind, epsilon=cfg.epsilon,
        )
    scheme = SchemeConfig.build(cfg.T, cfg.L, SDDE_DT, cfg.theta)
    mean, _, report = solve_surface_stochastic(
        claim, grid, s.volmodel, _model(cfg, s), scheme, cfg.T, cfg.L, cfg.n_paths, cfg.seed,
        cfg.dtau, rule=cfg.upwind, epsilon=cfg.epsilon, curves=s.curves_pde,
    )
    log.info(
        "%d of %d samples used; volatility clamped on %.1f%% of lagged states",
        report.n_used, report.n_samples, 100 * report.clamp_fraction,
    )
    return mean


def _real_claim(kind: str, s: Setup, year: float) -> float:
    V, B = s.series.value_at(year, "V"), s.series.value_at(year, "B")
    return V - B if kind == "equity" else B


def _slice(cfg: RunConfig, s: Setup, surface) -> list[tuple[float, float, float]]:
    cal = surface.calendar()
    years = _window_years(s.series, cal.min(), cal.max())
    V = [s.series.value_at(y, "V") for y in years]
    return surface_slice(surface, years, V)


def cmd_price(cfg: RunConfig, kind: str) -> int:
    s = _setup(cfg)
    stamp = cfg.stamp()
    surface = _price_surface(cfg, s, ClaimSpec(kind, s.B))
    surface.to_csv(cfg.target("surface.csv"), stamp)
    rows = _slice(cfg, s, surface)
    years = [y for y, _, _ in rows]
    write_series_csv(
        cfg.target("slice.csv"),
        ("year", "model_value", "real_value"),
        [years, [m for _, m, _ in rows], [_real_claim(kind, s, y) for y in years]],
        stamp,
    )
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    s = _setup(cfg)
    stamp = cfg.stamp()
    claim = ClaimSpec("equity", s.B)
    delayed = _price_surface(cfg, s, claim)
    merton = solve_merton_surface(
        claim, delayed.grid, _merton_sigma(cfg, s), s.curves_pde, cfg.T, cfg.dtau,
        rule=cfg.upwind, epsilon=cfg.epsilon, origin=cfg.origin,
    )
    d_rows = _slice(cfg, s, delayed)
    m_rows = {y: m for y, m, _ in _slice(cfg, s, merton)}
    years = [y for y, _, _ in d_rows if y in m_rows]
    d_vals = {y: m for y, m, _ in d_rows}
    write_series_csv(
        cfg.target("compare.csv"),
        ("year", "delayed", "merton", "real"),
        [years, [d_vals[y] for y in years], [m_rows[y] for y in years],
         [_real_claim("equity", s, y) for y in years]],
        stamp,
    )
    return EXIT_OK


def cmd_verify(verbose: bool = False) -> int:
    from .verify import run_checks

    results = run_checks(verbose=verbose)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_VERIFY


# ---------------------------------------------------------------------------
# argument parsing


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delaycredit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--firm", metavar="CSV", help="firm series (default: bundled synthetic firm)")
    common.add_argument("--origin", type=float, default=2000.5, metavar="Y")
    common.add_argument("--L", type=_positive_float, default=9.5, metavar="Y")
    common.add_argument("--T", type=_positive_float, default=9.5, metavar="Y")
    common.add_argument("--theta", type=float, default=1.0, metavar="X")
    common.add_argument("--paths", type=_positive_int, default=400, metavar="N")
    common.add_argument("--seed", type=int, default=0, metavar="S")
    common.add_argument("--grid", type=_positive_int, default=400, metavar="N")
    common.add_argument("--dtau", type=_positive_float, default=1.0 / 365.0, metavar="X")
    common.add_argument("--vol-fit", choices=tuple(VOL_FIT_NAMES), default="quadratic")
    common.add_argument("--vmax-mult", type=float, default=4.0, metavar="X")
    common.add_argument("--epsilon", type=_positive_float, default=None, metavar="X")
    common.add_argument("--upwind", choices=("paper", "standard"), default="paper")
    common.add_argument("--out", default="", metavar="PREFIX")

    for name, text in (
        ("simulate", "simulate firm-value paths (delayed model and Merton baseline)"),
        ("price-equity", "equity value surface"),
        ("price-debt", "debt value surface"),
        ("compare", "equity under the delayed and Merton models next to the observed value"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    verify = sub.add_parser("verify", help="run the built-in correctness checks")
    verify.add_argument("--verbose", action="store_true", help="print per-check timings")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=args.command,
        firm_csv=args.firm or str(bundled_fixture()),
        origin=args.origin,
        L=args.L,
        T=args.T,
        theta=args.theta,
        n_paths=args.paths,
        seed=args.seed,
        N=args.grid,
        dtau=args.dtau,
        vol_fit=VOL_FIT_NAMES[args.vol_fit],
        vmax_multiple=args.vmax_mult,
        epsilon=args.epsilon,
        upwind=args.upwind,
        out=args.out,
    )


COMMANDS = {
    "simulate": cmd_simulate,
    "price-equity": lambda cfg: cmd_price(cfg, "equity"),
    "price-debt": lambda cfg: cmd_price(cfg, "debt"),
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.command == "verify":
        return cmd_verify(args.verbose)
    try:
        return COMMANDS[args.command](config_from_args(args))
    except (InputError, OSError, ValueError) as exc:
        print(f"delaycredit: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"delaycredit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
