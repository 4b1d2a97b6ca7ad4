"""Monte Carlo and closed-form indifference prices, and information values.

The price of an income stream e under a regime is E[integral of Y_t e_t dt]
along that regime's state-price density Y. The Monte Carlo estimator
integrates each simulated path by trapezoid on the composite grid and
truncates at the horizon, reporting an analytic bound for the discarded
tail. Three stream families admit closed forms that the estimator is
cross-checked against:

* constant streams are worth level / r in every regime;
* the pre-first-jump stream exp(r t) 1[t < T1] is worth T1 to the timing
  insider given T1 (1/lam on average), 1/(lam - alpha) to the uninformed
  agent, and 1/(lam - beta(eta0)) to the signal insider given eta0;
* the post-first-jump stream exp((r-1) t) 1[t >= T1] Psi(eta0) reduces to
  Gaussian integrals of Psi against the jump and signal laws.

For the two insiders the post-first-jump closed forms include the deflator
renewal factor across T1 (A2/f(T1-to-jump-0) for the timing insider,
A3/h(eta0) for the signal insider); these factors are exactly 1 whenever the
jump exposure solves an interior first-order condition, and keep the closed
form equal to the Monte Carlo value when the optimum is at the zero corner.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
import multiprocessing

import numpy as np

from .agents import (
    MertonSolution,
    RegimeSolutions,
    SignalInsiderSolution,
    TimingInsiderSolution,
    UninformedSolution,
    posterior_of_jump,
    q_bar_signal,
)
from .errors import DomainError, GateError, StreamGuardError
from .model import (
    ConstantStream,
    CustomStream,
    ExpUntilFirstJumpStream,
    IncomeStream,
    ModelParams,
    PostFirstJumpSignalStream,
    stream_growth_guard,
)
from .quadrature import QuadratureRule, default_rule, psi_double_integral
from .simulate import SimConfig, path_integrals

__all__ = [
    "Conditioning",
    "PriceEstimate",
    "InfoValueReport",
    "PriceRow",
    "NotAvailable",
    "NOT_AVAILABLE",
    "price_mc",
    "closed_form_price",
    "alpha_coef",
    "beta_coef",
    "truncation_bound",
    "estimate_to_dict",
    "info_value_report",
    "n_workers",
]

WORKERS_ENV = "INFOPRICE_WORKERS"


def n_workers() -> int:
    """Worker count for the path reduction: INFOPRICE_WORKERS or min(2, cpus)."""
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return min(2, os.cpu_count() or 1)


class NotAvailable:
    """Sentinel: no closed form exists for this stream/regime combination."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NotAvailable"

    def __bool__(self):
        return False


NOT_AVAILABLE = NotAvailable()


@dataclass(frozen=True)
class Conditioning:
    """Pin the first jump time (timing insider) or first signal (signal insider)."""

    t1: float | None = None
    eta0: float | None = None

    def __post_init__(self):
        if self.t1 is not None and self.eta0 is not None:
            raise ValueError("condition on t1 or eta0, not both")
        if self.t1 is not None and not self.t1 > 0.0:
            raise ValueError("t1 must be > 0")

    @property
    def empty(self) -> bool:
        return self.t1 is None and self.eta0 is None


@dataclass(frozen=True)
class PriceEstimate:
    mean: float
    std_error: float
    n_paths: int
    horizon: float
    truncation_bound: float
    regime: str
    conditioning: Conditioning | None = None

    def tolerance(self, n_se: float = 3.0) -> float:
        return n_se * self.std_error + self.truncation_bound


def _check_conditioning(regime: str, conditioning: Conditioning | None) -> Conditioning:
    cond = conditioning or Conditioning()
    if cond.t1 is not None and regime != "timing":
        raise ValueError("conditioning on t1 is only meaningful for the timing insider")
    if cond.eta0 is not None and regime != "signal":
        raise ValueError("conditioning on eta0 is only meaningful for the signal insider")
    return cond


def alpha_coef(sol: UninformedSolution, p: ModelParams) -> float:
    """Exponential growth rate of the pre-first-jump pricing factor for the
    uninformed agent: r - rho + R(-r - q (mu-r) + A1^(-1/R) + (R+1) sigma^2 q^2 / 2)."""
    q = sol.q_bar1
    return p.r - p.rho + p.R * (
        -p.r - q * (p.mu - p.r) + sol.A1 ** (-1.0 / p.R)
        + 0.5 * (p.R + 1.0) * p.sigma**2 * q * q)


def beta_coef(eta0: float, sol: SignalInsiderSolution, p: ModelParams,
              rule: QuadratureRule) -> float:
    """Signal-conditional analogue of alpha, with h(eta0) and q_bar(eta0)."""
    q = q_bar_signal(sol, p, eta0, rule)
    h = float(sol.h_at(eta0))
    return p.r - p.rho + p.R * (
        -p.r - q * (p.mu - p.r) + h ** (-1.0 / p.R)
        + 0.5 * (p.R + 1.0) * p.sigma**2 * q * q)


def _posterior_mean_factor(eta0: float, q: float, p: ModelParams,
                           rule: QuadratureRule) -> float:
    """E[(1 + q (e^X - 1))^(-R)] under the jump-size posterior given eta0."""
    m_post, v_post = posterior_of_jump(eta0, p)
    jump_rel = np.expm1(m_post + math.sqrt(2.0 * v_post) * rule.nodes)
    vals = (1.0 + q * jump_rel) ** (-p.R)
    return float(rule.weights @ vals) / math.sqrt(math.pi)


def _p0_average(f, p: ModelParams, rule: QuadratureRule) -> float:
    """Average of f(eta) under the signal law N(m, v + v_eps)."""
    pts = p.m + math.sqrt(2.0 * (p.v + p.v_eps)) * rule.nodes
    vals = np.array([f(float(e)) for e in pts])
    return float(rule.weights @ vals) / math.sqrt(math.pi)


def truncation_bound(e: IncomeStream, regime: str, p: ModelParams,
                     sols: RegimeSolutions, horizon: float,
                     conditioning: Conditioning | None = None,
                     rule: QuadratureRule | None = None) -> float:
    """Analytic bound on the price mass beyond the horizon.

    Uses E[e^{rt} Y_t] = 1 (the deflators price the bank account) plus the
    per-stream decay rates; raises DomainError when the relevant rate is not
    positive, in which case no finite-horizon run can be trusted.
    """
    rule = rule or default_rule()
    cond = _check_conditioning(regime, conditioning)
    if isinstance(e, ConstantStream):
        return abs(e.level) * math.exp(-p.r * horizon) / p.r
    if isinstance(e, CustomStream):
        gap = p.r - e.growth_rate
        if gap <= 0.0:
            raise StreamGuardError("custom stream growth rate must stay below r")
        return e.growth_const * math.exp(-gap * horizon) / gap
    if isinstance(e, ExpUntilFirstJumpStream):
        if regime == "uninformed":
            rate = p.lam - alpha_coef(sols.uninformed, p)
            if rate <= 0.0:
                raise DomainError(
                    f"lam - alpha = {rate:.6g} <= 0: the pre-jump stream has "
                    "infinite value for the uninformed agent")
            return math.exp(-rate * horizon) / rate
        if regime == "timing":
            if cond.t1 is not None:
                return max(0.0, cond.t1 - horizon)
            if p.lam <= 0.0:
                raise DomainError("lam = 0: the pre-jump stream never terminates")
            return math.exp(-p.lam * horizon) / p.lam
        if regime == "signal":
            def tail(eta):
                rate = p.lam - beta_coef(eta, sols.signal, p, rule)
                if rate <= 0.0:
                    raise DomainError(
                        f"lam - beta({eta:.4g}) <= 0: infinite conditional value")
                return math.exp(-rate * horizon) / rate
            if cond.eta0 is not None:
                return tail(cond.eta0)
            return _p0_average(tail, p, rule)
        raise GateError("the merton benchmark has no jump to key this stream on")
    if isinstance(e, PostFirstJumpSignalStream):
        if regime == "merton":
            raise GateError("the merton benchmark has no jump to key this stream on")
        return e.psi_bound * math.exp(-horizon)
    raise TypeError(f"not an income stream: {e!r}")


# ---------------------------------------------------------------------------
# Monte Carlo estimator
# ---------------------------------------------------------------------------

def _mc_task(args):
    p, sol, cfg, stream, pin_t1, pin_eta0, start, count = args
    vals = path_integrals(p, sol, cfg, stream, pin_t1=pin_t1, pin_eta0=pin_eta0,
                          path_offset=start, n_paths=count)
    return start, vals


def price_mc(e: IncomeStream, sol, p: ModelParams, cfg: SimConfig,
             conditioning: Conditioning | None = None,
             sols: RegimeSolutions | None = None,
             rule: QuadratureRule | None = None,
             workers: int | None = None) -> PriceEstimate:
    """Monte Carlo indifference price of a stream under one regime.

    Per path, the integral of deflator times stream runs by trapezoid on the
    composite grid up to the horizon; the mean and standard error are taken
    across paths in path order (exact summation, so the result is identical
    for any worker count). `sols` is only needed to compute the truncation
    bound for streams whose tail rate involves other constants; if omitted
    it is reconstructed for the regimes required.
    """
    regime = cfg.regime
    cond = _check_conditioning(regime, conditioning)
    if not stream_growth_guard(e, p):
        raise StreamGuardError("stream fails its declared growth guard")
    if regime == "merton" and isinstance(
            e, (ExpUntilFirstJumpStream, PostFirstJumpSignalStream)):
        raise GateError("the merton benchmark has no jump to key this stream on")

    if sols is None:
        sols = _solutions_for_bound(e, regime, sol, p, rule)
    bound = truncation_bound(e, regime, p, sols, cfg.horizon, cond, rule)

    workers = n_workers() if workers is None else max(1, int(workers))
    if isinstance(e, CustomStream):
        workers = 1       # python payoff callbacks are not worth shipping
    vals = np.empty(cfg.n_paths)
    if workers == 1 or cfg.n_paths < 4096:
        vals[:] = path_integrals(p, sol, cfg, e, pin_t1=cond.t1, pin_eta0=cond.eta0)
    else:
        share = (cfg.n_paths + workers - 1) // workers
        tasks = []
        start = 0
        while start < cfg.n_paths:
            count = min(share, cfg.n_paths - start)
            tasks.append((p, sol, cfg, e, cond.t1, cond.eta0, start, count))
            start += count
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            for s, chunk in pool.map(_mc_task, tasks):
                vals[s:s + len(chunk)] = chunk
    mean = math.fsum(vals) / cfg.n_paths
    if cfg.n_paths > 1:
        var = math.fsum((v - mean) ** 2 for v in vals) / (cfg.n_paths - 1)
        se = math.sqrt(var / cfg.n_paths)
    else:
        se = 0.0
    return PriceEstimate(mean=mean, std_error=se, n_paths=cfg.n_paths,
                         horizon=cfg.horizon, truncation_bound=bound,
                         regime=regime, conditioning=None if cond.empty else cond)


def _solutions_for_bound(e, regime, sol, p, rule) -> RegimeSolutions:
    """Wrap a single regime solution so truncation_bound can read it."""
    return RegimeSolutions(
        uninformed=sol if isinstance(sol, UninformedSolution) else None,
        timing=sol if isinstance(sol, TimingInsiderSolution) else None,
        signal=sol if isinstance(sol, SignalInsiderSolution) else None,
        merton=sol if isinstance(sol, MertonSolution) else None,
    )


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

def closed_form_price(e: IncomeStream, regime: str, p: ModelParams,
                      sols: RegimeSolutions,
                      conditioning: Conditioning | None = None,
                      rule: QuadratureRule | None = None):
    """Closed-form price where one exists, else the NOT_AVAILABLE sentinel.

    Raises DomainError when a formula exists but its convergence condition
    (lam - alpha > 0, lam + 1 - alpha > 0, the beta analogues) fails.
    """
    rule = rule or default_rule()
    cond = _check_conditioning(regime, conditioning)

    if isinstance(e, ConstantStream):
        return e.level / p.r

    if isinstance(e, ExpUntilFirstJumpStream):
        if regime == "uninformed":
            rate = p.lam - alpha_coef(sols.uninformed, p)
            if rate <= 0.0:
                raise DomainError(f"lam - alpha = {rate:.6g} <= 0: value diverges")
            return 1.0 / rate
        if regime == "timing":
            if cond.t1 is not None:
                return float(cond.t1)
            if p.lam <= 0.0:
                raise DomainError("lam = 0: the pre-jump stream never terminates")
            return 1.0 / p.lam
        if regime == "signal":
            def conditional(eta):
                rate = p.lam - beta_coef(eta, sols.signal, p, rule)
                if rate <= 0.0:
                    raise DomainError(
                        f"lam - beta({eta:.4g}) = {rate:.6g} <= 0: value diverges")
                return 1.0 / rate
            if cond.eta0 is not None:
                return conditional(cond.eta0)
            return _p0_average(conditional, p, rule)
        return NOT_AVAILABLE

    if isinstance(e, PostFirstJumpSignalStream):
        if p.lam <= 0.0:
            return 0.0      # the stream never starts
        if regime == "uninformed":
            alpha = alpha_coef(sols.uninformed, p)
            denom = p.lam + 1.0 - alpha
            if denom <= 0.0:
                raise DomainError(f"lam + 1 - alpha = {denom:.6g} <= 0: value diverges")
            dbl = psi_double_integral(e.psi, sols.uninformed.q_bar1, p, rule)
            return p.lam / denom * dbl
        if regime == "timing":
            if cond.t1 is None:
                return NOT_AVAILABLE
            sol = sols.timing
            t1 = cond.t1
            pi_m = p.merton_fraction
            ci = float(sol.consumption_integral(t1, 0.0, t1))
            phi_t1 = p.r - p.rho + p.R * (
                -p.r - pi_m * (p.mu - p.r) + ci / t1
                + 0.5 * pi_m * pi_m * p.sigma**2 * (1.0 + p.R))
            dbl = psi_double_integral(e.psi, sol.a_star, p, rule)
            f_t1 = float(sol.f(t1))
            # A2/f(t1) carries the deflator renewal across T1; it equals
            # f(0)/f(t1) exactly when the jump exposure satisfies an interior
            # or zero-corner first-order condition
            return math.exp(-t1) * (sol.A2 / f_t1) * math.exp(phi_t1 * t1) * dbl
        if regime == "signal":
            def conditional(eta):
                beta = beta_coef(eta, sols.signal, p, rule)
                denom = p.lam + 1.0 - beta
                if denom <= 0.0:
                    raise DomainError(
                        f"lam + 1 - beta({eta:.4g}) = {denom:.6g} <= 0: value diverges")
                q = q_bar_signal(sols.signal, p, eta, rule)
                h = float(sols.signal.h_at(eta))
                post = _posterior_mean_factor(eta, q, p, rule)
                psi_val = float(e.psi(eta))
                return psi_val * (sols.signal.A3 / h) * p.lam / denom * post
            if cond.eta0 is not None:
                return conditional(cond.eta0)
            return _p0_average(conditional, p, rule)
        return NOT_AVAILABLE

    return NOT_AVAILABLE


# ---------------------------------------------------------------------------
# Information-value report
# ---------------------------------------------------------------------------

def estimate_to_dict(stream_label: str, regime: str, method: str,
                     mean: float, conditioning: Conditioning | None = None,
                     est: PriceEstimate | None = None) -> dict:
    """Canonical report record for one priced (stream, regime, method)."""
    cond = None
    if conditioning is not None and not conditioning.empty:
        cond = {"t1": conditioning.t1, "eta0": conditioning.eta0}
    return {
        "stream": stream_label,
        "regime": regime,
        "method": method,
        "mean": mean,
        "std_error": None if est is None else est.std_error,
        "truncation_bound": None if est is None else est.truncation_bound,
        "n_paths": None if est is None else est.n_paths,
        "horizon": None if est is None else est.horizon,
        "conditioning": cond,
    }


@dataclass(frozen=True)
class PriceRow:
    regime: str
    conditioning: Conditioning | None
    closed_form: float | None
    mc: PriceEstimate | None

    def best(self) -> float:
        if self.closed_form is not None:
            return self.closed_form
        if self.mc is not None:
            return self.mc.mean
        raise ValueError("empty price row")


@dataclass(frozen=True)
class InfoValueReport:
    """Per-regime prices of one stream and the implied information values."""

    stream: str
    rows: tuple[PriceRow, ...]
    timing_information_value: float
    signal_information_value: float
    signal_conditional_values: tuple[tuple[float, float], ...]  # (eta0, price)

    def row(self, regime: str, eta0: float | None = None) -> PriceRow:
        for r in self.rows:
            cond_eta = None if r.conditioning is None else r.conditioning.eta0
            if r.regime == regime and cond_eta == eta0:
                return r
        raise KeyError((regime, eta0))


def _stream_label(e: IncomeStream) -> str:
    if isinstance(e, ConstantStream):
        return f"constant:{e.level:g}"
    if isinstance(e, ExpUntilFirstJumpStream):
        return "exp_until_jump"
    if isinstance(e, PostFirstJumpSignalStream):
        return f"post_jump_signal:{e.psi_name}"
    return f"custom:{e.name}"


def info_value_report(e: IncomeStream, p: ModelParams, cfg: SimConfig,
                      conditioning_grid: list[float] | None = None,
                      sols: RegimeSolutions | None = None,
                      rule: QuadratureRule | None = None,
                      with_mc: bool = False) -> InfoValueReport:
    """Prices per regime plus timing/signal information values.

    Closed forms are always computed where available; Monte Carlo runs are
    added when with_mc is set (using cfg for every regime). The signal value
    is reported per eta0 on the conditioning grid and averaged under the
    signal law.
    """
    rule = rule or default_rule()
    if sols is None:
        from .agents import solve_all
        sols = solve_all(p, rule)

    if conditioning_grid is None and isinstance(
            e, (ExpUntilFirstJumpStream, PostFirstJumpSignalStream)):
        sd = math.sqrt(p.v + p.v_eps)
        conditioning_grid = [p.m - 2.0 * sd, p.m, p.m + 2.0 * sd]
    conditioning_grid = conditioning_grid or []

    def build_row(regime: str, cond: Conditioning | None) -> PriceRow:
        sol = sols.for_regime(regime)
        try:
            cf = closed_form_price(e, regime, p, sols, cond, rule)
        except GateError:
            cf = NOT_AVAILABLE
        cf_val = None if isinstance(cf, NotAvailable) else float(cf)
        mc = None
        if with_mc:
            try:
                run_cfg = SimConfig(horizon=cfg.horizon, dt=cfg.dt,
                                    n_paths=cfg.n_paths, seed=cfg.seed,
                                    regime=regime)
                mc = price_mc(e, sol, p, run_cfg, cond, sols=sols, rule=rule)
            except (GateError, DomainError):
                mc = None
        return PriceRow(regime=regime, conditioning=cond,
                        closed_form=cf_val, mc=mc)

    rows = [build_row("merton", None), build_row("uninformed", None),
            build_row("timing", None)]
    if sols.signal is not None:
        rows.append(build_row("signal", None))
        for eta in conditioning_grid:
            rows.append(build_row("signal", Conditioning(eta0=float(eta))))

    def find(regime, cond_eta=None):
        for r in rows:
            cond = r.conditioning
            eta = None if cond is None else cond.eta0
            if r.regime == regime and eta == cond_eta:
                return r
        return None

    base = find("uninformed").best()
    timing_value = find("timing").best() - base
    signal_row = find("signal")
    signal_value = (signal_row.best() - base) if signal_row else math.nan
    signal_conditionals = tuple(
        (float(eta), find("signal", float(eta)).best())
        for eta in conditioning_grid if find("signal", float(eta)) is not None)

    return InfoValueReport(
        stream=_stream_label(e),
        rows=tuple(rows),
        timing_information_value=timing_value,
        signal_information_value=signal_value,
        signal_conditional_values=signal_conditionals,
    )
