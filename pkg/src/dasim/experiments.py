"""Turn a parsed configuration into a twin experiment and its output tables."""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import report
from .config import ValidationError, serialize
from .core import (
    RNG_VERSION,
    STREAM_MODEL_NOISE,
    STREAM_PERTURB,
    STREAM_PROPOSAL,
    STREAM_TRUTH_INIT,
    BlowUpLimit,
    NonFiniteState,
    make_rng,
)
from .diagnostics import error_series
from .filters import TwinSetup, draw_init, make_truth_and_data, run_filter
from .mcmc import McmcConfig, default_init, run_chain
from .models import (
    Linear2D,
    LinearScalar,
    LogisticMap,
    Lorenz63,
    Lorenz96,
    Observation,
    SinMap,
    simulate,
)
from .prob import empirical_histogram, tv_distance_grid
from .smoothing import (
    SmoothingProblem,
    grid_posterior_1d,
    kalman_smoother,
    orbit,
    signal_to_noise,
)
from .variational import OptimizerConfig, fourdvar, w4dvar


class ExperimentBlowUp(Exception):
    """A run diverged; the partial outputs have been written."""


@dataclass
class Outcome:
    columns: list
    rows: list
    summary: list
    groups: list
    int_columns: tuple = ("j",)
    blowup: str = None
    extra: dict = field(default_factory=dict)


def build_model(cfg):
    kind = cfg["model.kind"]
    if kind == "linear_scalar":
        return LinearScalar(cfg["model.lambda"])
    if kind == "linear2d":
        return Linear2D(cfg["model.variant"], lam1=cfg["model.lam1"], lam2=cfg["model.lam2"],
                        lam=cfg["model.lam"], alpha=cfg["model.alpha"])
    if kind == "sin":
        return SinMap(cfg["model.alpha"])
    if kind == "logistic":
        return LogisticMap(cfg["model.r"])
    if kind == "lorenz63":
        return Lorenz63(a=cfg["model.a"], b=cfg["model.b"], r=cfg["model.r"], tau=cfg["model.tau"],
                        substeps=cfg["model.substeps"])
    return Lorenz96(K=cfg["model.K"], F=cfg["model.F"], tau=cfg["model.tau"], substeps=cfg["model.substeps"])


def build_obs(cfg, n):
    kind = cfg["obs.kind"]
    if kind == "identity":
        return Observation.identity(n)
    if kind == "first":
        return Observation.first_component(n)
    return Observation.projection(n, cfg["obs.indices"])


def _vec(vals, n, key):
    v = np.asarray(vals, dtype=float)
    if v.size == 1:
        return np.full(n, float(v[0]))
    if v.size != n:
        raise ValidationError(key, f"needs 1 or {n} values, got {v.size}")
    return v


def _init_spec(cfg, section, n):
    kind = cfg[f"{section}.init"]
    key = "truth.v0" if section == "truth" else "filter.m0"
    if kind == "fixed":
        return ("fixed", _vec(cfg[key], n, key))
    if kind == "normal":
        var = cfg["truth.var" if section == "truth" else "filter.init_var"]
        return ("normal", _vec(cfg[key], n, key), var)
    return ("uniform", cfg[f"{section}.lo"], cfg[f"{section}.hi"])


def _noise(cfg):
    s = cfg["noise.sigma"]
    return None if s == 0 else s * s, cfg["noise.gamma"] ** 2


def _names(prefix, n):
    return [f"{prefix}_{k + 1}" for k in range(n)]


def _twin(cfg, model, obs, filter_c0=None):
    sigma2, gamma2 = _noise(cfg)
    n = model.dim
    return TwinSetup(model, obs, sigma2, gamma2, cfg["experiment.steps"], cfg.seed,
                     truth_init=_init_spec(cfg, "truth", n),
                     filter_init=_init_spec(cfg, "filter", n),
                     C0=cfg["filter.C0"] if filter_c0 is None else filter_c0)


def _problem(cfg, model, obs):
    setup = _twin(cfg, model, obs, filter_c0=1.0)
    truth, y = make_truth_and_data(setup)
    sigma2, gamma2 = _noise(cfg)
    n = model.dim
    p = SmoothingProblem(model, obs, sigma2, gamma2, _vec(cfg["prior.m0"], n, "prior.m0"), cfg["prior.C0"], y)
    return p, truth


def run_filter_experiment(cfg):
    model = build_model(cfg)
    obs = build_obs(cfg, model.dim)
    setup = _twin(cfg, model, obs)
    data = make_truth_and_data(setup)
    algs = cfg["filter.algorithm"]
    runs = [run_filter(setup, a, N=cfg["filter.N"], eta=cfg["filter.eta"], model_noise=cfg["filter.model_noise"],
                       blowup_bound=cfg["filter.blowup_bound"], data=data) for a in algs]
    n, J = model.dim, setup.J
    truth = data[0]
    single = len(algs) == 1
    columns = ["j"] + _names("truth", n)
    blocks = [np.arange(J + 1)[:, None], truth]
    groups = []
    summary = []
    blown = []
    for r in runs:
        pre = "" if single else f"{r.algorithm}_"
        mcols = _names(pre + "mean", n)
        columns += mcols + [pre + "trace_cov", pre + "error"]
        err = np.full(J + 1, np.nan)
        err[: r.steps + 1] = r.error
        tr = np.full(J + 1, np.nan)
        tr[: r.steps + 1] = r.trace_cov
        blocks += [r.mean, tr[:, None], err[:, None]]
        groups.append((f"{r.algorithm} state", [columns[1]] + [mcols[0]]))
        es = error_series(r.error)
        w = r.error[es.window[0]: es.window[1]]
        a = r.algorithm
        summary += [
            (f"{a}.steps_completed", r.steps),
            (f"{a}.blowup_step", -1 if r.blowup_step is None else r.blowup_step),
            (f"{a}.window_mean_error", es.window_mean),
            (f"{a}.window_mse", float(np.mean(w * w)) if w.size else math.nan),
            (f"{a}.window_sd", es.window_sd),
            (f"{a}.window_kurtosis", es.window_kurtosis),
        ]
        if r.blowup_step is not None:
            blown.append(f"{a} diverged at step {r.blowup_step}")
    rows = np.hstack(blocks)
    groups.append(("covariance trace", [c for c in columns if c.endswith("trace_cov")]))
    groups.append(("error", [c for c in columns if c.endswith("error")]))
    return Outcome(columns, rows, summary, groups, blowup="; ".join(blown) or None)


def run_simulate_experiment(cfg):
    model = build_model(cfg)
    n, J = model.dim, cfg["experiment.steps"]
    sigma2, _ = _noise(cfg)
    setup = _twin(cfg, model, Observation.identity(n), filter_c0=1.0)
    v0 = draw_init(setup.truth_init, n, make_rng(cfg.seed, STREAM_TRUTH_INIT))
    v = simulate(model, v0, J, sigma2, make_rng(cfg.seed, STREAM_MODEL_NOISE))
    tau = getattr(model, "tau", 1.0)
    columns = ["j", "t"] + _names("v", n)
    blocks = [np.arange(J + 1)[:, None], (tau * np.arange(J + 1))[:, None], v]
    groups = [("trajectory", _names("v", n)[:3])]
    summary = [("final_norm", float(np.linalg.norm(v[-1])))]
    if sigma2 is not None:
        det = simulate(model, v0, J)
        columns += _names("det", n)
        blocks.append(det)
        groups.append(("deterministic", _names("det", n)[:3]))
    eps = cfg["simulate.perturb"]
    if eps > 0:
        w0 = v0 + eps * make_rng(cfg.seed, STREAM_PERTURB).standard_normal(n)
        w = simulate(model, w0, J, sigma2, make_rng(cfg.seed, STREAM_MODEL_NOISE))
        err = np.linalg.norm(w - v, axis=1)
        columns += _names("w", n) + ["error"]
        blocks += [w, err[:, None]]
        groups.append(("perturbation growth", ["error"]))
        crossed = np.nonzero(err > 1.0)[0]
        summary += [("initial_error", float(err[0])),
                    ("first_unit_error_time", float(tau * crossed[0]) if crossed.size else math.nan),
                    ("final_error", float(err[-1]))]
    return Outcome(columns, np.hstack(blocks), summary, groups)


def _chain(cfg, p, truth):
    kind = cfg["mcmc.sampler"]
    mc = McmcConfig(kind=kind, beta=cfg["mcmc.beta"], n_steps=cfg["mcmc.n_steps"], burn_in=cfg["mcmc.burn_in"],
                    thin=cfg["mcmc.thin"], init_at_truth=cfg["mcmc.init"] == "truth",
                    C_prop=None if cfg["mcmc.proposal"] == "prior" else 1.0)
    if cfg["mcmc.init"] == "truth":
        init = truth[0] if kind == "rwm" else (signal_to_noise(p, truth) if kind == "pcn_dynamics" else truth)
    else:
        init = default_init(p, kind, make_rng(cfg.seed, STREAM_PERTURB))
    return run_chain(p, mc, init=init, rng=make_rng(cfg.seed, STREAM_PROPOSAL))


def run_mcmc_experiment(cfg):
    model = build_model(cfg)
    p, truth = _problem(cfg, model, build_obs(cfg, model.dim))
    res = _chain(cfg, p, truth)
    x0 = res.samples.reshape(res.samples.shape[0], -1, p.n)[:, 0, :] if res.samples.size else np.empty((0, p.n))
    run = res.running_mean.reshape(res.running_mean.shape[0], -1, p.n)[:, 0, :] if res.samples.size else x0
    k = np.arange(x0.shape[0]) * cfg["mcmc.thin"]
    columns = ["k"] + _names("sample", p.n) + _names("running_mean", p.n)
    rows = np.hstack([k[:, None], x0, run])
    summary = [("acceptance_rate", res.acceptance_rate), ("accepted", res.accepted), ("steps", res.steps),
               ("blowups", res.blowups)]
    summary += [(f"posterior_mean_{i + 1}", float(x0[:, i].mean())) for i in range(p.n)]
    summary += [(f"truth_{i + 1}", float(truth[0, i])) for i in range(p.n)]
    groups = [("chain", _names("sample", p.n)[:1]), ("running mean", _names("running_mean", p.n)[:1])]
    return Outcome(columns, rows, summary, groups, int_columns=("k",))


def _grid(cfg):
    lo, hi, h = cfg["grid.lo"], cfg["grid.hi"], cfg["grid.step"]
    count = int(math.floor((hi - lo) / h + 1e-9)) + 1
    return np.round(lo + h * np.arange(count), 12)


def run_grid_experiment(cfg, with_chain=False):
    model = build_model(cfg)
    p, truth = _problem(cfg, model, build_obs(cfg, model.dim))
    grid = _grid(cfg)
    post = grid_posterior_1d(p, grid)
    columns = ["x", "posterior"]
    blocks = [grid[:, None], post.values[:, None]]
    summary = [("posterior_mean", post.mean), ("posterior_argmax", post.argmax), ("truth_1", float(truth[0, 0]))]
    groups = [("posterior", ["posterior"])]
    if with_chain:
        res = _chain(cfg, p, truth)
        hist = empirical_histogram(res.samples[:, 0], grid)
        columns.append("histogram")
        blocks.append(hist.values[:, None])
        groups = [("posterior vs histogram", ["posterior", "histogram"])]
        summary += [("acceptance_rate", res.acceptance_rate), ("tv_distance", tv_distance_grid(post, hist))]
    return Outcome(columns, np.hstack(blocks), summary, groups, int_columns=())


def _starts(cfg, shape, m0):
    starts = [np.full(shape, s) for s in cfg["var.starts"]]
    k = cfg["var.random_starts"]
    if k:
        rng = make_rng(cfg.seed, STREAM_PERTURB)
        for _ in range(k):
            starts.append(m0 + cfg["var.start_spread"] * rng.standard_normal(shape))
    return starts


def run_variational_experiment(cfg):
    model = build_model(cfg)
    p, truth = _problem(cfg, model, build_obs(cfg, model.dim))
    weak = cfg.kind == "w4dvar"
    opt = OptimizerConfig(max_iterations=cfg["var.max_iterations"], restarts=cfg["var.restarts"])
    if weak:
        results = w4dvar(p, _starts(cfg, (p.J + 1, p.n), p.m0[0]), opt)
        best_path = results[0].minimizer
    else:
        results = fourdvar(p, _starts(cfg, (p.n,), p.m0), opt)
        best_path = orbit(p, results[0].minimizer)
    J = p.J
    columns = ["j"] + _names("truth", p.n) + _names("map", p.n)
    rows = np.hstack([np.arange(J + 1)[:, None], truth, best_path])
    summary = [("best_value", results[0].value)]
    summary += [(f"best_v0_{i + 1}", float(best_path[0, i])) for i in range(p.n)]
    # results are sorted by value; report them in the order the starts were given
    for i, r in enumerate(sorted(results, key=lambda r: tuple(np.ravel(r.start)))):
        tag = f"start_{i + 1}"
        summary += [(f"{tag}.first_value", float(np.ravel(r.start)[0])), (f"{tag}.value", r.value), (f"{tag}.converged", bool(r.converged)),
                    (f"{tag}.iterations", r.iterations), (f"{tag}.v0_1", float(np.ravel(r.minimizer)[0]))]
    groups = [("MAP path", [columns[1], _names("map", p.n)[0]])]
    return Outcome(columns, rows, summary, groups)


def run_smoother_experiment(cfg):
    model = build_model(cfg)
    p, truth = _problem(cfg, model, build_obs(cfg, model.dim))
    mean, _, cov_last = kalman_smoother(p)
    columns = ["j"] + _names("truth", p.n) + _names("smoother_mean", p.n) + ["error"]
    err = np.linalg.norm(mean - truth, axis=1)
    rows = np.hstack([np.arange(p.J + 1)[:, None], truth, mean, err[:, None]])
    summary = [("final_cov_trace", float(np.trace(cov_last))), ("mean_error", float(err.mean()))]
    groups = [("smoother", [columns[1], _names("smoother_mean", p.n)[0]]), ("error", ["error"])]
    return Outcome(columns, rows, summary, groups)


RUNNERS = {
    "filter": run_filter_experiment,
    "simulate": run_simulate_experiment,
    "mcmc": run_mcmc_experiment,
    "grid_posterior": run_grid_experiment,
    "fig_mcmc1": lambda cfg: run_grid_experiment(cfg, with_chain=True),
    "fourdvar": run_variational_experiment,
    "w4dvar": run_variational_experiment,
    "smoother": run_smoother_experiment,
}


class CheckFailed(Exception):
    pass


def evaluate_check(cfg, summary):
    metric = cfg["check.metric"]
    if metric is None:
        return None
    table = dict(summary)
    if metric not in table:
        raise CheckFailed(f"check metric {metric!r} is not in the summary")
    val = float(table[metric])
    lo, hi = cfg["check.min"], cfg["check.max"]
    ok = math.isfinite(val) and (lo is None or val >= lo) and (hi is None or val <= hi)
    return ok, metric, val, lo, hi


def run_experiment(cfg, outdir, figures=False, check=False):
    """Run and write all outputs; returns (exit_code, message)."""
    os.makedirs(outdir, exist_ok=True)
    name = cfg.name
    base = os.path.join(outdir, name)
    with open(base + "_config_echo.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize(cfg))
    try:
        out = RUNNERS[cfg.kind](cfg)
    except (NonFiniteState, BlowUpLimit) as exc:
        report.write_error_record(base + "_error.txt", exc, 3)
        return 3, f"{name}: blow-up: {exc}"
    except ValidationError as exc:
        report.write_error_record(base + "_error.txt", exc, 2)
        return 2, f"{name}: {exc}"
    except Exception as exc:  # module errors become a structured record and exit 1
        report.write_error_record(base + "_error.txt", exc, 1)
        return 1, f"{name}: {type(exc).__name__}: {exc}"
    head = [("experiment", name), ("kind", cfg.kind), ("seed", cfg.seed), ("rng", RNG_VERSION)]
    report.write_series(base + "_series.csv", out.columns, out.rows, out.int_columns)
    report.write_summary(base + "_summary.csv", head + out.summary)
    report.write_plot_script(base + ".gp", name, out.columns, out.groups)
    if figures:
        report.render_figures(outdir, name, out.columns, out.rows, out.groups)
    if out.blowup:
        exc = ExperimentBlowUp(out.blowup)
        report.write_error_record(base + "_error.txt", exc, 3)
        return 3, f"{name}: blow-up: {out.blowup}"
    if check:
        res = evaluate_check(cfg, out.summary)
        if res is not None:
            ok, metric, val, lo, hi = res
            msg = f"{name}: check {metric} = {val:.6g} in [{lo}, {hi}]: {'PASS' if ok else 'FAIL'}"
            if not ok:
                report.write_error_record(base + "_error.txt", CheckFailed(msg), 4)
                return 4, msg
            return 0, msg
    return 0, f"{name}: ok"
