"""Named experiment presets, one per reference program or figure."""

_SIN_FILTER = """
experiment.kind = filter
experiment.seed = 1
experiment.steps = 10000
model.kind = sin
model.alpha = 2.5
obs.kind = identity
noise.sigma = 0.3
noise.gamma = 1
truth.init = normal
truth.v0 = 0
truth.var = 1
filter.init = normal
filter.m0 = 0
filter.init_var = 100
filter.C0 = 10
filter.N = 100
filter.eta = 0.2
"""

_LOGISTIC_P3 = """
model.kind = logistic
model.r = 4
obs.kind = identity
noise.sigma = 0
noise.gamma = 0.2
truth.init = fixed
truth.v0 = 0.3
prior.m0 = 0.5
prior.C0 = 0.01
experiment.steps = 5
grid.lo = 0.01
grid.hi = 0.99
grid.step = 0.0005
"""

_SIN_PATH = """
experiment.steps = 10
model.kind = sin
model.alpha = 2.5
obs.kind = identity
noise.sigma = 1
noise.gamma = 1
truth.init = normal
truth.v0 = 0
truth.var = 1
prior.m0 = 0
prior.C0 = 1
mcmc.n_steps = 100000
mcmc.init = truth
"""


def _filter(name, source, alg):
    return source, f"experiment.name = {name}\nexperiment.source = {source}\n" + _SIN_FILTER + f"filter.algorithm = {alg}\n"


PRESETS = {
    "p1_sin_simulate": ("p1", """
experiment.name = p1_sin_simulate
experiment.kind = simulate
experiment.seed = 1
experiment.steps = 1000
model.kind = sin
model.alpha = 2.5
noise.sigma = 0.25
truth.init = fixed
truth.v0 = 1
"""),
    "p2_grid_logistic_m04": ("p2", """
experiment.name = p2_grid_logistic_m04
experiment.kind = grid_posterior
experiment.seed = 1
experiment.steps = 1000
model.kind = logistic
model.r = 2
noise.sigma = 0
noise.gamma = 0.1
truth.v0 = 0.1
prior.m0 = 0.4
prior.C0 = 0.01
"""),
    "p2_grid_logistic_m07": ("p2", """
experiment.name = p2_grid_logistic_m07
experiment.kind = grid_posterior
experiment.seed = 1
experiment.steps = 1000
model.kind = logistic
model.r = 2
noise.sigma = 0
noise.gamma = 0.1
truth.v0 = 0.1
prior.m0 = 0.7
prior.C0 = 0.01
"""),
    "p3_rwm_logistic": ("p3", "experiment.name = p3_rwm_logistic\nexperiment.kind = mcmc\nexperiment.seed = 1\n"
                        + _LOGISTIC_P3 + "mcmc.sampler = rwm\nmcmc.beta = 1\nmcmc.n_steps = 100000\n"),
    "fig_mcmc1": ("p3", "experiment.name = fig_mcmc1\nexperiment.kind = fig_mcmc1\nexperiment.seed = 1\n"
                  + _LOGISTIC_P3 + "mcmc.sampler = rwm\nmcmc.beta = 1\nmcmc.n_steps = 1000000\n"
                  + "check.metric = tv_distance\ncheck.max = 0.1\n"),
    "p4_ids_sin": ("p4", "experiment.name = p4_ids_sin\nexperiment.kind = mcmc\nexperiment.seed = 1\n"
                   + _SIN_PATH + "mcmc.sampler = ids\nmcmc.beta = 1\n"),
    "p5_pcn_sin": ("p5", "experiment.name = p5_pcn_sin\nexperiment.kind = mcmc\nexperiment.seed = 1\n"
                   + _SIN_PATH + "mcmc.sampler = pcn\nmcmc.beta = 0.1\n"),
    "p6_pcnd_sin": ("p6", "experiment.name = p6_pcnd_sin\nexperiment.kind = mcmc\nexperiment.seed = 1\n"
                    + _SIN_PATH + "mcmc.sampler = pcn_dynamics\nmcmc.beta = 0.2\n"),
    "p7_w4dvar_sin": ("p7", """
experiment.name = p7_w4dvar_sin
experiment.kind = w4dvar
experiment.seed = 1
experiment.steps = 5
model.kind = sin
model.alpha = 2.5
noise.sigma = 0.1
noise.gamma = 0.1
truth.init = normal
truth.v0 = 0
truth.var = 1
prior.m0 = 0
prior.C0 = 1
var.random_starts = 5
var.start_spread = 1
var.max_iterations = 100000
var.restarts = 50
"""),
    "fourdvar_linear": ("smooth1", """
experiment.name = fourdvar_linear
experiment.kind = fourdvar
experiment.seed = 1
experiment.steps = 100
model.kind = linear_scalar
model.lambda = 0.5
noise.sigma = 0
noise.gamma = 1
truth.v0 = 0.5
prior.m0 = 4
prior.C0 = 5
var.starts = -8, -2, 8
"""),
    "fourdvar_logistic": ("p3", "experiment.name = fourdvar_logistic\nexperiment.kind = fourdvar\n"
                          "experiment.seed = 1\n" + _LOGISTIC_P3 + "var.starts = 0.05, 0.2, 0.4\n"),
    "p8_kf_rotation": ("p8", """
experiment.name = p8_kf_rotation
experiment.kind = filter
experiment.seed = 1
experiment.steps = 100
model.kind = linear2d
model.variant = 3
obs.kind = first
noise.sigma = 1
noise.gamma = 1
truth.init = normal
truth.v0 = 0
truth.var = 1
filter.algorithm = kf
filter.init = normal
filter.m0 = 0
filter.init_var = 100
filter.C0 = 100
"""),
    "p9_3dvar_logistic": ("p9", """
experiment.name = p9_3dvar_logistic
experiment.kind = filter
experiment.seed = 1
experiment.steps = 10000
model.kind = logistic
model.r = 4
obs.kind = identity
noise.sigma = 0
noise.gamma = 0.1
truth.init = uniform
truth.lo = 0
truth.hi = 1
filter.algorithm = 3dvar
filter.init = uniform
filter.lo = 0
filter.hi = 1
filter.eta = 0.2
check.metric = 3dvar.window_mse
check.min = 0.003
check.max = 0.03
"""),
    "p10_3dvar_sin": _filter("p10_3dvar_sin", "p10", "3dvar"),
    "p11_exkf_sin": _filter("p11_exkf_sin", "p11", "exkf"),
    "p12_enkf_sin": _filter("p12_enkf_sin", "p12", "enkf"),
    "p13_etkf_sin": _filter("p13_etkf_sin", "p13", "etkf"),
    "p14_sirs_sin": _filter("p14_sirs_sin", "p14", "sirs"),
    "p15_sirsop_sin": _filter("p15_sirsop_sin", "p15", "sirs_op"),
    "fig_error": _filter("fig_error", "p10-p15", "3dvar, exkf, enkf, etkf, sirs, sirs_op"),
    "p16_lorenz63": ("p16", """
experiment.name = p16_lorenz63
experiment.kind = simulate
experiment.seed = 1
experiment.steps = 2500
model.kind = lorenz63
model.a = 10
model.b = 2.6666666666666665
model.r = 28
model.tau = 0.01
model.substeps = 20
truth.init = normal
truth.v0 = 0
truth.var = 1
simulate.perturb = 0.0001
"""),
    "p17_lorenz96": ("p17", """
experiment.name = p17_lorenz96
experiment.kind = simulate
experiment.seed = 1
experiment.steps = 400
model.kind = lorenz96
model.K = 40
model.F = 8
model.tau = 0.05
model.substeps = 20
truth.init = normal
truth.v0 = 8
truth.var = 1
simulate.perturb = 0.0001
"""),
    "smoother_rotation": ("p8", """
experiment.name = smoother_rotation
experiment.kind = smoother
experiment.seed = 1
experiment.steps = 50
model.kind = linear2d
model.variant = 3
obs.kind = first
noise.sigma = 1
noise.gamma = 1
truth.init = normal
truth.v0 = 0
truth.var = 1
prior.m0 = 0
prior.C0 = 1
"""),
}

# the kf figure is the p8 run under its figure name
PRESETS["fig_kf"] = ("p8", PRESETS["p8_kf_rotation"][1].replace("p8_kf_rotation", "fig_kf"))


def preset_text(name):
    if name not in PRESETS:
        raise KeyError(name)
    source, text = PRESETS[name]
    if "experiment.source" not in text:
        text = text.lstrip("\n") + f"experiment.source = {source}\n"
    return text.lstrip("\n")


def list_experiments():
    return {name: src for name, (src, _) in sorted(PRESETS.items())}
