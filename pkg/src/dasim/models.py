"""Forward maps, observation operators, trajectory and data generation."""

import math
import warnings

import numpy as np

from .core import (
    DimensionMismatch,
    NonFiniteState,
    as_matrix,
    as_rng,
    as_vector,
    cholesky_factor,
)


class Model:
    """A forward map v -> Ψ(v) acting on the last axis of an array."""

    kind = "model"
    dim = 1
    is_ode = False

    @property
    def matrix(self):
        """Matrix of the map when it is linear, else None."""
        return None

    def __call__(self, v):
        return self.apply(v)

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim == 0 and self.dim == 1:
            v = v.reshape(1)
        if v.shape[-1] != self.dim:
            raise DimensionMismatch(f"{self.kind}: expected dimension {self.dim}, got {v.shape[-1]}")
        return v

    def params(self):
        return {}


class LinearMap(Model):
    kind = "linear"

    def __init__(self, a):
        self.a = as_matrix(a)
        if self.a.shape[0] != self.a.shape[1]:
            raise DimensionMismatch("linear map needs a square matrix")
        self.dim = self.a.shape[0]

    @property
    def matrix(self):
        return self.a

    def apply(self, v):
        return self._check(v) @ self.a.T

    def jacobian(self, v):
        return self.a.copy()

    def params(self):
        return {"matrix": self.a.tolist()}


class LinearScalar(LinearMap):
    kind = "linear_scalar"

    def __init__(self, lam):
        self.lam = float(lam)
        super().__init__([[self.lam]])

    def apply_float(self, x):
        return self.lam * x

    def params(self):
        return {"lambda": self.lam}


def linear2d_matrix(variant, lam1=1.0, lam2=1.0, lam=1.0, alpha=0.0):
    """The three 2-D linear examples: diagonal, Jordan-type block, rotation."""
    if variant == 1:
        return np.diag([lam1, lam2])
    if variant == 2:
        return np.array([[lam, alpha], [0.0, lam]])
    if variant == 3:
        return np.array([[0.0, 1.0], [-1.0, 0.0]])
    raise ValueError(f"unknown 2-D variant {variant}")


class Linear2D(LinearMap):
    kind = "linear2d"

    def __init__(self, variant, **kw):
        self.variant = int(variant)
        self.kw = {k: float(x) for k, x in kw.items()}
        super().__init__(linear2d_matrix(self.variant, **self.kw))

    def params(self):
        return {"variant": self.variant, **self.kw}


class SinMap(Model):
    kind = "sin"

    def __init__(self, alpha):
        self.alpha = float(alpha)

    def apply(self, v):
        return self.alpha * np.sin(self._check(v))

    def apply_float(self, x):
        return self.alpha * math.sin(x)

    def jacobian(self, v):
        v = self._check(v)
        return np.array([[self.alpha * math.cos(v[0])]])

    def params(self):
        return {"alpha": self.alpha}


class LogisticMap(Model):
    kind = "logistic"

    def __init__(self, r):
        self.r = float(r)
        if not 0.0 <= self.r <= 4.0:
            raise ValueError("logistic map requires r in [0, 4]")

    def apply(self, v):
        v = self._check(v)
        return self.r * v * (1.0 - v)

    def apply_float(self, x):
        return self.r * x * (1.0 - x)

    def jacobian(self, v):
        v = self._check(v)
        return np.array([[self.r * (1.0 - 2.0 * v[0])]])

    def params(self):
        return {"r": self.r}


class OdeModel(Model):
    """Solution operator over time tau of an autonomous ODE, by fixed-step RK4."""

    is_ode = True

    def __init__(self, tau=0.01, substeps=20):
        self.tau = float(tau)
        self.substeps = int(substeps)
        if self.tau <= 0 or self.substeps < 1:
            raise ValueError("ODE models need tau > 0 and substeps >= 1")

    def apply(self, v):
        return integrate_rk4(self, v, self.tau)

    def jacobian(self, v):
        # central differences of the RK4 solution operator
        v = as_vector(v, self.dim)
        jac = np.empty((self.dim, self.dim))
        for k in range(self.dim):
            h = 1e-6 * (1.0 + abs(v[k]))
            e = np.zeros(self.dim)
            e[k] = h
            jac[:, k] = (self.apply(v + e) - self.apply(v - e)) / (2.0 * h)
        return jac


class Lorenz63(OdeModel):
    """Lorenz '63 in coordinates shifted so that the constant term sits in the third equation."""

    kind = "lorenz63"
    dim = 3

    def __init__(self, a=10.0, b=8.0 / 3.0, r=28.0, tau=0.01, substeps=20):
        super().__init__(tau, substeps)
        self.a, self.b, self.r = float(a), float(b), float(r)

    def field(self, v):
        a, b, r = self.a, self.b, self.r
        x, y, z = v[..., 0], v[..., 1], v[..., 2]
        return np.stack(
            [a * (y - x), -a * x - y - x * z, x * y - b * z - b * (r + a)], axis=-1
        )

    def dissipativity_constants(self):
        """(alpha, beta) with <f(v), v> <= alpha - beta |v|^2 for all v.

        <f,v> = -a x² - y² - b z² - b(r+a) z; completing the square in z with
        half of b z² gives -b/2 (z + (r+a))² + b(r+a)²/2.
        """
        a, b, r = self.a, self.b, self.r
        return b * (r + a) ** 2 / 2.0, min(a, 1.0, b / 2.0)

    def params(self):
        return {"a": self.a, "b": self.b, "r": self.r, "tau": self.tau, "substeps": self.substeps}


class Lorenz96(OdeModel):
    kind = "lorenz96"

    def __init__(self, K=40, F=8.0, tau=0.05, substeps=20):
        super().__init__(tau, substeps)
        self.dim = int(K)
        self.F = float(F)
        if self.dim < 4:
            raise ValueError("Lorenz '96 requires K >= 4")

    def field(self, v):
        return (
            np.roll(v, 1, axis=-1) * (np.roll(v, -1, axis=-1) - np.roll(v, 2, axis=-1))
            - v
            + self.F
        )

    def params(self):
        return {"K": self.dim, "F": self.F, "tau": self.tau, "substeps": self.substeps}


def apply_map(spec, v):
    return spec.apply(v)


def vector_field(spec, v):
    if not spec.is_ode:
        raise TypeError(f"{spec.kind} is a discrete map and has no vector field")
    return spec.field(spec._check(v))


def integrate_rk4(spec, v, t, substeps=None):
    """Classical RK4 with `substeps` equal steps over duration t."""
    v = spec._check(v).copy()
    if t < 0:
        raise ValueError("integration time must be non-negative")
    if t == 0:
        return v
    n = spec.substeps if substeps is None else int(substeps)
    h = t / n
    f = spec.field
    for _ in range(n):
        k1 = f(v)
        k2 = f(v + 0.5 * h * k1)
        k3 = f(v + 0.5 * h * k2)
        k4 = f(v + h * k3)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(v)):
            raise NonFiniteState(f"{spec.kind}: non-finite state during RK4")
    return v


def _noise_factor(sigma, n):
    if sigma is None:
        return None
    s = as_matrix(sigma, n)
    if not np.any(s):
        return None
    return cholesky_factor(s)


def simulate(spec, v0, steps, model_noise_cov=None, rng=None):
    """Path v_0..v_J of v_{j+1} = Ψ(v_j) + ξ_j; returns an array of shape (J+1, n)."""
    v0 = as_vector(v0, spec.dim)
    steps = int(steps)
    L = _noise_factor(model_noise_cov, spec.dim)
    out = np.empty((steps + 1, spec.dim))
    out[0] = v0
    if L is None and spec.dim == 1 and hasattr(spec, "apply_float"):
        x = float(v0[0])
        f = spec.apply_float
        col = out[:, 0]
        for j in range(steps):
            x = f(x)
            col[j + 1] = x
        if not np.all(np.isfinite(col)):
            raise NonFiniteState(f"{spec.kind}: trajectory became non-finite")
    else:
        noise = None
        if L is not None:
            noise = as_rng(rng).standard_normal((steps, spec.dim)) @ L.T
        v = v0
        for j in range(steps):
            v = spec.apply(v)
            if noise is not None:
                v = v + noise[j]
            if not np.all(np.isfinite(v)):
                raise NonFiniteState(f"{spec.kind}: trajectory became non-finite at step {j + 1}")
            out[j + 1] = v
    if spec.kind == "logistic" and L is None and spec.r <= 4.0:
        if np.any((out < 0.0) | (out > 1.0)):
            warnings.warn("logistic trajectory left [0, 1]", RuntimeWarning, stacklevel=2)
    return out


class Observation:
    """Linear observation operator h(v) = H v."""

    def __init__(self, H, kind="linear", check_rank=True):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.kind = kind
        if check_rank and np.linalg.matrix_rank(self.H) != self.H.shape[0]:
            raise ValueError("observation operator must have full row rank")

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), "identity")

    @classmethod
    def first_component(cls, n):
        H = np.zeros((1, n))
        H[0, 0] = 1.0
        return cls(H, "first")

    @classmethod
    def projection(cls, n, indices):
        idx = list(indices)
        H = np.zeros((len(idx), n))
        H[np.arange(len(idx)), idx] = 1.0
        return cls(H, "projection")

    @classmethod
    def zero(cls, n, m=1):
        """h ≡ 0: data carry no information (used to check prior sampling)."""
        return cls(np.zeros((m, n)), "zero", check_rank=False)

    @property
    def obs_dim(self):
        return self.H.shape[0]

    @property
    def state_dim(self):
        return self.H.shape[1]

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.state_dim:
            raise DimensionMismatch(f"observation expects dimension {self.state_dim}")
        return v @ self.H.T

    __call__ = apply


def generate_data(truth, obs, gamma, rng):
    """y_j = h(v_j) + η_j for j = 1..J; row j-1 of the result pairs with v_j."""
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    g = as_matrix(gamma, obs.obs_dim)
    L = cholesky_factor(g)
    J = truth.shape[0] - 1
    noise = as_rng(rng).standard_normal((J, obs.obs_dim)) @ L.T
    return obs.apply(truth[1:]) + noise


def logistic_closed_form_r2(v0, j):
    return 0.5 - 0.5 * (1.0 - 2.0 * v0) ** (2**j)


def logistic_closed_form_r4(theta, j):
    """Orbit of v_0 = sin²(πθ) under r=4 via the doubling map z -> 2z mod 1."""
    z = float(theta)
    for _ in range(j):
        z = (2.0 * z) % 1.0
    return math.sin(math.pi * z) ** 2


def logistic_invariant_density(x):
    x = np.asarray(x, dtype=float)
    return 1.0 / (math.pi * np.sqrt(x * (1.0 - x)))


def logistic_invariant_cdf(x):
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return (2.0 / math.pi) * np.arcsin(np.sqrt(x))
