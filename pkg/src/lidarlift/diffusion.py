"""Noise schedules, the local per-point noising process, and reverse sampling.

Timesteps are 0-indexed; t = 0 is the least-noised step. The forward
process displaces existing points in place (it never changes the point
count): ``p_t = p + sqrt(1 - alpha_bar_t) * eps``.

Two reverse variants are provided. ``paper-exact`` is the stochastic
update with the standard posterior variance; ``local-ddim`` is the
deterministic drift-only update whose per-step coefficients telescope,
so composing it down any ladder with the true noise recovers the clean
points exactly. The deterministic ladder is also the reduced-step fast
path (50 steps by default).
"""

import io
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud

VARIANTS = ("paper-exact", "local-ddim")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step beta/alpha/alpha_bar sequences of length T."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a non-empty 1-D sequence")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)

    @property
    def T(self):
        return self.beta.size

    @property
    def alpha(self):
        return 1.0 - self.beta

    @property
    def alpha_bar(self):
        return np.cumprod(self.alpha)

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar_t with the convention alpha_bar_{-1} = 1."""
        if t < -1 or t >= self.T:
            raise ValueError(f"step {t} outside [-1, {self.T - 1}]")
        return 1.0 if t == -1 else float(self.alpha_bar[t])


def linear_schedule(T: int, beta_0: float, beta_T: float) -> NoiseSchedule:
    """Linearly spaced betas from beta_0 to beta_T inclusive."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_0 <= beta_T < 1.0):
        raise ValueError(
            f"need 0 < beta_0 <= beta_T < 1, got beta_0={beta_0}, beta_T={beta_T}"
        )
    beta = np.full(1, beta_0) if T == 1 else np.linspace(beta_0, beta_T, T)
    return NoiseSchedule(beta)


def forward_noise(points: PointCloud, t: int, sched: NoiseSchedule, eps: np.ndarray):
    """Displace each point by sqrt(1 - alpha_bar_t) * eps."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != points.points.shape:
        raise ValueError(f"eps shape {eps.shape} != points shape {points.points.shape}")
    if not 0 <= t < sched.T:
        raise ValueError(f"step {t} outside [0, {sched.T - 1}]")
    scale = np.sqrt(1.0 - sched.alpha_bar_at(t))
    return PointCloud(points.points + scale * eps, points.features)


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, s: float) -> np.ndarray:
    """Blend unconditional and conditional noise: eps_u + s*(eps_c - eps_u).

    Evaluated as (1-s)*eps_u + s*eps_c, which is the same affine
    combination but returns each branch exactly at s = 0 and s = 1.
    """
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError(
            f"branch shapes differ: {eps_uncond.shape} vs {eps_cond.shape}"
        )
    return (1.0 - s) * eps_uncond + s * eps_cond


def reverse_step(
    p_t: PointCloud,
    eps_hat: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    variant: str = "local-ddim",
    z: np.ndarray | None = None,
    t_prev: int | None = None,
) -> PointCloud:
    """One denoising step from t to t_prev (default t - 1).

    ``t_prev`` exists so reduced ladders can jump between non-adjacent
    steps; the drift coefficients then still telescope across the whole
    trajectory. ``t_prev = -1`` means "fully denoised" (alpha_bar = 1).

    paper-exact:  p_prev = p_t - (1-alpha_t)/sqrt(1-alpha_bar_t) * eps_hat + sigma*z
                  with sigma^2 = beta_t * (1-alpha_bar_prev)/(1-alpha_bar_t)
    local-ddim:   p_prev = p_t - (sqrt(1-alpha_bar_t) - sqrt(1-alpha_bar_prev)) * eps_hat
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if not 0 <= t < sched.T:
        raise ValueError(f"step {t} outside [0, {sched.T - 1}]")
    if t_prev is None:
        t_prev = t - 1
    if not -1 <= t_prev < t:
        raise ValueError(f"t_prev={t_prev} must lie in [-1, {t - 1}]")
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != p_t.points.shape:
        raise ValueError(f"eps_hat shape {eps_hat.shape} != points shape {p_t.points.shape}")

    ab_t = sched.alpha_bar_at(t)
    ab_prev = sched.alpha_bar_at(t_prev)
    if variant == "local-ddim":
        drift = np.sqrt(1.0 - ab_t) - np.sqrt(1.0 - ab_prev)
        return PointCloud(p_t.points - drift * eps_hat, p_t.features)

    beta_t = float(sched.beta[t])
    alpha_t = 1.0 - beta_t
    drift = (1.0 - alpha_t) / np.sqrt(1.0 - ab_t)
    sigma2 = beta_t * (1.0 - ab_prev) / (1.0 - ab_t)
    new = p_t.points - drift * eps_hat
    if sigma2 > 0.0:
        if z is None:
            raise ValueError("stochastic step needs z noise when sigma > 0")
        z = np.asarray(z, dtype=np.float64)
        if z.shape != p_t.points.shape:
            raise ValueError(f"z shape {z.shape} != points shape {p_t.points.shape}")
        new = new + np.sqrt(sigma2) * z
    return PointCloud(new, p_t.features)


def timestep_ladder(T: int, steps: int) -> np.ndarray:
    """Strictly decreasing, evenly spaced steps from T-1 down to 0.

    A length-1 ladder is the single entry T-1 (sampling must start at the
    top noise level); every ladder of length >= 2 ends at 0.
    """
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in [1, T={T}], got {steps}")
    if steps == 1:
        return np.array([T - 1], dtype=np.int64)
    ladder = np.round(np.linspace(T - 1, 0, steps)).astype(np.int64)
    if np.any(np.diff(ladder) >= 0):
        raise ValueError(f"cannot place {steps} distinct steps in [0, {T - 1}]")
    return ladder


@dataclass(frozen=True)
class SamplerConfig:
    """Reverse-process settings: step count, guidance weight, variant, seed.

    The guidance scale has no privileged default; callers must choose one.
    """

    guidance_scale: float
    steps: int = 50
    variant: str = "local-ddim"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


def replicate_condition(condition: PointCloud, rate: int) -> PointCloud:
    """Each condition point repeated `rate` times consecutively."""
    return PointCloud(np.repeat(condition.points, rate, axis=0))


def sample(
    denoiser,
    condition: PointCloud,
    rate: int,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
) -> PointCloud:
    """Generate a dense cloud of exactly rate * N_c points.

    Start from the condition points replicated `rate` times, displaced by
    the forward process at t = T-1 (the first draw from the sampler
    seed), then walk the reduced ladder. Each step evaluates the denoiser
    on both the null and the real condition and blends the two noise
    estimates with the guidance weight.

    `denoiser` is any callable (points (N,3), condition-or-None, t) -> (N,3).
    """
    if condition.count == 0:
        raise ValueError("condition cloud must be non-empty")
    if rate < 1:
        raise ValueError(f"rate must be >= 1, got {rate}")
    if cfg.steps > sched.T:
        raise ValueError(f"steps={cfg.steps} exceeds schedule T={sched.T}")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    current = replicate_condition(condition, rate)
    eps0 = rng.standard_normal(current.points.shape)
    current = forward_noise(current, sched.T - 1, sched, eps0)

    ladder = timestep_ladder(sched.T, cfg.steps)
    for i, t in enumerate(ladder):
        t = int(t)
        t_prev = int(ladder[i + 1]) if i + 1 < len(ladder) else -1
        eps_uncond = denoiser(current.points, None, t)
        eps_cond = denoiser(current.points, condition, t)
        eps_hat = cfg_combine(eps_uncond, eps_cond, cfg.guidance_scale)
        z = None
        if cfg.variant == "paper-exact":
            z = rng.standard_normal(current.points.shape)
        current = reverse_step(current, eps_hat, t, sched, cfg.variant, z, t_prev=t_prev)
    return current


def schedule_csv(sched: NoiseSchedule) -> str:
    """CSV dump with columns t, beta, alpha, alpha_bar."""
    buf = io.StringIO()
    buf.write("t,beta,alpha,alpha_bar\n")
    alpha = sched.alpha
    alpha_bar = sched.alpha_bar
    for t in range(sched.T):
        buf.write(f"{t},{sched.beta[t]:.17g},{alpha[t]:.17g},{alpha_bar[t]:.17g}\n")
    return buf.getvalue()
