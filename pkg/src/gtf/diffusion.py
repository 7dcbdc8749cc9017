"""Discrete diffusion: noise schedule, forward noising and guided reverse samplers.

Timestep convention: ``alpha_bar`` has ``T + 1`` entries with ``alpha_bar[0] == 1``
(clean data) and ``alpha_bar[T]`` the noisiest level.  A sampler with ``S``
steps walks the levels ``T -> ts[0] -> ts[1] -> ... -> ts[S-1] == 0`` where
``ts = select_timesteps(T, S)``; the denoiser and the weight scheduler are
evaluated at the level each step starts from.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Hashable, Protocol

import numpy as np

from . import geometry
from .errors import DenoiserFailure, DimensionMismatch, InvalidRange, OutOfRange
from .geometry import GuidanceDeltas, ManipulationMode
from .schedulers import SchedulerKind, SchedulerSpec, evaluate as evaluate_weight

UNCONDITIONAL = "<uncond>"

# chains are split into fixed blocks, each with its own RNG stream, so results
# do not depend on how many worker threads are used
CHAIN_BLOCK = 8192


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray  # beta[t-1] drives the transition into level t
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar)


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if int(T) != T or T < 2:
        raise InvalidRange(f"T must be an integer >= 2, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidRange(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, int(T))
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


def forward_noise(x0, t: int, eps, sched: NoiseSchedule):
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape[-1] != eps.shape[-1]:
        raise DimensionMismatch("x0 and eps dimensions differ")
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > sched.T):
        raise OutOfRange(f"timestep outside [0, {sched.T}]")
    ab = sched.alpha_bar[t]
    if ab.ndim:
        ab = ab[..., None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def select_timesteps(T: int, S: int) -> np.ndarray:
    """``S`` uniformly spaced timesteps from ``T - 1`` down to ``0``."""
    if not 1 <= S <= T:
        raise InvalidRange(f"need 1 <= S <= T, got S={S}, T={T}")
    if S == 1:
        return np.array([0])
    # floor(T-1 - (T-1)k/(S-1)) in exact integer arithmetic
    k = np.arange(S)
    return (T - 1) + ((-(T - 1) * k) // (S - 1))


class ConditionedDenoiser(Protocol):
    def predict(self, x: np.ndarray, t: int, c: Hashable) -> np.ndarray: ...


class SamplerMethod(str, enum.Enum):
    DDPM = "ddpm"
    DDIM = "ddim"


class GuidanceRule(str, enum.Enum):
    PROJECTION = "projection"  # the w1/w2 projection operators
    BAYES = "bayes"  # unweighted Bayes compositions


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    method: SamplerMethod = SamplerMethod.DDIM
    ddim_eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", SamplerMethod(self.method))
        if self.steps < 1:
            raise InvalidRange(f"steps must be >= 1, got {self.steps}")
        if self.ddim_eta < 0:
            raise InvalidRange(f"ddim_eta must be >= 0, got {self.ddim_eta}")
        if not 0 <= self.seed < 2**64:
            raise InvalidRange(f"seed must fit in 64 unsigned bits, got {self.seed}")


@dataclass(frozen=True)
class GuidanceConfig:
    mode: ManipulationMode = ManipulationMode.ADDITION
    w1: float = 1.0
    w2: float = 0.25
    scheduler: SchedulerKind = SchedulerKind.COSINE
    cfg_scale: float = 7.5
    rule: GuidanceRule = GuidanceRule.PROJECTION

    def __post_init__(self):
        object.__setattr__(self, "mode", ManipulationMode(self.mode))
        object.__setattr__(self, "scheduler", SchedulerKind(self.scheduler))
        object.__setattr__(self, "rule", GuidanceRule(self.rule))
        if not (np.isfinite(self.w1) and np.isfinite(self.w2)) or self.w2 < 0:
            raise InvalidRange("w1 must be finite and w2 finite and >= 0")
        if not self.cfg_scale > 0:
            raise InvalidRange(f"cfg_scale must be > 0, got {self.cfg_scale}")

    def weight_at(self, t: int, T: int) -> float:
        return evaluate_weight(SchedulerSpec(self.scheduler, self.w2, T), t)


def _predict(denoiser, x, t, c):
    out = np.asarray(denoiser.predict(x, t, c), dtype=float)
    if out.shape != x.shape:
        raise DimensionMismatch(f"denoiser returned shape {out.shape} for input {x.shape}")
    if not np.all(np.isfinite(out)):
        raise DenoiserFailure(f"non-finite prediction at t={t}, condition={c!r}")
    return out


def guided_epsilon(x, t: int, src, tgt, denoiser: ConditionedDenoiser, guidance: GuidanceConfig, T: int):
    """Three denoiser calls (null, src, tgt) composed into one noise estimate."""
    if src == UNCONDITIONAL or tgt == UNCONDITIONAL:
        raise ValueError("src and tgt must be real conditions")
    x = np.asarray(x, dtype=float)
    deltas = GuidanceDeltas.from_predictions(
        _predict(denoiser, x, t, UNCONDITIONAL),
        _predict(denoiser, x, t, src),
        _predict(denoiser, x, t, tgt),
    )
    if guidance.rule is GuidanceRule.BAYES:
        if guidance.mode is ManipulationMode.ADDITION:
            return geometry.compose_bayes_addition(deltas)
        return geometry.compose_bayes_removal(deltas)
    w2 = guidance.weight_at(t, T)
    return geometry.assemble_guidance(deltas, guidance.mode, guidance.w1, w2, guidance.cfg_scale)


def _reverse_step(x, eps, ab_from, ab_to, method, eta, rng):
    x0 = (x - np.sqrt(1.0 - ab_from) * eps) / np.sqrt(ab_from)
    if method is SamplerMethod.DDPM:
        # posterior q(x_to | x_from, x0); reduces to beta_t (1-ab_{t-1}) / (1-ab_t)
        # for adjacent levels
        beta_eff = 1.0 - ab_from / ab_to
        var = beta_eff * (1.0 - ab_to) / (1.0 - ab_from)
        mean = (np.sqrt(ab_to) * beta_eff / (1.0 - ab_from)) * x0 + (
            np.sqrt(1.0 - beta_eff) * (1.0 - ab_to) / (1.0 - ab_from)
        ) * x
        if var > 0:
            mean = mean + np.sqrt(var) * rng.standard_normal(x.shape)
        return mean
    sigma = eta * np.sqrt((1.0 - ab_to) / (1.0 - ab_from) * (1.0 - ab_from / ab_to))
    out = np.sqrt(ab_to) * x0 + np.sqrt(max(1.0 - ab_to - sigma**2, 0.0)) * eps
    if sigma > 0:
        out = out + sigma * rng.standard_normal(x.shape)
    return out


def _block_rng(seed: int, block: int):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("GTF_THREADS")
    return max(1, int(env)) if env else 1


def sample(
    denoiser: ConditionedDenoiser,
    sched: NoiseSchedule,
    sampler_cfg: SamplerConfig,
    guidance_cfg: GuidanceConfig,
    src,
    tgt,
    n: int,
    d: int | None = None,
    x_init=None,
    workers: int | None = None,
):
    """Run ``n`` guided reverse chains and return the final states as ``(n, d)``.

    Initial states are drawn from N(0, I) unless ``x_init`` is given.  The output
    is a pure function of the seed and configs; ``GTF_THREADS`` (or ``workers``)
    only changes how many chain blocks run at once.
    """
    if n < 1:
        raise InvalidRange(f"n must be >= 1, got {n}")
    if x_init is None and d is None:
        d = getattr(denoiser, "dim", None)
        if d is None:
            raise ValueError("dimension unknown; pass d or x_init")
    if x_init is not None:
        x_init = np.asarray(x_init, dtype=float)
        if x_init.shape[0] != n:
            raise DimensionMismatch("x_init must have n rows")
        d = x_init.shape[1]
    T = sched.T
    if sampler_cfg.steps > T:
        raise InvalidRange(f"steps {sampler_cfg.steps} > T {T}")
    levels = np.concatenate([[T], select_timesteps(T, sampler_cfg.steps)])

    def run_block(b):
        lo, hi = b * CHAIN_BLOCK, min(n, (b + 1) * CHAIN_BLOCK)
        rng = _block_rng(sampler_cfg.seed, b)
        x = rng.standard_normal((hi - lo, d)) if x_init is None else x_init[lo:hi].copy()
        for t_from, t_to in zip(levels[:-1], levels[1:]):
            t_from = int(t_from)
            eps = guided_epsilon(x, t_from, src, tgt, denoiser, guidance_cfg, T)
            x = _reverse_step(
                x, eps, sched.alpha_bar[t_from], sched.alpha_bar[t_to],
                sampler_cfg.method, sampler_cfg.ddim_eta, rng,
            )
        return x

    n_blocks = -(-n // CHAIN_BLOCK)
    n_workers = min(_worker_count(workers), n_blocks)
    if n_workers == 1:
        blocks = [run_block(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            blocks = list(pool.map(run_block, range(n_blocks)))
    return np.concatenate(blocks, axis=0)
