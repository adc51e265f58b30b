"""Pooled-variance two-sample t-test and summary statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import betainc

P_FLOOR = 2.2e-16


@dataclass(frozen=True)
class TTestResult:
    mean_a: float
    mean_b: float
    sd_a: float
    sd_b: float
    n_a: int
    n_b: int
    t: float
    df: int
    p_two_tailed: float

    def row(self) -> dict:
        """Columns named like a results table: M/SD per group, df, t, p."""
        return {"M_a": self.mean_a, "SD_a": self.sd_a, "M_b": self.mean_b, "SD_b": self.sd_b,
                "df": self.df, "t": self.t, "p": self.p_two_tailed}

    def to_dict(self) -> dict:
        return asdict(self)


def t_sf_two_tailed(t: float, df: int) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom.

    Uses the identity P = I_{df/(df+t^2)}(df/2, 1/2) with the regularized
    incomplete beta function.
    """
    if df <= 0:
        raise ValueError(f"df must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def ttest_from_stats(mean_a, sd_a, n_a, mean_b, sd_b, n_b) -> TTestResult:
    """Student t-test from summary statistics (sample SDs, ddof=1)."""
    if n_a < 2 or n_b < 2:
        raise ValueError(f"each group needs at least 2 samples, got {n_a} and {n_b}")
    df = n_a + n_b - 2
    pooled = ((n_a - 1) * sd_a ** 2 + (n_b - 1) * sd_b ** 2) / df
    diff = mean_a - mean_b
    if pooled == 0.0:
        if diff == 0.0:
            return TTestResult(mean_a, mean_b, sd_a, sd_b, n_a, n_b, 0.0, df, 1.0)
        raise ValueError("zero pooled variance with unequal means; t is undefined")
    t = diff / math.sqrt(pooled * (1.0 / n_a + 1.0 / n_b))
    p = max(t_sf_two_tailed(t, df), P_FLOOR)
    return TTestResult(float(mean_a), float(mean_b), float(sd_a), float(sd_b), n_a, n_b, float(t), df, min(p, 1.0))


def ttest_independent(samples_a, samples_b) -> TTestResult:
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError(f"each group needs at least 2 samples, got {a.size} and {b.size}")
    return ttest_from_stats(a.mean(), a.std(ddof=1), a.size, b.mean(), b.std(ddof=1), b.size)


def summarize(values) -> dict:
    """Mean, sample SD and standard error."""
    v = np.asarray(values, dtype=np.float64)
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return {"n": int(v.size), "mean": float(v.mean()), "sd": sd, "se": sd / math.sqrt(v.size)}


def format_mean_sd(values) -> str:
    s = summarize(values)
    return f"{s['mean']:.3f} ± {s['sd']:.3f}"


def spearman_rho(x, y) -> float:
    from scipy.stats import spearmanr

    rho = spearmanr(x, y).statistic
    return 0.0 if np.isnan(rho) else float(rho)
