"""Explicit deviation bounds for the feature basis and run certificates.

For ``eta`` in (0, 1/2), ``d1 = d - 2`` and ``d2 = d - 1``::

    iota1(a)   = sqrt(2/pi) (a + 1/a) exp(-a^2/2)
    iota2(a)   = sqrt(2/pi) (a^3 + 3a + 3/a) exp(-a^2/2)
    xi1(x)     = 1   - (1 - iota1(x^eta))^2 (1 - 2 e^{-x^{2eta}/8}) (x + 2) / (x + x^{1/2+eta} + 2 x^{2eta})
    xi2(x)     = 3/2 - (3 - iota2(x^eta))/2 (1 - 2 e^{-x^{2eta}/8}) (x + 1) / (x + x^{1/2+eta} + x^{2eta})
    xibar1(x)  = (1 + 2/x)(1 + 1/(x^{1/2-eta} - 1)) + 2 (x + 2) e^{-x^{2eta}/8} - 1
    xibar2(x)  = 3/2 (1 + 1/x)(1 + 1/(x^{1/2-eta} - 1)) + 2 (x + 1) e^{-x^{2eta}/8} - 3/2
    xi(d)      = max(xi1(d1), xi2(d2), xibar1(d1), xibar2(d2))

With ``strict=True`` the last term of the max is ``xibar1(d2)`` instead,
reproducing the literal published definition (which names xibar1 twice
and never uses xibar2).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import ORACLE, GaussianStream
from .exceptions import DomainError, RunMismatchError
from .decomposition import GAMMA, PAIR, ROW, V0, FeatureBasis, GramReport, basis_geometry, build_basis
from .spectrum import predicted_levels
from .validation import check_positive_int, check_positive_real, check_seed
from .weights import generate_weights

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
FLOOR_CONSTANT = (3.0 + math.pi) / (2.0 * math.pi)


def iota(a: float) -> tuple[float, float]:
    a = check_positive_real(a, "a")
    g = _SQRT_2_OVER_PI * math.exp(-0.5 * a * a)
    return (a + 1.0 / a) * g, (a**3 + 3.0 * a + 3.0 / a) * g


def _check_eta(eta: float) -> float:
    eta = float(eta)
    if not 0.0 < eta < 0.5:
        raise DomainError(f"eta must lie in (0, 1/2), got {eta}")
    return eta


def _one_minus_product(factors) -> float:
    """1 - prod(factors); via expm1 of summed logs when all factors are positive,
    which keeps the digits lost to cancellation when the product is near 1."""
    if all(f > 0 for f in factors):
        return -math.expm1(math.fsum(math.log(f) for f in factors))
    return 1.0 - math.prod(factors)


def xi1(x: float, eta: float) -> float:
    i1, _ = iota(x**eta)
    tail = 2.0 * math.exp(-(x ** (2 * eta)) / 8.0)
    return _one_minus_product([
        (1.0 - i1) ** 2,
        1.0 - tail,
        (x + 2.0) / (x + x ** (0.5 + eta) + 2.0 * x ** (2 * eta)),
    ])


def xi2(x: float, eta: float) -> float:
    _, i2 = iota(x**eta)
    tail = 2.0 * math.exp(-(x ** (2 * eta)) / 8.0)
    return 1.5 * _one_minus_product([
        1.0 - i2 / 3.0,
        1.0 - tail,
        (x + 1.0) / (x + x ** (0.5 + eta) + x ** (2 * eta)),
    ])


def xibar1(x: float, eta: float) -> float:
    inv_kappa_minus_one = 1.0 / (x ** (0.5 - eta) - 1.0)
    # (1 + 2/x)(1 + k) - 1 = 2/x + k + 2k/x
    head = 2.0 / x + inv_kappa_minus_one + 2.0 * inv_kappa_minus_one / x
    return head + 2.0 * (x + 2.0) * math.exp(-(x ** (2 * eta)) / 8.0)


def xibar2(x: float, eta: float) -> float:
    k = 1.0 / (x ** (0.5 - eta) - 1.0)
    head = 1.5 * (1.0 / x + k + k / x)
    return head + 2.0 * (x + 1.0) * math.exp(-(x ** (2 * eta)) / 8.0)


@dataclass(frozen=True)
class XiMachinery:
    d: int
    eta: float
    d1: int
    d2: int
    iota1: float  # iota1(d1^eta)
    iota2: float  # iota2(d2^eta)
    xi1: float
    xi2: float
    xibar1: float
    xibar2: float
    xi: float
    strict: bool = False

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def xi_of_d(d: int, eta: float = 0.25, strict: bool = False) -> XiMachinery:
    d = check_positive_int(d, "d")
    if d <= 4:
        raise DomainError(f"d > 4 required for the deviation bounds, got d={d}")
    eta = _check_eta(eta)
    d1, d2 = d - 2, d - 1
    values = {
        "xi1": xi1(d1, eta),
        "xi2": xi2(d2, eta),
        "xibar1": xibar1(d1, eta),
        "xibar2": xibar2(d2, eta),
    }
    last = xibar1(d2, eta) if strict else values["xibar2"]
    xi = max(values["xi1"], values["xi2"], values["xibar1"], last)
    return XiMachinery(
        d=d, eta=eta, d1=d1, d2=d2,
        iota1=iota(d1**eta)[0], iota2=iota(d2**eta)[1],
        xi=xi, strict=strict, **values,
    )


def pair_count(d: int) -> int:
    """D = (d+1)(d+2)(d^2+3d+4)/8, the number of unordered pairs (with repeats) in V."""
    num = (d + 1) * (d + 2) * (d * d + 3 * d + 4)
    assert num % 8 == 0
    return num // 8


def probability_floor(d: int, p: int, delta: float, C: float = 1.0) -> float:
    """1 - C D / (delta^2 p), clipped at 0 (a clipped value means the bound is vacuous)."""
    d = check_positive_int(d, "d")
    if d <= 4:
        raise DomainError(f"d > 4 required, got d={d}")
    p = check_positive_int(p, "p")
    delta = check_positive_real(delta, "delta")
    C = check_positive_real(C, "C")
    return max(0.0, 1.0 - C * pair_count(d) / (delta * delta * p))


# -- run certificates -----------------------------------------------------------------


def observed_delta(report: GramReport, xi: XiMachinery) -> float:
    """The smallest delta for which every deviation inequality on V holds."""
    d = report.d
    parts = [
        report.family_norm_dev(V0),
        report.family_norm_dev(ROW),
        report.family_norm_dev(PAIR) - xi.xi,
        report.family_norm_dev(GAMMA) - xi.xi,
        report.cross_dev,
        report.gamma_dev - xi.xi / (d - 1),
    ]
    return float(max(0.0, *(np.max(x, initial=0.0) for x in parts)))


@dataclass(frozen=True)
class Check:
    claim: str
    lhs: float
    rhs: float
    relation: str  # "<=" or ">="

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs if self.relation == "<=" else self.lhs >= self.rhs

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs if self.relation == "<=" else self.lhs - self.rhs

    def as_dict(self) -> dict:
        return {"claim": self.claim, "lhs": self.lhs, "rhs": self.rhs, "relation": self.relation,
                "margin": self.margin, "pass": self.passed}


@dataclass(frozen=True, eq=False)
class CertificateReport:
    d: int
    p: int
    seed: int | None
    delta: float
    delta_star: float
    D: int
    C: float
    prob_floor: float
    xi: XiMachinery
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def as_dict(self) -> dict:
        return {
            "d": self.d, "p": self.p, "seed": self.seed,
            "delta": self.delta, "delta_star": self.delta_star,
            "D": self.D, "C": self.C, "prob_floor": self.prob_floor,
            "prob_floor_vacuous": self.prob_floor <= 0.0,
            "xi": self.xi.as_dict(),
            "passed": self.passed,
            "checks": [c.as_dict() for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)


SWEEP_COLUMNS = ["d", "p", "seed", "delta_star", "xi", "prob_floor", "passed", "total"]


def sweep_csv(reports) -> str:
    """One summary row per certificate: d, p, seed, delta*, xi(d), floor, pass count."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in reports:
        w.writerow([r.d, r.p, "" if r.seed is None else r.seed, repr(r.delta_star), repr(r.xi.xi),
                    repr(r.prob_floor), sum(c.passed for c in r.checks), len(r.checks)])
    return buf.getvalue()


def _run_id(obj):
    return obj.run_id() if hasattr(obj, "run_id") else None


def floor_sum(d: int) -> float:
    """Sum of the quotient floors over V at delta = xi = 0."""
    top, row, quad = predicted_levels(d)
    return top + row * d + quad * (d * (d - 1) / 2 + d - 1)


def certify_run(J, basis: FeatureBasis, geom_report: GramReport, quotients, xi: XiMachinery,
                delta: float, C: float = 1.0) -> CertificateReport:
    """Evaluate the trace bound, the quotient floors and the deviation bounds at ``delta``."""
    ids = {i for i in (_run_id(J), basis.run_id(), geom_report.run_id()) if i is not None}
    if len(ids) > 1:
        raise RunMismatchError(f"inputs come from different runs: {sorted(map(str, ids))}")
    if J.shape[0] != basis.p:
        raise RunMismatchError("J and basis have different p")
    d, p = basis.d, basis.p
    if xi.d != d:
        raise RunMismatchError(f"xi machinery is for d={xi.d}, basis has d={d}")
    if delta < 0 or not np.isfinite(delta):
        raise DomainError("delta must be a finite non-negative number")
    trace = float(J.trace()) if hasattr(J, "trace") else float(np.trace(J))

    checks = [
        Check("trace_upper", trace, d / 2 * (1 + delta), "<="),
        Check("floor_constant", FLOOR_CONSTANT, 0.977, ">="),
        Check("floor_sum", floor_sum(d), FLOOR_CONSTANT * d / 2, ">="),
        Check("floor_sum_vs_trace", FLOOR_CONSTANT * d / 2 * (1 - delta), trace, "<="),
    ]

    top, row, quad = predicted_levels(d)
    floors = {V0: top * (1 - delta), ROW: row * (1 - delta),
              PAIR: quad * (1 - delta - xi.xi), GAMMA: quad * (1 - delta - xi.xi)}
    for (label, q), fam in zip(quotients, basis.families()):
        checks.append(Check(f"quotient:{label}", float(q), floors[fam], ">="))

    slack = {V0: 0.0, ROW: 0.0, PAIR: xi.xi, GAMMA: xi.xi}
    for fam in (V0, ROW, PAIR, GAMMA):
        devs = geom_report.family_norm_dev(fam)
        if devs.size:
            checks.append(Check(f"norm:{fam}", float(devs.max()), delta + slack[fam], "<="))
    if geom_report.cross_dev.size:
        checks.append(Check("inner:cross", float(geom_report.cross_dev.max()), delta, "<="))
    if geom_report.gamma_dev.size:
        checks.append(Check("inner:gamma", float(geom_report.gamma_dev.max()), delta + xi.xi / (d - 1), "<="))

    floor = probability_floor(d, p, delta, C) if delta > 0 else 0.0
    return CertificateReport(
        d=d, p=p, seed=basis.seed, delta=float(delta),
        delta_star=observed_delta(geom_report, xi),
        D=pair_count(d), C=float(C), prob_floor=floor, xi=xi, checks=checks,
    )


# -- Monte Carlo companions ----------------------------------------------------------


def expected_gram(d: int) -> np.ndarray:
    """Exact E[v . v'] over V in canonical order, for W with i.i.d. Gaussian entries.

    By rotation invariance E[d Z_a^2 Z_b^2/|Z|^2] = d/(d+2) and
    E[d Z_a^4/|Z|^2] = 3d/(d+2), which gives E|v(a,b)|^2 = d/(d+2),
    E|vg|^2 = (d-1)/(d+2) and E[vg . vg'] = -1/(d+2); everything else is
    1 on the diagonal (v0, W_l) or 0.
    """
    n_pairs = d * (d - 1) // 2
    diag = np.concatenate([[1.0], np.ones(d), np.full(n_pairs, d / (d + 2)), np.full(d, (d - 1) / (d + 2))])
    G = np.diag(diag)
    g0 = 1 + d + n_pairs
    block = np.full((d, d), -1.0 / (d + 2))
    np.fill_diagonal(block, (d - 1) / (d + 2))
    G[g0:, g0:] = block
    return G


def moment_spot_check(d: int = 20, samples: int = 1_000_000, eta: float = 0.25, seed: int = 0,
                      batch: int = 1 << 16, n_se: float = 4.0) -> dict:
    """Monte Carlo check of the two normalized Gaussian moments behind xi.

    Estimates E[d Z1^2 Z2^2 / |Z|^2] and E[d Z1^4 / |Z|^2] and tests them against
    [1 - xi1(d-2), 1 + xibar1(d-2)] and [3 - 2 xi2(d-1), 3 + 2 xibar2(d-1)],
    allowing ``n_se`` standard errors past either end.
    """
    d = check_positive_int(d, "d")
    if d <= 4:
        raise DomainError("d > 4 required")
    samples = check_positive_int(samples, "samples")
    seed = check_seed(seed)
    eta = _check_eta(eta)
    stream = GaussianStream(seed, ORACLE, worker=8)
    sums = np.zeros(2)
    sums_sq = np.zeros(2)
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        Z = stream.normal((m, d))
        r2 = np.einsum("ij,ij->i", Z, Z)
        vals = np.stack([d * Z[:, 0] ** 2 * Z[:, 1] ** 2 / r2, d * Z[:, 0] ** 4 / r2])
        sums += vals.sum(axis=1)
        sums_sq += (vals * vals).sum(axis=1)
        done += m
    mean = sums / samples
    se = np.sqrt(np.maximum(sums_sq / samples - mean**2, 0.0) / (samples - 1))
    d1, d2 = d - 2, d - 1
    intervals = [
        (1.0 - xi1(d1, eta), 1.0 + xibar1(d1, eta)),
        (3.0 - 2.0 * xi2(d2, eta), 3.0 + 2.0 * xibar2(d2, eta)),
    ]
    out = {}
    for name, m, s, (lo, hi) in zip(("cross", "fourth"), mean, se, intervals):
        out[name] = {"mean": float(m), "stderr": float(s), "lower": lo, "upper": hi,
                     "pass": bool(lo - n_se * s <= m <= hi + n_se * s)}
    return out


def deviation_from_expectation(report: GramReport) -> float:
    """max |v.v' - E[v.v']| over all pairs of V, including norms."""
    G = expected_gram(report.d)
    return float(np.max(np.abs(report.gram - G)))


def estimate_C(d: int, p: int, seeds, delta: float) -> dict:
    """Fraction of weight draws whose largest deviation from expectation exceeds
    ``delta``, and the constant C that fraction implies through C D/(delta^2 p).
    """
    seeds = list(seeds)
    delta = check_positive_real(delta, "delta")
    devs = np.array([deviation_from_expectation(basis_geometry(build_basis(generate_weights(d, p, s))))
                     for s in seeds])
    frac = float(np.mean(devs > delta))
    return {
        "d": d, "p": p, "delta": delta, "seeds": len(seeds),
        "exceed_fraction": frac,
        "C_estimate": frac * delta * delta * p / pair_count(d),
        "max_deviation": devs.tolist(),
    }
