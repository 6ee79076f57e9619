"""Verification oracles.

Three families of checks, all runnable from the CLI and reused by the test
suite:

* central-difference gradient checks of the autodiff path;
* recurrence vs. convolution equivalence: for time-invariant parameters the
  scan must match a deliberately naive O(L^2) causal convolution built from
  the kernel (C B_bar, C A_bar B_bar, ...), to 1e-10;
* structural audits of the scan planner: exact partition round trips,
  traversal bijections, recurrence-step counts, and the closed-form offset
  enumeration (whose fourth index collides with the first - pinned here).

Oracles never reuse the code path they check.  All randomness is drawn from
explicitly seeded generators and every failure message names the seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ops, scan, ssm
from .tensor import Tensor, get_dtype


# -- independent oracles --------------------------------------------------------

def causal_conv_oracle(x: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """Direct O(L^2) causal convolution: y[t, d] = sum_k kern[d, k] x[t-k, d]."""
    L, D = x.shape
    y = np.zeros((L, D), dtype=x.dtype)
    for t in range(L):
        for k in range(t + 1):
            y[t] += kern[:, k] * x[t - k]
    return y


# -- gradient checking ----------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    checked: int

    def passed(self, threshold: float) -> bool:
        return self.max_rel_err < threshold


@dataclass
class GradCheckReport:
    step: float
    threshold: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed(self.threshold) for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def summary(self) -> str:
        lines = []
        for e in self.entries:
            mark = "ok" if e.passed(self.threshold) else "FAIL"
            lines.append(f"  {e.name}: max rel err {e.max_rel_err:.3e} "
                         f"over {e.checked} scalars [{mark}]")
        return "\n".join(lines)


def gradcheck(f, inputs: dict[str, Tensor], *, step: float = 1e-4,
              threshold: float = 1e-4, noise_floor: float = 1e-9) -> GradCheckReport:
    """Compare analytic gradients of scalar-valued f against central differences.

    f must rebuild its graph on every call (it is re-evaluated 2 per scalar).
    Relative error is |a - n| / max(|a|, |n|, 1e-12); elements where both
    sides are below noise_floor already agree to finite-difference noise and
    are counted as exact, since the ratio is meaningless at that scale.
    """
    if get_dtype() != np.float64:
        raise RuntimeError("gradcheck requires 64-bit precision")
    for t in inputs.values():
        t.zero_grad()
    loss = f()
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in inputs.items()}

    report = GradCheckReport(step=step, threshold=threshold)
    for name, t in inputs.items():
        flat = t.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f().item()
            flat[i] = orig - step
            f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            m = max(abs(a), abs(numeric))
            rel = 0.0 if m <= noise_floor else abs(a - numeric) / max(m, 1e-12)
            worst = max(worst, rel)
        report.entries.append(GradCheckEntry(name, worst, flat.size))
    return report


# -- suite --------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(fn):
    t0 = time.perf_counter()
    name, passed, detail = fn()
    return CheckResult(name, passed, detail, time.perf_counter() - t0)


def random_time_invariant(rng: np.random.Generator, d: int, n: int, length: int):
    """A stable random time-invariant instance built through discretize."""
    a = -rng.uniform(0.1, 3.0, size=(d, n))
    delta = rng.uniform(0.01, 1.0, size=(d, 1))
    b = rng.uniform(-1.0, 1.0, size=(1, n))
    c = rng.uniform(-1.0, 1.0, size=n)
    a_bar, b_bar = ssm.discretize(a, np.broadcast_to(b, (d, n)), delta)
    L = length
    return ssm.DiscreteParams(
        np.tile(a_bar, (L, 1, 1)), np.tile(b_bar, (L, 1, 1)), np.tile(c, (L, 1)))


def check_scan_conv_equivalence(seeds=range(5), per_seed: int = 20,
                                tol: float = 1e-10):
    def run():
        worst, cases = 0.0, 0
        for seed in seeds:
            rng = np.random.default_rng(seed)
            for _ in range(per_seed):
                d = int(rng.integers(1, 5))
                n = int(rng.integers(1, 5))
                L = int(rng.integers(1, 33))
                dp = random_time_invariant(rng, d, n, L)
                x = rng.standard_normal((L, d)).astype(get_dtype())
                y_scan = ssm.selective_scan(x, dp).data
                kern = ssm.conv_kernel_form(dp)
                y_conv = causal_conv_oracle(x, kern)
                err = float(np.abs(y_scan - y_conv).max())
                if err > worst:
                    worst = err
                cases += 1
                if err > tol:
                    return ("scan/conv equivalence", False,
                            f"error {err:.3e} > {tol} at seed {seed}")
        return ("scan/conv equivalence", True,
                f"{cases} instances, max error {worst:.3e} <= {tol}")
    return _timed(run)


def check_partition_roundtrip(seed: int = 0, channels: int = 2):
    def run():
        rng = np.random.default_rng(seed)
        cases = 0
        for h in range(3, 10):
            for w in range(3, 10):
                for p in range(1, 4):
                    plan = scan.build_plan(h, w, p)
                    cover = np.sort(np.concatenate(
                        [g.traversal for g in plan.groups]))
                    if not np.array_equal(cover, np.arange(h * w)):
                        return ("partition round trip", False,
                                f"traversals not a bijection at "
                                f"H={h} W={w} p={p} seed {seed}")
                    x = Tensor(rng.standard_normal((channels, h, w)))
                    back = scan.gather(scan.scatter(x, plan), plan)
                    if not np.array_equal(back.data, x.data):
                        return ("partition round trip", False,
                                f"gather(scatter(x)) != x at H={h} W={w} p={p} "
                                f"seed {seed}")
                    cases += 1
        return ("partition round trip", True,
                f"{cases} grids exact, traversal bijection verified")
    return _timed(run)


def check_step_economy(seed: int = 0):
    def run():
        rng = np.random.default_rng(seed)
        for h, w, p in [(56, 56, 2), (8, 8, 2), (7, 5, 3), (9, 9, 1)]:
            params = ssm.init_ssm_params(2, 2, rng)
            x = Tensor(rng.standard_normal((2, h, w)))
            with ssm.count_steps() as c:
                scan.es2d(x, params, scan.build_plan(h, w, p))
            if c.total != h * w:
                return ("scan step economy", False,
                        f"es2d took {c.total} steps, expected {h * w} "
                        f"at H={h} W={w} p={p}")
            with ssm.count_steps() as c:
                scan.ss2d(x, params)
            if c.total != 4 * h * w:
                return ("scan step economy", False,
                        f"ss2d took {c.total} steps, expected {4 * h * w}")
        return ("scan step economy", True,
                "es2d = H*W and ss2d = 4*H*W recurrence steps on all probes")
    return _timed(run)


def check_offset_formula():
    def run():
        literal = [scan.offset_formula(i) for i in (1, 2, 3, 4)]
        expected = [(0, 0), (0, 1), (1, 0), (0, 0)]
        if literal != expected:
            return ("offset enumeration", False,
                    f"closed form gave {literal}, pinned values are {expected}")
        prod = scan.enumerate_offsets(2)
        if sorted(prod) != [(0, 0), (0, 1), (1, 0), (1, 1)] or len(set(prod)) != 4:
            return ("offset enumeration", False,
                    f"production enumeration not distinct: {prod}")
        return ("offset enumeration", True,
                "closed form collides at i=4 as pinned; production offsets distinct")
    return _timed(run)


def _weighted_sum(y: Tensor, rng: np.random.Generator) -> Tensor:
    w = Tensor(rng.standard_normal(y.shape))
    return ops.sum_(ops.mul(y, w))


def check_gradients(seed: int = 0, threshold: float = 1e-4):
    """Gradient checks for the scan pipeline, SE gate and both block kinds."""
    from .blocks import EvssBlock, InvertedResidual
    from .layers import SEGate

    def run():
        rng = np.random.default_rng(seed)
        reports: list[tuple[str, GradCheckReport]] = []

        params = ssm.init_ssm_params(3, 4, rng)
        x = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
        wrng = np.random.default_rng(seed + 100)
        w = Tensor(wrng.standard_normal((6, 3)))
        inputs = {"x": x, **params.tensors()}
        reports.append(("selective_scan", gradcheck(
            lambda: ops.sum_(ops.mul(ssm.apply_ssm(x, params), w)),
            inputs, threshold=threshold)))

        se = SEGate(6, 4, rng)
        xs = Tensor(rng.standard_normal((6, 5, 5)), requires_grad=True)
        ws = Tensor(wrng.standard_normal((6, 5, 5)))
        inputs = {"x": xs, **dict(se.parameters())}
        reports.append(("se_gate", gradcheck(
            lambda: ops.sum_(ops.mul(se(xs), ws)),
            inputs, threshold=threshold)))

        evss = EvssBlock(4, rng, state_dim=4, period=2)
        xe = Tensor(rng.standard_normal((4, 8, 8)), requires_grad=True)
        we = Tensor(wrng.standard_normal((4, 8, 8)))
        inputs = {"x": xe, **dict(evss.parameters())}
        reports.append(("evss_block", gradcheck(
            lambda: ops.sum_(ops.mul(evss(xe), we)),
            inputs, threshold=threshold)))

        inres = InvertedResidual(4, 4, rng, stride=1)
        xi = Tensor(rng.standard_normal((4, 6, 6)), requires_grad=True)
        wi = Tensor(wrng.standard_normal((4, 6, 6)))
        inputs = {"x": xi, **dict(inres.parameters())}
        reports.append(("inres_block", gradcheck(
            lambda: ops.sum_(ops.mul(inres(xi), wi)),
            inputs, threshold=threshold)))

        worst = max(r.max_rel_err for _, r in reports)
        bad = [n for n, r in reports if not r.passed]
        if bad:
            details = "; ".join(
                f"{n}: {r.max_rel_err:.3e}" for n, r in reports if not r.passed)
            return ("gradient checks", False,
                    f"fail at seed {seed}: {details} (threshold {threshold})")
        return ("gradient checks", True,
                f"scan/se/evss/inres max rel err {worst:.3e} < {threshold}")
    return _timed(run)


def run_suite(seed: int = 0, include_gradchecks: bool = True) -> list[CheckResult]:
    results = [
        check_offset_formula(),
        check_partition_roundtrip(seed=seed),
        check_scan_conv_equivalence(seeds=range(seed, seed + 5)),
        check_step_economy(seed=seed),
    ]
    if include_gradchecks:
        results.append(check_gradients(seed=seed))
    return results
