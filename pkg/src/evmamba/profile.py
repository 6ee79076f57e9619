"""Analytic cost profiler.

Walks the model tree and counts parameters, multiply-accumulates and
recurrence steps per module without running a forward pass.  MACs are
counted for convolutions, linear maps and scans; one MAC is reported as one
FLOP, the convention the reference budgets use.  Parameter totals equal the
number of scalars the checkpoint writer enumerates.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import Model

# published design budgets the shipped variants target
PARAM_BUDGET = {"tiny": 6.0e6, "small": 11.0e6, "base": 33.0e6}
FLOP_BUDGET = {"tiny": 0.8e9, "small": 1.3e9, "base": 4.0e9}


@dataclass(frozen=True)
class ProfileEntry:
    name: str
    params: int
    macs: int
    scan_steps: int


@dataclass
class ProfileReport:
    input_hw: tuple[int, int]
    entries: list[ProfileEntry]

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_macs(self) -> int:
        return sum(e.macs for e in self.entries)

    @property
    def total_scan_steps(self) -> int:
        return sum(e.scan_steps for e in self.entries)

    def grouped(self) -> list[ProfileEntry]:
        """Subtotals by top-level module (stem, down*, stage*, norm, head)."""
        order: list[str] = []
        acc: dict[str, list[int]] = {}
        for e in self.entries:
            key = e.name.split(".", 1)[0]
            if key not in acc:
                acc[key] = [0, 0, 0]
                order.append(key)
            acc[key][0] += e.params
            acc[key][1] += e.macs
            acc[key][2] += e.scan_steps
        return [ProfileEntry(k, *acc[k]) for k in order]

    def table(self, detailed: bool = False) -> str:
        rows = self.entries if detailed else self.grouped()
        lines = ["module,params,macs,scan_steps"]
        for e in rows:
            lines.append(f"{e.name},{e.params},{e.macs},{e.scan_steps}")
        lines.append(f"total,{self.total_params},{self.total_macs},{self.total_scan_steps}")
        return "\n".join(lines)


def profile_model(model: Model, h: int = 224, w: int = 224) -> ProfileReport:
    entries, _, _ = model.profile(h, w)
    report = ProfileReport((h, w), [ProfileEntry(*e) for e in entries])
    counted = model.param_count()
    if report.total_params != counted:
        raise RuntimeError(f"profiler counted {report.total_params} params but "
                           f"the model enumerates {counted}")
    return report


def budget_lines(model: Model, report: ProfileReport) -> list[str]:
    """Deviation of the profiled totals from the variant's design budget."""
    name = model.spec.name
    if name not in PARAM_BUDGET:
        return [f"no reference budget for variant {name!r}"]
    pb, fb = PARAM_BUDGET[name], FLOP_BUDGET[name]
    pdev = 100.0 * (report.total_params - pb) / pb
    fdev = 100.0 * (report.total_macs - fb) / fb
    return [
        f"params: {report.total_params / 1e6:.3f}M vs budget {pb / 1e6:.1f}M "
        f"({pdev:+.1f}%)",
        f"flops:  {report.total_macs / 1e9:.3f}G vs budget {fb / 1e9:.1f}G "
        f"({fdev:+.1f}%)",
    ]


def budget_deviations(model: Model, h: int = 224, w: int = 224):
    """(param_deviation, flop_deviation) as fractions of the budgets."""
    report = profile_model(model, h, w)
    name = model.spec.name
    if name not in PARAM_BUDGET:
        raise ValueError(f"no reference budget for variant {name!r}")
    return (report.total_params / PARAM_BUDGET[name] - 1.0,
            report.total_macs / FLOP_BUDGET[name] - 1.0)
