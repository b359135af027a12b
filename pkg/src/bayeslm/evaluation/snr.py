"""Signal-to-noise ratio |mu| / sigma of variational weight posteriors."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..bayes import variational_sources


@dataclass
class SnrReport:
    per_position: dict = field(default_factory=dict)  # label -> flat array of |mu|/sigma
    medians: dict = field(default_factory=dict)
    overall_median: float = float("nan")

    def rows(self):
        out = [(k, v.size, self.medians[k]) for k, v in self.per_position.items()]
        total = sum(v.size for v in self.per_position.values())
        out.append(("overall", total, self.overall_median))
        return out


def snr_values(mu, sigma):
    return np.abs(np.asarray(mu)) / np.asarray(sigma)


def snr_report(model):
    """Per-position and overall medians of ``|mu_i| / sigma_i``."""
    sources = variational_sources(model)
    if not sources:
        raise ValueError("model has no variational weights")
    report = SnrReport()
    for label, gv in sources.items():
        vals = snr_values(gv.mean, gv.sigma).reshape(-1)
        report.per_position[label] = vals
        report.medians[label] = float(np.median(vals))
    report.overall_median = float(np.median(np.concatenate(list(report.per_position.values()))))
    return report


def write_snr_table(report, path):
    lines = ["position\tcount\tmedian_snr"]
    lines += [f"{label}\t{n}\t{med!r}" for label, n, med in report.rows()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
