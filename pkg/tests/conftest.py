import numpy as np
import pytest
from hypothesis import settings

from tdpaf.cohort import Cohort

# fixed example sequence so that repeated runs are comparable
settings.register_profile("repeatable", derandomize=True)
settings.load_profile("repeatable")


def make_cohort(rows, covariates=None, tau=None):
    """Build a cohort from ``(infection_time or None, exit_time, "death"|"discharge"[, censored])``."""
    ids = [str(i + 1) for i in range(len(rows))]
    inf = [np.nan if r[0] is None else r[0] for r in rows]
    ext = [r[1] for r in rows]
    death = [r[2] == "death" for r in rows]
    cens = [bool(r[3]) if len(r) > 3 else False for r in rows]
    return Cohort(ids, inf, ext, death, cens, covariates, tau=tau)


@pytest.fixture
def toy4():
    # exposed: 1 died, 1 survived; unexposed: 1 died, 1 survived
    return make_cohort([(2.0, 5.0, "death"), (1.0, 7.0, "discharge"),
                        (None, 3.0, "death"), (None, 4.0, "discharge")])


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one summary line per acceptance criterion."""
    def report(number, title, passed, detail):
        ACCEPTANCE_LINES.append(
            (number, f"[{'PASS' if passed else 'FAIL'}] criterion {number} {title}: {detail}"))
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
