import io
from importlib import resources
from pathlib import Path

import pytest

from tcfriction.config import PipelineConfig
from tcfriction.ingest import RoleGroup, TaskOccupationRow, WeightSource, task_key
from tcfriction.aggregate import ScoredRow
from tcfriction.schema import CategoryCode

FIXTURES = Path(resources.files("tcfriction") / "fixtures")
FROZEN = Path(__file__).parent / "fixtures" / "frozen"

STATEMENTS_HEADER = "O*NET-SOC Code\tTitle\tTask ID\tTask\tTask Type\tIncumbents Responding\tDate\tDomain Source\n"
RATINGS_HEADER = ("O*NET-SOC Code\tTitle\tTask ID\tTask\tScale ID\tScale Name\tCategory\tData Value\tN"
                  "\tStandard Error\tLower CI Bound\tUpper CI Bound\tRecommend Suppress\tDate\tDomain Source\n")


def statements_file(*lines):
    return io.StringIO(STATEMENTS_HEADER + "".join(line + "\n" for line in lines))


def ratings_file(*lines):
    return io.StringIO(RATINGS_HEADER + "".join(line + "\n" for line in lines))


def stmt(soc, tid, text, title="Some Title", ttype="Core"):
    return "\t".join([soc, title, str(tid), text, ttype, "20", "08/2023", "Incumbent"])


def rating(soc, tid, scale, category, value):
    return "\t".join([soc, "Some Title", str(tid), "task", scale, "scale", category, value,
                      "20", "1", "1", "2", "N", "08/2023", "Incumbent"])


def table_row(soc, tid, text, weight=1.0, group=RoleGroup.CLINICIAN, title="Occupation"):
    return TaskOccupationRow(soc, title, tid, text, task_key(text), weight, group,
                             WeightSource.FT_EXPECTED)


def scored_row(weight, intensity, category=CategoryCode.SEARCH_INFO, soc="29-1141.00",
               group=RoleGroup.CLINICIAN, tid=1):
    text = f"task {tid}"
    return ScoredRow(soc, "Occupation", tid, text, task_key(text), weight, group,
                     "FT_expected", category, intensity)


@pytest.fixture
def bundled_config(tmp_path):
    return PipelineConfig(
        statements_path=FIXTURES / "task_statements.txt",
        ratings_path=FIXTURES / "task_ratings.txt",
        work_dir=tmp_path / "work",
        output_dir=tmp_path / "pack",
        backend="mock",
    )


# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
