from __future__ import annotations

from datetime import datetime, timedelta

import pytest

from insightminer.tabular import Column, ColumnKind, Dataset


@pytest.fixture
def exam_table() -> Dataset:
    """Four-row student exams table used across the suite."""
    return Dataset(
        columns=(
            Column("Student", ColumnKind.CATEGORICAL, ("S1", "S2", "S3", "S4")),
            Column(
                "Exam Date",
                ColumnKind.DATETIME,
                (
                    datetime(2020, 9, 1),
                    datetime(2019, 8, 15),
                    datetime(2021, 1, 10),
                    datetime(2018, 5, 20),
                ),
            ),
            Column("Score", ColumnKind.NUMERICAL, (88.0, 92.0, 75.0, 85.0)),
            Column(
                "Course Duration",
                ColumnKind.TIMEDELTA,
                (
                    timedelta(days=365),
                    timedelta(days=90),
                    timedelta(days=180),
                    timedelta(days=365),
                ),
            ),
        ),
        lineage=("load(exams)",),
    )
