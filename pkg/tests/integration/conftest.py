# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.
import logging
import os

from pytest import fixture

from evalharness import MatrixConfig, format_table, run_ablation_matrix
from randgrasp_config import budget_for

logger = logging.getLogger(__name__)

MATRIX_ROWS = ("full", "no_lstm", "no_auxiliary")


@fixture(scope="session")
def workdir(tmp_path_factory):
    """Working directory for the desk-scale runs.

    Set `RANDGRASP_WORKDIR` to keep datasets and checkpoints between sessions.
    """
    if path := os.getenv("RANDGRASP_WORKDIR"):
        return path
    return tmp_path_factory.mktemp("desk")


@fixture(scope="session")
def desk_matrix(workdir):
    """Full model, the two network ablations and the dataset-size sweep at desk budget.

    Takes on the order of an hour on a workstation CPU.
    """
    result = run_ablation_matrix(MatrixConfig(rows=MATRIX_ROWS), budget_for("desk"), workdir)
    logger.info("desk-scale ablation matrix:\n%s", format_table(result))
    return result
