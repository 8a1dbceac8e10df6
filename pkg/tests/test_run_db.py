import os

import pytest

from stc_slr.run_db import EvaluationRecord, RunDB, dump_to_report, dump_to_report_cli


DB_NAME = "stc_test_runs.db"
DATABASE_URL = f"sqlite:///{DB_NAME}"


@pytest.fixture(scope="class")
def run_db():
    """
    Fixture to set up and tear down the RunDB instance for testing.
    Creates an empty database file before tests and removes it after tests.
    """
    with open(DB_NAME, "w"):
        pass

    db = RunDB(DATABASE_URL)
    yield db

    db.engine.dispose()
    os.remove(DB_NAME)


REPORT = {
    "per_instance": {"top1": 61.25, "top5": 90.0},
    "per_class": {"top1": 58.5, "top5": 88.75},
    "num_samples": 40,
}


@pytest.mark.usefixtures("run_db")
class TestRunDB:
    def test_insert_evaluation(self, run_db):
        record_id = run_db.insert_evaluation("granularity_Hand_seed0", "finetune", REPORT, percent=0.4, seed=3)
        with run_db.Session() as session:
            record = session.query(EvaluationRecord).filter_by(id=record_id).one()

        assert record.protocol == "finetune"
        assert record.percent == 0.4
        assert record.seed == 3
        assert (record.pi_top1, record.pi_top5, record.pc_top1, record.pc_top5) == (61.25, 90.0, 58.5, 88.75)

    def test_get_evaluations_filters_by_run(self, run_db):
        run_db.insert_evaluation("probe_only", "linear_probe", {"per_instance": {"top1": 12.5}})
        rows = run_db.get_evaluations("probe_only")
        assert len(rows) == 1
        assert rows[0]["pi_top5"] is None
        assert rows[0]["payload"] == {"per_instance": {"top1": 12.5}}

    def test_insert_step_keeps_missing_components_null(self, run_db):
        components = {"cl_joint": 8.1, "con_joint": 0.4, "cl_motion": 8.3, "con_motion": 0.5, "kt": None, "total": 8.6}
        run_db.insert_step("pretrain_seed0", "pretrain", 0, 0, 0.01, components)
        run_db.insert_step("pretrain_seed0", "pretrain", 0, 1, 0.01, {**components, "total": 8.2})
        steps = run_db.get_steps("pretrain_seed0")
        assert [s["step"] for s in steps] == [0, 1]
        assert steps[0]["kt"] is None
        assert steps[1]["total"] == 8.2

    def test_dump_to_report(self, run_db, tmp_path):
        report_filepath = tmp_path / "stc_report.html"
        run_db.dump_to_report(str(report_filepath))

        assert os.path.exists(report_filepath)
        with open(report_filepath, "r") as file:
            content = file.read()
        assert "granularity_Hand_seed0" in content
        assert "61.25" in content
        assert "pretrain_seed0" in content

    def test_dump_to_report_cli_custom_args(self, run_db, tmp_path, monkeypatch):
        custom_db_path = str(tmp_path / "cli_runs.db")
        custom_report_filepath = str(tmp_path / "cli_report.html")
        monkeypatch.setattr(
            "sys.argv",
            ["prog", "--path-to-db", custom_db_path, "--report-filepath", custom_report_filepath],
        )
        dump_to_report_cli()
        assert os.path.exists(custom_report_filepath)

    def test_dump_to_report_function(self, run_db, tmp_path):
        report_filepath = tmp_path / "function_report.html"
        dump_to_report(path_to_db=DB_NAME, report_filepath=str(report_filepath))
        assert "probe_only" in report_filepath.read_text()
