import argparse
import json

from datetime import datetime

from sqlalchemy import Column, DateTime, Float, Integer, String, Text, create_engine
from sqlalchemy.ext.declarative import declarative_base
from sqlalchemy.orm import scoped_session, sessionmaker

from stc_slr.report_generator import ReportGenerator


Base = declarative_base()

LOSS_COMPONENTS = ("cl_joint", "con_joint", "cl_motion", "con_motion", "kt", "total")


class TrainingStep(Base):
    __tablename__ = "training_steps"
    id = Column(Integer, primary_key=True)
    run_time = Column(DateTime, default=datetime.now)  # Use local time
    run_name = Column(String)
    phase = Column(String)
    epoch = Column(Integer)
    step = Column(Integer)
    lr = Column(Float)
    cl_joint = Column(Float)
    con_joint = Column(Float)
    cl_motion = Column(Float)
    con_motion = Column(Float)
    kt = Column(Float)
    total = Column(Float)


class EvaluationRecord(Base):
    __tablename__ = "evaluations"
    id = Column(Integer, primary_key=True)
    run_time = Column(DateTime, default=datetime.now)
    run_name = Column(String)
    protocol = Column(String)
    percent = Column(Float)
    seed = Column(Integer)
    pi_top1 = Column(Float)
    pi_top5 = Column(Float)
    pc_top1 = Column(Float)
    pc_top5 = Column(Float)
    payload = Column(Text)


class RunDB:
    def __init__(self, db_connection_string):
        self.engine = create_engine(db_connection_string)
        Base.metadata.create_all(self.engine)
        self.Session = scoped_session(sessionmaker(bind=self.engine))

    def insert_step(self, run_name: str, phase: str, epoch: int, step: int, lr: float, losses: dict):
        """
        Store one optimizer step; missing loss components are stored as NULL.
        """
        with self.Session() as session:
            row = TrainingStep(
                run_time=datetime.now(),
                run_name=run_name,
                phase=phase,
                epoch=epoch,
                step=step,
                lr=lr,
                **{k: (None if losses.get(k) is None else float(losses[k])) for k in LOSS_COMPONENTS},
            )
            session.add(row)
            session.commit()
            return row.id

    def insert_evaluation(self, run_name: str, protocol: str, report: dict, percent: float = 1.0, seed: int = 0):
        """
        Store an evaluation report (as produced by `EvalReport.to_dict()`).
        """
        with self.Session() as session:
            row = EvaluationRecord(
                run_time=datetime.now(),
                run_name=run_name,
                protocol=protocol,
                percent=percent,
                seed=seed,
                pi_top1=report.get("per_instance", {}).get("top1"),
                pi_top5=report.get("per_instance", {}).get("top5"),
                pc_top1=report.get("per_class", {}).get("top1"),
                pc_top5=report.get("per_class", {}).get("top5"),
                payload=json.dumps(report, sort_keys=True),
            )
            session.add(row)
            session.commit()
            return row.id

    def get_steps(self, run_name: str = None):
        with self.Session() as session:
            query = session.query(TrainingStep)
            if run_name is not None:
                query = query.filter_by(run_name=run_name)
            rows = query.order_by(TrainingStep.id).all()

        return [
            {
                "id": r.id,
                "run_name": r.run_name,
                "phase": r.phase,
                "epoch": r.epoch,
                "step": r.step,
                "lr": r.lr,
                **{k: getattr(r, k) for k in LOSS_COMPONENTS},
            }
            for r in rows
        ]

    def get_evaluations(self, run_name: str = None):
        """
        Retrieve evaluation records in insertion order, in the format required by the ReportGenerator.
        """
        with self.Session() as session:
            query = session.query(EvaluationRecord)
            if run_name is not None:
                query = query.filter_by(run_name=run_name)
            rows = query.order_by(EvaluationRecord.id).all()

        return [
            {
                "id": r.id,
                "run_name": r.run_name,
                "protocol": r.protocol,
                "percent": r.percent,
                "seed": r.seed,
                "pi_top1": r.pi_top1,
                "pi_top5": r.pi_top5,
                "pc_top1": r.pc_top1,
                "pc_top5": r.pc_top5,
                "payload": json.loads(r.payload) if r.payload else {},
            }
            for r in rows
        ]

    def dump_to_report(self, report_filepath):
        """
        Generates an HTML report of all evaluations and loss curves and writes it to the given path.
        """
        ReportGenerator.generate_report(self.get_evaluations(), self.get_steps(), report_filepath)


def dump_to_report(path_to_db="stc_runs.db", report_filepath="stc_report.html"):
    run_db = RunDB(f"sqlite:///{path_to_db}")
    run_db.dump_to_report(report_filepath)


def dump_to_report_cli():
    parser = argparse.ArgumentParser(description="Generate an HTML report of logged runs.")
    parser.add_argument(
        "--path-to-db",
        type=str,
        default="stc_runs.db",
        help="Path to the SQLite database file.",
    )
    parser.add_argument(
        "--report-filepath",
        type=str,
        default="stc_report.html",
        help="Path to the HTML report file.",
    )
    args = parser.parse_args()
    dump_to_report(path_to_db=args.path_to_db, report_filepath=args.report_filepath)
