"""
Module for writing run reports and partition dumps
"""
import json
import os

import numpy as np
import pandas as pd

EPOCH_COLUMNS = ["epoch", "acc", "auc_s1", "auc_s2", "n_s1", "n_s2", "Lx", "Lu", "Lmin", "Lmax"]
PARTITION_COLUMNS = ["id", "stage", "score", "posterior_clean", "is_clean"]
CONSISTENCY_COLUMNS = ["id", "D", "D_star"]


def partition_path(output_dir, epoch):
    return os.path.join(output_dir, "partitions", f"epoch_{epoch:03d}.csv")


def consistency_path(output_dir, epoch):
    return os.path.join(output_dir, "consistency", f"epoch_{epoch:03d}.csv")


class RunReporter:
    """Class for writing the outputs of a training run into one directory"""

    def __init__(self, output_dir):
        """
        Initialize the run reporter

        Args:
            output_dir: Directory to save the report, CSVs and dumps to
        """
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

    def write_report(self, report):
        """
        Write report.json and epochs.csv for a RunReport

        Both files depend only on the report's contents, so identical runs give
        byte-identical files.

        Args:
            report: RunReport

        Returns:
            Tuple of (json path, csv path)
        """
        json_path = os.path.join(self.output_dir, "report.json")
        with open(json_path, "w") as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

        csv_path = os.path.join(self.output_dir, "epochs.csv")
        frame = pd.DataFrame([record.summary_row() for record in report.epochs], columns=EPOCH_COLUMNS)
        frame.to_csv(csv_path, index=False, float_format="%.17g", lineterminator="\n")
        return json_path, csv_path

    def write_partitions(self, epoch, stage1, stage2, consistency=None):
        """
        Dump both partitions of an epoch, plus the stage-2 discrepancies if given

        Args:
            epoch: Epoch index
            stage1: Stage-1 Partition
            stage2: Stage-2 Partition
            consistency: Optional ConsistencyReport

        Returns:
            Path of the partition dump
        """
        frames = [
            pd.DataFrame({
                "id": p.ids,
                "stage": p.stage,
                "score": p.scores,
                "posterior_clean": p.posterior_clean,
                "is_clean": p.is_clean.astype(np.int64),
            }, columns=PARTITION_COLUMNS)
            for p in (stage1, stage2)
        ]
        path = partition_path(self.output_dir, epoch)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g",
                                                     lineterminator="\n")

        if consistency is not None and consistency.ids.size:
            frame = pd.DataFrame({
                "id": consistency.ids,
                "D": consistency.discrepancy,
                "D_star": consistency.weighted,
            }, columns=CONSISTENCY_COLUMNS)
            cpath = consistency_path(self.output_dir, epoch)
            os.makedirs(os.path.dirname(cpath), exist_ok=True)
            frame.to_csv(cpath, index=False, float_format="%.17g", lineterminator="\n")
        return path

    def write_table(self, name, rows, columns=None):
        """Write a list of dict rows as `<name>.csv` and return the path"""
        path = os.path.join(self.output_dir, f"{name}.csv")
        pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format="%.17g",
                                                   lineterminator="\n")
        return path


def read_partitions(path):
    """
    Read a partition dump back

    Returns:
        Dict stage -> DataFrame with columns id, score, posterior_clean, is_clean
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    return {
        stage: group.drop(columns="stage").reset_index(drop=True)
        for stage, group in frame.groupby("stage", sort=True)
    }
