"""
Module for reading and writing labeled dataset files

Format: a header line `N d C`, then one comma-separated row per sample:
`id, d floats, true_label, noisy_label`. Floats are written with 17 significant
digits so a write/read round trip is exact.
"""
import logging
import os

import numpy as np
import pandas as pd

from idn_sample_selector.noise.datasets import LabeledDataset
from idn_sample_selector.utils.errors import ConfigError

logger = logging.getLogger(__name__)


class DatasetFile:
    """Reader/writer for the plain-text dataset format"""

    def __init__(self, path):
        """
        Args:
            path: Path to the dataset file
        """
        self.path = path

    def write(self, dataset):
        """
        Write a dataset

        Returns:
            The path written
        """
        directory = os.path.dirname(self.path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        columns = {"id": dataset.ids}
        for j in range(dataset.dim):
            columns[f"f{j}"] = dataset.features[:, j]
        columns["true_label"] = dataset.true_labels
        columns["noisy_label"] = dataset.noisy_labels
        frame = pd.DataFrame(columns)
        with open(self.path, "w", newline="") as f:
            f.write(f"{len(dataset)} {dataset.dim} {dataset.class_count}\n")
            frame.to_csv(f, header=False, index=False, float_format="%.17g", lineterminator="\n")
        logger.debug("wrote %d samples to %s", len(dataset), self.path)
        return self.path

    def read(self):
        """
        Read a dataset

        Returns:
            LabeledDataset (without generating centers)

        Raises:
            ConfigError: if the file is missing or malformed
        """
        if not os.path.exists(self.path):
            raise ConfigError(f"dataset file not found: {self.path}", field="data")
        with open(self.path) as f:
            header = f.readline().split()
        try:
            n, dim, class_count = (int(v) for v in header)
        except ValueError:
            raise ConfigError(f"bad header {header!r} in {self.path}; expected 'N d C'", field="data")

        frame = pd.read_csv(self.path, skiprows=1, header=None, float_precision="round_trip")
        if frame.shape != (n, dim + 3):
            raise ConfigError(
                f"{self.path}: expected {n} rows x {dim + 3} columns, found {frame.shape[0]} x {frame.shape[1]}",
                field="data",
            )
        values = frame.to_numpy()
        return LabeledDataset(
            features=frame.iloc[:, 1:dim + 1].to_numpy(dtype=np.float64),
            true_labels=values[:, dim + 1].astype(np.int64),
            noisy_labels=values[:, dim + 2].astype(np.int64),
            ids=values[:, 0].astype(np.int64),
            class_count=class_count,
        )
