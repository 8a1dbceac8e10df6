import csv
import os

from typing import Optional

import numpy as np

from stc_slr.custom_logger import CustomLogger
from stc_slr.finetuner import downstream_config, eval_views, extract_features, load_encoders
from stc_slr.pose_data import PoseDataset
from stc_slr.settings.config_schema import Modality, RunConfig


def export_embeddings(
    checkpoint_path: str,
    dataset: PoseDataset,
    out_path: str,
    config: Optional[RunConfig] = None,
    logger: Optional[CustomLogger] = None,
) -> str:
    """
    Write one CSV row per sample: id, label, then f_h + f_tr of every modality in the checkpoint.

    Columns are `id,label,joint_0..joint_{c-1},motion_0..motion_{c-1}`; a modality missing
    from the checkpoint has no columns. Samples without a label get an empty label cell.

    Returns:
        str: `out_path`.
    """
    logger = logger or CustomLogger.get_logger(__name__, generate_log_files=False)
    checkpoint_config, encoders = load_encoders(checkpoint_path)
    config = downstream_config(config, checkpoint_config)
    features = extract_features(encoders, eval_views(dataset, config), config.batch_size)

    modalities = [m for m in (Modality.JOINT, Modality.MOTION) if m in features]
    summed = {m: features[m][0].astype(np.float64) + features[m][1] for m in modalities}
    header = ["id", "label"] + [f"{m.value}_{i}" for m in modalities for i in range(summed[m].shape[1])]

    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row, seq in enumerate(dataset):
            values = [repr(float(v)) for m in modalities for v in summed[m][row]]
            writer.writerow([seq.sample_id, "" if seq.label is None else seq.label] + values)

    logger.info(f"Exported {len(dataset)} embeddings ({', '.join(m.value for m in modalities)}) to {out_path}")
    return out_path


def class_scatter_ratio(features: np.ndarray, labels) -> float:
    """
    Mean distance between class means over the mean distance of samples to their class mean.

    Higher means better separated classes. Needs at least two classes.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("class_scatter_ratio needs at least two classes")
    means = np.stack([features[labels == c].mean(axis=0) for c in classes])
    intra = np.mean(np.linalg.norm(features - means[np.searchsorted(classes, labels)], axis=1))

    pairwise = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
    inter = pairwise[np.triu_indices(len(classes), k=1)].mean()
    return float(inter / max(intra, 1e-12))
