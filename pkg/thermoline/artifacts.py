import json
import os
import tempfile
from io import StringIO
from pathlib import Path
from typing import Any, Final

import numpy as np
import pandas as pd

from thermoline.bounds import BoundReport
from thermoline.inference import PosteriorGrid
from thermoline.sample_models import SampleModel, lambda_of_theta, qfi

# 17 significant digits round-trip every double exactly
FLOAT_FORMAT: Final = "%.17g"


def config_hash_line(config_hash: str) -> str:
    return f"# config_hash={config_hash}\n"


def frame_to_csv(frame: pd.DataFrame, config_hash: str) -> str:
    body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep="")
    return config_hash_line(config_hash) + body


def csv_to_frame(content: str | Path) -> pd.DataFrame:
    source = content if isinstance(content, Path) else StringIO(content)
    return pd.read_csv(source, comment="#")


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def to_json(data: dict[str, Any], config_hash: str) -> str:
    """JSON artifacts can't hold comments, the hash goes in a leading `config_hash` key."""
    document = {"config_hash": config_hash} | data
    return json.dumps(document, indent=2, default=_json_default, allow_nan=True) + "\n"


def _stage(path: Path, content: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(content)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return Path(tmp)


def write_artifacts(contents: dict[Path, str]) -> list[Path]:
    """
    Write every artifact through a temp file in its target directory, then rename
    them all into place. On failure nothing is left behind, including artifacts
    already renamed.
    """
    staged: list[tuple[Path, Path]] = []
    written: list[Path] = []
    try:
        for path, content in contents.items():
            staged.append((_stage(path, content), path))
        for tmp, path in staged:
            os.replace(tmp, path)
            written.append(path)
    except BaseException:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return written


def geometry_frame(ratios: np.ndarray, gap: float = 1.0) -> pd.DataFrame:
    """QFI and λ of the three sample families against k_Bθ/ε."""
    thetas = np.asarray(ratios, dtype=float) * gap
    columns: dict[str, np.ndarray] = {"theta_over_gap": np.asarray(ratios, dtype=float)}
    for model in (SampleModel.reservoir(), SampleModel.spin(gap), SampleModel.boson(gap)):
        columns[f"qfi_{model.kind}"] = np.asarray(qfi(model, thetas))
        columns[f"lambda_{model.kind}"] = np.asarray(lambda_of_theta(model, thetas))
    return pd.DataFrame(columns)


def prior_frame(priors: list[PosteriorGrid]) -> pd.DataFrame:
    """
    Long-format prior densities, one block per grid model. `density` is over the
    model's λ, `density_theta` the same distribution over θ.
    """
    frames = []
    for prior in priors:
        frame = prior.to_frame()
        h = np.asarray(qfi(prior.model, prior.thetas))
        frame["density_theta"] = frame["density"] * np.sqrt(h)
        frame.insert(0, "model", str(prior.model.kind))
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def bounds_frame(reports: list[BoundReport]) -> pd.DataFrame:
    return pd.DataFrame([r.as_row() for r in reports])

