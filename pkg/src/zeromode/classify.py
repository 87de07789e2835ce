"""Single-image classification pipeline and model persistence.

The pipeline for one image: encode into a pump, rescale the pump to the
lasing threshold, take the spectrum there, and answer "yes" exactly when the
spectral gap is positive, i.e. when the mode that reaches threshold first
lies inside the detection band |Re(eps)| <= delta.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoding import (
    NoThresholdReachable,
    TransformMatrix,
    encode,
    threshold_scale,
)
from .lattice import ArrayParams
from .spectra import STRICT_ZERO_TOL, spectral_gap

MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Model file is malformed, inconsistent, or from an unknown version."""


@dataclass(frozen=True)
class ClassifierConfig:
    delta: float
    target_digit: int = 0
    task: str = "one_vs_one"            # or "one_vs_all"
    other_digit: int | None = 1
    threshold_method: str = "exact_max"  # or "lse"
    lse_beta: float = 200.0
    encoding_mode: str = "matrix8"

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.task not in ("one_vs_one", "one_vs_all"):
            raise ValueError(f"unknown task {self.task!r}")
        if not 0 <= self.target_digit <= 9:
            raise ValueError("target_digit must be a digit")
        if self.task == "one_vs_one":
            if self.other_digit is None:
                raise ValueError("one_vs_one needs other_digit")
            if self.other_digit == self.target_digit:
                raise ValueError("other_digit must differ from target_digit")
        if self.threshold_method not in ("exact_max", "lse"):
            raise ValueError(f"unknown threshold_method {self.threshold_method!r}")


@dataclass(frozen=True)
class Model:
    transform: TransformMatrix
    array: ArrayParams
    config: ClassifierConfig
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ClassificationResult:
    yes: bool
    gap: float
    alpha: float
    lasing_eigenvalue: complex
    selected_count: int
    strictly_zero: bool
    threshold_failed: bool = False

    @property
    def answer(self) -> str:
        return "yes" if self.yes else "no"


def classify(image, model: Model) -> ClassificationResult:
    """Run the four-step pipeline; answers "yes" iff the gap is positive.

    A gap of exactly zero maps to "no".  An image whose encoded pump carries
    no gain at all cannot lase, which is reported as "no" with the
    threshold_failed diagnostic set and the empty-side sentinel as the gap.
    """
    pixels = getattr(image, "pixels", image)
    pump = encode(pixels, model.transform)
    cfg = model.config
    try:
        thr = threshold_scale(
            pump,
            model.array,
            method=cfg.threshold_method,
            lse_beta=cfg.lse_beta,
        )
    except NoThresholdReachable:
        return ClassificationResult(
            yes=False,
            gap=-2.0 * model.array.gamma,
            alpha=float("nan"),
            lasing_eigenvalue=complex(float("nan"), float("nan")),
            selected_count=0,
            strictly_zero=False,
            threshold_failed=True,
        )
    spec = thr.spectrum_at_threshold
    result = spectral_gap(spec, cfg.delta, model.array.gamma)
    selected = int(np.sum(np.abs(spec.eigenvalues.real) <= cfg.delta))
    return ClassificationResult(
        yes=result.gap > 0,
        gap=result.gap,
        alpha=thr.alpha,
        lasing_eigenvalue=result.lasing_eigenvalue,
        selected_count=selected,
        strictly_zero=abs(result.lasing_eigenvalue.real) <= STRICT_ZERO_TOL,
    )


def save_model(model: Model, path) -> None:
    """Write the model as JSON; numbers keep full round-trip precision."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "encoding_mode": model.transform.encoding_mode,
        "rows": model.array.rows,
        "cols": model.array.cols,
        "kappa_x": model.array.kappa_x,
        "kappa_y": model.array.kappa_y,
        "gamma": model.array.gamma,
        "delta": model.config.delta,
        "task": model.config.task,
        "target_digit": model.config.target_digit,
        "other_digit": model.config.other_digit,
        "threshold_method": model.config.threshold_method,
        "lse_beta": model.config.lse_beta,
        "matrix_shape": list(model.transform.entries.shape),
        "matrix": model.transform.entries.ravel().tolist(),
        "provenance": model.provenance,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_model(path) -> Model:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as err:
            raise ModelFormatError(f"{path}: not valid JSON: {err}") from err
    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported model format version {version!r} "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    try:
        shape = tuple(doc["matrix_shape"])
        entries = np.array(doc["matrix"], dtype=float)
        if entries.size != shape[0] * shape[1]:
            raise ModelFormatError(
                f"{path}: matrix length {entries.size} does not match "
                f"shape {shape}"
            )
        transform = TransformMatrix(
            entries=entries.reshape(shape), encoding_mode=doc["encoding_mode"]
        )
        array = ArrayParams(
            rows=doc["rows"],
            cols=doc["cols"],
            kappa_x=doc["kappa_x"],
            kappa_y=doc["kappa_y"],
            gamma=doc["gamma"],
        )
        config = ClassifierConfig(
            delta=doc["delta"],
            target_digit=doc["target_digit"],
            task=doc["task"],
            other_digit=doc.get("other_digit"),
            threshold_method=doc.get("threshold_method", "exact_max"),
            lse_beta=doc.get("lse_beta", 200.0),
            encoding_mode=doc["encoding_mode"],
        )
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: {err}") from err
    expected = array.rows if config.encoding_mode == "matrix8" else array.n_sites
    if shape != (expected, expected):
        raise ModelFormatError(
            f"{path}: matrix shape {shape} inconsistent with "
            f"{config.encoding_mode} on a {array.rows}x{array.cols} array"
        )
    return Model(
        transform=transform,
        array=array,
        config=config,
        provenance=doc.get("provenance", {}),
    )
