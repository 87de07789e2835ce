"""Binary image classification with zero-mode lasing in a nanolaser array."""

__version__ = "0.1.0"

from .classify import (
    ClassificationResult,
    ClassifierConfig,
    Model,
    classify,
    load_model,
    save_model,
)
from .data import (
    Dataset,
    Image,
    NoiseSpec,
    add_noise,
    load_optdigits,
    subset_and_split,
)
from .encoding import (
    BracketExhausted,
    NoThresholdReachable,
    ThresholdResult,
    TransformMatrix,
    encode,
    threshold_scale,
)
from .lattice import (
    ArrayParams,
    Hamiltonian,
    PhysicalParams,
    build_hamiltonian,
    coupling_matrix,
    derive_time_scale,
    evolve,
    growth_rate,
    sublattice_mask,
)
from .spectra import (
    GapResult,
    ModeSelection,
    Spectrum,
    eigendecompose,
    lasing_index,
    nhph_defect,
    select_modes,
    spectral_gap,
)
from .train import (
    AnnealParams,
    CostReport,
    Metrics,
    TrainConfig,
    cost,
    dual_anneal,
    evaluate,
)
