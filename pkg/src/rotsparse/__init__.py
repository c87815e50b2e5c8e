"""Rotational sparse coding of image patches in a steerable harmonic basis."""

__version__ = "0.1.0"

from .steerbasis import (  # noqa: F401
    BasisSpec,
    SteerableBasis,
    build_basis,
    build_interp_rotation,
    disk_mask,
    steer,
)
from .coding import (  # noqa: F401
    CodeEntry,
    Dictionary,
    LearnConfig,
    LearnReport,
    SparseCode,
    basis_for,
    code_set,
    ksvd_learn,
    mse,
    omp,
    reconstruct,
    rksvd_learn,
)
from .patches import (  # noqa: F401
    LabeledImageSet,
    PatchSet,
    extract_patches,
    load_pgm,
    montage,
    save_pgm,
    synth_crosses,
    synth_textures,
)
