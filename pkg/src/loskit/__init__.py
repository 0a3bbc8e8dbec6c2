"""Length-of-stay analytics toolkit.

Pipeline stages: synthetic generation (or CSV loading), strictly-past
feature engineering, statistical association analysis, and tree-ensemble
regression evaluated on year-based splits.
"""

__version__ = "0.1.0"

from .dataset import Dataset, load_dataset, write_dataset  # noqa: F401
from .records import (  # noqa: F401
    AdmissionType,
    AgeGroup,
    CodeKind,
    HospitalizationRecord,
    Icd9Code,
    compute_los,
    parse_icd9,
)
