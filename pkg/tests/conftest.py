import datetime as dt
from pathlib import Path

import pytest

from loskit.codemaps import load_code_maps
from loskit.dataset import Dataset
from loskit.records import (
    AdmissionType,
    AgeGroup,
    CodeKind,
    HospitalizationRecord,
    compute_los,
    parse_icd9,
)

GEM_FIXTURE = """\
# source: test fixtures v1
icd9,icd10
724.2,M54.5
724.2,M54.50
724.2,M54.59
401.9,I10
428.0,I50.9
"""

DRG_FIXTURE = """\
# source: test fixtures v1
icd9,drg
724.2,DRG551
722.1,DRG551
401.9,DRG305
428.0,DRG291
427.31,DRG291
"""

ELIX_FIXTURE = """\
# source: test fixtures v1
# categories: chf|arrhythmia|hypertension|pulmonary
prefix,category,weight
428,chf,7
428.0,chf,7
427.3,arrhythmia,5
401,hypertension,0
402,hypertension,0
490,pulmonary,3
"""

DX_EMB_FIXTURE = """\
# source: test fixtures v1
# dimension: 4
code,v1,v2,v3,v4
724.2,0.1,0.2,0.3,0.4
401.9,-1.0,0.0,1.0,2.0
428.0,0.5,0.5,0.5,0.5
"""

PROC_EMB_FIXTURE = """\
# source: test fixtures v1
# dimension: 3
code,v1,v2,v3
88.93,1.0,2.0,3.0
03.09,0.0,-1.0,1.0
"""


@pytest.fixture(scope="session")
def maps_dir(tmp_path_factory) -> Path:
    d = tmp_path_factory.mktemp("maps")
    (d / "gem.csv").write_text(GEM_FIXTURE)
    (d / "drg.csv").write_text(DRG_FIXTURE)
    (d / "elixhauser.csv").write_text(ELIX_FIXTURE)
    (d / "diagnosis_embeddings.csv").write_text(DX_EMB_FIXTURE)
    (d / "procedure_embeddings.csv").write_text(PROC_EMB_FIXTURE)
    return d


@pytest.fixture(scope="session")
def fixture_maps(maps_dir):
    return load_code_maps(maps_dir)


def make_record(
    patient="p1",
    age=10,
    dx="724.2",
    proc=None,
    facility="F1",
    department="D1",
    adm_type=AdmissionType.ORDINARY,
    admission=dt.date(2021, 7, 22),
    los=3,
) -> HospitalizationRecord:
    admission = admission if isinstance(admission, dt.date) else dt.date.fromisoformat(admission)
    discharge = admission + dt.timedelta(days=los)
    return HospitalizationRecord(
        patient_id=patient,
        age_group=AgeGroup(age),
        diagnosis=parse_icd9(dx, CodeKind.DIAGNOSIS),
        procedure=parse_icd9(proc, CodeKind.PROCEDURE) if proc else None,
        facility=facility,
        department=department,
        admission_type=adm_type,
        admission_date=admission,
        discharge_date=discharge,
        los_days=compute_los(admission, discharge),
    )


def make_dataset(*records) -> Dataset:
    return Dataset.from_records(records)
