from src.worstcase.families import DEFAULT_FAMILY, FAMILIES, Candidate, decode, sample_params
from src.worstcase.search import (
    ScanRecord,
    ScanReport,
    SearchSpec,
    TightnessReport,
    gap_ratio,
    search_worst,
    violation_scan,
)
from src.worstcase.witnesses import structured_witnesses
