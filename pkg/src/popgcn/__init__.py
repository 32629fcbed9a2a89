"""Graph-propagation prognosis pipeline for small multi-view fMRI cohorts."""

from .core import (VIEWS, Cohort, Label, PhenotypeRecord, PhenotypeSchema, PhenotypeSpec,
                   SubjectRecord, TrialView, absolutize, default_schema, validate_cohort)

__version__ = "0.1.0"
