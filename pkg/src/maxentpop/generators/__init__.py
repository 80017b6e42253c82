"""Benchmark instance generators."""

from .planted import PlantedFamilySpec, planted_family_generate
from .synistat import BayesNetSpec, synistat_sample, synistat_spec, synistat_split, synistat_targets
from .wu import (
    Pattern,
    WuInstanceSpec,
    a0_spec,
    a1a_spec,
    a1c_ternary_spec,
    a2_spec,
    random_patterns,
    scaling_domains,
    wu_generate,
    wu_sample,
)
