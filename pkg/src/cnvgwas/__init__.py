"""Copy-number variant inference from GWAS data and CNV study-design statistics."""

from .core import (
    CnvCall,
    Genotype,
    GenotypeMatrix,
    IntensityTrack,
    Locus,
    SnpPanel,
    Trio,
    TrueGenotype,
    ValidationError,
    canonicalize_panel,
    make_panel,
    observe_genotype,
)

__version__ = "0.1.0"
