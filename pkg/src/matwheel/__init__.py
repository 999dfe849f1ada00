"""Materials data flywheel: property prediction with synthetic, generated crystals."""

from .arms import ArmSpec, Scenario
from .data import (
    CrystalStructure,
    DatasetMeta,
    PropertyRecord,
    merge_datasets,
    parse_structure_record,
    read_jsonl,
    split_dataset,
    subsample_labeled,
    validate_structure,
    wrap_coords,
    write_jsonl,
)
from .evaluation import aggregate, emit_report, mae
from .flywheel import RunConfig, derive_seed, run_arm, run_flywheel_iterations, run_scenario
from .generator import ConditionalVAEGenerator, GeneratorConfig
from .graph import CrystalGraph, GraphFeaturizer, NeighborParams, build_graph
from .kde import KdeModel, PropertyKDE, fit_kde, kde_pdf, sample_kde
from .predictor import CGCNNRegressor, PredictorConfig
from .toy import make_toy_dataset

__version__ = "0.1.0"
