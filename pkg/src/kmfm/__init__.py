"""K-means on a learned feature map for mixed numerical/categorical tables."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DataError,
    KmfmError,
    NumericalError,
)
from .dataset import MixedDataset, MixedSchema, Numerical, Categorical, load_csv  # noqa: E402
from .config import PipelineConfig, load_config  # noqa: E402
from .metrics import nmi, rand_index  # noqa: E402
from .clustering import KMeansConfig, kmeans  # noqa: E402
from .embedding import KernelSpec, solve_lpp  # noqa: E402
from .pipeline import (  # noqa: E402
    RunReport,
    benchmark,
    emit_loss_curves,
    run_kmfm,
    sweep_clusters,
    sweep_feature_dim,
)

__all__ = [
    "__version__", "KmfmError", "ConfigError", "DataError", "NumericalError",
    "MixedDataset", "MixedSchema", "Numerical", "Categorical", "load_csv",
    "PipelineConfig", "load_config", "nmi", "rand_index", "KMeansConfig", "kmeans",
    "KernelSpec", "solve_lpp", "RunReport", "benchmark", "emit_loss_curves", "run_kmfm",
    "sweep_clusters", "sweep_feature_dim",
]
