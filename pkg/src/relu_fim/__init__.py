"""Second-moment and Fisher information matrices of random ReLU features."""

from .bounds import (
    CertificateReport,
    XiMachinery,
    certify_run,
    estimate_C,
    iota,
    moment_spot_check,
    observed_delta,
    pair_count,
    probability_floor,
    xi_of_d,
)
from .decomposition import (
    FeatureBasis,
    GramReport,
    approx_decomposition,
    assemble_approx,
    basis_geometry,
    build_basis,
    rayleigh_quotients,
)
from .empirical import EmpiricalAccumulator, FeatureSampler, empirical_J, finalize_fim, relu_features
from .exceptions import ConvergenceError, DenseCapError, DimensionError, DomainError, RunMismatchError
from .kernel import (
    ClosedFormOperator,
    KernelMatrix,
    SeriesSpec,
    closed_form_J,
    expected_kernel_oracle,
    residual_R,
    series_coefficients,
    series_J,
)
from .spectrum import analyze_spectrum, dense_spectrum, group_analysis, principal_angles, topk_spectrum
from .weights import ColumnGeometry, WeightMatrix, column_geometry, generate_weights

__version__ = "0.1.0"
